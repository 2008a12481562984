#pragma once

// In-process federated training: K data centers with disjoint shards train
// local copies of the model; the server combines them by a sample-count
// weighted average and broadcasts the result for the next round.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedforge/datagen.hpp"
#include "fedforge/exact_sum.hpp"
#include "fedforge/metrics.hpp"
#include "fedforge/model.hpp"
#include "fedforge/param_set.hpp"
#include "fedforge/random.hpp"

namespace fedforge::fed {

using data::Sample;

// Seed-path tags.
inline constexpr std::uint64_t kInitTag = 0x696e6974ULL;
inline constexpr std::uint64_t kDataTag = 0x64617461ULL;
inline constexpr std::uint64_t kPartitionTag = 0x70617274ULL;
inline constexpr std::uint64_t kEpochTag = 0x65706f63ULL;

enum class PartitionScheme { iid, per_artifact };

inline std::string to_string(PartitionScheme s) {
  return s == PartitionScheme::iid ? "iid" : "per_artifact";
}

/// Splits dataset indices into K pairwise-disjoint shards covering the dataset.
/// Each shard lists indices in ascending order.
///
/// iid: seeded shuffle, then near-equal contiguous chunks.
/// per_artifact: the distinct artifact types present are dealt to clients
/// (type j -> clients k with k % T == j when K >= T, else client j % K);
/// a type's fakes are spread round-robin over its owners, and reals are
/// spread round-robin over all clients after a seeded shuffle.
inline std::vector<std::vector<std::size_t>> partition_indices(std::span<const Sample> dataset,
                                                               std::size_t k,
                                                               PartitionScheme scheme,
                                                               std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("partition: K must be >= 1");
  if (dataset.empty()) throw std::invalid_argument("partition: empty dataset");
  if (k > dataset.size()) {
    throw std::invalid_argument("partition: K=" + std::to_string(k) + " exceeds dataset size " +
                                std::to_string(dataset.size()));
  }
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> shards(k);
  if (scheme == PartitionScheme::iid) {
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(idx));
    const std::size_t base = idx.size() / k, extra = idx.size() % k;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t len = base + (c < extra ? 1 : 0);
      shards[c].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                       idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  } else {
    std::set<std::int32_t> type_set;
    std::vector<std::size_t> reals;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset[i].artifact_type) {
        type_set.insert(*dataset[i].artifact_type);
      } else {
        reals.push_back(i);
      }
    }
    if (type_set.empty()) {
      throw std::invalid_argument("partition: per_artifact needs at least one fake sample");
    }
    const std::vector<std::int32_t> types(type_set.begin(), type_set.end());
    const std::size_t t = types.size();
    std::vector<std::vector<std::size_t>> owners(t);
    if (k >= t) {
      for (std::size_t c = 0; c < k; ++c) owners[c % t].push_back(c);
    } else {
      for (std::size_t j = 0; j < t; ++j) owners[j].push_back(j % k);
    }
    std::vector<std::size_t> dealt(t, 0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (!dataset[i].artifact_type) continue;
      const auto j = static_cast<std::size_t>(
          std::lower_bound(types.begin(), types.end(), *dataset[i].artifact_type) - types.begin());
      shards[owners[j][dealt[j]++ % owners[j].size()]].push_back(i);
    }
    rng.shuffle(std::span<std::size_t>(reals));
    for (std::size_t r = 0; r < reals.size(); ++r) shards[r % k].push_back(reals[r]);
  }
  for (auto& s : shards) {
    std::sort(s.begin(), s.end());
    if (s.empty()) throw std::invalid_argument("partition: a client received an empty shard");
  }
  return shards;
}

inline std::vector<std::vector<Sample>> partition(std::span<const Sample> dataset, std::size_t k,
                                                  PartitionScheme scheme, std::uint64_t seed) {
  std::vector<std::vector<Sample>> out;
  for (const auto& shard : partition_indices(dataset, k, scheme, seed)) {
    auto& dst = out.emplace_back();
    dst.reserve(shard.size());
    for (auto i : shard) dst.push_back(dataset[i]);
  }
  return out;
}

/// p_k = |D_k| / sum_j |D_j|.
inline std::vector<double> shard_weights(std::span<const std::size_t> sizes) {
  const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<double> w;
  for (auto s : sizes) w.push_back(static_cast<double>(s) / total);
  return w;
}

/// Weighted element-wise average of structurally identical parameter sets.
/// Each output scalar is the float nearest (via double) to the exact value of
/// sum_k weights[k] * params[k][i], so the result does not depend on client order.
inline ParamSet aggregate(std::span<const ParamSet> params, std::span<const double> weights) {
  if (params.empty()) throw std::invalid_argument("aggregate: no parameter sets");
  if (params.size() != weights.size()) {
    throw std::invalid_argument("aggregate: " + std::to_string(params.size()) +
                                " parameter sets but " + std::to_string(weights.size()) + " weights");
  }
  ExactSum wsum;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("aggregate: invalid weight");
    wsum.add(w);
  }
  if (std::abs(wsum.value() - 1.0) > 1e-6) {
    throw std::invalid_argument("aggregate: weights sum to " + std::to_string(wsum.value()) +
                                ", expected 1");
  }
  for (std::size_t k = 1; k < params.size(); ++k) {
    if (!params[0].same_structure(params[k])) {
      throw std::invalid_argument("aggregate: parameter set " + std::to_string(k) +
                                  " differs in structure: " + params[0].structure_diff(params[k]));
    }
  }
  ParamSet out = params[0];
  ExactSum acc;
  for (std::size_t t = 0; t < out.size(); ++t) {
    auto& dst = out.entries()[t].values;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      acc.clear();
      for (std::size_t k = 0; k < params.size(); ++k) {
        acc.add_product(weights[k], static_cast<double>(params[k].entries()[t].values[i]));
      }
      dst[i] = static_cast<float>(acc.value());
    }
  }
  return out;
}

/// What a data center uploads after local training. Parameters and counts
/// only: no sample ever crosses this boundary.
struct ClientUpdate {
  std::size_t client_id = 0;
  ParamSet params;
  std::size_t num_samples = 0;
  double train_loss = 0.0;
};

/// Server side of a round: holds the global parameters and folds uploads into them.
class Server {
 public:
  explicit Server(ParamSet initial) : global_(std::move(initial)) {}

  const ParamSet& global() const noexcept { return global_; }

  const ParamSet& aggregate(std::span<const ClientUpdate> updates) {
    std::vector<std::size_t> sizes;
    std::vector<ParamSet> sets;
    for (const auto& u : updates) {
      sizes.push_back(u.num_samples);
      sets.push_back(u.params);
    }
    global_ = fed::aggregate(sets, shard_weights(sizes));
    return global_;
  }

 private:
  ParamSet global_;
};

struct TrainSettings {
  LossWeights weights;
  float learning_rate = 0.01f;
  float momentum = 0.5f;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 1;
  std::uint64_t master_seed = 0;
};

/// One data center: private shard, local model and optimizer state.
struct ClientState {
  std::size_t id = 0;
  std::vector<Sample> shard;
  FfdModel model;
  SgdState sgd;
  double weight = 0.0;
  std::uint64_t epochs_done = 0;  // drives the per-epoch shuffle seed
};

inline ClientState make_client(std::size_t id, std::vector<Sample> shard, const ModelConfig& cfg,
                               const TrainSettings& s) {
  ClientState c;
  c.id = id;
  c.shard = std::move(shard);
  c.model = FfdModel::init(cfg, 0);  // values are overwritten by the broadcast
  c.sgd.learning_rate = s.learning_rate;
  c.sgd.momentum = s.momentum;
  return c;
}

/// Stacks selected samples into an NCHW batch.
inline Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> idx) {
  constexpr std::size_t px = data::kImageSize * data::kImageSize;
  std::vector<float> values(idx.size() * px);
  Batch b;
  b.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& s = samples[idx[i]];
    std::copy(s.image.pixels.begin(), s.image.pixels.end(), values.begin() + static_cast<std::ptrdiff_t>(i * px));
    b.labels.push_back(s.label);
  }
  b.images = Tensor(Shape{idx.size(), 1, data::kImageSize, data::kImageSize}, std::move(values));
  return b;
}

/// One pass over the client's shard in a seeded order. Returns the mean joint loss.
inline double train_epoch(ClientState& client, const TrainSettings& s) {
  if (client.shard.empty()) throw std::invalid_argument("client " + std::to_string(client.id) + " has an empty shard");
  if (s.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(client.shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed({s.master_seed, kEpochTag, client.id, client.epochs_done}));
  rng.shuffle(std::span<std::size_t>(order));
  double loss = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
    const std::size_t end = std::min(order.size(), start + s.batch_size);
    const auto batch = make_batch(client.shard, std::span(order).subspan(start, end - start));
    loss += train_step(batch, client.model, s.weights, client.sgd).total;
    ++steps;
  }
  ++client.epochs_done;
  return loss / static_cast<double>(steps);
}

/// Loads the broadcast parameters, runs E local epochs, returns the upload.
inline ClientUpdate local_update(ClientState& client, const ParamSet& global, const TrainSettings& s) {
  if (s.local_epochs == 0) throw std::invalid_argument("local_update: E must be >= 1");
  if (client.shard.empty()) throw std::invalid_argument("local_update: empty shard");
  client.model.import_params(global);
  double loss = 0.0;
  for (std::size_t e = 0; e < s.local_epochs; ++e) loss += train_epoch(client, s);
  return {client.id, client.model.export_params(), client.shard.size(),
          loss / static_cast<double>(s.local_epochs)};
}

struct EvalResult {
  double accuracy = 0.0;
  double auc = 0.0;
  double loss = 0.0;  // mean joint loss
  metrics::ScoredBatch scored;
};

/// Forward-only evaluation; parameters are not touched.
inline EvalResult evaluate(const FfdModel& model, std::span<const Sample> testset,
                           const LossWeights& w, std::size_t chunk = 100) {
  if (testset.empty()) throw std::invalid_argument("evaluate: empty test set");
  NoGradGuard no_grad;
  EvalResult r;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < testset.size(); start += chunk) {
    const std::size_t end = std::min(testset.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(testset, idx);
    const auto jl = joint_loss(batch, model, w);
    loss += static_cast<double>(jl.total.item()) * static_cast<double>(idx.size());
    const auto lv = jl.pass.logits.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double margin = static_cast<double>(lv[i * 2]) - static_cast<double>(lv[i * 2 + 1]);
      r.scored.scores.push_back(1.0 / (1.0 + std::exp(margin)));
      r.scored.labels.push_back(batch.labels[i]);
    }
  }
  r.loss = loss / static_cast<double>(testset.size());
  r.accuracy = metrics::accuracy(r.scored);
  const bool mixed = r.scored.positives() > 0 && r.scored.negatives() > 0;
  r.auc = mixed ? metrics::auc(r.scored) : std::nan("");
  return r;
}

inline EvalResult evaluate(const ParamSet& params, const ModelConfig& cfg,
                           std::span<const Sample> testset, const LossWeights& w) {
  auto model = FfdModel::init(cfg, 0);
  model.import_params(params);
  return evaluate(model, testset, w);
}

struct ClientRoundLog {
  std::size_t client_id = 0;
  double train_loss = 0.0;
  double accuracy = 0.0;
  double auc = 0.0;
};

struct RoundLog {
  std::size_t round = 0;  // 0 is the freshly initialized model
  std::vector<ClientRoundLog> clients;
  double global_loss = 0.0;
  double global_accuracy = 0.0;
  double global_auc = 0.0;
  double wall_seconds = 0.0;
};

struct FederationConfig {
  ModelConfig model;
  TrainSettings train;
  std::size_t clients = 10;  // K
  std::size_t rounds = 10;   // t
  PartitionScheme scheme = PartitionScheme::iid;
  std::size_t workers = 1;   // concurrent client threads; results do not depend on it
};

struct RunResult {
  ParamSet final_params;
  std::vector<RoundLog> logs;
  std::vector<std::size_t> shard_sizes;
};

namespace detail {

/// Runs fn(i) for i in [0, n), at most `workers` at a time.
inline void for_each_client(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  for (std::size_t start = 0; start < n; start += workers) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = start; i < std::min(n, start + workers); ++i)
      jobs.push_back(std::async(std::launch::async, fn, i));
    for (auto& j : jobs) j.get();
  }
}

}  // namespace detail

inline ParamSet initial_params(const ModelConfig& cfg, std::uint64_t master_seed) {
  return FfdModel::init(cfg, derive_seed({master_seed, kInitTag})).export_params();
}

/// Full federated schedule: initialize on the server, then t rounds of
/// broadcast -> local training -> weighted aggregation -> evaluation.
inline RunResult run_rounds(const FederationConfig& cfg, const data::ProtocolSplit& split) {
  using clock = std::chrono::steady_clock;
  const auto& s = cfg.train;
  s.weights.validate();
  if (s.local_epochs == 0) throw std::invalid_argument("run_rounds: local epochs must be >= 1");
  const auto shards = partition(split.train, cfg.clients, cfg.scheme,
                                derive_seed({s.master_seed, kPartitionTag}));
  std::vector<ClientState> clients;
  std::vector<std::size_t> sizes;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    clients.push_back(make_client(k, shards[k], cfg.model, s));
    sizes.push_back(shards[k].size());
  }
  const auto weights = shard_weights(sizes);
  for (std::size_t k = 0; k < clients.size(); ++k) clients[k].weight = weights[k];

  Server server(initial_params(cfg.model, s.master_seed));
  auto evaluator = FfdModel::init(cfg.model, 0);

  RunResult result;
  result.shard_sizes = sizes;
  const auto log_global = [&](RoundLog& log) {
    evaluator.import_params(server.global());
    const auto ev = evaluate(evaluator, split.test, s.weights);
    log.global_loss = ev.loss;
    log.global_accuracy = ev.accuracy;
    log.global_auc = ev.auc;
  };

  {
    const auto t0 = clock::now();
    RoundLog log;
    log.round = 0;
    log_global(log);
    log.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.logs.push_back(std::move(log));
  }

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const auto t0 = clock::now();
    std::vector<ClientUpdate> updates(clients.size());
    std::vector<ClientRoundLog> client_logs(clients.size());
    const ParamSet& broadcast = server.global();
    detail::for_each_client(clients.size(), cfg.workers, [&](std::size_t k) {
      updates[k] = local_update(clients[k], broadcast, s);
      const auto ev = evaluate(clients[k].model, split.test, s.weights);
      client_logs[k] = {clients[k].id, updates[k].train_loss, ev.accuracy, ev.auc};
    });
    server.aggregate(updates);
    RoundLog log;
    log.round = round;
    log.clients = std::move(client_logs);
    log_global(log);
    log.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.logs.push_back(std::move(log));
  }
  result.final_params = server.global();
  return result;
}

/// Reference single-site training on the whole training set with the seeds a
/// one-client federation would use (client id 0).
inline ParamSet train_centralized(const FederationConfig& cfg, const data::ProtocolSplit& split) {
  const auto& s = cfg.train;
  auto client = make_client(0, split.train, cfg.model, s);
  client.model.import_params(initial_params(cfg.model, s.master_seed));
  for (std::size_t e = 0; e < cfg.rounds * s.local_epochs; ++e) train_epoch(client, s);
  return client.model.export_params();
}

}  // namespace fedforge::fed
