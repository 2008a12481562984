#include <algorithm>
#include <numeric>
#include <set>
#include <type_traits>
#include <vector>

#include <gtest/gtest.h>

#include "fedforge/federated.hpp"
#include "support/oracles.hpp"

namespace fedforge {
namespace {

using data::Sample;
using fed::PartitionScheme;

std::vector<Sample> corpus(std::size_t n, std::uint64_t seed,
                           std::vector<std::int32_t> types = {0, 1, 2, 3, 4}) {
  return data::detail::build_split(n, seed, 0, types, data::kArtifactTable);
}

ParamSet random_set(Rng& rng, const std::vector<std::size_t>& sizes, float lo = -4.0f, float hi = 4.0f) {
  ParamSet ps;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    std::vector<float> v(sizes[i]);
    for (auto& x : v) x = rng.uniform_float(lo, hi);
    ps.add("p" + std::to_string(i), {sizes[i]}, std::move(v));
  }
  return ps;
}

std::vector<double> random_weights(Rng& rng, std::size_t k) {
  std::vector<std::size_t> counts(k);
  for (auto& c : counts) c = 1 + rng.below(500);
  return fed::shard_weights(counts);
}

ParamSet scalar_set(std::vector<float> v) {
  ParamSet ps;
  const auto n = v.size();
  ps.add("w", {n}, std::move(v));
  return ps;
}

// ---------------------------------------------------------------- partition

TEST(Partition, SingleClientGetsWholeDatasetInOrder) {
  const auto d = corpus(40, 1);
  for (auto scheme : {PartitionScheme::iid, PartitionScheme::per_artifact}) {
    const auto shards = fed::partition_indices(d, 1, scheme, 7);
    ASSERT_EQ(shards.size(), 1u);
    std::vector<std::size_t> all(d.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    EXPECT_EQ(shards[0], all);
  }
}

TEST(Partition, IidHundredIntoTen) {
  const auto d = corpus(100, 2);
  const auto shards = fed::partition_indices(d, 10, PartitionScheme::iid, 3);
  std::set<std::size_t> seen;
  for (const auto& s : shards) {
    EXPECT_EQ(s.size(), 10u);
    for (auto i : s) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Partition, PerArtifactFourTypesFourClients) {
  const auto d = corpus(200, 3, {0, 1, 2, 3});
  const auto shards = fed::partition(d, 4, PartitionScheme::per_artifact, 4);
  for (std::size_t k = 0; k < 4; ++k) {
    std::size_t fakes = 0;
    for (const auto& s : shards[k]) {
      if (!s.artifact_type) continue;
      ++fakes;
      EXPECT_EQ(*s.artifact_type, static_cast<std::int32_t>(k));
    }
    EXPECT_GT(fakes, 0u);
  }
}

TEST(Partition, DisjointCoverForRandomConfigurations) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 20 + 2 * rng.below(60), k = 1 + rng.below(9);
    const auto scheme = trial % 2 ? PartitionScheme::iid : PartitionScheme::per_artifact;
    const auto d = corpus(n, trial);
    const auto shards = fed::partition_indices(d, k, scheme, trial);
    ASSERT_EQ(shards.size(), k);
    std::vector<int> hits(n, 0);
    for (const auto& s : shards) {
      EXPECT_FALSE(s.empty());
      EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
      for (auto i : s) ++hits[i];
    }
    for (int h : hits) ASSERT_EQ(h, 1);
  }
}

TEST(Partition, Errors) {
  const auto d = corpus(10, 6);
  EXPECT_THROW(fed::partition_indices(d, 11, PartitionScheme::iid, 0), std::invalid_argument);
  EXPECT_THROW(fed::partition_indices(d, 0, PartitionScheme::iid, 0), std::invalid_argument);
  EXPECT_THROW(fed::partition_indices({}, 1, PartitionScheme::iid, 0), std::invalid_argument);
  std::vector<Sample> reals(d.begin(), d.end());
  std::erase_if(reals, [](const Sample& s) { return s.label == 1; });
  EXPECT_THROW(fed::partition_indices(reals, 2, PartitionScheme::per_artifact, 0), std::invalid_argument);
}

TEST(ShardWeights, SumToOne) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = random_weights(rng, 1 + rng.below(12));
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
  }
}

// ---------------------------------------------------------------- aggregate

TEST(Aggregate, ArithmeticMean) {
  const std::vector<ParamSet> sets{scalar_set({2, 4}), scalar_set({4, 8})};
  const std::vector<double> p{0.5, 0.5};
  EXPECT_EQ(fed::aggregate(sets, p).at("w").values, (std::vector<float>{3, 6}));
}

TEST(Aggregate, WeightedMean) {
  const std::vector<ParamSet> sets{scalar_set({1}), scalar_set({5})};
  const std::vector<double> p{0.75, 0.25};
  EXPECT_EQ(fed::aggregate(sets, p).at("w").values, (std::vector<float>{2}));
}

TEST(Aggregate, SingleClientIsIdentity) {
  Rng rng(8);
  const std::vector<ParamSet> one{random_set(rng, {7, 13})};
  const std::vector<double> p{1.0};
  EXPECT_TRUE(testing::bit_identical(fed::aggregate(one, p), one[0]));
}

TEST(Aggregate, MatchesBinary128Oracle) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + rng.below(5);
    const std::vector<std::size_t> sizes{1 + rng.below(40), 1 + rng.below(40), 1 + rng.below(20)};
    std::vector<ParamSet> sets;
    for (std::size_t i = 0; i < k; ++i) sets.push_back(random_set(rng, sizes));
    const auto w = random_weights(rng, k);
    ASSERT_TRUE(testing::bit_identical(fed::aggregate(sets, w), testing::aggregate_oracle(sets, w)));
  }
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    std::vector<ParamSet> sets;
    for (std::size_t i = 0; i < k; ++i) sets.push_back(random_set(rng, {33}, -1e3f, 1e3f));
    const auto w = random_weights(rng, k);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<ParamSet> ps;
    std::vector<double> pw;
    for (auto i : order) {
      ps.push_back(sets[i]);
      pw.push_back(w[i]);
    }
    ASSERT_TRUE(testing::bit_identical(fed::aggregate(sets, w), fed::aggregate(ps, pw)));
  }
}

TEST(Aggregate, Homogeneous) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const float a = rng.uniform_float(-3.0f, 3.0f);
    auto x = random_set(rng, {20}), y = random_set(rng, {20});
    const std::vector<double> w{0.3, 0.7};
    const std::vector<ParamSet> plain{x, y};
    const auto base = fed::aggregate(plain, w);
    for (auto* s : {&x, &y})
      for (auto& v : s->entries()[0].values) v *= a;
    const std::vector<ParamSet> scaled{x, y};
    const auto out = fed::aggregate(scaled, w);
    for (std::size_t i = 0; i < 20; ++i) {
      const double expect = a * static_cast<double>(base.entries()[0].values[i]);
      EXPECT_NEAR(out.entries()[0].values[i], expect, 1e-6 * (1 + std::abs(expect)));
    }
  }
}

TEST(Aggregate, Errors) {
  const std::vector<ParamSet> two{scalar_set({1}), scalar_set({2})};
  EXPECT_THROW(fed::aggregate(two, std::vector<double>{0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(fed::aggregate(two, std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(fed::aggregate(two, std::vector<double>{1.5, -0.5}), std::invalid_argument);
  EXPECT_THROW(fed::aggregate({}, {}), std::invalid_argument);
  const std::vector<ParamSet> mixed{scalar_set({1}), scalar_set({1, 2})};
  EXPECT_THROW(fed::aggregate(mixed, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}

TEST(Aggregate, CodebookIsAveragedLikeEverythingElse) {
  const auto a = FfdModel::init(ModelConfig{}, 1).export_params();
  const auto b = FfdModel::init(ModelConfig{}, 2).export_params();
  const std::vector<ParamSet> sets{a, b};
  const auto avg = fed::aggregate(sets, std::vector<double>{0.5, 0.5});
  const auto& ca = a.at("recnet.codebook").values;
  const auto& cb = b.at("recnet.codebook").values;
  const auto& cm = avg.at("recnet.codebook").values;
  for (std::size_t i = 0; i < cm.size(); ++i)
    EXPECT_EQ(cm[i], static_cast<float>(0.5 * ca[i] + 0.5 * cb[i]));
}

// ---------------------------------------------------------- privacy boundary

TEST(PrivacyBoundary, ServerInputsCarryNoSamples) {
  static_assert(std::is_aggregate_v<fed::ClientUpdate>);
  // Exactly four members, none of which can hold image data.
  [[maybe_unused]] auto [id, params, count, loss] = fed::ClientUpdate{};
  static_assert(std::is_same_v<decltype(id), std::size_t>);
  static_assert(std::is_same_v<decltype(params), ParamSet>);
  static_assert(std::is_same_v<decltype(count), std::size_t>);
  static_assert(std::is_same_v<decltype(loss), double>);
  static_assert(!std::is_constructible_v<fed::ClientUpdate, Sample>);
  static_assert(!std::is_invocable_v<decltype(&fed::Server::aggregate), fed::Server&,
                                     std::span<const Sample>>);
  static_assert(std::is_invocable_v<decltype(&fed::Server::aggregate), fed::Server&,
                                    std::span<const fed::ClientUpdate>>);
  static_assert(!std::is_constructible_v<fed::Server, std::vector<Sample>>);
  SUCCEED();
}

// -------------------------------------------------------------- local update

fed::TrainSettings settings(float lr = 0.01f, std::size_t epochs = 1) {
  fed::TrainSettings s;
  s.learning_rate = lr;
  s.local_epochs = epochs;
  s.master_seed = 42;
  return s;
}

TEST(LocalUpdate, ZeroLearningRateReturnsGlobal) {
  const auto s = settings(0.0f);
  auto c = fed::make_client(0, corpus(16, 1), ModelConfig{}, s);
  const auto global = fed::initial_params(ModelConfig{}, 1);
  EXPECT_TRUE(testing::bit_identical(fed::local_update(c, global, s).params, global));
}

TEST(LocalUpdate, TwoEpochsEqualTwoSingleEpochCalls) {
  const auto global = fed::initial_params(ModelConfig{}, 2);
  const auto shard = corpus(48, 2);

  auto two = settings(0.01f, 2);
  auto a = fed::make_client(3, shard, ModelConfig{}, two);
  const auto ua = fed::local_update(a, global, two);

  auto one = settings(0.01f, 1);
  auto b = fed::make_client(3, shard, ModelConfig{}, one);
  const auto first = fed::local_update(b, global, one);
  const auto ub = fed::local_update(b, first.params, one);

  EXPECT_TRUE(testing::bit_identical(ua.params, ub.params));
  EXPECT_EQ(a.sgd.velocity, b.sgd.velocity);
}

TEST(LocalUpdate, LocalTrainingLowersShardLossInMostTrials) {
  // The first step from initialization can overshoot; a few epochs settle it.
  int lower = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = settings(0.01f, 8);
    s.master_seed = seed;
    const auto shard = corpus(16, 100 + seed);
    const auto global = fed::initial_params(ModelConfig{}, seed);
    auto c = fed::make_client(0, shard, ModelConfig{}, s);
    const auto before = fed::evaluate(global, ModelConfig{}, shard, s.weights).loss;
    const auto after = fed::evaluate(fed::local_update(c, global, s).params, ModelConfig{}, shard, s.weights).loss;
    lower += after < before;
  }
  EXPECT_GE(lower, 9);
}

TEST(LocalUpdate, Errors) {
  auto s = settings();
  auto c = fed::make_client(0, {}, ModelConfig{}, s);
  const auto global = fed::initial_params(ModelConfig{}, 1);
  EXPECT_THROW(fed::local_update(c, global, s), std::invalid_argument);
  auto c2 = fed::make_client(0, corpus(4, 1), ModelConfig{}, s);
  s.local_epochs = 0;
  EXPECT_THROW(fed::local_update(c2, global, s), std::invalid_argument);
}

// ---------------------------------------------------------------- run_rounds

data::ProtocolSplit small_split(std::uint64_t seed, std::size_t n_train = 96, std::size_t n_test = 40) {
  return data::build_protocol(data::Protocol::hybrid, n_train, n_test, std::nullopt, seed);
}

fed::FederationConfig small_config(std::size_t k, std::size_t rounds) {
  fed::FederationConfig cfg;
  cfg.clients = k;
  cfg.rounds = rounds;
  cfg.train.master_seed = 5;
  cfg.train.batch_size = 16;
  return cfg;
}

TEST(RunRounds, ZeroRoundsReturnsInitialization) {
  const auto cfg = small_config(3, 0);
  const auto r = fed::run_rounds(cfg, small_split(1));
  EXPECT_TRUE(testing::bit_identical(r.final_params, fed::initial_params(cfg.model, 5)));
  ASSERT_EQ(r.logs.size(), 1u);
  EXPECT_EQ(r.logs[0].round, 0u);
  EXPECT_TRUE(r.logs[0].clients.empty());
}

TEST(RunRounds, SingleClientMatchesCentralizedTraining) {
  auto cfg = small_config(1, 3);
  cfg.train.local_epochs = 2;
  const auto split = small_split(2);
  EXPECT_TRUE(testing::bit_identical(fed::run_rounds(cfg, split).final_params,
                                     fed::train_centralized(cfg, split)));
}

TEST(RunRounds, IdenticalClientsAggregateToThemselves) {
  const auto s = settings();
  const auto shard = corpus(48, 3);
  const auto global = fed::initial_params(ModelConfig{}, 3);
  fed::Server server(global);
  std::vector<fed::ClientUpdate> ups;
  for (int k = 0; k < 3; ++k) {
    auto c = fed::make_client(7, shard, ModelConfig{}, s);  // same id, so same shuffles
    ups.push_back(fed::local_update(c, global, s));
  }
  const auto& agg = server.aggregate(ups);
  for (const auto& u : ups)
    for (std::size_t t = 0; t < agg.size(); ++t)
      for (std::size_t i = 0; i < agg.entries()[t].values.size(); ++i)
        ASSERT_NEAR(agg.entries()[t].values[i], u.params.entries()[t].values[i], 1e-6);
}

TEST(RunRounds, LogsAndDeterminismAcrossWorkerCounts) {
  const auto split = small_split(4);
  auto cfg = small_config(4, 2);
  cfg.scheme = PartitionScheme::per_artifact;
  const auto seq = fed::run_rounds(cfg, split);
  cfg.workers = 4;
  const auto par = fed::run_rounds(cfg, split);
  EXPECT_TRUE(testing::bit_identical(seq.final_params, par.final_params));
  ASSERT_EQ(seq.logs.size(), 3u);
  for (std::size_t r = 0; r < seq.logs.size(); ++r) {
    EXPECT_EQ(seq.logs[r].round, r);
    EXPECT_EQ(seq.logs[r].global_accuracy, par.logs[r].global_accuracy);
    EXPECT_EQ(seq.logs[r].global_loss, par.logs[r].global_loss);
    EXPECT_EQ(seq.logs[r].clients.size(), r == 0 ? 0u : 4u);
  }
  const auto w = fed::shard_weights(seq.shard_sizes);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
}

// ---------------------------------------------------------------- evaluate

TEST(Evaluate, PureAndRepeatable) {
  const auto params = fed::initial_params(ModelConfig{}, 9);
  const auto test = corpus(30, 9);
  auto model = FfdModel::init(ModelConfig{}, 0);
  model.import_params(params);
  const auto a = fed::evaluate(model, test, LossWeights{});
  const auto b = fed::evaluate(model, test, LossWeights{});
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.auc, b.auc);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.scored.scores, b.scored.scores);
  EXPECT_TRUE(testing::bit_identical(model.export_params(), params));
  for (const auto& t : model.parameters()) EXPECT_FALSE(t.has_grad());
}

TEST(Evaluate, ConstantClassifierScoresBaseRate) {
  auto model = FfdModel::init(ModelConfig{}, 10);
  std::fill(model.cls.fc_w.data().begin(), model.cls.fc_w.data().end(), 0.0f);
  model.cls.fc_b.data()[0] = 1.0f;  // always "real"
  std::vector<Sample> test;
  std::size_t fakes = 0;
  for (auto& s : corpus(20, 10))
    if (s.label == 0 || ++fakes <= 4) test.push_back(std::move(s));
  const auto reals = static_cast<double>(std::count_if(test.begin(), test.end(), [](auto& s) { return s.label == 0; }));
  const auto r = fed::evaluate(model, test, LossWeights{});
  EXPECT_EQ(r.accuracy, reals / static_cast<double>(test.size()));
  EXPECT_EQ(r.auc, 0.5);
}

}  // namespace
}  // namespace fedforge
