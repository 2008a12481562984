#pragma once

// Experiment configuration: a flat `key = value` text format, typed parsing
// with field-named errors, and a canonical snapshot writer whose output
// parses back to the same configuration.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <vector>

#include "fedforge/datagen.hpp"
#include "fedforge/federated.hpp"
#include "fedforge/model.hpp"

namespace fedforge {

/// Raised for malformed or invalid configuration; `field()` names the key at fault.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, std::string detail, const std::string& where = "")
      : std::runtime_error((where.empty() ? "" : where + ": ") +
                           (field.empty() ? detail : field + ": " + detail)),
        field_(std::move(field)),
        detail_(std::move(detail)) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string field_;
  std::string detail_;
};

inline constexpr const char* kSeedEnvVar = "FEDFORGE_SEED";

struct ExperimentConfig {
  data::Protocol protocol = data::Protocol::hybrid;
  std::optional<std::int32_t> holdout_type;
  std::size_t k = 10;
  std::size_t local_epochs = 1;
  std::size_t rounds = 10;
  float learning_rate = 0.01f;
  float momentum = 0.5f;
  std::size_t batch_size = 32;
  LossWeights weights;
  std::size_t codebook_size = 32;
  std::size_t code_dim = 16;
  fed::PartitionScheme partition = fed::PartitionScheme::iid;
  std::size_t n_train = 2000;
  std::size_t n_test = 600;
  std::uint64_t seed = 1;
  std::string out_dir = "fedforge-out";
  std::size_t workers = 1;
  int corpus_version = data::kArtifactTable.version;

  void validate() const;

  fed::FederationConfig federation() const {
    fed::FederationConfig f;
    f.model.recnet.codebook_size = codebook_size;
    f.model.recnet.code_dim = code_dim;
    f.train.weights = weights;
    f.train.learning_rate = learning_rate;
    f.train.momentum = momentum;
    f.train.batch_size = batch_size;
    f.train.local_epochs = local_epochs;
    f.train.master_seed = seed;
    f.clients = k;
    f.rounds = rounds;
    f.scheme = partition;
    f.workers = workers;
    return f;
  }

  data::ProtocolSplit split() const {
    return data::build_protocol(protocol, n_train, n_test, holdout_type,
                                derive_seed({seed, fed::kDataTag}));
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& field, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError(field, "cannot parse '" + text + "' as a number");
  }
  return v;
}

inline float parse_float(const std::string& field, const std::string& text) {
  const auto v = parse_number<float>(field, text);
  if (!std::isfinite(v)) throw ConfigError(field, "value must be finite");
  return v;
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field numeric(std::string key, std::string help, T ExperimentConfig::*member) {
  return {key, std::move(help),
          [key, member](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = parse_float(key, v);
            } else {
              c.*member = parse_number<T>(key, v);
            }
          },
          [member](const ExperimentConfig& c) { return format_number(c.*member); }};
}

inline Field weight(std::string key, std::string help, float LossWeights::*member) {
  return {key, std::move(help),
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.weights.*member = parse_float(key, v);
          },
          [member](const ExperimentConfig& c) { return format_number(c.weights.*member); }};
}

}  // namespace config_detail

/// Every configurable key, in snapshot order.
inline const std::vector<config_detail::Field>& config_fields() {
  using namespace config_detail;
  static const std::vector<Field> fields = {
      {"protocol", "hybrid | generalized",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "hybrid") c.protocol = data::Protocol::hybrid;
         else if (v == "generalized") c.protocol = data::Protocol::generalized;
         else throw ConfigError("protocol", "expected hybrid or generalized, got '" + v + "'");
       },
       [](const ExperimentConfig& c) { return data::to_string(c.protocol); }},
      {"holdout_type", "artifact type withheld from training (0-4) or none",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "none") {
           c.holdout_type.reset();
           return;
         }
         c.holdout_type = parse_number<std::int32_t>("holdout_type", v);
       },
       [](const ExperimentConfig& c) {
         return c.holdout_type ? std::to_string(*c.holdout_type) : std::string("none");
       }},
      numeric("k", "number of data centers K", &ExperimentConfig::k),
      numeric("local_epochs", "local epochs per round E", &ExperimentConfig::local_epochs),
      numeric("rounds", "communication rounds t", &ExperimentConfig::rounds),
      numeric("learning_rate", "SGD learning rate", &ExperimentConfig::learning_rate),
      numeric("momentum", "SGD momentum", &ExperimentConfig::momentum),
      numeric("batch_size", "local batch size", &ExperimentConfig::batch_size),
      weight("mu1", "weight of the codebook loss", &LossWeights::mu1),
      weight("mu2", "weight of the reconstruction loss", &LossWeights::mu2),
      weight("mu3", "weight of the classification loss", &LossWeights::mu3),
      weight("alpha", "codebook alignment weight", &LossWeights::alpha),
      weight("beta", "encoder commitment weight", &LossWeights::beta),
      numeric("codebook_size", "number of codebook vectors m", &ExperimentConfig::codebook_size),
      numeric("code_dim", "codebook vector dimension d", &ExperimentConfig::code_dim),
      {"partition", "iid | per_artifact",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "iid") c.partition = fed::PartitionScheme::iid;
         else if (v == "per_artifact") c.partition = fed::PartitionScheme::per_artifact;
         else throw ConfigError("partition", "expected iid or per_artifact, got '" + v + "'");
       },
       [](const ExperimentConfig& c) { return fed::to_string(c.partition); }},
      numeric("n_train", "training set size", &ExperimentConfig::n_train),
      numeric("n_test", "test set size", &ExperimentConfig::n_test),
      numeric("seed", "master seed", &ExperimentConfig::seed),
      {"out_dir", "output directory",
       [](ExperimentConfig& c, const std::string& v) {
         if (v.empty()) throw ConfigError("out_dir", "must not be empty");
         c.out_dir = v;
       },
       [](const ExperimentConfig& c) { return c.out_dir; }},
      numeric("workers", "concurrent client threads", &ExperimentConfig::workers),
      numeric("corpus_version", "artifact table version", &ExperimentConfig::corpus_version),
  };
  return fields;
}

inline const config_detail::Field* find_config_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto* f = find_config_field(key);
  if (!f) throw ConfigError(key, "unknown configuration key");
  f->set(cfg, value);
}

inline void ExperimentConfig::validate() const {
  const auto positive = [](std::size_t v, const char* key, const char* what) {
    if (v == 0) throw ConfigError(key, std::string(what) + " must be >= 1");
  };
  positive(k, "k", "K (number of data centers)");
  positive(local_epochs, "local_epochs", "E (local epochs)");
  positive(batch_size, "batch_size", "batch size");
  positive(codebook_size, "codebook_size", "codebook size");
  positive(code_dim, "code_dim", "code dimension");
  positive(workers, "workers", "worker count");
  if (learning_rate < 0) throw ConfigError("learning_rate", "must be nonnegative");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum", "must lie in [0, 1)");
  const std::pair<const char*, float> ws[] = {{"mu1", weights.mu1}, {"mu2", weights.mu2},
                                              {"mu3", weights.mu3}, {"alpha", weights.alpha},
                                              {"beta", weights.beta}};
  for (const auto& [key, v] : ws)
    if (v < 0) throw ConfigError(key, "weight must be nonnegative");
  if (weights.mu1 == 0 && weights.mu2 == 0 && weights.mu3 == 0) {
    throw ConfigError("mu1", "mu1, mu2 and mu3 are all zero");
  }
  if (n_train < 2 || n_train % 2 != 0) throw ConfigError("n_train", "must be an even number >= 2");
  if (n_test < 2) throw ConfigError("n_test", "must be >= 2");
  if (k > n_train) throw ConfigError("k", "K exceeds the training set size");
  if (protocol == data::Protocol::generalized && !holdout_type) {
    throw ConfigError("holdout_type", "required by the generalized protocol");
  }
  if (protocol == data::Protocol::hybrid && holdout_type) {
    throw ConfigError("holdout_type", "only valid with the generalized protocol");
  }
  if (holdout_type && (*holdout_type < 0 || *holdout_type >= data::kNumArtifactTypes)) {
    throw ConfigError("holdout_type", "must be an artifact type in 0-4");
  }
  if (corpus_version != data::kArtifactTable.version) {
    throw ConfigError("corpus_version", "this build generates corpus version " +
                                            std::to_string(data::kArtifactTable.version));
  }
}

/// Applies `key = value` lines to `cfg`. Blank lines and `#` comments are skipped.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text,
                              const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const auto body = config_detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno);
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("", "expected 'key = value'", where);
    const auto key = config_detail::trim(std::string_view(body).substr(0, eq));
    const auto value = config_detail::trim(std::string_view(body).substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError(key, "key given twice", where);
    }
    seen.push_back(key);
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.field(), e.detail(), where);
    }
  }
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig cfg = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str(), path.string());
  return cfg;
}

/// Replaces the master seed with $FEDFORGE_SEED when set.
inline void apply_seed_env(ExperimentConfig& cfg) {
  if (const char* v = std::getenv(kSeedEnvVar); v && *v) {
    cfg.seed = config_detail::parse_number<std::uint64_t>(kSeedEnvVar, v);
  }
}

/// Layers settings: defaults < file < $FEDFORGE_SEED < explicit overrides,
/// then validates the result.
inline ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                       const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg;
  if (file) cfg = load_config_file(*file);
  apply_seed_env(cfg);
  for (const auto& [key, value] : overrides) set_config_value(cfg, key, value);
  cfg.validate();
  return cfg;
}

/// Canonical text form: every key in fixed order, shortest round-trip numbers.
inline std::string config_snapshot(const ExperimentConfig& cfg) {
  std::string out = "# fedforge config v1\n";
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace fedforge
