#pragma once

// Subcommand implementations shared by the command-line tool and the tests.
// The run_* functions throw on failure; the cmd_* wrappers report the error
// and return a process exit code.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "fedforge/checkpoint.hpp"
#include "fedforge/config.hpp"
#include "fedforge/federated.hpp"
#include "fedforge/metrics.hpp"

namespace fedforge {

inline constexpr const char* kRoundsFile = "rounds.csv";
inline constexpr const char* kSweepFile = "sweep.csv";
inline constexpr const char* kCheckpointFile = "model.ffrg";
inline constexpr const char* kSnapshotFile = "config.snapshot";
inline constexpr const char* kEvalFile = "eval.csv";
inline constexpr const char* kRocFile = "roc.csv";

namespace cmd_detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return config_detail::format_number(v);
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

inline std::filesystem::path prepare_out_dir(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

template <class Fn>
int guarded(std::ostream& err, const char* name, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const std::exception& e) {
    err << "fedforge " << name << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cmd_detail

/// rounds.csv body. The loss column holds a client's mean local training loss
/// on client rows and the aggregated model's test-set loss on global rows.
/// Wall-clock time is left out so that reruns are byte-identical.
inline std::string rounds_csv(const fed::RunResult& run) {
  using cmd_detail::num;
  std::string out = "# fedforge rounds v1\nround,client_id,loss,accuracy,auc\n";
  for (const auto& log : run.logs) {
    const auto r = std::to_string(log.round);
    for (const auto& c : log.clients) {
      out += r + ',' + std::to_string(c.client_id) + ',' + num(c.train_loss) + ',' +
             num(c.accuracy) + ',' + num(c.auc) + '\n';
    }
    out += r + ",global," + num(log.global_loss) + ',' + num(log.global_accuracy) + ',' +
           num(log.global_auc) + '\n';
  }
  return out;
}

struct TrainOutcome {
  fed::RunResult run;
  std::filesystem::path out_dir;
};

/// Runs the configured experiment and writes rounds.csv, model.ffrg and
/// config.snapshot into cfg.out_dir.
inline TrainOutcome run_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto split = cfg.split();
  const auto dir = cmd_detail::prepare_out_dir(cfg);
  cmd_detail::write_file(dir / kSnapshotFile, config_snapshot(cfg));
  TrainOutcome out{fed::run_rounds(cfg.federation(), split), dir};
  for (const auto& l : out.run.logs) {
    log << "round " << l.round << ": global accuracy " << cmd_detail::num(l.global_accuracy)
        << " auc " << cmd_detail::num(l.global_auc) << " (" << l.wall_seconds << " s)\n";
  }
  cmd_detail::write_file(dir / kRoundsFile, rounds_csv(out.run));
  save_checkpoint(dir / kCheckpointFile, out.run.final_params);
  return out;
}

struct EvalReport {
  double accuracy = 0.0;
  double auc = 0.0;
  double loss = 0.0;
  std::size_t n_test = 0;
};

/// Scores a checkpoint on the configured test split; writes eval.csv and roc.csv.
inline EvalReport run_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                           std::ostream& log) {
  cfg.validate();
  const auto params = load_checkpoint(checkpoint);
  const auto split = cfg.split();
  const auto fc = cfg.federation();
  const auto ev = fed::evaluate(params, fc.model, split.test, fc.train.weights);
  EvalReport rep{ev.accuracy, ev.auc, ev.loss, split.test.size()};

  const auto dir = cmd_detail::prepare_out_dir(cfg);
  cmd_detail::write_file(dir / kEvalFile,
                         "# fedforge eval v1\nn_test,accuracy,auc,test_loss\n" +
                             std::to_string(rep.n_test) + ',' + cmd_detail::num(rep.accuracy) +
                             ',' + cmd_detail::num(rep.auc) + ',' + cmd_detail::num(rep.loss) + '\n');
  if (ev.scored.positives() > 0 && ev.scored.negatives() > 0) {
    std::ostringstream roc;
    metrics::write_roc_csv(roc, metrics::roc_points(ev.scored));
    cmd_detail::write_file(dir / kRocFile, roc.str());
  }
  log << "accuracy " << cmd_detail::num(rep.accuracy) << "\nauc " << cmd_detail::num(rep.auc)
      << "\ntest_loss " << cmd_detail::num(rep.loss) << "\nn_test " << rep.n_test << '\n';
  return rep;
}

inline constexpr const char* kSweepParams[] = {"beta", "mu2", "mu3"};

struct SweepRow {
  std::string value;
  double accuracy = 0.0;
  double auc = 0.0;
};

/// One full training run per value of `param`, sharing the master seed.
/// Writes sweep.csv; per-run artifacts are not kept.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                       const std::vector<std::string>& values, std::ostream& log) {
  if (std::find(std::begin(kSweepParams), std::end(kSweepParams), param) == std::end(kSweepParams)) {
    throw ConfigError("param", "can sweep beta, mu2 or mu3, not '" + param + "'");
  }
  if (values.empty()) throw ConfigError("values", "sweep needs at least one value");
  cfg.validate();
  const auto split = cfg.split();
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    ExperimentConfig run = cfg;
    set_config_value(run, param, v);
    run.validate();
    const auto result = fed::run_rounds(run.federation(), split);
    const auto& last = result.logs.back();
    rows.push_back({find_config_field(param)->get(run), last.global_accuracy, last.global_auc});
    log << param << " = " << rows.back().value << ": accuracy " << cmd_detail::num(last.global_accuracy)
        << " auc " << cmd_detail::num(last.global_auc) << '\n';
  }
  std::string csv = "# fedforge sweep v1\nparam,value,accuracy,auc\n";
  for (const auto& r : rows) {
    csv += param + ',' + r.value + ',' + cmd_detail::num(r.accuracy) + ',' + cmd_detail::num(r.auc) + '\n';
  }
  const auto dir = cmd_detail::prepare_out_dir(cfg);
  cmd_detail::write_file(dir / kSnapshotFile, config_snapshot(cfg));
  cmd_detail::write_file(dir / kSweepFile, csv);
  return rows;
}

/// Exports the configured split as PGM images under out_dir/{train,test},
/// each with a manifest.csv.
inline void run_datagen(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto split = cfg.split();
  const auto dir = cmd_detail::prepare_out_dir(cfg);
  for (const auto& [name, samples] : {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    std::ostringstream manifest;
    manifest << "filename,label,artifact_type,seed\n";
    data::export_samples(sub, name, *samples, manifest);
    cmd_detail::write_file(sub / "manifest.csv", manifest.str());
    log << "wrote " << samples->size() << " images to " << sub.string() << '\n';
  }
  cmd_detail::write_file(dir / kSnapshotFile, config_snapshot(cfg));
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  return cmd_detail::guarded(err, "train", [&] { run_train(cfg, out); });
}

inline int cmd_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                    std::ostream& out, std::ostream& err) {
  return cmd_detail::guarded(err, "eval", [&] { run_eval(checkpoint, cfg, out); });
}

inline int cmd_sweep(const ExperimentConfig& cfg, const std::string& param,
                     const std::vector<std::string>& values, std::ostream& out, std::ostream& err) {
  return cmd_detail::guarded(err, "sweep", [&] { run_sweep(cfg, param, values, out); });
}

inline int cmd_datagen(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  return cmd_detail::guarded(err, "datagen", [&] { run_datagen(cfg, out); });
}

}  // namespace fedforge
