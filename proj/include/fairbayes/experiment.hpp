#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairbayes/balancing.hpp"
#include "fairbayes/dataset.hpp"
#include "fairbayes/error.hpp"
#include "fairbayes/gnb.hpp"
#include "fairbayes/metrics.hpp"
#include "fairbayes/nnb.hpp"

namespace fairbayes::experiment {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Mode { gnb_baseline, nnb_parity, nnb_df, perfect };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::gnb_baseline: return "gnb_baseline";
    case Mode::nnb_parity: return "nnb_parity";
    case Mode::nnb_df: return "nnb_df";
    case Mode::perfect: return "perfect";
  }
  return "unknown";
}

inline Mode mode_from_string(const std::string& name) {
  if (name == "gnb_baseline") return Mode::gnb_baseline;
  if (name == "nnb_parity") return Mode::nnb_parity;
  if (name == "nnb_df") return Mode::nnb_df;
  if (name == "perfect") return Mode::perfect;
  throw config_error("unknown mode '" + name +
                     "' (expected gnb_baseline|nnb_parity|nnb_df|perfect)");
}

/// Everything one run needs: data, schema, mode list, smoothing, balancing
/// settings, and the split plan. Mode-specific fields are validated before
/// any work starts.
struct RunConfig {
  std::string data_path;
  Schema schema;
  std::vector<Mode> modes{Mode::gnb_baseline, Mode::nnb_parity, Mode::nnb_df, Mode::perfect};
  double alpha = 1.0;
  nnb::FitOptions fit;
  balancing::BalanceConfig balance;
  std::size_t splits = 10;
  std::uint64_t base_seed = 0;
  double test_fraction = 0.3;
  std::string model_path;  // evaluate input / train output
  std::string out_path;

  void validate() const {
    schema.validate();
    balance.validate();
    if (!(alpha >= 0.0)) throw config_error("config: alpha must be >= 0");
    if (modes.empty()) throw config_error("config: at least one mode required");
    if (splits == 0) throw config_error("config: splits must be >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw config_error("config: test_fraction must lie in (0, 1)");
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      c.data_path = j.value("data", "");
      if (j.contains("schema_path")) {
        const auto path = j.at("schema_path").get<std::string>();
        std::ifstream in(path);
        if (!in) throw config_error("config: cannot open schema file '" + path + "'");
        c.schema = Schema::from_json(nlohmann::json::parse(in));
      } else if (j.contains("schema")) {
        c.schema = Schema::from_json(j.at("schema"));
      }
      if (j.contains("modes")) {
        c.modes.clear();
        for (const auto& m : j.at("modes")) c.modes.push_back(mode_from_string(m.get<std::string>()));
      } else if (j.contains("mode")) {
        c.modes = {mode_from_string(j.at("mode").get<std::string>())};
      }
      c.alpha = j.value("alpha", 1.0);
      if (j.contains("fit")) {
        const auto& f = j.at("fit");
        c.fit.min_group_size = f.value("min_group_size", std::size_t{2});
        c.fit.fit_fallback = f.value("fallback", false);
        c.fit.require_partition = f.value("require_partition", true);
      }
      if (j.contains("balance")) {
        const auto& b = j.at("balance");
        c.balance.delta = b.value("delta", 0.01);
        c.balance.disc_threshold = b.value("disc_threshold", 0.01);
        c.balance.max_iters = b.value("max_iters", std::size_t{10000});
        c.balance.growth = b.value("growth", 1.05);
        c.balance.delta_cap = b.value("delta_cap", 0.25);
      }
      c.splits = j.value("splits", std::size_t{10});
      c.base_seed = j.value("base_seed", std::uint64_t{0});
      c.test_fraction = j.value("test_fraction", 0.3);
      c.model_path = j.value("model", "");
      c.out_path = j.value("out", "");
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("config: ") + e.what());
    }
    return c;
  }

  /// Deterministic dump used for hashing and for the result body.
  nlohmann::json canonical_json() const {
    nlohmann::json ms = nlohmann::json::array();
    for (Mode m : modes) ms.push_back(to_string(m));
    return {{"data", data_path},
            {"schema", schema.to_json()},
            {"modes", ms},
            {"alpha", alpha},
            {"fit",
             {{"min_group_size", fit.min_group_size},
              {"fallback", fit.fit_fallback},
              {"require_partition", fit.require_partition}}},
            {"balance",
             {{"delta", balance.delta},
              {"disc_threshold", balance.disc_threshold},
              {"max_iters", balance.max_iters},
              {"growth", balance.growth},
              {"delta_cap", balance.delta_cap}}},
            {"splits", splits},
            {"base_seed", base_seed},
            {"test_fraction", test_fraction}};
  }
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(cfg.canonical_json().dump())));
  return buf;
}

/// A fitted (and possibly balanced) classifier ready for evaluation.
struct TrainedModel {
  Mode mode = Mode::gnb_baseline;
  double alpha = 1.0;
  Schema schema;
  std::optional<nnb::NNBModel> nnb_model;            // nnb_parity / nnb_df
  std::optional<gnb::GaussianNBModel> global_model;  // gnb_baseline
  std::optional<balancing::BalanceTrace> trace;      // balancing runs only
};

inline TrainedModel train_model(Mode mode, const Dataset& train, const RunConfig& cfg) {
  TrainedModel tm;
  tm.mode = mode;
  tm.alpha = cfg.alpha;
  tm.schema = train.schema;
  switch (mode) {
    case Mode::gnb_baseline:
      tm.global_model = gnb::fit(train.features, train.n_features, train.labels);
      break;
    case Mode::nnb_parity: {
      auto fitted = nnb::fit(train, cfg.alpha, cfg.fit);
      auto [balanced, trace] = balancing::balance_parity(fitted, train, cfg.balance);
      tm.nnb_model = std::move(balanced);
      tm.trace = std::move(trace);
      break;
    }
    case Mode::nnb_df: {
      auto fitted = nnb::fit(train, cfg.alpha, cfg.fit);
      auto [balanced, trace] = balancing::balance_df(fitted, train, cfg.balance);
      tm.nnb_model = std::move(balanced);
      tm.trace = std::move(trace);
      break;
    }
    case Mode::perfect:
      break;  // evaluates the true labels as predictions
  }
  return tm;
}

struct Predictions {
  std::vector<int> labels;
  std::vector<double> scores;  // P(y=1 | x) per sample
};

inline Predictions predict_dataset(const TrainedModel& tm, const Dataset& ds) {
  Predictions p;
  p.labels.reserve(ds.size());
  p.scores.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    switch (tm.mode) {
      case Mode::gnb_baseline:
        p.labels.push_back(gnb::predict(*tm.global_model, ds.row(i)));
        p.scores.push_back(gnb::predict_proba(*tm.global_model, ds.row(i)));
        break;
      case Mode::nnb_parity:
      case Mode::nnb_df:
        p.labels.push_back(nnb::predict(*tm.nnb_model, ds.row(i), ds.groups[i]));
        p.scores.push_back(nnb::predict_proba(*tm.nnb_model, ds.row(i), ds.groups[i]));
        break;
      case Mode::perfect:
        p.labels.push_back(ds.labels[i]);
        p.scores.push_back(static_cast<double>(ds.labels[i]));
        break;
    }
  }
  return p;
}

/// Runs the full metric suite on `ds`, partitioning its observed groups by
/// the schema's privileged patterns.
inline metrics::FairnessReport evaluate_model(const TrainedModel& tm, const Dataset& ds) {
  if (!tm.schema.columns_match(ds.schema)) {
    std::string message = "model/data schema mismatch:";
    if (tm.schema.label_column != ds.schema.label_column)
      message += " label '" + tm.schema.label_column + "' vs '" + ds.schema.label_column + "';";
    if (tm.schema.positive_label != ds.schema.positive_label)
      message += " positive_label '" + tm.schema.positive_label + "' vs '" +
                 ds.schema.positive_label + "';";
    if (tm.schema.sensitive_columns != ds.schema.sensitive_columns) message += " sensitive columns;";
    if (tm.schema.feature_columns != ds.schema.feature_columns) message += " feature columns;";
    throw config_error(message);
  }
  auto [sp, snp] = partition_privileged(ds);
  const auto preds = predict_dataset(tm, ds);
  return metrics::evaluate(ds, preds.labels, preds.scores, sp, snp, tm.alpha);
}

struct MetricAggregate {
  double mean = 0.0;
  double variance = 0.0;  // population variance over splits
};

struct ModeResult {
  Mode mode = Mode::gnb_baseline;
  std::vector<metrics::FairnessReport> per_split;
  std::map<std::string, MetricAggregate> aggregate;
};

struct ExperimentResult {
  RunConfig config;
  std::string hash;
  std::vector<ModeResult> modes;

  /// The deterministic result body; timestamps and the like live outside it.
  nlohmann::json body_json() const {
    nlohmann::json mode_entries = nlohmann::json::array();
    for (const auto& mr : modes) {
      nlohmann::json splits = nlohmann::json::array();
      for (const auto& r : mr.per_split) splits.push_back(r.to_json());
      nlohmann::json agg;
      for (const auto& [name, a] : mr.aggregate)
        agg[name] = {{"mean", a.mean}, {"variance", a.variance}};
      mode_entries.push_back({{"mode", to_string(mr.mode)},
                              {"per_split", splits},
                              {"aggregate", agg}});
    }
    return {{"config", config.canonical_json()},
            {"config_hash", hash},
            {"tool_version", kToolVersion},
            {"modes", mode_entries}};
  }

  /// Aligned table: rows are modes, columns AUC, Accuracy, DI, Parity,
  /// DF-eps, DF-amp, formatted mean +/- variance.
  std::string table() const {
    static const std::vector<std::pair<std::string, std::string>> columns{
        {"auc", "AUC"},
        {"accuracy", "Accuracy"},
        {"disparate_impact_mean", "DI"},
        {"parity_disc", "Parity"},
        {"df_epsilon", "DF-eps"},
        {"df_bias_amplification", "DF-amp"}};
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-14s", "model");
    out << buf;
    for (const auto& [key, title] : columns) {
      std::snprintf(buf, sizeof buf, " %-19s", title.c_str());
      out << buf;
    }
    out << '\n';
    for (const auto& mr : modes) {
      std::snprintf(buf, sizeof buf, "%-14s", to_string(mr.mode));
      out << buf;
      for (const auto& [key, title] : columns) {
        const auto& a = mr.aggregate.at(key);
        std::snprintf(buf, sizeof buf, " %8.4f \xc2\xb1 %7.4f", a.mean, a.variance);
        out << buf;
      }
      out << '\n';
    }
    return out.str();
  }
};

/// Benchmark protocol: for each split seed (base_seed + index), split the
/// data, fit and balance per mode, and evaluate on the held-out part.
/// Aggregates report the mean and population variance per metric.
inline ExperimentResult run_benchmark(const RunConfig& cfg, const Dataset& full) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  result.hash = config_hash(cfg);
  for (Mode m : cfg.modes) result.modes.push_back(ModeResult{m, {}, {}});

  for (std::size_t s = 0; s < cfg.splits; ++s) {
    const std::uint64_t seed = cfg.base_seed + s;
    try {
      auto [train, test] = split(full, SplitSpec{cfg.test_fraction, seed});
      for (auto& mr : result.modes) {
        const TrainedModel tm = train_model(mr.mode, train, cfg);
        mr.per_split.push_back(evaluate_model(tm, test));
      }
    } catch (const config_error& e) {
      throw config_error("split " + std::to_string(s) + " (seed " + std::to_string(seed) +
                         "): " + e.what());
    } catch (const data_error& e) {
      throw data_error("split " + std::to_string(s) + " (seed " + std::to_string(seed) +
                       "): " + e.what());
    }
  }

  for (auto& mr : result.modes) {
    for (const auto& name : metrics::metric_columns()) {
      MetricAggregate agg;
      const double n = static_cast<double>(mr.per_split.size());
      for (const auto& r : mr.per_split) agg.mean += metrics::metric_value(r, name);
      agg.mean /= n;
      for (const auto& r : mr.per_split) {
        const double diff = metrics::metric_value(r, name) - agg.mean;
        agg.variance += diff * diff;
      }
      agg.variance /= n;
      mr.aggregate[name] = agg;
    }
  }
  return result;
}

// Model file format: a kind marker plus the parameters that kind needs.

inline nlohmann::json model_to_json(const TrainedModel& tm) {
  nlohmann::json j{{"kind", to_string(tm.mode)},
                   {"alpha", tm.alpha},
                   {"schema", tm.schema.to_json()}};
  if (tm.nnb_model) j["nnb"] = nnb::to_json(*tm.nnb_model);
  if (tm.global_model) j["global"] = gnb::to_json(*tm.global_model);
  if (tm.trace) j["balance_summary"] = tm.trace->summary_json();
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  TrainedModel tm;
  try {
    tm.mode = mode_from_string(j.at("kind").get<std::string>());
    tm.alpha = j.at("alpha").get<double>();
    tm.schema = Schema::from_json(j.at("schema"));
    if (j.contains("nnb")) tm.nnb_model = nnb::from_json(j.at("nnb"));
    if (j.contains("global")) tm.global_model = gnb::from_json(j.at("global"));
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("model file: ") + e.what());
  }
  if ((tm.mode == Mode::nnb_parity || tm.mode == Mode::nnb_df) && !tm.nnb_model)
    throw data_error("model file: nnb parameters missing");
  if (tm.mode == Mode::gnb_baseline && !tm.global_model)
    throw data_error("model file: global estimator missing");
  return tm;
}

}  // namespace fairbayes::experiment
