#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairbayes/dataset.hpp"
#include "fairbayes/error.hpp"

namespace fairbayes::metrics {

/// Floor applied to positive-rate estimates before forming ratios, so audits
/// complete even when a group receives no positive predictions.
inline constexpr double kRateFloor = 1e-12;

struct GroupTally {
  std::size_t count = 0;
  std::size_t positive_predictions = 0;
  std::size_t positive_labels = 0;
};

/// Per-group prediction and label tallies, the substrate of every fairness
/// metric below.
struct GroupStats {
  std::map<GroupKey, GroupTally> groups;

  static GroupStats from_predictions(const Dataset& ds, std::span<const int> predictions) {
    if (predictions.size() != ds.size())
      throw data_error("group stats: prediction count does not match dataset size");
    GroupStats stats;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto& tally = stats.groups[ds.groups[i]];
      ++tally.count;
      if (predictions[i] == 1) ++tally.positive_predictions;
      if (ds.labels[i] == 1) ++tally.positive_labels;
    }
    return stats;
  }

  /// Tallies where the labels stand in for predictions; feeding these to
  /// df_epsilon yields the dataset's own epsilon.
  static GroupStats from_labels(const Dataset& ds) {
    GroupStats stats;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto& tally = stats.groups[ds.groups[i]];
      ++tally.count;
      if (ds.labels[i] == 1) {
        ++tally.positive_predictions;
        ++tally.positive_labels;
      }
    }
    return stats;
  }

  std::map<GroupKey, double> prediction_rates() const {
    std::map<GroupKey, double> rates;
    for (const auto& [g, t] : groups)
      rates[g] = static_cast<double>(t.positive_predictions) / static_cast<double>(t.count);
    return rates;
  }
};

namespace detail {

inline double rate_of(const GroupStats& stats, const GroupKey& g) {
  auto it = stats.groups.find(g);
  if (it == stats.groups.end()) throw data_error("metrics: group " + g.str() + " missing from stats");
  return static_cast<double>(it->second.positive_predictions) / static_cast<double>(it->second.count);
}

inline void check_partition(const std::set<GroupKey>& sp, const std::set<GroupKey>& snp) {
  if (sp.empty()) throw config_error("metrics: privileged set S_p is empty");
  if (snp.empty()) throw config_error("metrics: non-privileged set S_np is empty");
}

}  // namespace detail

/// Statistical parity score: max over S_p of P(yhat=1|s_p) minus min over
/// S_np of P(yhat=1|s_np). Zero at parity; negative signals over-correction.
inline double parity_disc(const GroupStats& stats, const std::set<GroupKey>& sp,
                          const std::set<GroupKey>& snp) {
  detail::check_partition(sp, snp);
  double max_p = -std::numeric_limits<double>::infinity();
  double min_np = std::numeric_limits<double>::infinity();
  for (const auto& g : sp) max_p = std::max(max_p, detail::rate_of(stats, g));
  for (const auto& g : snp) min_np = std::min(min_np, detail::rate_of(stats, g));
  return max_p - min_np;
}

/// Mean over all ordered (s_p, s_np) pairs of P(yhat=1|s_np) / P(yhat=1|s_p),
/// with both rates floored at kRateFloor. 1 at parity, < 1 disadvantages
/// non-privileged groups, > 1 over-corrects.
inline double disparate_impact_mean(const GroupStats& stats, const std::set<GroupKey>& sp,
                                    const std::set<GroupKey>& snp) {
  detail::check_partition(sp, snp);
  double total = 0.0;
  for (const auto& p : sp) {
    const double rp = std::max(detail::rate_of(stats, p), kRateFloor);
    for (const auto& np : snp) {
      const double rnp = std::max(detail::rate_of(stats, np), kRateFloor);
      total += rnp / rp;
    }
  }
  return total / (static_cast<double>(sp.size()) * static_cast<double>(snp.size()));
}

namespace detail {

// Smoothed P~(yhat | s) per group and label, floored at kRateFloor.
// `pos` selects the prediction or the label tally.
inline std::vector<std::array<double, 2>> smoothed_rates(const GroupStats& stats, double alpha,
                                                         bool use_labels) {
  if (stats.groups.size() < 2) throw data_error("df_epsilon: needs at least two groups");
  if (!(alpha >= 0.0)) throw config_error("df_epsilon: alpha must be >= 0");
  const double beta = 2.0 * alpha;
  std::vector<std::array<double, 2>> rates;
  rates.reserve(stats.groups.size());
  for (const auto& [g, t] : stats.groups) {
    const double n = static_cast<double>(t.count);
    const double pos = static_cast<double>(use_labels ? t.positive_labels : t.positive_predictions);
    const double denom = n + beta;
    if (!(denom > 0.0)) throw data_error("df_epsilon: group " + g.str() + " has no mass");
    rates.push_back({std::max((n - pos + alpha) / denom, kRateFloor),
                     std::max((pos + alpha) / denom, kRateFloor)});
  }
  return rates;
}

inline double epsilon_from_rates(const std::vector<std::array<double, 2>>& rates) {
  std::vector<std::array<double, 2>> logs(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i)
    logs[i] = {std::log(rates[i][0]), std::log(rates[i][1])};
  double eps = 0.0;
  for (std::size_t a = 0; a < logs.size(); ++a)
    for (std::size_t b = 0; b < logs.size(); ++b) {
      if (a == b) continue;
      for (int y = 0; y < 2; ++y) eps = std::max(eps, logs[a][y] - logs[b][y]);
    }
  return eps;
}

}  // namespace detail

/// Smoothed empirical differential-fairness score over the predictions:
/// the max over all ordered group pairs and both labels of
/// ln [(N(yhat,s)+alpha)/(N(s)+beta) * (N(s')+beta)/(N(yhat,s')+alpha)],
/// with beta = 2 alpha. Ranges over every group pair, not only S_p x S_np.
inline double df_epsilon(const GroupStats& stats, double alpha) {
  return detail::epsilon_from_rates(detail::smoothed_rates(stats, alpha, false));
}

/// Same bound evaluated on the true labels: the dataset's own epsilon,
/// the epsilon_1 of the bias-amplification measure.
inline double dataset_epsilon(const GroupStats& stats, double alpha) {
  return detail::epsilon_from_rates(detail::smoothed_rates(stats, alpha, true));
}

/// DF bias amplification: classifier epsilon minus dataset epsilon. Negative
/// means the classifier is fairer than its training data.
inline double df_bias_amplification(double classifier_eps, double dataset_eps) {
  return classifier_eps - dataset_eps;
}

inline double accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) throw data_error("accuracy: length mismatch");
  if (predictions.empty()) throw data_error("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predictions[i] == truth[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

/// Mann-Whitney AUC: the probability that a random positive outranks a random
/// negative, with 0.5 credit for tied scores (average-rank formulation).
inline double auc(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw data_error("auc: length mismatch");
  for (double s : scores)
    if (std::isnan(s)) throw data_error("auc: NaN score");
  const std::size_t n = truth.size();
  std::size_t n_pos = 0;
  for (int y : truth) n_pos += y == 1 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw data_error("auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (truth[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Full metric suite for one evaluation: accuracy, AUC, disparate impact,
/// parity disc, DF-epsilon, DF bias amplification, plus the per-group rates.
struct FairnessReport {
  double accuracy = 0.0;
  double auc = 0.0;
  double disparate_impact_mean = 0.0;
  double parity_disc = 0.0;
  double df_epsilon = 0.0;
  double dataset_epsilon = 0.0;
  double df_bias_amplification = 0.0;
  bool rate_floor_applied = false;

  struct GroupRow {
    GroupKey group;
    std::size_t count = 0;
    double positive_rate = 0.0;
    bool privileged = false;
  };
  std::vector<GroupRow> group_breakdown;

  nlohmann::json to_json() const {
    nlohmann::json breakdown = nlohmann::json::array();
    for (const auto& row : group_breakdown)
      breakdown.push_back({{"group", row.group.values},
                           {"count", row.count},
                           {"positive_rate", row.positive_rate},
                           {"privileged", row.privileged}});
    return {{"accuracy", accuracy},
            {"auc", auc},
            {"disparate_impact_mean", disparate_impact_mean},
            {"parity_disc", parity_disc},
            {"df_epsilon", df_epsilon},
            {"dataset_epsilon", dataset_epsilon},
            {"df_bias_amplification", df_bias_amplification},
            {"rate_floor_applied", rate_floor_applied},
            {"group_breakdown", breakdown}};
  }
};

/// Column order mirrors the usual reporting layout.
inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{"auc", "accuracy", "disparate_impact_mean",
                                             "parity_disc", "df_epsilon", "df_bias_amplification"};
  return cols;
}

inline double metric_value(const FairnessReport& r, const std::string& name) {
  if (name == "auc") return r.auc;
  if (name == "accuracy") return r.accuracy;
  if (name == "disparate_impact_mean") return r.disparate_impact_mean;
  if (name == "parity_disc") return r.parity_disc;
  if (name == "df_epsilon") return r.df_epsilon;
  if (name == "df_bias_amplification") return r.df_bias_amplification;
  throw config_error("unknown metric '" + name + "'");
}

inline FairnessReport evaluate(const Dataset& ds, std::span<const int> predictions,
                               std::span<const double> scores, const std::set<GroupKey>& sp,
                               const std::set<GroupKey>& snp, double alpha) {
  const GroupStats stats = GroupStats::from_predictions(ds, predictions);
  FairnessReport r;
  r.accuracy = accuracy(predictions, ds.labels);
  r.auc = auc(scores, ds.labels);
  r.parity_disc = parity_disc(stats, sp, snp);
  r.disparate_impact_mean = disparate_impact_mean(stats, sp, snp);
  r.df_epsilon = df_epsilon(stats, alpha);
  r.dataset_epsilon = dataset_epsilon(stats, alpha);
  r.df_bias_amplification = df_bias_amplification(r.df_epsilon, r.dataset_epsilon);

  const auto rates = stats.prediction_rates();
  for (const auto& [g, t] : stats.groups) {
    const double rate = rates.at(g);
    if (sp.count(g) > 0 && rate <= 0.0) r.rate_floor_applied = true;
    if (alpha == 0.0 &&
        (t.positive_predictions == 0 || t.positive_predictions == t.count)) {
      r.rate_floor_applied = true;
    }
    r.group_breakdown.push_back({g, t.count, rate, sp.count(g) > 0});
  }
  return r;
}

}  // namespace fairbayes::metrics
