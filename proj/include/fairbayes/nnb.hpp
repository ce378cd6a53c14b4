#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairbayes/dataset.hpp"
#include "fairbayes/error.hpp"
#include "fairbayes/gnb.hpp"

namespace fairbayes::nnb {

/// Real-valued pseudo-count table N(y, s) defining the joint P(Y, S).
/// This is the only model state the balancing routines mutate.
struct CountTable {
  std::map<GroupKey, std::array<double, 2>> counts;  // group -> {N(y=0,s), N(y=1,s)}
  double alpha = 1.0;                                // symmetric Dirichlet smoothing

  double total_mass() const {
    double total = 0.0;
    for (const auto& [g, c] : counts) total += c[0] + c[1];
    return total;
  }

  double smoothed_total() const {
    double total = 0.0;
    for (const auto& [g, c] : counts) total += c[0] + alpha + c[1] + alpha;
    return total;
  }

  const std::array<double, 2>& at(const GroupKey& s) const {
    auto it = counts.find(s);
    if (it == counts.end()) throw data_error("count table: unknown group " + s.str());
    return it->second;
  }
};

/// Smoothed empirical P(y | s) = (N(y,s) + alpha) / (N(s) + 2 alpha).
inline double conditional_prob(const CountTable& t, int y, const GroupKey& s) {
  const auto& c = t.at(s);
  return (c[y] + t.alpha) / (c[0] + c[1] + 2.0 * t.alpha);
}

/// Joint log P(y, s) with the same per-cell smoothing, normalized over the
/// whole table: log[(N(y,s) + alpha) / sum_{y',s'} (N(y',s') + alpha)].
inline double joint_log_prob(const CountTable& t, int y, const GroupKey& s) {
  const auto& c = t.at(s);
  return std::log((c[y] + t.alpha) / t.smoothed_total());
}

struct FitOptions {
  std::size_t min_group_size = 2;
  bool fit_fallback = false;      // pool a global estimator for unseen groups
  bool require_partition = true;  // demand non-empty privileged and non-privileged sets
};

/// The N-naive-Bayes ensemble: one Gaussian sub-estimator per observed group
/// plus the joint pseudo-count table. Immutable after fit/balancing;
/// prediction is reentrant.
struct NNBModel {
  Schema schema;
  std::map<GroupKey, gnb::GaussianNBModel> sub_estimators;
  CountTable count_table;
  std::set<GroupKey> privileged;      // S_p
  std::set<GroupKey> non_privileged;  // S_np
  std::optional<gnb::GaussianNBModel> fallback;
  FitOptions options;
};

/// Partitions the training data by group, fits one sub-estimator per group,
/// and initializes the count table from the raw label counts.
inline NNBModel fit(const Dataset& train, double alpha, const FitOptions& options = {}) {
  if (!(alpha >= 0.0)) throw config_error("nnb: alpha must be >= 0");
  if (train.size() == 0) throw data_error("nnb: cannot fit on an empty dataset");

  NNBModel model;
  model.schema = train.schema;
  model.options = options;
  model.count_table.alpha = alpha;

  const auto by_group = train.index_by_group();
  for (const auto& [group, rows] : by_group) {
    if (rows.size() < options.min_group_size)
      throw data_error("nnb: group " + group.str() + " has " + std::to_string(rows.size()) +
                       " samples, fewer than min_group_size=" + std::to_string(options.min_group_size));
    std::vector<double> features;
    features.reserve(rows.size() * train.n_features);
    std::vector<int> labels;
    labels.reserve(rows.size());
    std::array<double, 2> cells{0.0, 0.0};
    for (std::size_t i : rows) {
      const auto r = train.row(i);
      features.insert(features.end(), r.begin(), r.end());
      labels.push_back(train.labels[i]);
      cells[train.labels[i]] += 1.0;
    }
    model.sub_estimators.emplace(group, gnb::fit(features, train.n_features, labels));
    model.count_table.counts.emplace(group, cells);
  }

  auto [sp, snp] = detail::match_privileged(train.schema, train.observed_groups());
  if (options.require_partition) {
    if (sp.empty())
      throw config_error("nnb: privileged patterns match no observed group");
    if (snp.empty())
      throw config_error("nnb: privileged patterns match every observed group");
  }
  model.privileged = std::move(sp);
  model.non_privileged = std::move(snp);

  if (options.fit_fallback)
    model.fallback = gnb::fit(train.features, train.n_features, train.labels);
  return model;
}

/// Unnormalized log scores per class: log P(x|y,s) + log P(y,s). For a group
/// unseen at fit time the fallback estimator is used (when enabled) with the
/// joint factor replaced by the smoothed global P(y).
inline std::array<double, 2> predict_scores(const NNBModel& m, std::span<const double> x,
                                            const GroupKey& s) {
  auto it = m.sub_estimators.find(s);
  if (it != m.sub_estimators.end()) {
    const auto lik = gnb::log_likelihood(it->second, x);
    return {lik[0] + joint_log_prob(m.count_table, 0, s),
            lik[1] + joint_log_prob(m.count_table, 1, s)};
  }
  if (!m.fallback)
    throw data_error("nnb: group " + s.str() + " was not seen during fit and fallback is disabled");
  const auto lik = gnb::log_likelihood(*m.fallback, x);
  const double alpha = m.count_table.alpha;
  std::array<double, 2> marginal{0.0, 0.0};
  for (const auto& [g, c] : m.count_table.counts) {
    marginal[0] += c[0];
    marginal[1] += c[1];
  }
  const double total = marginal[0] + marginal[1];
  std::array<double, 2> out{};
  for (int y = 0; y < 2; ++y)
    out[y] = lik[y] + std::log((marginal[y] + alpha) / (total + 2.0 * alpha));
  return out;
}

/// Hard decision: argmax of the log scores, ties resolved to 0.
inline int predict(const NNBModel& m, std::span<const double> x, const GroupKey& s) {
  const auto scores = predict_scores(m, x, s);
  return scores[1] > scores[0] ? 1 : 0;
}

/// Softmax-normalized probability of the positive class.
inline double predict_proba(const NNBModel& m, std::span<const double> x, const GroupKey& s) {
  const auto scores = predict_scores(m, x, s);
  if (std::isinf(scores[0]) && std::isinf(scores[1])) return 0.5;
  return 1.0 / (1.0 + std::exp(scores[0] - scores[1]));
}

// Model persistence: one document bundling schema, count table, group sets,
// and per-group sub-estimator parameters.

inline nlohmann::json to_json(const NNBModel& m) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [g, c] : m.count_table.counts)
    table.push_back({{"group", g.values}, {"n0", c[0]}, {"n1", c[1]}});
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& [g, sub] : m.sub_estimators)
    subs.push_back({{"group", g.values}, {"model", gnb::to_json(sub)}});
  auto keys = [](const std::set<GroupKey>& s) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& g : s) out.push_back(g.values);
    return out;
  };
  return {{"schema", m.schema.to_json()},
          {"alpha", m.count_table.alpha},
          {"count_table", table},
          {"sub_estimators", subs},
          {"privileged", keys(m.privileged)},
          {"non_privileged", keys(m.non_privileged)},
          {"fallback", m.fallback ? gnb::to_json(*m.fallback) : nlohmann::json(nullptr)},
          {"options",
           {{"min_group_size", m.options.min_group_size},
            {"fit_fallback", m.options.fit_fallback},
            {"require_partition", m.options.require_partition}}}};
}

inline NNBModel from_json(const nlohmann::json& j) {
  NNBModel m;
  try {
    m.schema = Schema::from_json(j.at("schema"));
    m.count_table.alpha = j.at("alpha").get<double>();
    for (const auto& cell : j.at("count_table")) {
      GroupKey g{cell.at("group").get<std::vector<std::string>>()};
      m.count_table.counts[g] = {cell.at("n0").get<double>(), cell.at("n1").get<double>()};
    }
    for (const auto& sub : j.at("sub_estimators")) {
      GroupKey g{sub.at("group").get<std::vector<std::string>>()};
      m.sub_estimators.emplace(std::move(g), gnb::from_json(sub.at("model")));
    }
    for (const auto& g : j.at("privileged"))
      m.privileged.insert(GroupKey{g.get<std::vector<std::string>>()});
    for (const auto& g : j.at("non_privileged"))
      m.non_privileged.insert(GroupKey{g.get<std::vector<std::string>>()});
    if (!j.at("fallback").is_null()) m.fallback = gnb::from_json(j.at("fallback"));
    const auto& opts = j.at("options");
    m.options.min_group_size = opts.at("min_group_size").get<std::size_t>();
    m.options.fit_fallback = opts.at("fit_fallback").get<bool>();
    m.options.require_partition = opts.at("require_partition").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("nnb model: ") + e.what());
  }
  if (!(m.count_table.alpha >= 0.0)) throw data_error("nnb model: alpha must be >= 0");
  if (m.count_table.counts.empty() || !(m.count_table.total_mass() > 0.0))
    throw data_error("nnb model: count table must carry positive mass");
  for (const auto& [g, c] : m.count_table.counts) {
    if (!std::isfinite(c[0]) || !std::isfinite(c[1]))
      throw data_error("nnb model: non-finite count for group " + g.str());
    if (c[0] < 0.0 || c[1] < 0.0) throw data_error("nnb model: negative count for group " + g.str());
    if (m.sub_estimators.find(g) == m.sub_estimators.end())
      throw data_error("nnb model: group " + g.str() + " has counts but no sub-estimator");
  }
  for (const auto& [g, sub] : m.sub_estimators) {
    if (m.count_table.counts.find(g) == m.count_table.counts.end())
      throw data_error("nnb model: group " + g.str() + " has a sub-estimator but no counts");
    const bool in_p = m.privileged.count(g) > 0;
    const bool in_np = m.non_privileged.count(g) > 0;
    if (in_p == in_np)
      throw data_error("nnb model: group " + g.str() + " must appear in exactly one of S_p / S_np");
  }
  return m;
}

}  // namespace fairbayes::nnb
