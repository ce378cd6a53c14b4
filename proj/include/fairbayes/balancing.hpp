#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairbayes/dataset.hpp"
#include "fairbayes/error.hpp"
#include "fairbayes/metrics.hpp"
#include "fairbayes/nnb.hpp"

namespace fairbayes::balancing {

struct BalanceConfig {
  double delta = 0.01;           // base step
  double disc_threshold = 0.01;  // disc_0
  std::size_t max_iters = 10000;
  double growth = 1.05;     // step growth factor, DF routine only
  double delta_cap = 0.25;  // max effective step, DF routine only

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw config_error("balance: delta must lie in (0, 1)");
    if (!(disc_threshold >= 0.0)) throw config_error("balance: disc_threshold must be >= 0");
    if (max_iters == 0) throw config_error("balance: max_iters must be positive");
    if (!(growth >= 1.0)) throw config_error("balance: growth must be >= 1");
    if (!(delta_cap >= delta && delta_cap < 1.0))
      throw config_error("balance: delta_cap must lie in [delta, 1)");
  }
};

enum class Termination { already_fair, converged, rollback, max_iters };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::already_fair: return "already_fair";
    case Termination::converged: return "converged";
    case Termination::rollback: return "rollback";
    case Termination::max_iters: return "max_iters";
  }
  return "unknown";
}

/// One balancing step. score_before/score_after carry the routine's own
/// criterion: disc for the parity routine, max(rho_d, rho_u) for DF.
struct BalanceStep {
  std::size_t iteration = 0;
  std::string branch;  // "raise_min" | "lower_max"
  GroupKey group;
  double delta_eff = 0.0;
  double score_before = 0.0;
  double score_after = 0.0;
  double rho_d = 0.0;  // DF routine only
  double rho_u = 0.0;  // DF routine only
  std::size_t predicted_positives = 0;
};

struct BalanceTrace {
  std::string routine;  // "parity" | "df"
  Termination termination = Termination::already_fair;
  double initial_score = 0.0;
  double final_score = 0.0;
  std::vector<BalanceStep> steps;

  std::size_t iterations() const { return steps.size(); }

  /// One JSON object per iteration (JSON-lines stream) for audit and debug.
  void write_jsonl(std::ostream& out) const {
    for (const auto& s : steps) {
      nlohmann::json rec{{"iteration", s.iteration},
                         {"branch", s.branch},
                         {"group", s.group.values},
                         {"delta_eff", s.delta_eff},
                         {"score_before", s.score_before},
                         {"score_after", s.score_after},
                         {"predicted_positives", s.predicted_positives}};
      if (routine == "df") {
        rec["rho_d"] = s.rho_d;
        rec["rho_u"] = s.rho_u;
      }
      out << rec.dump() << '\n';
    }
  }

  nlohmann::json summary_json() const {
    return {{"routine", routine},
            {"termination", to_string(termination)},
            {"iterations", iterations()},
            {"initial_score", initial_score},
            {"final_score", final_score}};
  }
};

struct DiscResult {
  double disc = 0.0;
  GroupKey s_max;  // privileged group with the highest positive rate
  GroupKey s_min;  // non-privileged group with the lowest positive rate
};

/// disc = max over S_p of P(yhat=1|s_p) - min over S_np of P(yhat=1|s_np).
/// Ties resolve to the lexicographically smallest group.
inline DiscResult disc_score(const std::map<GroupKey, double>& probabilities,
                             const std::set<GroupKey>& sp, const std::set<GroupKey>& snp) {
  metrics::detail::check_partition(sp, snp);
  auto prob = [&](const GroupKey& g) {
    auto it = probabilities.find(g);
    if (it == probabilities.end()) throw data_error("disc_score: group " + g.str() + " missing");
    return it->second;
  };
  DiscResult r;
  double max_p = -std::numeric_limits<double>::infinity();
  double min_np = std::numeric_limits<double>::infinity();
  for (const auto& g : sp) {  // sets iterate in lexicographic order
    const double p = prob(g);
    if (p > max_p) {
      max_p = p;
      r.s_max = g;
    }
  }
  for (const auto& g : snp) {
    const double p = prob(g);
    if (p < min_np) {
      min_np = p;
      r.s_min = g;
    }
  }
  r.disc = max_p - min_np;
  return r;
}

struct RhoResult {
  double rho_d = 0.0;  // max P(yhat=1|s_np) / P(yhat=1|s_p)
  double rho_u = 0.0;  // max P(yhat=1|s_p) / P(yhat=1|s_np)
  GroupKey s_max;
  GroupKey s_min;
};

/// The two ratio maxima over S_p x S_np that define the restricted epsilon:
/// e^eps = max(rho_d, rho_u). Probabilities are floored at kRateFloor so the
/// ratios stay finite when a group receives no positive predictions.
inline RhoResult rho_scores(const std::map<GroupKey, double>& probabilities,
                            const std::set<GroupKey>& sp, const std::set<GroupKey>& snp) {
  metrics::detail::check_partition(sp, snp);
  auto prob = [&](const GroupKey& g) {
    auto it = probabilities.find(g);
    if (it == probabilities.end()) throw data_error("rho_scores: group " + g.str() + " missing");
    return std::max(it->second, metrics::kRateFloor);
  };
  RhoResult r;
  double max_p = -std::numeric_limits<double>::infinity();
  double min_p = std::numeric_limits<double>::infinity();
  double max_np = -std::numeric_limits<double>::infinity();
  double min_np = std::numeric_limits<double>::infinity();
  for (const auto& g : sp) {
    const double p = prob(g);
    if (p > max_p) {
      max_p = p;
      r.s_max = g;
    }
    min_p = std::min(min_p, p);
  }
  for (const auto& g : snp) {
    const double p = prob(g);
    if (p < min_np) {
      min_np = p;
      r.s_min = g;
    }
    max_np = std::max(max_np, p);
  }
  r.rho_d = max_np / min_p;
  r.rho_u = max_p / min_np;
  return r;
}

/// Restricted epsilon score: ln of the larger ratio.
inline double restricted_epsilon(const std::map<GroupKey, double>& probabilities,
                                 const std::set<GroupKey>& sp, const std::set<GroupKey>& snp) {
  const auto r = rho_scores(probabilities, sp, snp);
  return std::log(std::max(r.rho_d, r.rho_u));
}

namespace detail {

// Per-sample sub-estimator log-likelihoods are computed once per balance
// call; each iteration then costs O(n) score re-additions.
struct TrainingCache {
  std::vector<std::array<double, 2>> lik;    // per sample, under its own group's estimator
  std::vector<std::uint32_t> slot;           // sample -> group slot
  std::vector<GroupKey> keys;                // slot -> group
  std::vector<std::size_t> group_sizes;      // per slot
  std::size_t label_positives = 0;

  static TrainingCache build(const nnb::NNBModel& model, const Dataset& train) {
    TrainingCache c;
    std::map<GroupKey, std::uint32_t> slot_of;
    for (const auto& [g, sub] : model.sub_estimators) {
      slot_of.emplace(g, static_cast<std::uint32_t>(c.keys.size()));
      c.keys.push_back(g);
    }
    c.group_sizes.assign(c.keys.size(), 0);
    c.lik.reserve(train.size());
    c.slot.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto it = slot_of.find(train.groups[i]);
      if (it == slot_of.end())
        throw data_error("balance: training row in group " + train.groups[i].str() +
                         " unknown to the model");
      c.slot.push_back(it->second);
      ++c.group_sizes[it->second];
      c.lik.push_back(gnb::log_likelihood(model.sub_estimators.at(train.groups[i]), train.row(i)));
      if (train.labels[i] == 1) ++c.label_positives;
    }
    return c;
  }

  struct State {
    std::map<GroupKey, double> rates;  // P(yhat=1 | s) under the current table
    std::size_t numpos = 0;
  };

  // Hard labels from argmax, exactly as nnb::predict scores them.
  State evaluate(const nnb::CountTable& table) const {
    std::vector<std::array<double, 2>> joint(keys.size());
    for (std::size_t g = 0; g < keys.size(); ++g)
      joint[g] = {nnb::joint_log_prob(table, 0, keys[g]),
                  nnb::joint_log_prob(table, 1, keys[g])};
    std::vector<std::size_t> positives(keys.size(), 0);
    State st;
    for (std::size_t i = 0; i < lik.size(); ++i) {
      const auto g = slot[i];
      const double s0 = lik[i][0] + joint[g][0];
      const double s1 = lik[i][1] + joint[g][1];
      if (s1 > s0) {
        ++positives[g];
        ++st.numpos;
      }
    }
    for (std::size_t g = 0; g < keys.size(); ++g)
      st.rates[keys[g]] = static_cast<double>(positives[g]) / static_cast<double>(group_sizes[g]);
    return st;
  }
};

}  // namespace detail

/// Statistical-parity balancing: while disc exceeds the threshold, transfer
/// Delta of one cell's mass within the group whose rate is most extreme.
/// When the model under-produces positives the lowest non-privileged group
/// gains positive mass; otherwise the highest privileged group loses it.
/// Each step conserves the group's total count N_s. A step that would drive
/// a cell negative is rolled back and the routine terminates.
inline std::pair<nnb::NNBModel, BalanceTrace> balance_parity(const nnb::NNBModel& model,
                                                             const Dataset& train,
                                                             const BalanceConfig& cfg) {
  cfg.validate();
  nnb::NNBModel out = model;
  BalanceTrace trace;
  trace.routine = "parity";

  const auto cache = detail::TrainingCache::build(out, train);
  auto state = cache.evaluate(out.count_table);
  auto disc = disc_score(state.rates, out.privileged, out.non_privileged);
  trace.initial_score = disc.disc;
  trace.final_score = disc.disc;

  if (disc.disc <= cfg.disc_threshold) {
    trace.termination = Termination::already_fair;
    return {std::move(out), std::move(trace)};
  }

  while (true) {
    if (trace.steps.size() >= cfg.max_iters) {
      trace.termination = Termination::max_iters;
      break;
    }
    const bool raise = state.numpos < cache.label_positives;
    const GroupKey target = raise ? disc.s_min : disc.s_max;
    auto& cell = out.count_table.counts.at(target);
    const std::array<double, 2> saved = cell;
    if (raise) {
      const double mass = cfg.delta * cell[0];
      cell[1] += mass;
      cell[0] -= mass;
    } else {
      const double mass = cfg.delta * cell[1];
      cell[1] -= mass;
      cell[0] += mass;
    }
    if (cell[0] < 0.0 || cell[1] < 0.0) {
      cell = saved;
      trace.termination = Termination::rollback;
      break;
    }

    BalanceStep step;
    step.iteration = trace.steps.size() + 1;
    step.branch = raise ? "raise_min" : "lower_max";
    step.group = target;
    step.delta_eff = cfg.delta;
    step.score_before = disc.disc;
    step.predicted_positives = state.numpos;

    state = cache.evaluate(out.count_table);
    disc = disc_score(state.rates, out.privileged, out.non_privileged);
    step.score_after = disc.disc;
    trace.steps.push_back(std::move(step));
    trace.final_score = disc.disc;

    if (disc.disc <= cfg.disc_threshold) {
      trace.termination = Termination::converged;
      break;
    }
  }
  return {std::move(out), std::move(trace)};
}

/// Differential-fairness balancing: while max(rho_d, rho_u) exceeds
/// 1 + disc_threshold, raise the lowest non-privileged group when rho_u <=
/// rho_d, otherwise lower the highest privileged group. Each cell scales by
/// its own value, so counts stay positive; a step that would leave the finite
/// range is rolled back and the routine terminates. The effective step grows
/// by `growth` on consecutive same-branch iterations (capped at delta_cap)
/// and resets on a branch switch. The number of positive predictions is
/// disregarded. Returns the best table seen.
inline std::pair<nnb::NNBModel, BalanceTrace> balance_df(const nnb::NNBModel& model,
                                                         const Dataset& train,
                                                         const BalanceConfig& cfg) {
  cfg.validate();
  nnb::NNBModel out = model;
  BalanceTrace trace;
  trace.routine = "df";

  const auto cache = detail::TrainingCache::build(out, train);
  auto state = cache.evaluate(out.count_table);
  auto rho = rho_scores(state.rates, out.privileged, out.non_privileged);
  double score = std::max(rho.rho_d, rho.rho_u);
  trace.initial_score = score;

  auto best_counts = out.count_table.counts;
  double best_score = score;

  if (score <= 1.0 + cfg.disc_threshold) {
    trace.termination = Termination::already_fair;
    trace.final_score = score;
    return {std::move(out), std::move(trace)};
  }

  double delta_eff = cfg.delta;
  bool have_last_branch = false;
  bool last_raise = false;
  while (true) {
    if (trace.steps.size() >= cfg.max_iters) {
      trace.termination = Termination::max_iters;
      break;
    }
    const bool raise = rho.rho_u <= rho.rho_d;
    if (have_last_branch && raise == last_raise)
      delta_eff = std::min(delta_eff * cfg.growth, cfg.delta_cap);
    else
      delta_eff = cfg.delta;
    have_last_branch = true;
    last_raise = raise;

    const GroupKey target = raise ? rho.s_min : rho.s_max;
    auto& cell = out.count_table.counts.at(target);
    const std::array<double, 2> saved = cell;
    if (raise) {
      cell[0] -= delta_eff * cell[0];
      cell[1] += delta_eff * cell[1];
    } else {
      cell[0] += delta_eff * cell[0];
      cell[1] -= delta_eff * cell[1];
    }
    // Repeated same-branch growth can push a cell out of the finite range
    // long before max_iters; a non-finite count would poison the joint
    // normalizer for every group.
    if (!std::isfinite(cell[0]) || !std::isfinite(cell[1])) {
      cell = saved;
      trace.termination = Termination::rollback;
      break;
    }

    BalanceStep step;
    step.iteration = trace.steps.size() + 1;
    step.branch = raise ? "raise_min" : "lower_max";
    step.group = target;
    step.delta_eff = delta_eff;
    step.score_before = score;
    step.rho_d = rho.rho_d;
    step.rho_u = rho.rho_u;
    step.predicted_positives = state.numpos;

    state = cache.evaluate(out.count_table);
    rho = rho_scores(state.rates, out.privileged, out.non_privileged);
    score = std::max(rho.rho_d, rho.rho_u);
    step.score_after = score;
    trace.steps.push_back(std::move(step));

    if (score < best_score) {
      best_score = score;
      best_counts = out.count_table.counts;
    }
    if (score <= 1.0 + cfg.disc_threshold) {
      trace.termination = Termination::converged;
      break;
    }
  }

  out.count_table.counts = std::move(best_counts);
  trace.final_score = best_score;
  return {std::move(out), std::move(trace)};
}

}  // namespace fairbayes::balancing
