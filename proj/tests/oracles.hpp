// Brute-force reference implementations used only by tests. These stay
// independent of the library code paths they check: everything is computed
// by direct enumeration of the defining formulas.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <vector>

#include "fairbayes/dataset.hpp"

namespace oracles {

using fairbayes::GroupKey;

constexpr double kFloor = 1e-12;

struct GroupCount {
  double n = 0;
  double positives = 0;
};

inline double rate(const GroupCount& c) { return c.positives / c.n; }

// max P(yhat=1|s_p) - min P(yhat=1|s_np), by scanning every pair.
inline double parity_disc(const std::map<GroupKey, GroupCount>& counts,
                          const std::set<GroupKey>& sp, const std::set<GroupKey>& snp) {
  double worst = -1e300;
  for (const auto& p : sp)
    for (const auto& np : snp)
      worst = std::max(worst, rate(counts.at(p)) - rate(counts.at(np)));
  return worst;
}

// mean over ordered (s_p, s_np) pairs of floored-rate ratios.
inline double disparate_impact_mean(const std::map<GroupKey, GroupCount>& counts,
                                    const std::set<GroupKey>& sp, const std::set<GroupKey>& snp) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& p : sp)
    for (const auto& np : snp) {
      total += std::max(rate(counts.at(np)), kFloor) / std::max(rate(counts.at(p)), kFloor);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

// max over ordered pairs and labels of ln of the smoothed probability ratio.
inline double df_epsilon(const std::map<GroupKey, GroupCount>& counts, double alpha) {
  const double beta = 2.0 * alpha;
  auto smoothed = [&](const GroupCount& c, int y) {
    const double pos = y == 1 ? c.positives : c.n - c.positives;
    return std::max((pos + alpha) / (c.n + beta), kFloor);
  };
  double eps = 0.0;
  for (const auto& [ga, ca] : counts)
    for (const auto& [gb, cb] : counts) {
      if (ga == gb) continue;
      for (int y = 0; y < 2; ++y)
        eps = std::max(eps, std::log(smoothed(ca, y) / smoothed(cb, y)));
    }
  return eps;
}

// All positive-negative pairs, 0.5 credit for ties.
inline double auc(const std::vector<double>& scores, const std::vector<int>& truth) {
  double won = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != 1) continue;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (truth[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        won += 1.0;
      else if (scores[i] == scores[j])
        won += 0.5;
    }
  }
  return won / static_cast<double>(pairs);
}

}  // namespace oracles
