#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <json.hpp>

#include "fairbayes/error.hpp"

namespace fairbayes::gnb {

inline constexpr double kVarianceFloorScale = 1e-9;

/// Parameters of one Gaussian naive Bayes estimator over binary labels.
/// A class absent from the training labels carries a -inf log-prior and
/// -inf log-likelihood, so it can never win a prediction.
struct GaussianNBModel {
  std::array<double, 2> class_log_prior{};
  std::array<std::vector<double>, 2> means;
  std::array<std::vector<double>, 2> variances;
  std::size_t n_fit = 0;

  std::size_t n_features() const { return means[0].size(); }
  bool class_present(int y) const { return class_log_prior[y] > -std::numeric_limits<double>::infinity(); }
};

/// Fits per-class, per-feature sample means and maximum-likelihood variances
/// (divisor n). Variances are floored at kVarianceFloorScale times the
/// largest per-feature variance of the whole input so constant features never
/// produce a singular density.
inline GaussianNBModel fit(std::span<const double> features, std::size_t n_features,
                           std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw data_error("gnb: cannot fit on zero samples");
  if (n_features == 0) throw data_error("gnb: need at least one feature");
  if (features.size() != n * n_features) throw data_error("gnb: feature matrix shape mismatch");
  for (double v : features)
    if (!std::isfinite(v)) throw data_error("gnb: non-finite feature value");

  const std::size_t d = n_features;
  auto cell = [&](std::size_t i, std::size_t j) { return features[i * d + j]; };

  // Global per-feature ML variance sets the scale of the floor.
  std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) global_mean[j] += cell(i, j);
  for (std::size_t j = 0; j < d; ++j) global_mean[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = cell(i, j) - global_mean[j];
      global_var[j] += diff * diff;
    }
  double max_var = 0.0;
  for (std::size_t j = 0; j < d; ++j) max_var = std::max(max_var, global_var[j] / static_cast<double>(n));
  const double floor = max_var > 0.0 ? kVarianceFloorScale * max_var : kVarianceFloorScale;

  GaussianNBModel m;
  m.n_fit = n;
  std::array<std::size_t, 2> counts{0, 0};
  for (int y : labels) {
    if (y != 0 && y != 1) throw data_error("gnb: labels must be 0 or 1");
    ++counts[y];
  }

  for (int y = 0; y < 2; ++y) {
    m.means[y].assign(d, 0.0);
    m.variances[y].assign(d, 1.0);
    if (counts[y] == 0) {
      m.class_log_prior[y] = -std::numeric_limits<double>::infinity();
      continue;
    }
    m.class_log_prior[y] =
        std::log(static_cast<double>(counts[y]) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == y)
        for (std::size_t j = 0; j < d; ++j) m.means[y][j] += cell(i, j);
    for (std::size_t j = 0; j < d; ++j) m.means[y][j] /= static_cast<double>(counts[y]);
    std::vector<double> ss(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == y)
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = cell(i, j) - m.means[y][j];
          ss[j] += diff * diff;
        }
    for (std::size_t j = 0; j < d; ++j)
      m.variances[y][j] = std::max(ss[j] / static_cast<double>(counts[y]), floor);
  }
  return m;
}

/// log P(x | y) per class: the sum over features of the log Gaussian density,
/// without the class prior. Classes unseen during fit score -inf.
inline std::array<double, 2> log_likelihood(const GaussianNBModel& m, std::span<const double> x) {
  if (x.size() != m.n_features())
    throw data_error("gnb: expected " + std::to_string(m.n_features()) + " features, got " +
                     std::to_string(x.size()));
  std::array<double, 2> out{};
  for (int y = 0; y < 2; ++y) {
    if (!m.class_present(y)) {
      out[y] = -std::numeric_limits<double>::infinity();
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double var = m.variances[y][j];
      const double diff = x[j] - m.means[y][j];
      total += -0.5 * std::log(2.0 * std::numbers::pi * var) - diff * diff / (2.0 * var);
    }
    out[y] = total;
  }
  return out;
}

/// Plain GNB decision: argmax of prior + likelihood, ties resolved to 0.
inline int predict(const GaussianNBModel& m, std::span<const double> x) {
  const auto lik = log_likelihood(m, x);
  const double s0 = m.class_log_prior[0] + lik[0];
  const double s1 = m.class_log_prior[1] + lik[1];
  return s1 > s0 ? 1 : 0;
}

/// P(y=1 | x) under the plain GNB posterior; 0.5 when both scores are -inf.
inline double predict_proba(const GaussianNBModel& m, std::span<const double> x) {
  const auto lik = log_likelihood(m, x);
  const double s0 = m.class_log_prior[0] + lik[0];
  const double s1 = m.class_log_prior[1] + lik[1];
  if (std::isinf(s0) && std::isinf(s1)) return 0.5;
  return 1.0 / (1.0 + std::exp(s0 - s1));
}

// JSON persistence. -inf log-priors are stored as null (JSON has no infinity).

inline nlohmann::json to_json(const GaussianNBModel& m) {
  nlohmann::json priors = nlohmann::json::array();
  for (double p : m.class_log_prior) {
    if (std::isfinite(p))
      priors.push_back(p);
    else
      priors.push_back(nullptr);
  }
  return {{"class_log_prior", priors},
          {"means", {m.means[0], m.means[1]}},
          {"variances", {m.variances[0], m.variances[1]}},
          {"n_fit", m.n_fit}};
}

inline GaussianNBModel from_json(const nlohmann::json& j) {
  GaussianNBModel m;
  try {
    const auto& priors = j.at("class_log_prior");
    for (int y = 0; y < 2; ++y) {
      m.class_log_prior[y] = priors.at(y).is_null() ? -std::numeric_limits<double>::infinity()
                                                    : priors.at(y).get<double>();
      m.means[y] = j.at("means").at(y).get<std::vector<double>>();
      m.variances[y] = j.at("variances").at(y).get<std::vector<double>>();
    }
    m.n_fit = j.at("n_fit").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("gnb model: ") + e.what());
  }
  if (m.means[0].size() != m.means[1].size() || m.variances[0].size() != m.means[0].size() ||
      m.variances[1].size() != m.means[0].size())
    throw data_error("gnb model: inconsistent parameter shapes");
  for (int y = 0; y < 2; ++y)
    for (double v : m.variances[y])
      if (!(v > 0.0)) throw data_error("gnb model: variances must be positive");
  const double mass = std::exp(m.class_log_prior[0]) + std::exp(m.class_log_prior[1]);
  if (std::abs(mass - 1.0) > 1e-9) throw data_error("gnb model: class priors do not sum to 1");
  return m;
}

}  // namespace fairbayes::gnb
