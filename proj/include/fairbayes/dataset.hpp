#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairbayes/error.hpp"
#include "fairbayes/random.hpp"

namespace fairbayes {

/// Ordered tuple of sensitive-attribute values identifying one intersectional
/// group, e.g. ("White", "Female"). Comparison is lexicographic.
struct GroupKey {
  std::vector<std::string> values;

  auto operator<=>(const GroupKey&) const = default;

  std::string str() const {
    std::string out = "(";
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i > 0) out += ", ";
      out += values[i];
    }
    return out + ")";
  }
};

/// Group pattern with a per-position "*" wildcard, e.g. ("White", "*").
struct GroupPattern {
  static constexpr const char* kWildcard = "*";

  std::vector<std::string> values;

  bool matches(const GroupKey& key) const {
    if (key.values.size() != values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] != kWildcard && values[i] != key.values[i]) return false;
    }
    return true;
  }
};

/// Column mapping for CSV ingestion plus the privileged-group designation.
struct Schema {
  std::string label_column;
  std::string positive_label;
  std::vector<std::string> sensitive_columns;
  std::vector<std::string> feature_columns;
  std::vector<GroupPattern> privileged_groups;

  void validate() const {
    if (label_column.empty()) throw config_error("schema: label column must be named");
    if (sensitive_columns.empty()) throw config_error("schema: at least one sensitive column required");
    if (feature_columns.empty()) throw config_error("schema: at least one feature column required");
    std::unordered_set<std::string> seen{label_column};
    auto add = [&](const std::string& name, const char* role) {
      if (!seen.insert(name).second)
        throw config_error("schema: column '" + name + "' (" + role + ") is not disjoint from other roles");
    };
    for (const auto& c : sensitive_columns) add(c, "sensitive");
    for (const auto& c : feature_columns) add(c, "feature");
    for (const auto& p : privileged_groups) {
      if (p.values.size() != sensitive_columns.size())
        throw config_error("schema: privileged pattern arity " + std::to_string(p.values.size()) +
                           " does not match " + std::to_string(sensitive_columns.size()) +
                           " sensitive columns");
    }
  }

  bool columns_match(const Schema& other) const {
    return label_column == other.label_column && positive_label == other.positive_label &&
           sensitive_columns == other.sensitive_columns && feature_columns == other.feature_columns;
  }

  nlohmann::json to_json() const {
    nlohmann::json priv = nlohmann::json::array();
    for (const auto& p : privileged_groups) priv.push_back(p.values);
    return {{"label", label_column},
            {"positive_label", positive_label},
            {"sensitive", sensitive_columns},
            {"features", feature_columns},
            {"privileged", priv}};
  }

  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    try {
      s.label_column = j.at("label").get<std::string>();
      s.positive_label = j.at("positive_label").get<std::string>();
      s.sensitive_columns = j.at("sensitive").get<std::vector<std::string>>();
      s.feature_columns = j.at("features").get<std::vector<std::string>>();
      if (j.contains("privileged")) {
        for (const auto& p : j.at("privileged"))
          s.privileged_groups.push_back(GroupPattern{p.get<std::vector<std::string>>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("schema: ") + e.what());
    }
    s.validate();
    return s;
  }
};

/// Immutable sample collection: numeric features, binary labels, one GroupKey
/// per row. Safe to share read-only across threads once constructed.
struct Dataset {
  std::size_t n_features = 0;
  std::vector<double> features;  // row-major, size() == n * n_features
  std::vector<int> labels;       // 0/1
  std::vector<GroupKey> groups;
  Schema schema;

  std::size_t size() const { return labels.size(); }

  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * n_features, n_features};
  }

  std::vector<GroupKey> observed_groups() const {
    std::set<GroupKey> seen(groups.begin(), groups.end());
    return {seen.begin(), seen.end()};
  }

  std::map<GroupKey, std::vector<std::size_t>> index_by_group() const {
    std::map<GroupKey, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < groups.size(); ++i) out[groups[i]].push_back(i);
    return out;
  }
};

struct SplitSpec {
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

inline double parse_feature(const std::string& cell, std::size_t line_no, const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw data_error("csv line " + std::to_string(line_no) + ": cannot parse '" + cell +
                     "' in column '" + column + "' as a number");
  if (!std::isfinite(value))
    throw data_error("csv line " + std::to_string(line_no) + ": non-finite value in column '" +
                     column + "'");
  return value;
}

// Columns matched by any privileged pattern versus the rest; no emptiness check.
inline std::pair<std::set<GroupKey>, std::set<GroupKey>> match_privileged(
    const Schema& schema, const std::vector<GroupKey>& observed) {
  std::set<GroupKey> sp, snp;
  for (const auto& g : observed) {
    const bool priv = std::any_of(schema.privileged_groups.begin(), schema.privileged_groups.end(),
                                  [&](const GroupPattern& p) { return p.matches(g); });
    (priv ? sp : snp).insert(g);
  }
  return {std::move(sp), std::move(snp)};
}

}  // namespace detail

/// Loads a comma-separated file with a header row. Labels map to 1 exactly
/// when the cell equals schema.positive_label, otherwise 0. Group tuples are
/// built in sensitive-column order.
inline Dataset load_csv(const std::string& path, const Schema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw data_error("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw data_error("'" + path + "' is empty");
  const auto header = detail::split_line(line);

  auto column_index = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw config_error("'" + path + "': schema column '" + name + "' missing from header");
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t label_idx = column_index(schema.label_column);
  std::vector<std::size_t> sensitive_idx, feature_idx;
  for (const auto& c : schema.sensitive_columns) sensitive_idx.push_back(column_index(c));
  for (const auto& c : schema.feature_columns) feature_idx.push_back(column_index(c));

  Dataset ds;
  ds.schema = schema;
  ds.n_features = feature_idx.size();

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_line(line);
    if (cells.size() != header.size())
      throw data_error("csv line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    ds.labels.push_back(cells[label_idx] == schema.positive_label ? 1 : 0);
    GroupKey key;
    for (std::size_t idx : sensitive_idx) key.values.push_back(cells[idx]);
    ds.groups.push_back(std::move(key));
    for (std::size_t j = 0; j < feature_idx.size(); ++j)
      ds.features.push_back(detail::parse_feature(cells[feature_idx[j]], line_no, schema.feature_columns[j]));
  }
  if (ds.labels.empty()) throw data_error("'" + path + "' has no data rows");
  return ds;
}

/// Writes the ingestion dialect back out: header then one row per sample,
/// label rendered as positive_label / negative_label.
inline void write_csv(const Dataset& ds, const std::string& path, const std::string& negative_label) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write '" + path + "'");
  const Schema& s = ds.schema;
  out << s.label_column;
  for (const auto& c : s.sensitive_columns) out << ',' << c;
  for (const auto& c : s.feature_columns) out << ',' << c;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << (ds.labels[i] == 1 ? s.positive_label : negative_label);
    for (const auto& v : ds.groups[i].values) out << ',' << v;
    for (double x : ds.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
}

/// Splits observed groups into privileged (matching any schema pattern) and
/// non-privileged sets. Both sides must be non-empty or the parity and
/// differential-fairness criteria are undefined.
inline std::pair<std::set<GroupKey>, std::set<GroupKey>> partition_privileged(const Dataset& ds) {
  if (ds.size() == 0) throw data_error("cannot partition an empty dataset");
  auto [sp, snp] = detail::match_privileged(ds.schema, ds.observed_groups());
  if (sp.empty())
    throw config_error("privileged patterns match no observed group; parity criteria undefined");
  if (snp.empty())
    throw config_error("privileged patterns match every observed group; parity criteria undefined");
  return {std::move(sp), std::move(snp)};
}

namespace detail {

inline Dataset take_rows(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.schema = ds.schema;
  out.n_features = ds.n_features;
  out.features.reserve(indices.size() * ds.n_features);
  out.labels.reserve(indices.size());
  out.groups.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto r = ds.row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(ds.labels[i]);
    out.groups.push_back(ds.groups[i]);
  }
  return out;
}

}  // namespace detail

/// Seeded shuffle split; identical (dataset, spec) always produces identical
/// partitions. Train gets floor(n * (1 - test_fraction)) rows, test the rest.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw config_error("test_fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const std::size_t train_n =
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - spec.test_fraction) + 1e-9));
  if (train_n == 0 || train_n == n)
    throw config_error("split leaves an empty part (n=" + std::to_string(n) +
                       ", test_fraction=" + std::to_string(spec.test_fraction) + ")");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  return {detail::take_rows(ds, std::span(order).first(train_n)),
          detail::take_rows(ds, std::span(order).subspan(train_n))};
}

/// One synthetic group: its base positive rate and the class-conditional
/// Gaussian parameters per feature.
struct SyntheticGroupSpec {
  GroupKey group;
  std::size_t count = 0;
  double base_rate = 0.5;                          // P(y=1 | s)
  std::array<std::vector<double>, 2> means;        // [class][feature]
  std::array<std::vector<double>, 2> variances;    // [class][feature]
};

struct SyntheticConfig {
  std::string label_name = "label";
  std::string positive_label = "1";
  std::string negative_label = "0";
  std::vector<std::string> sensitive_names;
  std::vector<std::string> feature_names;
  std::vector<GroupPattern> privileged;
  std::vector<SyntheticGroupSpec> groups;
  std::uint64_t seed = 0;

  Schema schema() const {
    return Schema{label_name, positive_label, sensitive_names, feature_names, privileged};
  }

  static SyntheticConfig from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    try {
      c.label_name = j.value("label", "label");
      c.positive_label = j.value("positive_label", "1");
      c.negative_label = j.value("negative_label", "0");
      c.sensitive_names = j.at("sensitive").get<std::vector<std::string>>();
      c.feature_names = j.at("features").get<std::vector<std::string>>();
      if (j.contains("privileged")) {
        for (const auto& p : j.at("privileged"))
          c.privileged.push_back(GroupPattern{p.get<std::vector<std::string>>()});
      }
      c.seed = j.value("seed", std::uint64_t{0});
      for (const auto& g : j.at("groups")) {
        SyntheticGroupSpec spec;
        spec.group.values = g.at("values").get<std::vector<std::string>>();
        spec.count = g.at("count").get<std::size_t>();
        spec.base_rate = g.at("base_rate").get<double>();
        const auto means = g.at("means");
        const auto variances = g.at("variances");
        for (int y = 0; y < 2; ++y) {
          spec.means[y] = means.at(y).get<std::vector<double>>();
          spec.variances[y] = variances.at(y).get<std::vector<double>>();
        }
        c.groups.push_back(std::move(spec));
      }
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("synthetic config: ") + e.what());
    }
    return c;
  }
};

/// Draws labels per group base rate and features from the class-conditional
/// Gaussians. Deterministic given the seed.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  const Schema schema = cfg.schema();
  schema.validate();
  if (cfg.groups.empty()) throw config_error("synthetic config: no groups");
  const std::size_t d = cfg.feature_names.size();
  for (const auto& g : cfg.groups) {
    if (g.count == 0) throw config_error("synthetic group " + g.group.str() + ": zero samples");
    if (!(g.base_rate >= 0.0 && g.base_rate <= 1.0))
      throw config_error("synthetic group " + g.group.str() + ": base_rate outside [0, 1]");
    if (g.group.values.size() != cfg.sensitive_names.size())
      throw config_error("synthetic group " + g.group.str() + ": arity does not match sensitive columns");
    for (int y = 0; y < 2; ++y) {
      if (g.means[y].size() != d || g.variances[y].size() != d)
        throw config_error("synthetic group " + g.group.str() + ": means/variances must have " +
                           std::to_string(d) + " entries per class");
      for (double v : g.variances[y])
        if (!(v > 0.0)) throw config_error("synthetic group " + g.group.str() + ": variances must be > 0");
    }
  }

  Dataset ds;
  ds.schema = schema;
  ds.n_features = d;
  Rng rng(cfg.seed);
  for (const auto& g : cfg.groups) {
    for (std::size_t i = 0; i < g.count; ++i) {
      const int y = rng.uniform01() < g.base_rate ? 1 : 0;
      ds.labels.push_back(y);
      ds.groups.push_back(g.group);
      for (std::size_t j = 0; j < d; ++j)
        ds.features.push_back(rng.normal(g.means[y][j], std::sqrt(g.variances[y][j])));
    }
  }
  return ds;
}

}  // namespace fairbayes
