// fairbayes command-line tool: synthesize data, train and balance N-naive-
// Bayes models, evaluate fairness metrics, and run multi-split benchmarks.
//
// Exit codes: 0 success, 2 config/schema error, 3 data error, 4 runtime error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fairbayes/fairbayes.hpp"

namespace fb = fairbayes;
namespace fs = std::filesystem;

namespace {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fb::config_error("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw fb::config_error("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Writes via a temp file and renames, so a failure never leaves a partial
// file at the destination.
void write_file(const std::string& path, const std::string& content) {
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw fb::data_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw fb::data_error("write failed for '" + path + "'");
    }
  }
  fs::rename(tmp, target);
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct CommonArgs {
  std::string config_path;
  std::string out_path;
  std::string format = "json";
};

void add_common(CLI::App* cmd, CommonArgs& args, const char* default_format) {
  args.format = default_format;
  cmd->add_option("--config", args.config_path, "JSON configuration file")->required();
  cmd->add_option("--out", args.out_path, "output file path");
  cmd->add_option("--format", args.format, "stdout format")
      ->check(CLI::IsMember({"json", "table"}));
}

std::string resolve_out(const CommonArgs& args, const nlohmann::json& config, bool required) {
  if (!args.out_path.empty()) return args.out_path;
  if (config.contains("out")) return config.at("out").get<std::string>();
  if (required) throw fb::config_error("an output path is required (--out or config \"out\")");
  return "";
}

int run_synth(const CommonArgs& args) {
  const auto config = load_json_file(args.config_path);
  const auto synth = fb::SyntheticConfig::from_json(config);
  const std::string out = resolve_out(args, config, true);
  const fb::Dataset ds = fb::generate_synthetic(synth);
  fb::write_csv(ds, out, synth.negative_label);
  if (config.contains("schema_out")) {
    write_file(config.at("schema_out").get<std::string>(), synth.schema().to_json().dump(2) + "\n");
  }
  std::cout << "wrote " << ds.size() << " rows, " << ds.observed_groups().size() << " groups to "
            << out << "\n";
  return 0;
}

int run_train(const CommonArgs& args) {
  const auto config = load_json_file(args.config_path);
  auto cfg = fb::experiment::RunConfig::from_json(config);
  cfg.validate();
  if (cfg.data_path.empty()) throw fb::config_error("config: \"data\" is required");
  if (cfg.modes.size() != 1)
    throw fb::config_error("train expects a single \"mode\"");
  std::string out = args.out_path.empty() ? cfg.model_path : args.out_path;
  if (out.empty()) out = resolve_out(args, config, true);

  const fb::Dataset train = fb::load_csv(cfg.data_path, cfg.schema);
  const auto model = fb::experiment::train_model(cfg.modes[0], train, cfg);
  write_file(out, fb::experiment::model_to_json(model).dump(2) + "\n");

  if (model.trace) {
    const auto& t = *model.trace;
    std::cout << t.routine << " balancing: " << t.iterations() << " iterations, "
              << fb::balancing::to_string(t.termination) << ", score " << t.initial_score << " -> "
              << t.final_score << "\n";
    if (config.contains("trace_out")) {
      std::ostringstream lines;
      t.write_jsonl(lines);
      write_file(config.at("trace_out").get<std::string>(), lines.str());
    }
  }
  std::cout << "model written to " << out << "\n";
  return 0;
}

int run_evaluate(const CommonArgs& args) {
  const auto config = load_json_file(args.config_path);
  auto cfg = fb::experiment::RunConfig::from_json(config);
  if (cfg.data_path.empty()) throw fb::config_error("config: \"data\" is required");
  if (cfg.model_path.empty()) throw fb::config_error("config: \"model\" is required");

  const auto model = fb::experiment::model_from_json(load_json_file(cfg.model_path));
  // The config may omit the schema; the model then supplies it.
  const fb::Schema schema =
      cfg.schema.sensitive_columns.empty() ? model.schema : cfg.schema;
  const fb::Dataset data = fb::load_csv(cfg.data_path, schema);
  const auto report = fb::experiment::evaluate_model(model, data);

  if (args.format == "table") {
    std::printf("%-10s %-10s %-10s %-10s %-10s %-10s\n", "AUC", "Accuracy", "DI", "Parity",
                "DF-eps", "DF-amp");
    std::printf("%-10.4f %-10.4f %-10.4f %-10.4f %-10.4f %-10.4f\n", report.auc, report.accuracy,
                report.disparate_impact_mean, report.parity_disc, report.df_epsilon,
                report.df_bias_amplification);
  } else {
    std::cout << report.to_json().dump(2) << "\n";
  }
  const std::string out = resolve_out(args, config, false);
  if (!out.empty()) write_file(out, report.to_json().dump(2) + "\n");
  return 0;
}

int run_benchmark(const CommonArgs& args) {
  const auto config = load_json_file(args.config_path);
  auto cfg = fb::experiment::RunConfig::from_json(config);
  cfg.validate();
  if (cfg.data_path.empty()) throw fb::config_error("config: \"data\" is required");

  const fb::Dataset full = fb::load_csv(cfg.data_path, cfg.schema);
  const auto result = fb::experiment::run_benchmark(cfg, full);

  const nlohmann::json doc{{"body", result.body_json()},
                           {"meta", {{"generated_at", timestamp_utc()}}}};
  const std::string out = resolve_out(args, config, false);
  if (!out.empty()) write_file(out, doc.dump(2) + "\n");

  if (args.format == "table")
    std::cout << result.table();
  else
    std::cout << result.body_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairbayes: N-naive-Bayes fair binary classification toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fb::experiment::kToolVersion);

  CommonArgs synth_args, train_args, eval_args, bench_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic CSV dataset");
  add_common(synth, synth_args, "json");
  auto* train = app.add_subcommand("train", "fit (and balance) a model, write it as JSON");
  add_common(train, train_args, "json");
  auto* evaluate = app.add_subcommand("evaluate", "run the fairness metric suite on a dataset");
  add_common(evaluate, eval_args, "json");
  auto* benchmark = app.add_subcommand("benchmark", "multi-split experiment over modes");
  add_common(benchmark, bench_args, "table");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (evaluate->parsed()) return run_evaluate(eval_args);
    if (benchmark->parsed()) return run_benchmark(bench_args);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const fb::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fb::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
