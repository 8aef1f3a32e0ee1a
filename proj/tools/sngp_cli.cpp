// Command-line front end for the experiment harness.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sngp/sngp.hpp"

namespace fs = std::filesystem;
using namespace sngp;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string method;
};

std::vector<std::uint64_t> seeds_for(const ExperimentConfig& cfg, const Options& o) {
  if (o.seed) return {*o.seed};
  return cfg.seeds;
}

std::vector<MethodTag> methods_for(const ExperimentConfig& cfg, const Options& o) {
  if (o.method.empty()) return cfg.methods;
  const MethodTag m = parse_method(o.method);
  if (m == MethodTag::mc_dropout && !(cfg.encoder.dropout_rate > 0.0))
    throw ConfigError("method mc_dropout requires encoder.dropout_rate > 0");
  return {m};
}

void write_records(const fs::path& path, const std::vector<MetricRecord>& records) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  write_metrics_csv(os, records);
}

int cmd_gen_data(const ExperimentConfig& cfg, const Options& o) {
  for (std::uint64_t seed : seeds_for(cfg, o)) {
    const SeedData d = make_seed_data(cfg, seed);
    const fs::path dir = fs::path(o.out) / "data" / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    save_dataset_csv((dir / "train.csv").string(), d.train);
    save_dataset_csv((dir / "val.csv").string(), d.val);
    save_dataset_csv((dir / "test.csv").string(), d.test);
    save_dataset_csv((dir / "id_eval.csv").string(), d.id_eval);
    for (const auto& ood : d.ood) save_dataset_csv((dir / ("ood_" + ood.domain_tag + ".csv")).string(), ood);
    std::ofstream(dir / "standardization.json") << nlohmann::json{{"mean", d.stats.mean}, {"std", d.stats.std}}.dump(2)
                                                << '\n';
    std::cout << "wrote " << dir.string() << '\n';
  }
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Options& o) {
  const auto methods = methods_for(cfg, o);
  for (std::uint64_t seed : seeds_for(cfg, o)) {
    const SeedData d = make_seed_data(cfg, seed);
    const TrainedModels models = train_models(cfg, d, methods);
    write_checkpoints(models, seed, o.out);
    write_train_logs(models, seed, o.out);
    std::cout << "trained seed " << seed << '\n';
  }
  return 0;
}

int cmd_eval_id(const ExperimentConfig& cfg, const Options& o) {
  const auto methods = methods_for(cfg, o);
  for (std::uint64_t seed : seeds_for(cfg, o)) {
    const SeedData d = make_seed_data(cfg, seed);
    const TrainedModels models = load_models(o.out, seed, methods);
    SeedEval ev;
    evaluate_id(cfg, models, d, methods, ev);
    write_records(fs::path(o.out) / "eval" / ("id_seed_" + std::to_string(seed) + ".csv"), ev.records);
    const auto lat = measure_method_latency(cfg, models, d, methods);
    std::ofstream os(fs::path(o.out) / "eval" / ("latency_seed_" + std::to_string(seed) + ".csv"));
    os << "method,seed,latency_ms\n";
    for (const auto& [m, ms] : lat) os << m << ',' << seed << ',' << detail::format_double(ms) << '\n';
    std::cout << "evaluated ID metrics for seed " << seed << '\n';
  }
  return 0;
}

int cmd_eval_ood(const ExperimentConfig& cfg, const Options& o) {
  const auto methods = methods_for(cfg, o);
  for (std::uint64_t seed : seeds_for(cfg, o)) {
    const SeedData d = make_seed_data(cfg, seed);
    const TrainedModels models = load_models(o.out, seed, methods);
    SeedEval ev;
    evaluate_ood(cfg, models, d, methods, ev);
    for (const auto& w : ev.warnings) warn(w);
    write_records(fs::path(o.out) / "eval" / ("ood_seed_" + std::to_string(seed) + ".csv"), ev.records);
    std::cout << "evaluated OOD metrics for seed " << seed << '\n';
  }
  return 0;
}

/// Aggregates metrics.csv if present, otherwise every seed-level CSV under eval/.
int cmd_report(const Options& o) {
  const fs::path dir(o.out);
  std::vector<fs::path> inputs;
  if (fs::exists(dir / "metrics.csv")) {
    inputs.push_back(dir / "metrics.csv");
  } else if (fs::is_directory(dir / "eval")) {
    for (const auto& e : fs::directory_iterator(dir / "eval")) {
      const std::string name = e.path().filename().string();
      if (e.path().extension() == ".csv" && name.rfind("latency_", 0) != 0) inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  }
  if (inputs.empty()) throw StateError("no metrics found under '" + dir.string() + "'");
  std::vector<MetricRecord> records;
  for (const auto& p : inputs) {
    std::ifstream is(p);
    auto part = read_metrics_csv(is);
    records.insert(records.end(), part.begin(), part.end());
  }
  write_aggregate_outputs(records, dir);
  std::cout << "aggregated " << records.size() << " records into " << (dir / "aggregates.csv").string() << '\n';
  return 0;
}

int cmd_run_all(const ExperimentConfig& cfg, const Options& o) {
  ExperimentConfig c = cfg;
  if (o.seed) c.seeds = {*o.seed};
  if (!o.method.empty()) c.methods = methods_for(cfg, o);
  const ProtocolResult res = run_protocol(c);
  write_protocol_outputs(res, o.out);
  std::size_t failed = 0;
  for (const auto& s : res.seeds) failed += s.ok ? 0 : 1;
  std::cout << "run-all: " << res.seeds.size() - failed << " of " << res.seeds.size() << " seeds completed; outputs in "
            << o.out << '\n';
  return failed == res.seeds.size() ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SNGP uncertainty experiment harness"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)");
    if (needs_config) c->required();
    sub->add_option("--seed", o.seed, "run a single seed instead of the config's list");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--method", o.method, "restrict to one method: baseline, mc_dropout or sngp");
  };
  auto* gen = app.add_subcommand("gen-data", "write standardized dataset CSVs");
  auto* tr = app.add_subcommand("train", "train models and write checkpoints and train logs");
  auto* eid = app.add_subcommand("eval-id", "ID metrics: accuracy, ECE, F1, Brier, latency");
  auto* eood = app.add_subcommand("eval-ood", "OOD-AUROC per OOD set and model-FID");
  auto* rep = app.add_subcommand("report", "aggregate seed-level CSVs into mean/std tables");
  auto* all = app.add_subcommand("run-all", "full protocol over all seeds");
  for (auto* s : {gen, tr, eid, eood, all}) add_common(s, true);
  add_common(rep, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (rep->parsed()) return cmd_report(o);
    const ExperimentConfig cfg = load_config(o.config);
    if (gen->parsed()) return cmd_gen_data(cfg, o);
    if (tr->parsed()) return cmd_train(cfg, o);
    if (eid->parsed()) return cmd_eval_id(cfg, o);
    if (eood->parsed()) return cmd_eval_ood(cfg, o);
    if (all->parsed()) return cmd_run_all(cfg, o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
