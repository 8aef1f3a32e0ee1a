#pragma once

// Experiment driver: per-seed data generation, training, ID and OOD
// evaluation, and the report files built from seed-level metric records.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sngp/checkpoint.hpp"
#include "sngp/config.hpp"
#include "sngp/fid.hpp"
#include "sngp/metrics.hpp"
#include "sngp/predictors.hpp"
#include "sngp/train.hpp"

namespace sngp {

using metrics::AggregateRecord;
using metrics::MetricRecord;

// Stage indices for derive_seed; each consumer of randomness gets its own stream.
namespace stage {
inline constexpr std::uint64_t id_data = 10;
inline constexpr std::uint64_t split = 11;
inline constexpr std::uint64_t ood_data = 20;  // + index of the OOD set
inline constexpr std::uint64_t eval_sample = 30;
inline constexpr std::uint64_t mc_dropout = 40;
inline constexpr std::uint64_t dense_init = 50;
inline constexpr std::uint64_t dense_train = 51;
inline constexpr std::uint64_t sngp_init = 60;
inline constexpr std::uint64_t sngp_train = 61;
}  // namespace stage

struct SeedData {
  std::uint64_t seed = 0;
  Dataset train, val, test;   // standardized
  Dataset id_eval;            // n_eval_samples rows drawn from test
  std::vector<Dataset> ood;   // standardized, n_eval_samples rows each
  StandardizationStats stats;
};

/// Generates, splits and standardizes every dataset for one seed. The scaler
/// is fit on the training split only.
inline SeedData make_seed_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedData d;
  d.seed = seed;
  const Dataset raw = cfg.id_dataset.generate(derive_seed(seed, stage::id_data));
  auto parts = stratified_split(raw, cfg.split, derive_seed(seed, stage::split));
  auto [train_std, stats] = standardize(parts[0]);
  d.stats = stats;
  d.train = std::move(train_std);
  d.val = apply_standardization(parts[1], stats);
  d.test = apply_standardization(parts[2], stats);
  for (Dataset* ds : {&d.train, &d.val, &d.test}) ds->domain_tag = cfg.id_dataset.name;
  if (d.test.size() == 0) throw InvalidArgument("test split is empty");

  std::vector<std::size_t> idx(d.test.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (idx.size() > cfg.n_eval_samples) {
    Rng rng(derive_seed(seed, stage::eval_sample));
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(cfg.n_eval_samples);
    std::sort(idx.begin(), idx.end());
  } else if (idx.size() < cfg.n_eval_samples) {
    warn("seed " + std::to_string(seed) + ": test split has only " + std::to_string(idx.size()) +
         " rows, fewer than n_eval_samples");
  }
  d.id_eval = subset(d.test, idx);

  for (std::size_t o = 0; o < cfg.ood_datasets.size(); ++o) {
    DatasetSpec spec = cfg.ood_datasets[o];
    spec.n = cfg.n_eval_samples;
    spec.n_per_class = std::max<std::size_t>(1, cfg.n_eval_samples / std::max<std::size_t>(1, spec.centers.rows()));
    Dataset ood = apply_standardization(spec.generate(derive_seed(seed, stage::ood_data + o)), stats);
    ood.domain_tag = spec.name;
    d.ood.push_back(std::move(ood));
  }
  return d;
}

struct TrainedModels {
  std::optional<ModelBundle> dense;  // shared by baseline and mc_dropout
  std::optional<ModelBundle> sngp;
  TrainLog dense_log, sngp_log;

  const ModelBundle& for_method(MethodTag m) const {
    const auto& slot = m == MethodTag::sngp ? sngp : dense;
    if (!slot) throw StateError("no trained model for method " + to_string(m));
    return *slot;
  }
};

inline const char* model_slot_name(MethodTag m) { return m == MethodTag::sngp ? "sngp" : "dense"; }

/// Trains the models `methods` need. The dense model carries the baseline tag.
inline TrainedModels train_models(const ExperimentConfig& cfg, const SeedData& data, const std::vector<MethodTag>& methods) {
  TrainedModels out;
  const std::size_t k = data.train.num_classes();
  const bool need_dense = std::any_of(methods.begin(), methods.end(), [](MethodTag m) { return m != MethodTag::sngp; });
  const bool need_sngp = std::find(methods.begin(), methods.end(), MethodTag::sngp) != methods.end();
  if (need_dense) {
    auto model = make_model(MethodTag::baseline, cfg.dense_encoder(), cfg.gp_head, k, derive_seed(data.seed, stage::dense_init));
    model.stats = data.stats;
    model.class_names = data.train.class_names;
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(data.seed, stage::dense_train);
    auto r = train(std::move(model), data.train, data.val, tc);
    out.dense = std::move(r.model);
    out.dense_log = std::move(r.log);
  }
  if (need_sngp) {
    auto model = make_model(MethodTag::sngp, cfg.sngp_encoder(), cfg.gp_head, k, derive_seed(data.seed, stage::sngp_init));
    model.stats = data.stats;
    model.class_names = data.train.class_names;
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(data.seed, stage::sngp_train);
    auto r = train(std::move(model), data.train, data.val, tc);
    fit_laplace(r.model, data.train);
    out.sngp = std::move(r.model);
    out.sngp_log = std::move(r.log);
  }
  return out;
}

inline Predictions predict_for(const ExperimentConfig& cfg, MethodTag method, const TrainedModels& models,
                               const Matrix& x, std::uint64_t seed) {
  return predict(method, models.for_method(method), x, cfg.mc_passes, derive_seed(seed, stage::mc_dropout));
}

/// Everything computed for one seed; `predictions` is keyed by (method, domain).
struct SeedEval {
  std::vector<MetricRecord> records;
  std::map<std::pair<std::string, std::string>, Predictions> predictions;
  std::map<std::pair<std::string, std::string>, std::vector<int>> labels;
  std::vector<std::string> warnings;
};

inline void evaluate_id(const ExperimentConfig& cfg, const TrainedModels& models, const SeedData& data,
                        const std::vector<MethodTag>& methods, SeedEval& ev) {
  const std::string& tag = cfg.id_dataset.name;
  const std::size_t k = data.test.num_classes();
  for (MethodTag m : methods) {
    const std::string name = to_string(m);
    auto p = predict_for(cfg, m, models, data.test.features, data.seed);
    const auto& y = data.test.labels;
    ev.records.push_back({name, tag, data.seed, "accuracy", metrics::accuracy(p.probs, y)});
    ev.records.push_back({name, tag, data.seed, "brier", metrics::brier(p.probs, y)});
    ev.records.push_back({name, tag, data.seed, "ece", metrics::ece(p.probs, y, cfg.ece_bins)});
    ev.records.push_back({name, tag, data.seed, "f1_macro", metrics::f1_macro(p.probs, y, k)});
    ev.records.push_back(
        {name, tag, data.seed, "mean_entropy", metrics::entropy_summary(p.entropy, k, cfg.entropy_bins).mean});
    ev.predictions[{name, tag}] = std::move(p);
    ev.labels[{name, tag}] = y;
  }
}

/// Single-row latency per method, in milliseconds. Kept out of the metric
/// records because wall-clock numbers are not reproducible.
inline std::map<std::string, double> measure_method_latency(const ExperimentConfig& cfg, const TrainedModels& models,
                                                            const SeedData& data, const std::vector<MethodTag>& methods) {
  std::map<std::string, double> out;
  const std::vector<std::size_t> first{0};
  const Matrix row = select_rows(data.test.features, first);
  for (MethodTag m : methods)
    out[to_string(m)] = measure_latency(m, models.for_method(m), row, cfg.latency_warmup, cfg.latency_trials, cfg.mc_passes);
  return out;
}

inline void evaluate_ood(const ExperimentConfig& cfg, const TrainedModels& models, const SeedData& data,
                         const std::vector<MethodTag>& methods, SeedEval& ev) {
  const std::size_t k = data.test.num_classes();
  std::map<std::string, Predictions> id_preds;
  for (MethodTag m : methods) {
    const std::string name = to_string(m);
    auto p = predict_for(cfg, m, models, data.id_eval.features, data.seed);
    ev.records.push_back({name, "id_eval", data.seed, "mean_entropy",
                          metrics::entropy_summary(p.entropy, k, cfg.entropy_bins).mean});
    ev.labels[{name, "id_eval"}] = data.id_eval.labels;
    id_preds[name] = p;
    ev.predictions[{name, "id_eval"}] = std::move(p);
  }
  for (const Dataset& ood : data.ood) {
    for (MethodTag m : methods) {
      const std::string name = to_string(m);
      auto p = predict_for(cfg, m, models, ood.features, data.seed);
      const auto& ip = id_preds.at(name);
      ev.records.push_back({name, ood.domain_tag, data.seed, "ood_auroc",
                            metrics::ood_auroc(ip.msp_uncertainty, p.msp_uncertainty)});
      ev.records.push_back(
          {name, ood.domain_tag, data.seed, "ood_auroc_entropy", metrics::ood_auroc(ip.entropy, p.entropy)});
      ev.records.push_back({name, ood.domain_tag, data.seed, "mean_entropy",
                            metrics::entropy_summary(p.entropy, k, cfg.entropy_bins).mean});
      const auto fid = fid::dataset_fid(models.for_method(m), data.id_eval, ood);
      ev.records.push_back({name, ood.domain_tag, data.seed, "model_fid", fid.value});
      for (const auto& w : fid.warnings) ev.warnings.push_back("seed " + std::to_string(data.seed) + ": " + w);
      ev.labels[{name, ood.domain_tag}] = ood.labels;
      ev.predictions[{name, ood.domain_tag}] = std::move(p);
    }
  }
}

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string diagnostic;  // set when the seed was aborted
  TrainedModels models;
  SeedEval eval;
  std::map<std::string, double> latency_ms;
};

struct HistogramRow {
  std::string method;
  std::string domain;
  double left = 0.0, right = 0.0;
  std::size_t count = 0;
};

struct ProtocolResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;

  std::vector<MetricRecord> records() const {
    std::vector<MetricRecord> all;
    for (const auto& s : seeds) all.insert(all.end(), s.eval.records.begin(), s.eval.records.end());
    return all;
  }
};

inline SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool measure_latency_too = true) {
  SeedResult r;
  r.seed = seed;
  try {
    const SeedData data = make_seed_data(cfg, seed);
    r.models = train_models(cfg, data, cfg.methods);
    evaluate_id(cfg, r.models, data, cfg.methods, r.eval);
    evaluate_ood(cfg, r.models, data, cfg.methods, r.eval);
    if (measure_latency_too) r.latency_ms = measure_method_latency(cfg, r.models, data, cfg.methods);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.diagnostic = "seed " + std::to_string(seed) + " aborted: " + e.what();
    r.eval = {};
    warn(r.diagnostic);
  }
  return r;
}

inline ProtocolResult run_protocol(const ExperimentConfig& cfg, bool measure_latency_too = true) {
  cfg.validate();
  ProtocolResult out;
  out.config = cfg;
  for (std::uint64_t seed : cfg.seeds) out.seeds.push_back(run_seed(cfg, seed, measure_latency_too));
  return out;
}

// ----------------------------------------------------------------- reporting

/// Orders records by (method, dataset, seed, metric).
inline void sort_records(std::vector<MetricRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricRecord& a, const MetricRecord& b) {
    return std::tie(a.method, a.dataset_tag, a.seed, a.metric) < std::tie(b.method, b.dataset_tag, b.seed, b.metric);
  });
}

inline void write_metrics_csv(std::ostream& os, std::vector<MetricRecord> records) {
  sort_records(records);
  os << "method,dataset,seed,metric,value\n";
  for (const auto& r : records)
    os << r.method << ',' << r.dataset_tag << ',' << r.seed << ',' << r.metric << ',' << detail::format_double(r.value)
       << '\n';
}

inline std::vector<MetricRecord> read_metrics_csv(std::istream& is) {
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line) || detail::trim(line) != "method,dataset,seed,metric,value")
    throw ParseError("metrics csv: missing or wrong header", 1);
  ++line_no;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) throw ParseError("metrics csv: expected 5 columns", line_no);
    MetricRecord r;
    r.method = cells[0];
    r.dataset_tag = cells[1];
    try {
      r.seed = std::stoull(cells[2]);
    } catch (const std::exception&) {
      throw ParseError("metrics csv: bad seed '" + cells[2] + "'", line_no);
    }
    r.metric = cells[3];
    r.value = detail::parse_double(cells[4], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_aggregates_csv(std::ostream& os, const std::vector<AggregateRecord>& agg) {
  os << "method,dataset,metric,mean,std,n_seeds\n";
  for (const auto& a : agg)
    os << a.method << ',' << a.dataset_tag << ',' << a.metric << ',' << detail::format_double(a.mean) << ','
       << detail::format_double(a.std) << ',' << a.n_seeds << '\n';
}

inline const AggregateRecord* find_aggregate(const std::vector<AggregateRecord>& agg, const std::string& method,
                                             const std::string& dataset, const std::string& metric) {
  for (const auto& a : agg)
    if (a.method == method && a.dataset_tag == dataset && a.metric == metric) return &a;
  return nullptr;
}

inline std::string cell(const AggregateRecord* a) { return a ? metrics::format_mean_std(a->mean, a->std) : "n/a"; }

/// Method order used in tables: the canonical order, restricted to what appears.
inline std::vector<std::string> methods_present(const std::vector<MetricRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records) seen.insert(r.method);
  std::vector<std::string> out;
  for (MethodTag m : {MethodTag::baseline, MethodTag::mc_dropout, MethodTag::sngp})
    if (seen.count(to_string(m))) out.push_back(to_string(m));
  return out;
}

inline std::vector<std::string> ood_datasets_present(const std::vector<MetricRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (r.metric == "ood_auroc" && std::find(out.begin(), out.end(), r.dataset_tag) == out.end())
      out.push_back(r.dataset_tag);
  std::sort(out.begin(), out.end());
  return out;
}

/// OOD table: one AUROC row per method, then one model-FID row per method.
inline void write_ood_table(std::ostream& os, const std::vector<MetricRecord>& records,
                            const std::vector<AggregateRecord>& agg) {
  const auto methods = methods_present(records);
  const auto oods = ood_datasets_present(records);
  os << "row";
  for (const auto& o : oods) os << ',' << o;
  os << '\n';
  for (const std::string& metric : {std::string("ood_auroc"), std::string("ood_auroc_entropy")})
    for (const auto& m : methods) {
      os << metric << '[' << m << ']';
      for (const auto& o : oods) os << ',' << cell(find_aggregate(agg, m, o, metric));
      os << '\n';
    }
  for (const auto& m : methods) {
    os << "model_fid[" << m << ']';
    for (const auto& o : oods) os << ',' << cell(find_aggregate(agg, m, o, "model_fid"));
    os << '\n';
  }
}

/// ID table: accuracy, ECE, F1 and Brier per method on the test split.
inline void write_id_table(std::ostream& os, const std::vector<MetricRecord>& records,
                           const std::vector<AggregateRecord>& agg, const std::string& id_tag) {
  os << "method,accuracy,ece,f1_macro,brier\n";
  for (const auto& m : methods_present(records)) {
    os << m;
    for (const char* metric : {"accuracy", "ece", "f1_macro", "brier"})
      os << ',' << cell(find_aggregate(agg, m, id_tag, metric));
    os << '\n';
  }
}

/// The ID dataset tag is the one carrying accuracy records.
inline std::string id_tag_of(const std::vector<MetricRecord>& records) {
  for (const auto& r : records)
    if (r.metric == "accuracy") return r.dataset_tag;
  return "id";
}

/// aggregates.csv, ood_table.csv and id_table.csv from seed-level records.
inline void write_aggregate_outputs(const std::vector<MetricRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto agg = metrics::aggregate(records);
  {
    std::ofstream os(dir / "aggregates.csv");
    write_aggregates_csv(os, agg);
  }
  {
    std::ofstream os(dir / "ood_table.csv");
    write_ood_table(os, records, agg);
  }
  {
    std::ofstream os(dir / "id_table.csv");
    write_id_table(os, records, agg, id_tag_of(records));
  }
}

/// Entropy histograms summed over seeds, per (method, domain).
inline std::vector<HistogramRow> entropy_histograms(const ProtocolResult& res) {
  std::map<std::pair<std::string, std::string>, metrics::Histogram> acc;
  for (const auto& s : res.seeds) {
    if (!s.ok) continue;
    for (const auto& [key, p] : s.eval.predictions) {
      if (key.second == res.config.id_dataset.name) continue;  // the full test split duplicates id_eval
      const auto h = metrics::entropy_summary(p.entropy, p.probs.cols(), res.config.entropy_bins).hist;
      auto it = acc.find(key);
      if (it == acc.end()) {
        acc.emplace(key, h);
      } else {
        for (std::size_t b = 0; b < h.counts.size(); ++b) it->second.counts[b] += h.counts[b];
      }
    }
  }
  std::vector<HistogramRow> rows;
  for (const auto& [key, h] : acc)
    for (std::size_t b = 0; b < h.counts.size(); ++b) rows.push_back({key.first, key.second, h.edges[b], h.edges[b + 1], h.counts[b]});
  return rows;
}

inline void write_train_logs(const TrainedModels& models, std::uint64_t seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "trainlogs");
  if (models.dense) {
    std::ofstream os(dir / "trainlogs" / ("seed_" + std::to_string(seed) + "_dense.csv"));
    write_train_log_csv(os, models.dense_log);
  }
  if (models.sngp) {
    std::ofstream os(dir / "trainlogs" / ("seed_" + std::to_string(seed) + "_sngp.csv"));
    write_train_log_csv(os, models.sngp_log);
  }
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed, MethodTag m) {
  return dir / "checkpoints" / ("seed_" + std::to_string(seed) + "_" + model_slot_name(m) + ".ckpt");
}

inline void write_checkpoints(const TrainedModels& models, std::uint64_t seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "checkpoints");
  if (models.dense) save_checkpoint(*models.dense, checkpoint_path(dir, seed, MethodTag::baseline).string());
  if (models.sngp) save_checkpoint(*models.sngp, checkpoint_path(dir, seed, MethodTag::sngp).string());
}

/// Loads whatever checkpoints `methods` need for one seed.
inline TrainedModels load_models(const std::filesystem::path& dir, std::uint64_t seed, const std::vector<MethodTag>& methods) {
  TrainedModels out;
  for (MethodTag m : methods) {
    auto& slot = m == MethodTag::sngp ? out.sngp : out.dense;
    if (slot) continue;
    const auto path = checkpoint_path(dir, seed, m);
    if (!std::filesystem::exists(path))
      throw StateError("missing checkpoint '" + path.string() + "'; run the train subcommand first");
    slot = load_checkpoint(path.string());
  }
  return out;
}

inline void write_latency_csv(std::ostream& os, const ProtocolResult& res) {
  os << "method,seed,latency_ms\n";
  for (const auto& s : res.seeds)
    for (const auto& [m, ms] : s.latency_ms) os << m << ',' << s.seed << ',' << detail::format_double(ms) << '\n';
}

inline nlohmann::json report_json(const ProtocolResult& res, const std::vector<AggregateRecord>& agg) {
  nlohmann::json j;
  j["report_format_version"] = 1;
  j["config_name"] = res.config.name;
  j["id_dataset"] = res.config.id_dataset.name;
  j["seeds"] = res.config.seeds;
  std::vector<std::string> methods;
  for (MethodTag m : res.config.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["metadata"] = {
      {"baseline_and_mc_dropout_share_model", true},
      {"fid_features", "model-FID: encoder hidden features of the evaluated model"},
      {"std_normalization", "population"},
      {"ood_score", "1 - max probability (ood_auroc); predictive entropy (ood_auroc_entropy)"},
      {"ece_bins", res.config.ece_bins},
      {"mc_passes", res.config.mc_passes},
      {"n_eval_samples", res.config.n_eval_samples},
      {"latency", "single-row wall clock, written to latency.csv only"},
  };
  nlohmann::json diag = nlohmann::json::array();
  nlohmann::json warnings = nlohmann::json::array();
  nlohmann::json missing = nlohmann::json::array();
  for (const auto& s : res.seeds) {
    if (!s.ok) {
      diag.push_back(s.diagnostic);
      missing.push_back({{"seed", s.seed}, {"reason", s.diagnostic}});
    }
    for (const auto& w : s.eval.warnings) warnings.push_back(w);
  }
  j["diagnostics"] = diag;
  j["warnings"] = warnings;
  j["missing_cells"] = missing;
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : agg)
    a.push_back({{"method", r.method}, {"dataset", r.dataset_tag}, {"metric", r.metric}, {"mean", r.mean},
                 {"std", r.std}, {"n_seeds", r.n_seeds}});
  j["aggregates"] = a;
  return j;
}

/// Writes the full output directory for a protocol run.
inline void write_protocol_outputs(const ProtocolResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto records = res.records();
  {
    std::ofstream os(dir / "metrics.csv");
    write_metrics_csv(os, records);
  }
  write_aggregate_outputs(records, dir);
  {
    std::ofstream os(dir / "entropy_hist.csv");
    os << "method,domain,bin_left,bin_right,count\n";
    for (const auto& h : entropy_histograms(res))
      os << h.method << ',' << h.domain << ',' << detail::format_double(h.left) << ','
         << detail::format_double(h.right) << ',' << h.count << '\n';
  }
  {
    std::ofstream os(dir / "latency.csv");
    write_latency_csv(os, res);
  }
  {
    std::ofstream os(dir / "report.json");
    os << report_json(res, metrics::aggregate(records)).dump(2) << '\n';
  }
  for (const auto& s : res.seeds) {
    if (!s.ok) continue;
    write_checkpoints(s.models, s.seed, dir);
    write_train_logs(s.models, s.seed, dir);
    if (!res.config.write_predictions) continue;
    const auto pdir = dir / "predictions" / ("seed_" + std::to_string(s.seed));
    std::filesystem::create_directories(pdir);
    for (const auto& [key, p] : s.eval.predictions) {
      std::ofstream os(pdir / (key.first + "_" + key.second + ".csv"));
      write_predictions_csv(os, p, s.eval.labels.at(key), key.second);
    }
  }
}

}  // namespace sngp
