#pragma once

// Experiment configuration: a versioned JSON document. Every object rejects
// keys it does not know, so typos fail loudly instead of silently using a
// default.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sngp/datagen.hpp"
#include "sngp/gp_head.hpp"
#include "sngp/model.hpp"
#include "sngp/nn.hpp"

namespace sngp {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::string name;
  std::string kind = "two_moons";  // two_moons | blobs | ring | uniform
  std::size_t n = 1000;
  double noise = 0.1;
  Matrix centers;
  double sigma = 1.0;
  std::size_t n_per_class = 100;
  double radius = 5.0;
  double width = 1.0;
  std::vector<double> center{0.0, 0.0};
  std::size_t dim = 2;
  double lo = -1.0;
  double hi = 1.0;

  Dataset generate(std::uint64_t seed) const {
    Dataset ds;
    if (kind == "two_moons") ds = gen_two_moons(n, noise, seed);
    else if (kind == "blobs") ds = gen_gaussian_blobs(centers, sigma, n_per_class, seed);
    else if (kind == "ring") ds = gen_ood_ring(n, radius, width, center, seed);
    else if (kind == "uniform") ds = gen_uniform_box(n, dim, lo, hi, seed);
    else throw ConfigError("unknown dataset kind '" + kind + "'");
    ds.domain_tag = name;
    return ds;
  }

  std::size_t feature_dim() const {
    if (kind == "blobs") return centers.cols();
    if (kind == "uniform") return dim;
    return 2;
  }
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec id_dataset;
  std::vector<DatasetSpec> ood_datasets;
  SplitFractions split{0.6, 0.15, 0.25};
  std::vector<MethodTag> methods{MethodTag::baseline, MethodTag::mc_dropout, MethodTag::sngp};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::size_t n_eval_samples = 1000;

  // Dense model; the SNGP model copies it with dropout 0 and spectral norm on.
  // Dropout defaults on because mc_dropout is in the default method list.
  EncoderConfig encoder = [] {
    EncoderConfig e;
    e.dropout_rate = 0.1;
    return e;
  }();
  GPHeadConfig gp_head;
  TrainConfig train;
  std::size_t mc_passes = 10;
  std::size_t ece_bins = 15;
  std::size_t entropy_bins = 30;
  std::size_t latency_warmup = 20;
  std::size_t latency_trials = 100;
  bool write_predictions = true;

  bool wants(MethodTag m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
  bool wants_dense() const { return wants(MethodTag::baseline) || wants(MethodTag::mc_dropout); }

  EncoderConfig dense_encoder() const {
    EncoderConfig e = encoder;
    e.spectral_norm = false;
    return e;
  }
  EncoderConfig sngp_encoder() const {
    EncoderConfig e = encoder;
    e.dropout_rate = 0.0;
    e.spectral_norm = true;
    return e;
  }

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size()) throw ConfigError("seeds must be distinct");
    if (n_eval_samples < 10) throw ConfigError("n_eval_samples must be >= 10");
    if (methods.empty()) throw ConfigError("methods must be nonempty");
    if (wants(MethodTag::mc_dropout) && !(encoder.dropout_rate > 0.0))
      throw ConfigError("mc_dropout requires encoder.dropout_rate > 0");
    if (mc_passes < 1) throw ConfigError("mc_dropout.passes must be >= 1");
    if (ece_bins < 1 || entropy_bins < 1) throw ConfigError("bin counts must be >= 1");
    if (latency_trials < 10) throw ConfigError("latency.trials must be >= 10");
    std::set<std::string> names{id_dataset.name};
    for (const auto& o : ood_datasets) {
      if (!names.insert(o.name).second) throw ConfigError("dataset name '" + o.name + "' is used twice");
      if (o.feature_dim() != id_dataset.feature_dim())
        throw ConfigError("OOD dataset '" + o.name + "' has a different feature dimension from the ID dataset");
    }
    try {
      encoder.validate();
      gp_head.validate();
      train.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

/// Reads fields from one JSON object and complains about leftovers.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ObjectReader(const ObjectReader&) = delete;

  /// Rejects any key that was never asked for.
  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline DatasetSpec parse_dataset_spec(const nlohmann::json& j, const std::string& path, const std::string& default_name) {
  DatasetSpec d;
  d.name = default_name;
  ObjectReader r(j, path);
  r.get("name", d.name);
  r.get("kind", d.kind);
  r.get("n", d.n);
  r.get("noise", d.noise);
  r.get("sigma", d.sigma);
  r.get("n_per_class", d.n_per_class);
  r.get("radius", d.radius);
  r.get("width", d.width);
  r.get("center", d.center);
  r.get("dim", d.dim);
  r.get("lo", d.lo);
  r.get("hi", d.hi);
  if (const auto* c = r.child("centers")) {
    std::vector<std::vector<double>> rows;
    try {
      rows = c->get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ".centers: " + e.what());
    }
    if (rows.empty()) throw ConfigError(path + ".centers: empty");
    d.centers = Matrix(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) throw ConfigError(path + ".centers: ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), d.centers.row(i).begin());
    }
  }
  r.finish();
  static const std::set<std::string> kinds{"two_moons", "blobs", "ring", "uniform"};
  if (!kinds.count(d.kind)) throw ConfigError(path + ".kind: unknown dataset kind '" + d.kind + "'");
  if (d.kind == "blobs" && d.centers.empty()) throw ConfigError(path + ": blobs need 'centers'");
  return d;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::ObjectReader r(j, "config");
  int version = -1;
  r.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("config: schema_version must be " + std::to_string(kConfigSchemaVersion));
  r.get("name", c.name);

  const auto* id = r.child("id_dataset");
  if (!id) throw ConfigError("config: missing 'id_dataset'");
  c.id_dataset = detail::parse_dataset_spec(*id, "config.id_dataset", "id");

  if (const auto* ood = r.child("ood_datasets")) {
    if (!ood->is_array()) throw ConfigError("config.ood_datasets: expected an array");
    for (std::size_t i = 0; i < ood->size(); ++i)
      c.ood_datasets.push_back(detail::parse_dataset_spec((*ood)[i], "config.ood_datasets[" + std::to_string(i) + "]",
                                                          "ood" + std::to_string(i)));
  }
  if (const auto* s = r.child("split")) {
    detail::ObjectReader sr(*s, "config.split");
    sr.get("train", c.split.train);
    sr.get("val", c.split.val);
    sr.get("test", c.split.test);
    sr.finish();
  }
  if (const auto* m = r.child("methods")) {
    c.methods.clear();
    try {
      for (const auto& name : m->get<std::vector<std::string>>()) c.methods.push_back(parse_method(name));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.methods: ") + e.what());
    }
  }
  r.get("seeds", c.seeds);
  r.get("n_eval_samples", c.n_eval_samples);

  if (const auto* e = r.child("encoder")) {
    detail::ObjectReader er(*e, "config.encoder");
    er.get("hidden_dim", c.encoder.hidden_dim);
    er.get("n_residual_blocks", c.encoder.n_residual_blocks);
    er.get("dropout_rate", c.encoder.dropout_rate);
    er.finish();
  }
  if (const auto* s = r.child("spectral")) {
    detail::ObjectReader sr(*s, "config.spectral");
    sr.get("bound", c.encoder.spectral_bound);
    sr.get("power_iterations", c.encoder.power_iterations);
    sr.get("final_power_iterations", c.encoder.final_power_iterations);
    sr.finish();
  }
  if (const auto* g = r.child("gp_head")) {
    detail::ObjectReader gr(*g, "config.gp_head");
    gr.get("rff_dim", c.gp_head.rff_dim);
    gr.get("lengthscale", c.gp_head.lengthscale);
    gr.get("ridge", c.gp_head.ridge);
    gr.get("mean_field_lambda", c.gp_head.mean_field_lambda);
    gr.finish();
  }
  if (const auto* t = r.child("train")) {
    detail::ObjectReader tr(*t, "config.train");
    tr.get("initial_lr", c.train.initial_lr);
    tr.get("lr_milestones", c.train.lr_milestones);
    tr.get("lr_gamma", c.train.lr_gamma);
    tr.get("max_epochs", c.train.max_epochs);
    tr.get("batch_size", c.train.batch_size);
    tr.get("early_stop_patience", c.train.early_stop_patience);
    tr.get("weight_decay", c.train.weight_decay);
    std::string metric = "val_loss";
    tr.get("early_stop_metric", metric);
    if (metric == "val_loss") c.train.early_stop_metric = EarlyStopMetric::val_loss;
    else if (metric == "val_accuracy") c.train.early_stop_metric = EarlyStopMetric::val_accuracy;
    else throw ConfigError("config.train.early_stop_metric: expected val_loss or val_accuracy");
    tr.finish();
  }
  if (const auto* m = r.child("mc_dropout")) {
    detail::ObjectReader mr(*m, "config.mc_dropout");
    mr.get("passes", c.mc_passes);
    mr.finish();
  }
  if (const auto* m = r.child("metrics")) {
    detail::ObjectReader mr(*m, "config.metrics");
    mr.get("ece_bins", c.ece_bins);
    mr.get("entropy_bins", c.entropy_bins);
    mr.finish();
  }
  if (const auto* l = r.child("latency")) {
    detail::ObjectReader lr(*l, "config.latency");
    lr.get("warmup", c.latency_warmup);
    lr.get("trials", c.latency_trials);
    lr.finish();
  }
  if (const auto* o = r.child("outputs")) {
    detail::ObjectReader orr(*o, "config.outputs");
    orr.get("predictions", c.write_predictions);
    orr.finish();
  }
  r.finish();
  c.encoder.input_dim = c.id_dataset.feature_dim();
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace sngp
