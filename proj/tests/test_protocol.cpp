#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sngp/protocol.hpp"

using namespace sngp;
namespace fs = std::filesystem;

namespace {
ExperimentConfig tiny() { return load_config(std::string(SNGP_SOURCE_DIR) + "/configs/tiny.json"); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}
std::string first_line(const fs::path& p) {
  const std::string s = slurp(p);
  return s.substr(0, s.find('\n'));
}

/// Schema fingerprint: header line of each report file plus the aggregate keys.
std::string schema_of(const fs::path& dir) {
  std::ostringstream os;
  for (const char* f : {"metrics.csv", "aggregates.csv", "entropy_hist.csv", "latency.csv", "ood_table.csv",
                        "id_table.csv"})
    os << f << ": " << first_line(dir / f) << '\n';
  std::ifstream is(dir / "aggregates.csv");
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::size_t cut = line.find(',');
    cut = line.find(',', cut + 1);
    cut = line.find(',', cut + 1);
    const std::size_t n_commas_tail = line.rfind(',');
    os << "aggregate: " << line.substr(0, cut) << " n_seeds=" << line.substr(n_commas_tail + 1) << '\n';
  }
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const auto& [k, _] : report.items()) os << "report.json key: " << k << '\n';
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}
}  // namespace

TEST(Protocol, GoldenSchemaOnTinyConfig) {
  const auto dir = fresh_dir("sngp_protocol_golden");
  write_protocol_outputs(run_protocol(tiny()), dir);
  const std::string golden = slurp(fs::path(SNGP_SOURCE_DIR) / "tests" / "golden" / "tiny_schema.txt");
  EXPECT_EQ(schema_of(dir), golden);
  for (const char* f : {"checkpoints/seed_0_dense.ckpt", "checkpoints/seed_1_sngp.ckpt", "trainlogs/seed_0_sngp.csv",
                        "predictions/seed_0/sngp_ring.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Protocol, BookkeepingTwoSeedsTwoMethods) {
  auto cfg = tiny();
  cfg.methods = {MethodTag::baseline, MethodTag::sngp};
  const auto res = run_protocol(cfg, false);
  const auto agg = metrics::aggregate(res.records());
  std::size_t auroc_rows = 0;
  for (const auto& a : agg)
    if (a.metric == "ood_auroc") {
      ++auroc_rows;
      EXPECT_EQ(a.n_seeds, 2u);
    }
  EXPECT_EQ(auroc_rows, 2u);
}

TEST(Protocol, MetricsCsvDeterministic) {
  const auto a = run_protocol(tiny(), false), b = run_protocol(tiny(), false);
  std::ostringstream sa, sb;
  write_metrics_csv(sa, a.records());
  write_metrics_csv(sb, b.records());
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_GT(sa.str().size(), 100u);
}

TEST(Protocol, MetricsCsvRoundTrip) {
  const auto res = run_protocol(tiny(), false);
  std::stringstream ss;
  write_metrics_csv(ss, res.records());
  auto back = read_metrics_csv(ss);
  auto orig = res.records();
  sort_records(orig);
  ASSERT_EQ(back.size(), orig.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].method, orig[i].method);
    EXPECT_EQ(back[i].value, orig[i].value);
  }
}

TEST(Protocol, FailedSeedRecordedAndSkipped) {
  auto cfg = tiny();
  cfg.train.initial_lr = 1e300;
  const auto res = run_protocol(cfg, false);
  for (const auto& s : res.seeds) {
    EXPECT_FALSE(s.ok);
    EXPECT_NE(s.diagnostic.find("aborted"), std::string::npos);
  }
  EXPECT_TRUE(res.records().empty());
  const auto j = report_json(res, {});
  EXPECT_EQ(j.at("missing_cells").size(), 2u);
}

TEST(Protocol, SharedDenseModelAndSeparateStreams) {
  const auto cfg = tiny();
  const auto data = make_seed_data(cfg, 0);
  EXPECT_EQ(data.id_eval.size(), cfg.n_eval_samples);
  EXPECT_EQ(data.ood.at(0).size(), cfg.n_eval_samples);
  EXPECT_EQ(data.ood[0].domain_tag, "ring");
  const auto models = train_models(cfg, data, cfg.methods);
  EXPECT_EQ(&models.for_method(MethodTag::baseline), &models.for_method(MethodTag::mc_dropout));
  EXPECT_TRUE(models.sngp->gp().posterior.finalized);
  EXPECT_EQ(models.dense->encoder.config.dropout_rate, 0.1);
  EXPECT_EQ(models.sngp->encoder.config.dropout_rate, 0.0);
}
