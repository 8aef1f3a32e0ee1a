#pragma once

// Synthetic in-distribution / out-of-distribution datasets, standardization,
// stratified splitting and the dataset CSV format.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sngp/error.hpp"
#include "sngp/matrix.hpp"
#include "sngp/rng.hpp"

namespace sngp {

struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::string domain_tag = "id";
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_features() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }

  void validate() const {
    if (features.rows() != labels.size()) throw InvalidArgument("Dataset: feature rows != label count");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= class_names.size())
        throw InvalidArgument("Dataset: label " + std::to_string(y) + " outside [0, K)");
    if (!features.all_finite()) throw InvalidArgument("Dataset: non-finite feature value");
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct StandardizationStats {
  static constexpr double kStdFloor = 1e-8;
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const StandardizationStats&, const StandardizationStats&) = default;
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.features = select_rows(ds.features, idx);
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
  out.class_names = ds.class_names;
  out.domain_tag = ds.domain_tag;
  out.seed = ds.seed;
  return out;
}

// ---------------------------------------------------------------- generators

/// Upper moon (cos t, sin t) is class 0, lower moon (1 - cos t, 0.5 - sin t) is
/// class 1, t ~ U[0, pi]. Class 0 receives ceil(n/2) samples.
inline Dataset gen_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("gen_two_moons: n must be >= 2");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("gen_two_moons: noise_sigma must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(n, 2);
  ds.labels.resize(n);
  ds.class_names = {"upper", "lower"};
  ds.domain_tag = "id";
  ds.seed = seed;
  const std::size_t n_upper = n - n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::numbers::pi * rng.uniform();
    const bool upper = i < n_upper;
    double x = upper ? std::cos(t) : 1.0 - std::cos(t);
    double y = upper ? std::sin(t) : 0.5 - std::sin(t);
    x += noise_sigma * rng.normal();
    y += noise_sigma * rng.normal();
    ds.features(i, 0) = x;
    ds.features(i, 1) = y;
    ds.labels[i] = upper ? 0 : 1;
  }
  return ds;
}

inline Dataset gen_gaussian_blobs(const Matrix& centers, double sigma, std::size_t n_per_class,
                                  std::uint64_t seed) {
  const std::size_t k = centers.rows();
  if (k < 2) throw InvalidArgument("gen_gaussian_blobs: need at least 2 centers");
  if (!(sigma > 0.0)) throw InvalidArgument("gen_gaussian_blobs: sigma must be > 0");
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b)
      if (std::equal(centers.row(a).begin(), centers.row(a).end(), centers.row(b).begin()))
        warn("gen_gaussian_blobs: centers " + std::to_string(a) + " and " + std::to_string(b) +
             " coincide");

  Rng rng(seed);
  const std::size_t d = centers.cols();
  Dataset ds;
  ds.features = Matrix(k * n_per_class, d);
  ds.labels.resize(k * n_per_class);
  for (std::size_t c = 0; c < k; ++c) ds.class_names.push_back("blob" + std::to_string(c));
  ds.domain_tag = "id";
  ds.seed = seed;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::size_t r = c * n_per_class + i;
      for (std::size_t j = 0; j < d; ++j) ds.features(r, j) = centers(c, j) + sigma * rng.normal();
      ds.labels[r] = static_cast<int>(c);
    }
  }
  return ds;
}

/// Annulus of radius `radius` and total width `width` around a 2-D center.
/// All labels are the sentinel 0.
inline Dataset gen_ood_ring(std::size_t n, double radius, double width, std::span<const double> center,
                            std::uint64_t seed) {
  if (!(radius > 0.0)) throw InvalidArgument("gen_ood_ring: radius must be > 0");
  if (!(width >= 0.0)) throw InvalidArgument("gen_ood_ring: width must be >= 0");
  if (center.size() != 2) throw InvalidArgument("gen_ood_ring: center must be 2-D");
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(n, 2);
  ds.labels.assign(n, 0);
  ds.class_names = {"ood"};
  ds.domain_tag = "ood_ring";
  ds.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    const double r = radius + width * (rng.uniform() - 0.5);
    ds.features(i, 0) = center[0] + r * std::cos(angle);
    ds.features(i, 1) = center[1] + r * std::sin(angle);
  }
  return ds;
}

/// Uniform samples in the box [lo, hi]^dim. Labels are the sentinel 0.
inline Dataset gen_uniform_box(std::size_t n, std::size_t dim, double lo, double hi, std::uint64_t seed) {
  if (!(hi > lo)) throw InvalidArgument("gen_uniform_box: hi must exceed lo");
  if (dim == 0) throw InvalidArgument("gen_uniform_box: dim must be >= 1");
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(n, dim);
  for (double& v : ds.features.values()) v = rng.uniform(lo, hi);
  ds.labels.assign(n, 0);
  ds.class_names = {"ood"};
  ds.domain_tag = "ood_uniform";
  ds.seed = seed;
  return ds;
}

// ----------------------------------------------------------- standardization

inline Dataset apply_standardization(const Dataset& ds, const StandardizationStats& stats) {
  const std::size_t d = ds.num_features();
  if (stats.mean.size() != d || stats.std.size() != d)
    throw InvalidArgument("apply_standardization: feature dimension " + std::to_string(d) +
                          " does not match stats dimension " + std::to_string(stats.mean.size()));
  Dataset out = ds;
  for (std::size_t i = 0; i < out.features.rows(); ++i) {
    auto r = out.features.row(i);
    for (std::size_t j = 0; j < d; ++j) r[j] = (r[j] - stats.mean[j]) / stats.std[j];
  }
  return out;
}

/// Per-feature mean and population std (floored) of `ds`.
inline StandardizationStats fit_standardization(const Dataset& ds) {
  const std::size_t n = ds.size();
  if (n < 2) throw InvalidArgument("standardize: need at least 2 samples");
  const std::size_t d = ds.num_features();
  StandardizationStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += ds.features(i, j);
  for (double& m : st.mean) m /= static_cast<double>(n);
  // Constant columns get their exact value as mean so they map to exact zeros.
  for (std::size_t j = 0; j < d; ++j) {
    bool constant = true;
    for (std::size_t i = 1; i < n && constant; ++i) constant = ds.features(i, j) == ds.features(0, j);
    if (constant) st.mean[j] = ds.features(0, j);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = ds.features(i, j) - st.mean[j];
      st.std[j] += c * c;
    }
  for (double& s : st.std) s = std::max(std::sqrt(s / static_cast<double>(n)), StandardizationStats::kStdFloor);
  return st;
}

inline std::pair<Dataset, StandardizationStats> standardize(const Dataset& train) {
  auto stats = fit_standardization(train);
  return {apply_standardization(train, stats), stats};
}

// ------------------------------------------------------------ stratified split

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Per-class allocation: floor(count * fraction) for each split, then the
/// leftover samples go one at a time to train, then to the remaining splits in
/// descending-fraction order (ties: test before val).
inline std::array<std::size_t, 3> stratified_allocation(std::size_t count, const SplitFractions& f) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  std::array<std::size_t, 3> alloc{};
  std::size_t used = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    alloc[j] = static_cast<std::size_t>(std::floor(static_cast<double>(count) * fr[j]));
    used += alloc[j];
  }
  std::array<std::size_t, 3> order{0, 2, 1};
  if (fr[1] > fr[2]) order = {0, 1, 2};
  for (std::size_t left = count - std::min(used, count), k = 0; left > 0; --left, ++k) {
    std::size_t j = order[k % 3];
    while (fr[j] <= 0.0) j = order[++k % 3];
    ++alloc[j];
  }
  return alloc;
}

inline std::array<Dataset, 3> stratified_split(const Dataset& ds, const SplitFractions& f, std::uint64_t seed) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  for (double x : fr)
    if (!(x >= 0.0)) throw InvalidArgument("stratified_split: fractions must be nonnegative");
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) throw InvalidArgument("stratified_split: fractions must sum to 1");
  const std::size_t nonzero = static_cast<std::size_t>(std::count_if(fr.begin(), fr.end(), [](double x) { return x > 0.0; }));

  const std::size_t k = std::max<std::size_t>(ds.num_classes(), 1);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t c = 0; c < k; ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < nonzero)
      throw InvalidArgument("stratified_split: class " + std::to_string(c) + " has " +
                            std::to_string(members.size()) + " samples, fewer than the " +
                            std::to_string(nonzero) + " nonzero splits");
    rng.shuffle(std::span<std::size_t>(members));
    const auto alloc = stratified_allocation(members.size(), f);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t q = 0; q < alloc[j]; ++q) parts[j].push_back(members[pos++]);
  }
  std::array<Dataset, 3> out;
  for (std::size_t j = 0; j < 3; ++j) {
    rng.shuffle(std::span<std::size_t>(parts[j]));
    out[j] = subset(ds, parts[j]);
  }
  return out;
}

// ------------------------------------------------------------------ CSV format
//
//   # class_names=["upper","lower"]
//   # domain_tag=id
//   # seed=7
//   f0,f1,label
//   0.12345678901234567,-1.0,0
//
// Floats are written with 17 significant digits, so reading restores the exact
// double.

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

inline double parse_double(const std::string& cell, std::size_t line) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw ParseError("malformed number '" + cell + "'", line);
  return v;
}

inline int parse_int(const std::string& cell, std::size_t line) {
  int v = 0;
  const char* b = cell.data();
  const char* e = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw ParseError("non-integer label '" + cell + "'", line);
  return v;
}
}  // namespace detail

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  os << "# class_names=" << nlohmann::json(ds.class_names).dump() << '\n';
  os << "# domain_tag=" << ds.domain_tag << '\n';
  os << "# seed=" << ds.seed << '\n';
  for (std::size_t j = 0; j < ds.num_features(); ++j) os << 'f' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.num_features(); ++j) os << detail::format_double(ds.features(i, j)) << ',';
    os << ds.labels[i] << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is) {
  Dataset ds;
  ds.class_names.clear();
  std::string line;
  std::size_t lineno = 0;
  std::size_t n_features = 0;
  bool have_header = false;
  bool have_names = false;
  std::vector<double> values;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header && !line.empty() && line[0] == '#') {
      const std::string body = detail::trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = detail::trim(body.substr(0, eq));
      const std::string val = detail::trim(body.substr(eq + 1));
      try {
        if (key == "class_names") {
          ds.class_names = nlohmann::json::parse(val).get<std::vector<std::string>>();
          have_names = true;
        } else if (key == "domain_tag") {
          ds.domain_tag = val;
        } else if (key == "seed") {
          ds.seed = std::stoull(val);
        }
      } catch (const std::exception& e) {
        throw ParseError("bad metadata '" + key + "': " + e.what(), lineno);
      }
      continue;
    }
    if (!have_header) {
      if (detail::trim(line).empty()) continue;
      const auto cells = detail::split_csv_line(line);
      if (cells.size() < 1 || detail::trim(cells.back()) != "label") throw ParseError("no header", lineno);
      for (std::size_t j = 0; j + 1 < cells.size(); ++j)
        if (detail::trim(cells[j]) != "f" + std::to_string(j))
          throw ParseError("unexpected header column '" + cells[j] + "'", lineno);
      n_features = cells.size() - 1;
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != n_features + 1)
      throw ParseError("ragged row: expected " + std::to_string(n_features + 1) + " fields, got " +
                           std::to_string(cells.size()),
                       lineno);
    for (std::size_t j = 0; j < n_features; ++j) {
      const double v = detail::parse_double(detail::trim(cells[j]), lineno);
      if (!std::isfinite(v)) throw ParseError("non-finite feature", lineno);
      values.push_back(v);
    }
    const int y = detail::parse_int(detail::trim(cells.back()), lineno);
    if (y < 0) throw ParseError("negative label", lineno);
    ds.labels.push_back(y);
  }
  if (!have_header) throw ParseError("no header", lineno);
  ds.features = Matrix(ds.labels.size(), n_features, std::move(values));
  if (!have_names) {
    int k = 0;
    for (int y : ds.labels) k = std::max(k, y + 1);
    for (int c = 0; c < k; ++c) ds.class_names.push_back("class" + std::to_string(c));
  }
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (static_cast<std::size_t>(ds.labels[i]) >= ds.class_names.size())
      throw ParseError("label " + std::to_string(ds.labels[i]) + " outside declared classes", 0);
  return ds;
}

inline void save_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset_csv(os, ds);
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_dataset_csv(is);
}

}  // namespace sngp
