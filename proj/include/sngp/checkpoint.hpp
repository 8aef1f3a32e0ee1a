#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   bytes 0..7    magic "SNGPCKPT"
//   bytes 8..11   u32 format version (currently 1)
//   bytes 12..19  u64 manifest byte length M
//   next M bytes  UTF-8 JSON manifest: scalar hyperparameters plus a
//                 "tensors" array of {name, shape, offset, count}; offsets are
//                 byte offsets into the payload
//   remainder     payload of contiguous 64-bit IEEE-754 doubles
//
// The manifest is serialized with sorted keys, so save -> load -> save yields
// identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sngp/model.hpp"

namespace sngp {

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'G', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { not_a_checkpoint, unsupported_version, out_of_bounds, malformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

class TensorWriter {
 public:
  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const double> values) {
    manifest_.push_back({{"name", name}, {"shape", shape}, {"offset", payload_.size()}, {"count", values.size()}});
    for (double v : values) put_u64(payload_, std::bit_cast<std::uint64_t>(v));
  }
  void add(const std::string& name, const Matrix& m) { add(name, {m.rows(), m.cols()}, m.values()); }
  void add(const std::string& name, const std::vector<double>& v) { add(name, {v.size()}, v); }

  nlohmann::json& manifest() { return manifest_; }
  const std::vector<std::uint8_t>& payload() const { return payload_; }

 private:
  nlohmann::json manifest_ = nlohmann::json::array();
  std::vector<std::uint8_t> payload_;
};

struct TensorEntry {
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

class TensorReader {
 public:
  TensorReader(const nlohmann::json& tensors, std::span<const std::uint8_t> payload) : payload_(payload) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& t : tensors) {
      TensorEntry e{t.at("shape").get<std::vector<std::size_t>>(), t.at("offset").get<std::size_t>(),
                    t.at("count").get<std::size_t>()};
      std::size_t product = 1;
      for (std::size_t s : e.shape) product *= s;
      if (product != e.count) throw CheckpointError(CheckpointError::Kind::malformed, "tensor shape/count mismatch");
      if (e.offset % 8 != 0 || e.offset > payload_.size() || e.count > (payload_.size() - e.offset) / 8)
        throw CheckpointError(CheckpointError::Kind::out_of_bounds,
                              "tensor '" + t.at("name").get<std::string>() + "' lies outside the payload (truncated file?)");
      spans.emplace_back(e.offset, e.offset + 8 * e.count);
      entries_[t.at("name").get<std::string>()] = e;
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
      if (spans[i].first < spans[i - 1].second)
        throw CheckpointError(CheckpointError::Kind::malformed, "overlapping tensor ranges");
  }

  std::vector<double> values(const std::string& name, std::vector<std::size_t> expected_shape) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw CheckpointError(CheckpointError::Kind::malformed, "missing tensor '" + name + "'");
    if (it->second.shape != expected_shape)
      throw CheckpointError(CheckpointError::Kind::malformed, "tensor '" + name + "' has unexpected shape");
    std::vector<double> out(it->second.count);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::bit_cast<double>(get_le(payload_, it->second.offset + 8 * i, 8));
    return out;
  }

  Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) const {
    return Matrix(rows, cols, values(name, {rows, cols}));
  }
  std::vector<double> vector(const std::string& name, std::size_t n) const { return values(name, {n}); }

 private:
  std::span<const std::uint8_t> payload_;
  std::map<std::string, TensorEntry> entries_;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ModelBundle& m) {
  m.validate();
  if (m.is_gp() && !m.gp().posterior.finalized)
    throw StateError("checkpoint: SNGP models must have a finalized posterior before saving");
  const auto& ec = m.encoder.config;
  nlohmann::json man;
  man["method"] = to_string(m.method);
  man["trained"] = m.trained;
  man["class_names"] = m.class_names;
  man["encoder"] = {{"input_dim", ec.input_dim},
                    {"hidden_dim", ec.hidden_dim},
                    {"n_residual_blocks", ec.n_residual_blocks},
                    {"dropout_rate", ec.dropout_rate},
                    {"spectral_norm", ec.spectral_norm},
                    {"spectral_bound", ec.spectral_bound},
                    {"power_iterations", ec.power_iterations},
                    {"final_power_iterations", ec.final_power_iterations}};

  detail::TensorWriter w;
  w.add("encoder.input.weight", m.encoder.input.weight);
  w.add("encoder.input.bias", m.encoder.input.bias);
  for (std::size_t b = 0; b < m.encoder.blocks.size(); ++b) {
    w.add("encoder.block" + std::to_string(b) + ".weight", m.encoder.blocks[b].inner.weight);
    w.add("encoder.block" + std::to_string(b) + ".bias", m.encoder.blocks[b].inner.bias);
  }
  nlohmann::json sigmas = nlohmann::json::array();
  nlohmann::json spectral_seeds = nlohmann::json::array();
  for (std::size_t b = 0; b < m.spectral.size(); ++b) {
    w.add("spectral.block" + std::to_string(b) + ".u", m.spectral[b].u);
    w.add("spectral.block" + std::to_string(b) + ".sigma", std::vector<double>{m.spectral[b].last_sigma});
    sigmas.push_back(m.spectral[b].last_sigma);
    spectral_seeds.push_back(m.spectral[b].seed);
  }
  man["spectral"] = {{"converged_sigmas", sigmas}, {"seeds", spectral_seeds}};
  w.add("stats.mean", m.stats.mean);
  w.add("stats.std", m.stats.std);

  if (m.is_gp()) {
    const auto& h = m.gp();
    man["head"] = "gp";
    man["gp"] = {{"rff_dim", h.rff.dim()}, {"finalized", h.posterior.finalized}};
    w.add("gp.rff.weight", h.rff.weight);
    w.add("gp.rff.offset", h.rff.offset);
    w.add("gp.lengthscale", std::vector<double>{h.rff.lengthscale});
    w.add("gp.ridge", std::vector<double>{h.posterior.ridge});
    w.add("gp.mean_field_lambda", std::vector<double>{h.mean_field.lambda});
    w.add("gp.beta", h.beta);
    w.add("gp.precision", h.posterior.precision);
    w.add("gp.covariance", h.posterior.covariance);
  } else {
    man["head"] = "dense";
    w.add("head.weight", m.dense().layer.weight);
    w.add("head.bias", m.dense().layer.bias);
  }
  man["tensors"] = w.manifest();

  const std::string text = man.dump();
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), w.payload().begin(), w.payload().end());
  return out;
}

inline ModelBundle deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError(Kind::not_a_checkpoint, "not a checkpoint (bad magic)");
  if (bytes.size() < 20) throw CheckpointError(Kind::out_of_bounds, "checkpoint header truncated");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
  if (version == 0 || version > kCheckpointVersion)
    throw CheckpointError(Kind::unsupported_version, "unsupported checkpoint version " + std::to_string(version) +
                                                         " (this build reads up to " +
                                                         std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t mlen = detail::get_le(bytes, 12, 8);
  if (mlen > bytes.size() - 20) throw CheckpointError(Kind::out_of_bounds, "manifest extends past end of file");

  nlohmann::json man;
  try {
    man = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::malformed, std::string("manifest is not valid JSON: ") + e.what());
  }

  try {
    const auto payload = bytes.subspan(20 + mlen);
    const detail::TensorReader r(man.at("tensors"), payload);

    ModelBundle m;
    m.method = parse_method(man.at("method").get<std::string>());
    m.trained = man.at("trained").get<bool>();
    m.class_names = man.at("class_names").get<std::vector<std::string>>();
    const auto& je = man.at("encoder");
    EncoderConfig ec;
    ec.input_dim = je.at("input_dim");
    ec.hidden_dim = je.at("hidden_dim");
    ec.n_residual_blocks = je.at("n_residual_blocks");
    ec.dropout_rate = je.at("dropout_rate");
    ec.spectral_norm = je.at("spectral_norm");
    ec.spectral_bound = je.at("spectral_bound");
    ec.power_iterations = je.at("power_iterations");
    ec.final_power_iterations = je.at("final_power_iterations");
    const std::size_t hd = ec.hidden_dim;
    m.encoder.config = ec;
    m.encoder.input = {r.matrix("encoder.input.weight", hd, ec.input_dim), r.vector("encoder.input.bias", hd),
                       Activation::identity};
    for (std::size_t b = 0; b < ec.n_residual_blocks; ++b) {
      const std::string p = "encoder.block" + std::to_string(b);
      m.encoder.blocks.push_back({{r.matrix(p + ".weight", hd, hd), r.vector(p + ".bias", hd), Activation::relu}});
    }
    if (ec.spectral_norm) {
      const auto seeds = man.at("spectral").at("seeds").get<std::vector<std::uint64_t>>();
      if (seeds.size() != ec.n_residual_blocks) throw CheckpointError(Kind::malformed, "spectral state count mismatch");
      for (std::size_t b = 0; b < ec.n_residual_blocks; ++b) {
        const std::string p = "spectral.block" + std::to_string(b);
        SpectralState st;
        st.u = r.values(p + ".u", {hd});
        st.last_sigma = r.vector(p + ".sigma", 1)[0];
        st.bound = ec.spectral_bound;
        st.n_power_iterations = ec.power_iterations;
        st.seed = seeds[b];
        m.spectral.push_back(std::move(st));
      }
    }
    m.stats.mean = r.vector("stats.mean", ec.input_dim);
    m.stats.std = r.vector("stats.std", ec.input_dim);

    const std::size_t k = m.class_names.size();
    if (man.at("head").get<std::string>() == "gp") {
      const std::size_t d = man.at("gp").at("rff_dim");
      GPHead h;
      h.rff.weight = r.matrix("gp.rff.weight", d, hd);
      h.rff.offset = r.vector("gp.rff.offset", d);
      h.rff.lengthscale = r.vector("gp.lengthscale", 1)[0];
      h.posterior.ridge = r.vector("gp.ridge", 1)[0];
      h.mean_field.lambda = r.vector("gp.mean_field_lambda", 1)[0];
      h.beta = r.matrix("gp.beta", k, d);
      h.posterior.precision = r.matrix("gp.precision", d, d);
      h.posterior.finalized = man.at("gp").at("finalized").get<bool>();
      h.posterior.covariance = h.posterior.finalized ? r.matrix("gp.covariance", d, d) : Matrix();
      m.head = std::move(h);
    } else {
      m.head = DenseHead{{r.matrix("head.weight", k, hd), r.vector("head.bias", k), Activation::identity}};
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::malformed, std::string("manifest field error: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(Kind::malformed, e.what());
  }
}

inline void save_checkpoint(const ModelBundle& m, const std::string& path) {
  const auto bytes = serialize_checkpoint(m);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline ModelBundle load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace sngp
