#pragma once

// Spectral-norm control for hidden weight matrices: power-iteration estimate of
// the top singular value with a persistent left vector, and hard projection
// onto the ball ||W||_2 <= c.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sngp/matrix.hpp"
#include "sngp/rng.hpp"

namespace sngp {

struct SpectralState {
  std::vector<double> u;  // unit left singular vector estimate, warm-started
  double bound = 0.95;
  int n_power_iterations = 1;
  std::uint64_t seed = 0;  // draws u on first use
  double last_sigma = 0.0;

  friend bool operator==(const SpectralState&, const SpectralState&) = default;
};

namespace detail {
inline bool normalize(std::vector<double>& x) {
  const double n = norm2(x);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (double& v : x) v /= n;
  return true;
}
}  // namespace detail

/// Runs `state.n_power_iterations` rounds of v <- Wᵀu/|Wᵀu|, u <- Wv/|Wv| and
/// returns uᵀWv. An all-zero W yields 0 and leaves the state untouched.
inline double power_iteration(const Matrix& w, SpectralState& state) {
  if (state.u.size() != w.rows()) {
    Rng rng(state.seed);
    std::vector<double> u(w.rows());
    do {
      for (double& x : u) x = rng.normal();
    } while (!detail::normalize(u));
    state.u = std::move(u);
  }
  std::vector<double> u = state.u;
  std::vector<double> v;
  for (int it = 0; it < state.n_power_iterations; ++it) {
    v = matvec_t(w, u);
    if (!detail::normalize(v)) return 0.0;
    u = matvec(w, v);
    if (!detail::normalize(u)) return 0.0;
  }
  const auto wv = matvec(w, v);
  const double sigma = dot(u, wv);
  state.u = std::move(u);
  state.last_sigma = sigma;
  return sigma;
}

/// Same as power_iteration but with an explicit iteration count.
inline double power_iteration(const Matrix& w, SpectralState& state, int iterations) {
  const int saved = state.n_power_iterations;
  state.n_power_iterations = iterations;
  const double s = power_iteration(w, state);
  state.n_power_iterations = saved;
  return s;
}

/// W <- (c / sigma) W when sigma > c, otherwise W unchanged.
inline Matrix project(const Matrix& w, double sigma_est, double c) {
  if (!(sigma_est > c)) return w;
  Matrix out = w;
  out *= c / sigma_est;
  return out;
}

inline void project_in_place(Matrix& w, double sigma_est, double c) {
  if (sigma_est > c) w *= c / sigma_est;
}

}  // namespace sngp
