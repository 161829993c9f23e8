#pragma once

// Constructed IQ-imbalance channel and the closed-form (Wiener) solutions for the
// 4-tap T/2 equalizer, linear and widely linear.

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <random>
#include <vector>

#include "srx/rx/kk.hpp"

namespace wloracle {

using cf64 = std::complex<double>;

struct IqChannel {
  std::vector<cf64> symbols;
  std::vector<cf64> samples;  // 2 sps, even samples at symbol centers
  double beta = 0.1;
};

/// r(2n) = s_n, r(2n+1) = (s_n + s_{n+1})/2, then r + beta*conj(r) plus circular noise.
inline IqChannel make_iq_channel(const srx::tx::ModulationFormat& fmt, std::size_t n_sym, double beta, double snr_db,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pts = fmt.constellation();
  IqChannel ch;
  ch.beta = beta;
  ch.symbols.resize(n_sym);
  for (auto& s : ch.symbols) s = pts[rng() % pts.size()];
  std::normal_distribution<double> g(0.0, std::sqrt(0.5 * std::pow(10.0, -snr_db / 10.0)));
  ch.samples.resize(2 * n_sym);
  for (std::size_t n = 0; n < n_sym; ++n) {
    const cf64 next = n + 1 < n_sym ? ch.symbols[n + 1] : cf64{};
    const cf64 r[2] = {ch.symbols[n], 0.5 * (ch.symbols[n] + next)};
    for (int p = 0; p < 2; ++p) ch.samples[2 * n + p] = r[p] + beta * std::conj(r[p]) + cf64(g(rng), g(rng));
  }
  return ch;
}

struct Taps {
  std::array<cf64, 4> w{}, v{};
};

inline std::array<cf64, 4> regressor(const std::vector<cf64>& r, std::size_t n) {
  auto at = [&](long i) { return i >= 0 && i < static_cast<long>(r.size()) ? r[static_cast<std::size_t>(i)] : cf64{}; };
  const long c = 2 * static_cast<long>(n);
  return {at(c + 1), at(c), at(c - 1), at(c - 2)};
}

/// Solves R c = p with z = [u; conj(u)] (or u alone) and y = c^H z over symbols [from, to).
inline Taps wiener(const IqChannel& ch, bool widely_linear, std::size_t from, std::size_t to) {
  const int n = widely_linear ? 8 : 4;
  Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(n, n);
  Eigen::VectorXcd p = Eigen::VectorXcd::Zero(n);
  Eigen::VectorXcd z(n);
  for (std::size_t k = from; k < to; ++k) {
    const auto u = regressor(ch.samples, k);
    for (int i = 0; i < 4; ++i) {
      z(i) = u[static_cast<std::size_t>(i)];
      if (widely_linear) z(i + 4) = std::conj(u[static_cast<std::size_t>(i)]);
    }
    R += z * z.adjoint();
    p += z * std::conj(ch.symbols[k]);
  }
  const Eigen::VectorXcd c = R.ldlt().solve(p);
  Taps t;
  for (int i = 0; i < 4; ++i) {
    t.w[static_cast<std::size_t>(i)] = c(i);
    if (widely_linear) t.v[static_cast<std::size_t>(i)] = c(i + 4);
  }
  return t;
}

inline cf64 equalize(const Taps& t, const std::array<cf64, 4>& u) {
  cf64 y = 0.0;
  for (std::size_t i = 0; i < 4; ++i) y += std::conj(t.w[i]) * u[i] + std::conj(t.v[i]) * std::conj(u[i]);
  return y;
}

/// Mean |s - y|^2 over symbols [from, to).
inline double mse(const Taps& t, const IqChannel& ch, std::size_t from, std::size_t to) {
  double e = 0.0;
  for (std::size_t k = from; k < to; ++k) e += std::norm(ch.symbols[k] - equalize(t, regressor(ch.samples, k)));
  return e / static_cast<double>(to - from);
}

/// Image rejection of the noise-free composite channel+equalizer response:
/// |a_0|^2 / sum_m |b_m|^2 with y_n = sum_m a_m s_{n+m} + b_m conj(s_{n+m}).
inline double image_rejection_db(const Taps& t, double beta) {
  // sample 2n+1-i as weights on s_{n-1}, s_n, s_{n+1}
  static constexpr double g[4][3] = {{0.0, 0.5, 0.5}, {0.0, 1.0, 0.0}, {0.5, 0.5, 0.0}, {1.0, 0.0, 0.0}};
  cf64 a[3] = {}, b[3] = {};
  for (std::size_t i = 0; i < 4; ++i) {
    const cf64 cr = std::conj(t.w[i]) + beta * std::conj(t.v[i]);
    const cf64 cc = beta * std::conj(t.w[i]) + std::conj(t.v[i]);
    for (int m = 0; m < 3; ++m) {
      a[m] += cr * g[i][m];
      b[m] += cc * g[i][m];
    }
  }
  const double img = std::norm(b[0]) + std::norm(b[1]) + std::norm(b[2]);
  return 10.0 * std::log10(std::norm(a[1]) / img);
}

inline Taps taps_of(const srx::rx::WidelyLinearEq& eq) {
  Taps t;
  t.w = eq.w;
  t.v = eq.v;
  return t;
}

}  // namespace wloracle
