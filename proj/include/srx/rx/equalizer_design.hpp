#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "srx/core/fft.hpp"
#include "srx/core/overlap_save.hpp"
#include "srx/core/rrc.hpp"
#include "srx/core/types.hpp"

namespace srx::rx {

/// FIR equalizer applied as a 1024-bin multiplier on unitary block spectra.
struct StaticEqualizer {
  std::vector<cf64> taps_td;           // centered, odd length
  std::array<cf32, kFftSize> taps_fd{};  // DFT of the zero-padded, centered taps

  static StaticEqualizer from_taps(std::vector<cf64> taps) {
    StaticEqualizer eq;
    eq.taps_td = std::move(taps);
    eq.taps_fd = centered_fir_response<cf64>(eq.taps_td);
    return eq;
  }

  static StaticEqualizer from_real_taps(std::span<const double> taps) {
    return from_taps(std::vector<cf64>(taps.begin(), taps.end()));
  }

  static StaticEqualizer identity() { return from_taps({cf64(1.0)}); }

  [[nodiscard]] std::size_t n_taps() const { return taps_td.size(); }
  [[nodiscard]] bool is_real() const {
    return std::all_of(taps_td.begin(), taps_td.end(), [](const cf64& t) { return t.imag() == 0.0; });
  }
};

/// Bin-wise multiply of a block spectrum by the equalizer response.
inline BlockSpectrum static_fd_equalize(const BlockSpectrum& spec, const StaticEqualizer& eq) {
  BlockSpectrum out = spec;
  apply_response(out.bins, eq.taps_fd);
  return out;
}

struct EqDesignProblem {
  std::vector<cf64> channel;  // H on the 1024-bin grid (FFT order)
  std::vector<cf64> target;   // desired overall response T
  std::vector<double> weight;  // per-bin weight W (empty: all ones)
  std::size_t n_taps = 503;
  double lambda = 1e-3;  // relative to max W|H|^2
  bool real_taps = true;
};

/// Least-squares equalizer over the taps themselves:
///   min_h sum_k W_k |H_k E_k(h) - T_k|^2 + lambda' sum_k |E_k(h)|^2
/// with E(h) the 1024-bin response of the centered taps. The normal equations are
/// Toeplitz, R[o,o'] = r[o-o'], r = IDFT(W|H|^2 + lambda'), p = IDFT(W conj(H) T),
/// solved with LDLT. Solving over the finite tap set directly replaces truncate-and-window.
inline StaticEqualizer design_static_equalizer(const EqDesignProblem& pb) {
  const std::size_t n = kFftSize;
  if (pb.channel.size() != n || pb.target.size() != n) throw std::invalid_argument("design grid must have 1024 bins");
  if (pb.n_taps % 2 == 0 || pb.n_taps > kMaxCenteredTaps) throw std::invalid_argument("n_taps must be odd and <= 513");
  if (pb.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  std::vector<double> w = pb.weight.empty() ? std::vector<double>(n, 1.0) : pb.weight;
  if (w.size() != n) throw std::invalid_argument("weight grid must have 1024 bins");

  double gmax = 0.0;
  for (std::size_t k = 0; k < n; ++k) gmax = std::max(gmax, w[k] * std::norm(pb.channel[k]));
  if (gmax == 0.0) throw std::invalid_argument("channel response is zero everywhere");
  const double lam = pb.lambda * gmax;
  if (std::isinf(lam)) return StaticEqualizer::from_taps(std::vector<cf64>(pb.n_taps, cf64{}));

  const auto half = static_cast<long>(pb.n_taps / 2);
  std::vector<cf64> r(2 * pb.n_taps), p(pb.n_taps);
  // r[d] for d in [-(n_taps-1), n_taps-1], p[o] for o in [-half, half].
  for (long d = -static_cast<long>(pb.n_taps) + 1; d < static_cast<long>(pb.n_taps); ++d) {
    cf64 acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double g = w[k] * std::norm(pb.channel[k]) + lam;
      acc += g * std::polar(1.0, kTwoPi * static_cast<double>(k) * static_cast<double>(d) / n);
    }
    r[static_cast<std::size_t>(d + static_cast<long>(pb.n_taps) - 1)] = acc;
  }
  for (long o = -half; o <= half; ++o) {
    cf64 acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += w[k] * std::conj(pb.channel[k]) * pb.target[k] *
             std::polar(1.0, kTwoPi * static_cast<double>(k) * static_cast<double>(o) / n);
    }
    p[static_cast<std::size_t>(o + half)] = acc;
  }

  const auto m = static_cast<Eigen::Index>(pb.n_taps);
  Eigen::MatrixXcd R(m, m);
  Eigen::VectorXcd b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    b(i) = p[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m; ++j) R(i, j) = r[static_cast<std::size_t>(i - j + m - 1)];
  }
  Eigen::LDLT<Eigen::MatrixXcd> ldlt(R);
  const auto d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  const double dmin = d.cwiseAbs().minCoeff();
  if (ldlt.info() != Eigen::Success || !(dmin > 1e-13 * dmax)) {
    throw std::runtime_error("equalizer design is ill-conditioned; increase lambda");
  }
  const Eigen::VectorXcd h = ldlt.solve(b);
  std::vector<cf64> taps(pb.n_taps);
  for (Eigen::Index i = 0; i < m; ++i) {
    taps[static_cast<std::size_t>(i)] = pb.real_taps ? cf64(h(i).real(), 0.0) : h(i);
  }
  return StaticEqualizer::from_taps(std::move(taps));
}

/// Frequency of FFT bin k on the 1024-point grid at sample_rate.
inline double bin_frequency(std::size_t k, double sample_rate) {
  return static_cast<double>(signed_bin(k, kFftSize)) * sample_rate / static_cast<double>(kFftSize);
}

/// Matched RRC target on the grid. Unit-energy RRC taps have DC gain sqrt(fs/baud), so a
/// flat channel reproduces `rrc_filter_taps`.
inline std::vector<cf64> matched_rrc_target(const RrcSpec& rrc, double sample_rate, double center_shift = 0.0) {
  const double dc = std::sqrt(sample_rate / rrc.baud);
  std::vector<cf64> t(kFftSize);
  for (std::size_t k = 0; k < kFftSize; ++k) t[k] = dc * rrc_amplitude(bin_frequency(k, sample_rate) - center_shift, rrc);
  return t;
}

/// Samples a response function on the grid.
inline std::vector<cf64> sample_response(const std::function<cf64(double)>& h, double sample_rate) {
  std::vector<cf64> out(kFftSize);
  for (std::size_t k = 0; k < kFftSize; ++k) out[k] = h(bin_frequency(k, sample_rate));
  return out;
}

}  // namespace srx::rx
