#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "srx/core/types.hpp"

namespace srx {

struct RrcSpec {
  double rolloff = 0.5;
  double baud = 2e9;
  std::size_t span_symbols = 32;
};

/// Continuous root-raised-cosine pulse, time in symbol periods, peak 1 - b + 4b/pi.
inline double rrc_pulse(double t, double beta) {
  constexpr double eps = 1e-9;
  if (std::abs(t) < eps) return 1.0 - beta + 4.0 * beta / kPi;
  if (beta > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * beta)) < eps) {
    return beta / std::sqrt(2.0) *
           ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * beta)) + (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * beta)));
  }
  const double num = std::sin(kPi * t * (1.0 - beta)) + 4.0 * beta * t * std::cos(kPi * t * (1.0 + beta));
  const double den = kPi * t * (1.0 - (4.0 * beta * t) * (4.0 * beta * t));
  return num / den;
}

/// Root-raised-cosine amplitude response, normalized to 1 at DC. f in Hz.
inline double rrc_amplitude(double f, const RrcSpec& spec) {
  const double ft = std::abs(f) / spec.baud;
  const double lo = (1.0 - spec.rolloff) / 2.0;
  const double hi = (1.0 + spec.rolloff) / 2.0;
  if (ft <= lo) return 1.0;
  if (ft >= hi) return 0.0;
  return std::sqrt(0.5 * (1.0 + std::cos(kPi / spec.rolloff * (ft - lo))));
}

/// Unit-energy, symmetric RRC taps sampled at `sample_rate`. The DC gain of unit-energy
/// taps is sqrt(sample_rate / baud); divide by it for a unit passband.
inline std::vector<double> rrc_filter_taps(const RrcSpec& spec, double sample_rate, std::size_t n_taps) {
  if (n_taps % 2 == 0) throw std::invalid_argument("RRC tap count must be odd");
  if (spec.rolloff < 0.0 || spec.rolloff > 1.0) throw std::invalid_argument("RRC roll-off must lie in [0, 1]");
  if (sample_rate < (1.0 + spec.rolloff) * spec.baud) {
    throw std::invalid_argument("sample rate below (1 + rolloff) * baud violates Nyquist");
  }
  const double sps = sample_rate / spec.baud;
  const auto half = static_cast<long>(n_taps / 2);
  std::vector<double> taps(n_taps);
  double energy = 0.0;
  for (long i = -half; i <= half; ++i) {
    const double v = rrc_pulse(static_cast<double>(i) / sps, spec.rolloff);
    taps[static_cast<std::size_t>(i + half)] = v;
    energy += v * v;
  }
  const double norm = 1.0 / std::sqrt(energy);
  for (auto& t : taps) t *= norm;
  return taps;
}

/// DTFT of real taps centered on their middle element, evaluated at f (Hz).
inline cf64 centered_taps_response(std::span<const double> taps, double f, double sample_rate) {
  const auto half = static_cast<long>(taps.size() / 2);
  cf64 acc = 0.0;
  const double w = kTwoPi * f / sample_rate;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double m = static_cast<double>(static_cast<long>(i) - half);
    acc += taps[i] * std::polar(1.0, -w * m);
  }
  return acc;
}

}  // namespace srx
