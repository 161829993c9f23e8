#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/bessel.hpp>

#include "srx/core/types.hpp"

namespace srx::channel {

/// Second-order Butterworth low-pass by bilinear transform, prewarped so the 3 dB
/// point lands exactly on `cutoff`. Direct form II transposed, double state.
class Biquad {
 public:
  Biquad() = default;
  Biquad(double b0, double b1, double b2, double a1, double a2) : b0_(b0), b1_(b1), b2_(b2), a1_(a1), a2_(a2) {}

  static Biquad butterworth_lowpass(double cutoff, double sample_rate) {
    if (!(cutoff > 0.0) || cutoff >= sample_rate / 2.0) throw std::invalid_argument("low-pass cutoff must lie in (0, fs/2)");
    const double k = std::tan(kPi * cutoff / sample_rate);
    const double q = 1.0 / std::sqrt(2.0);
    const double norm = 1.0 / (1.0 + k / q + k * k);
    const double b0 = k * k * norm;
    return {b0, 2.0 * b0, b0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm};
  }

  float step(float x) {
    const double y = b0_ * x + z1_;
    z1_ = b1_ * x - a1_ * y + z2_;
    z2_ = b2_ * x - a2_ * y;
    return static_cast<float>(y);
  }

  void process(std::span<float> v) {
    for (auto& x : v) x = step(x);
  }

  /// Settles the state as if `x` had been applied forever.
  void prime(float x) {
    const double y = x * (b0_ + b1_ + b2_) / (1.0 + a1_ + a2_);
    z1_ = y - b0_ * x;
    z2_ = b2_ * x - a2_ * y;
  }

  [[nodiscard]] cf64 response(double f, double sample_rate) const {
    const cf64 z1 = std::polar(1.0, -kTwoPi * f / sample_rate);
    const cf64 z2 = z1 * z1;
    return (b0_ + b1_ * z1 + b2_ * z2) / (1.0 + a1_ * z1 + a2_ * z2);
  }

 private:
  double b0_ = 1.0, b1_ = 0.0, b2_ = 0.0, a1_ = 0.0, a2_ = 0.0;
  double z1_ = 0.0, z2_ = 0.0;
};

/// Single-pole high-pass (AC coupling): y[n] = a*(y[n-1] + x[n] - x[n-1]).
class OnePoleHighpass {
 public:
  OnePoleHighpass() = default;
  OnePoleHighpass(double corner, double sample_rate) {
    const double rc = 1.0 / (kTwoPi * corner);
    const double dt = 1.0 / sample_rate;
    a_ = rc / (rc + dt);
  }

  void process(std::span<float> v) {
    for (auto& x : v) {
      const double y = a_ * (y_ + x - x_);
      x_ = x;
      y_ = y;
      x = static_cast<float>(y);
    }
  }

  /// Starts in steady state for a constant input `x` (output 0).
  void prime(float x) {
    x_ = x;
    y_ = 0.0;
  }

  [[nodiscard]] cf64 response(double f, double sample_rate) const {
    const cf64 z1 = std::polar(1.0, -kTwoPi * f / sample_rate);
    return a_ * (1.0 - z1) / (1.0 - a_ * z1);
  }

 private:
  double a_ = 1.0;
  double x_ = 0.0, y_ = 0.0;
};

/// Time-varying clock offset in ppm as a function of output time in seconds.
using PpmProfile = std::function<double(double)>;

inline PpmProfile constant_ppm(double ppm) {
  return [ppm](double) { return ppm; };
}

/// Triangle wave between -amplitude and +amplitude, starting at -amplitude.
inline PpmProfile triangle_ppm(double amplitude, double period_s) {
  if (!(period_s > 0.0)) throw std::invalid_argument("triangle period must be positive");
  return [amplitude, period_s](double t) {
    const double u = std::fmod(t / period_s, 1.0);
    const double tri = u < 0.5 ? 4.0 * u - 1.0 : 3.0 - 4.0 * u;
    return amplitude * tri;
  };
}

/// Band-limited fractional-delay resampler with an optional integer decimation.
///
/// Output n is the input interpolated at position t_n, t_0 = 0 and
/// t_{n+1} = t_n + D*(1 + ppm(n/fs_out)*1e-6), so a tone at f comes out at f*(1+ppm*1e-6)
/// on the output time axis. The kernel is a 33-tap Kaiser-windowed sinc with cutoff
/// `cutoff` (fraction of the input Nyquist band); phases come from a 1024-entry table with
/// linear interpolation. Inputs before the first sample are zero.
class ClockResampler {
 public:
  static constexpr int kTaps = 33;
  static constexpr int kHalf = kTaps / 2;
  static constexpr int kPhases = 1024;

  ClockResampler() = default;
  ClockResampler(unsigned decimation, double cutoff, double input_rate, PpmProfile profile, double kaiser_beta = 7.0)
      : decim_(decimation), input_rate_(input_rate), profile_(std::move(profile)) {
    if (decimation < 1) throw std::invalid_argument("decimation must be >= 1");
    if (!(cutoff > 0.0) || cutoff > 1.0) throw std::invalid_argument("resampler cutoff must lie in (0, 1]");
    build_table(cutoff, kaiser_beta);
    history_.assign(kHalf, 0.0f);
    base_ = -kHalf;
  }

  [[nodiscard]] double output_rate() const { return input_rate_ / decim_; }

  /// Consumes `in` and appends every output whose kernel support is available.
  void process(std::span<const float> in, std::vector<float>& out) {
    history_.insert(history_.end(), in.begin(), in.end());
    const long double avail_end = static_cast<long double>(base_) + static_cast<long double>(history_.size());
    for (;;) {
      const long double ip = std::floor(t_);
      if (ip + kHalf + 1 > avail_end) break;
      const auto i0 = static_cast<long>(ip);
      const double frac = static_cast<double>(t_ - ip);
      if (i0 - kHalf < base_) throw std::runtime_error("resampler history underflow");
      out.push_back(interpolate(i0, frac));
      const double ppm = profile_ ? profile_(static_cast<double>(n_out_) / output_rate()) : 0.0;
      ++n_out_;
      t_ += static_cast<long double>(decim_) * (1.0L + static_cast<long double>(ppm) * 1e-6L);
    }
    // Keep only what the next output still needs.
    const long keep_from = static_cast<long>(std::floor(t_)) - kHalf;
    if (keep_from > base_) {
      const auto drop = static_cast<std::size_t>(std::min<long>(keep_from - base_, static_cast<long>(history_.size())));
      history_.erase(history_.begin(), history_.begin() + static_cast<std::ptrdiff_t>(drop));
      base_ += static_cast<long>(drop);
    }
  }

  [[nodiscard]] std::uint64_t outputs() const { return n_out_; }

  /// Frequency response of the interpolation kernel at zero fractional phase.
  [[nodiscard]] cf64 response(double f) const {
    cf64 acc = 0.0;
    for (int k = -kHalf; k <= kHalf; ++k) acc += kernel_at(k) * std::polar(1.0, -kTwoPi * f / input_rate_ * k);
    return acc;
  }

 private:
  void build_table(double cutoff, double beta) {
    table_.assign(static_cast<std::size_t>(kPhases + 1) * kTaps, 0.0f);
    const double i0b = boost::math::cyl_bessel_i(0, beta);
    for (int p = 0; p <= kPhases; ++p) {
      const double frac = static_cast<double>(p) / kPhases;
      for (int k = -kHalf; k <= kHalf; ++k) {
        // Tap at input index i0 + k for output position i0 + frac.
        const double x = static_cast<double>(k) - frac;
        double s = 0.0;
        if (x == 0.0) {
          s = cutoff;
        } else if (cutoff == 1.0 && frac == 0.0) {
          s = 0.0;  // exact zeros of the full-band sinc
        } else {
          s = std::sin(kPi * cutoff * x) / (kPi * x);
        }
        const double r = x / (kHalf + 1.0);
        const double w = std::abs(r) >= 1.0 ? 0.0 : boost::math::cyl_bessel_i(0, beta * std::sqrt(1.0 - r * r)) / i0b;
        table_[static_cast<std::size_t>(p) * kTaps + static_cast<std::size_t>(k + kHalf)] = static_cast<float>(s * w);
      }
    }
  }

  [[nodiscard]] double kernel_at(int k) const { return table_[static_cast<std::size_t>(k + kHalf)]; }

  [[nodiscard]] float interpolate(long i0, double frac) const {
    const double pos = frac * kPhases;
    const auto p = static_cast<std::size_t>(pos);
    const double a = pos - static_cast<double>(p);
    const float* t0 = &table_[p * kTaps];
    const float* t1 = &table_[std::min<std::size_t>(p + 1, kPhases) * kTaps];
    const float* x = &history_[static_cast<std::size_t>(i0 - kHalf - base_)];
    float acc0 = 0.0f;
    for (int k = 0; k < kTaps; ++k) acc0 += t0[k] * x[k];
    if (a == 0.0) return acc0;
    float acc1 = 0.0f;
    for (int k = 0; k < kTaps; ++k) acc1 += t1[k] * x[k];
    return acc0 + static_cast<float>(a) * (acc1 - acc0);
  }

  unsigned decim_ = 1;
  double input_rate_ = 1.0;
  PpmProfile profile_;
  std::vector<float> table_;
  std::vector<float> history_;
  long base_ = 0;  // input index of history_[0]
  long double t_ = 0.0L;
  std::uint64_t n_out_ = 0;
};

}  // namespace srx::channel
