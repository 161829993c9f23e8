#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace srx {

using cf32 = std::complex<float>;
using cf64 = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Acquisition geometry shared by both receiver chains.
inline constexpr std::size_t kBufferSamples = std::size_t{1} << 22;
inline constexpr std::size_t kFftSize = 1024;
inline constexpr std::size_t kHalfBins = kFftSize / 2 + 1;
inline constexpr std::size_t kBlockHop = 512;
inline constexpr std::size_t kBlocksPerBuffer = kBufferSamples / kBlockHop;
inline constexpr std::size_t kValidBegin = 256;
inline constexpr std::size_t kValidEnd = 768;
inline constexpr std::size_t kMaxCenteredTaps = 513;

inline constexpr double kAdcRate = 4e9;
inline constexpr double kBufferDuration = static_cast<double>(kBufferSamples) / kAdcRate;

enum class DomainTag : std::uint8_t { real_electrical, complex_field };

struct Rational {
  std::uint32_t num = 1;
  std::uint32_t den = 1;

  [[nodiscard]] constexpr double value() const { return static_cast<double>(num) / den; }
  friend constexpr bool operator==(const Rational&, const Rational&) = default;
};

/// One acquisition unit. Pipeline buffers hold exactly kBufferSamples samples;
/// free-standing signals (tx renders, test vectors) may have any length.
template <class T>
struct SampleBuffer {
  std::vector<T> samples;
  double sample_rate = kAdcRate;
  Rational samples_per_symbol{};
  DomainTag domain = DomainTag::real_electrical;
  std::uint64_t sequence_index = 0;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
};

using RealBuffer = SampleBuffer<float>;
using FieldBuffer = SampleBuffer<cf32>;
using CodeBuffer = SampleBuffer<std::uint16_t>;

template <class T>
void validate_pipeline_buffer(const SampleBuffer<T>& buf) {
  if (buf.samples.size() != kBufferSamples) {
    throw std::length_error("pipeline buffer must hold 2^22 samples, got " +
                            std::to_string(buf.samples.size()));
  }
  if (!(buf.sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
}

/// Returns true when `next` does not directly follow `prev` (data loss).
inline bool sequence_gap(std::uint64_t prev, std::uint64_t next) { return next != prev + 1; }

inline double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin_to_db(double lin) { return 10.0 * std::log10(lin); }

}  // namespace srx
