#pragma once

// FFT engine backed by FFTW (single precision).
//
// Plans are created once per (size, kind) with FFTW_ESTIMATE on SIMD-aligned arrays and
// shared between threads through the new-array execute interface. Callers' data is
// staged through thread-local aligned scratch, so every call runs the same algorithm
// and results are bit-identical across threads and runs.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "srx/core/types.hpp"

namespace srx {

enum class FftKind : std::uint8_t { forward, backward, real_forward, real_backward };

class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftwf_plan get(std::size_t n, FftKind kind) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(n, kind);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const int size = static_cast<int>(n);
    const unsigned flags = FFTW_ESTIMATE;
    fftwf_plan plan = nullptr;
    auto* ca = fftwf_alloc_complex(n + 2);
    auto* cb = fftwf_alloc_complex(n + 2);
    auto* ra = reinterpret_cast<float*>(ca);
    auto* rb = reinterpret_cast<float*>(cb);
    switch (kind) {
      case FftKind::forward: plan = fftwf_plan_dft_1d(size, ca, cb, FFTW_FORWARD, flags); break;
      case FftKind::backward: plan = fftwf_plan_dft_1d(size, ca, cb, FFTW_BACKWARD, flags); break;
      case FftKind::real_forward: plan = fftwf_plan_dft_r2c_1d(size, ra, cb, flags); break;
      case FftKind::real_backward: plan = fftwf_plan_dft_c2r_1d(size, ca, rb, flags); break;
    }
    fftwf_free(ca);
    fftwf_free(cb);
    if (plan == nullptr) throw std::runtime_error("FFTW plan creation failed");
    plans_.emplace(key, plan);
    return plan;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [key, plan] : plans_) fftwf_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, FftKind>, fftwf_plan> plans_;
};

// Unscaled transforms. Input and output may alias.
namespace fft_raw {

struct AlignedScratch {
  fftwf_complex* in = nullptr;
  fftwf_complex* out = nullptr;
  std::size_t cap = 0;

  void reserve(std::size_t n) {
    if (n <= cap) return;
    release();
    in = fftwf_alloc_complex(n + 2);
    out = fftwf_alloc_complex(n + 2);
    cap = n;
  }
  void release() {
    if (in != nullptr) fftwf_free(in);
    if (out != nullptr) fftwf_free(out);
    in = out = nullptr;
    cap = 0;
  }
  AlignedScratch() = default;
  AlignedScratch(const AlignedScratch&) = delete;
  AlignedScratch& operator=(const AlignedScratch&) = delete;
  ~AlignedScratch() { release(); }
};

inline AlignedScratch& scratch(std::size_t n) {
  thread_local AlignedScratch s;
  s.reserve(n);
  return s;
}

inline void c2c(const cf32* in, cf32* out, std::size_t n, bool forward) {
  auto plan = FftPlanCache::instance().get(n, forward ? FftKind::forward : FftKind::backward);
  auto& s = scratch(n);
  std::copy(in, in + n, reinterpret_cast<cf32*>(s.in));
  fftwf_execute_dft(plan, s.in, s.out);
  const auto* r = reinterpret_cast<const cf32*>(s.out);
  std::copy(r, r + n, out);
}

/// n real samples -> n/2+1 bins.
inline void r2c(const float* in, cf32* out, std::size_t n) {
  auto plan = FftPlanCache::instance().get(n, FftKind::real_forward);
  auto& s = scratch(n);
  auto* ri = reinterpret_cast<float*>(s.in);
  std::copy(in, in + n, ri);
  fftwf_execute_dft_r2c(plan, ri, s.out);
  const auto* r = reinterpret_cast<const cf32*>(s.out);
  std::copy(r, r + n / 2 + 1, out);
}

/// n/2+1 bins -> n real samples. The input is left untouched.
inline void c2r(const cf32* in, float* out, std::size_t n) {
  auto plan = FftPlanCache::instance().get(n, FftKind::real_backward);
  auto& s = scratch(n);
  std::copy(in, in + n / 2 + 1, reinterpret_cast<cf32*>(s.in));
  auto* ro = reinterpret_cast<float*>(s.out);
  fftwf_execute_dft_c2r(plan, s.in, ro);
  std::copy(ro, ro + n, out);
}

}  // namespace fft_raw

struct ValidRange {
  std::size_t begin = kValidBegin;
  std::size_t end = kValidEnd;
  [[nodiscard]] std::size_t size() const { return end - begin; }
};

/// Frequency-domain view of one overlap-save block.
struct BlockSpectrum {
  std::array<cf32, kFftSize> bins{};
  ValidRange valid{};
  std::uint32_t block_index = 0;
};

inline constexpr float kUnitaryScale1024 = 0.03125f;  // 1/sqrt(1024)

/// Unitary 1024-point DFT of a real block. Output is Hermitian-symmetric.
inline BlockSpectrum fft_forward(std::span<const float> block, std::uint32_t block_index = 0) {
  if (block.size() != kFftSize) throw std::invalid_argument("fft_forward expects 1024 samples");
  BlockSpectrum spec;
  spec.block_index = block_index;
  fft_raw::r2c(block.data(), spec.bins.data(), kFftSize);
  for (std::size_t k = 0; k < kHalfBins; ++k) spec.bins[k] *= kUnitaryScale1024;
  for (std::size_t k = kHalfBins; k < kFftSize; ++k) spec.bins[k] = std::conj(spec.bins[kFftSize - k]);
  return spec;
}

/// Unitary 1024-point DFT of a complex block.
inline BlockSpectrum fft_forward(std::span<const cf32> block, std::uint32_t block_index = 0) {
  if (block.size() != kFftSize) throw std::invalid_argument("fft_forward expects 1024 samples");
  BlockSpectrum spec;
  spec.block_index = block_index;
  fft_raw::c2c(block.data(), spec.bins.data(), kFftSize, true);
  for (auto& v : spec.bins) v *= kUnitaryScale1024;
  return spec;
}

/// Copies bins [-256, 255] of a 1024-bin spectrum into 512-bin FFT order.
inline void extract_center_band(std::span<const cf32> bins1024, std::span<cf32> bins512) {
  for (std::size_t k = 0; k < 256; ++k) {
    bins512[k] = bins1024[k];
    bins512[256 + k] = bins1024[768 + k];
  }
}

/// Inverse transform. out_size 1024 is the unitary inverse. out_size 512 keeps the
/// central bins [-256, 255] and inverts at half rate, scaled so that a band-limited
/// input comes back as its even-indexed samples (amplitude preserved).
inline std::vector<cf32> fft_inverse(const BlockSpectrum& spec, std::size_t out_size) {
  std::vector<cf32> out(out_size);
  if (out_size == kFftSize) {
    fft_raw::c2c(spec.bins.data(), out.data(), kFftSize, false);
  } else if (out_size == kFftSize / 2) {
    std::array<cf32, kFftSize / 2> band{};
    extract_center_band(spec.bins, band);
    fft_raw::c2c(band.data(), out.data(), kFftSize / 2, false);
  } else {
    throw std::invalid_argument("fft_inverse supports out_size 1024 or 512");
  }
  for (auto& v : out) v *= kUnitaryScale1024;
  return out;
}

/// Multiplier spectrum of a centered FIR (taps[m] sits at delay m - (n-1)/2) on the
/// 1024-bin grid. Applied bin-wise to a unitary spectrum it realizes the convolution.
template <class Tap>
std::array<cf32, kFftSize> centered_fir_response(std::span<const Tap> taps) {
  if (taps.empty() || taps.size() % 2 == 0 || taps.size() > kMaxCenteredTaps) {
    throw std::invalid_argument("centered FIR needs an odd tap count <= 513");
  }
  std::array<cf32, kFftSize> buf{};
  const std::size_t half = taps.size() / 2;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const std::size_t pos = (i + kFftSize - half) % kFftSize;
    buf[pos] = cf32(taps[i]);
  }
  std::array<cf32, kFftSize> resp{};
  fft_raw::c2c(buf.data(), resp.data(), kFftSize, true);
  return resp;
}

/// Signed frequency index of FFT bin k on an n-point grid.
inline long signed_bin(std::size_t k, std::size_t n) {
  return k < n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

}  // namespace srx
