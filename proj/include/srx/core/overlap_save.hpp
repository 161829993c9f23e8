#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "srx/core/fft.hpp"
#include "srx/core/types.hpp"

namespace srx {

/// A buffer with the predecessor's last block prepended. Block b spans
/// samples [512*b, 512*b + 1024) of `extended`, i.e. stream samples
/// [start - 512 + 512*b, start + 512 + 512*b).
template <class T>
struct FramedBuffer {
  std::vector<T> extended;
  std::size_t n_blocks = 0;
  std::uint64_t sequence_index = 0;

  [[nodiscard]] std::span<const T> block(std::size_t b) const {
    return std::span<const T>(extended).subspan(b * kBlockHop, kFftSize);
  }
};

template <class T>
struct FramedResult {
  FramedBuffer<T> framed;
  std::vector<T> next_tail;
};

/// Prepends `prev_tail` (the predecessor's final 512 samples, zeros for the first
/// buffer) and frames the buffer into 8192 half-overlapping 1024-sample blocks.
template <class T>
FramedResult<T> overlap_save_frame(std::span<const T> prev_tail, const SampleBuffer<T>& buffer) {
  validate_pipeline_buffer(buffer);
  if (prev_tail.size() != kBlockHop) throw std::invalid_argument("overlap tail must hold 512 samples");
  FramedResult<T> r;
  r.framed.extended.reserve(kBlockHop + kBufferSamples);
  r.framed.extended.insert(r.framed.extended.end(), prev_tail.begin(), prev_tail.end());
  r.framed.extended.insert(r.framed.extended.end(), buffer.samples.begin(), buffer.samples.end());
  r.framed.n_blocks = kBlocksPerBuffer;
  r.framed.sequence_index = buffer.sequence_index;
  r.next_tail.assign(buffer.samples.end() - kBlockHop, buffer.samples.end());
  return r;
}

/// Frames an arbitrary extended sequence of length 512*(B+1) into B blocks.
template <class T>
FramedBuffer<T> frame_extended(std::vector<T> extended) {
  if (extended.size() < kFftSize || extended.size() % kBlockHop != 0) {
    throw std::invalid_argument("extended sequence must be a multiple of 512, at least 1024");
  }
  FramedBuffer<T> f;
  f.n_blocks = extended.size() / kBlockHop - 1;
  f.extended = std::move(extended);
  return f;
}

/// Bin-wise multiply, the core of static frequency-domain equalization.
inline void apply_response(std::span<cf32> bins, std::span<const cf32> response) {
  if (bins.size() != response.size()) throw std::invalid_argument("spectrum grid mismatch");
  for (std::size_t k = 0; k < bins.size(); ++k) bins[k] *= response[k];
}

/// Overlap-save filtering of every block with a centered-FIR response. Returns the
/// concatenated valid halves: output i corresponds to stream sample start - 256 + i.
template <class T>
std::vector<T> overlap_save_filter(const FramedBuffer<T>& framed, std::span<const cf32> response) {
  if (response.size() != kFftSize) throw std::invalid_argument("response must have 1024 bins");
  std::vector<T> out(framed.n_blocks * kBlockHop);
  constexpr float scale = 1.0f / static_cast<float>(kFftSize);
  if constexpr (std::is_same_v<T, float>) {
    std::array<cf32, kHalfBins> bins{};
    std::array<float, kFftSize> time{};
    for (std::size_t b = 0; b < framed.n_blocks; ++b) {
      fft_raw::r2c(framed.block(b).data(), bins.data(), kFftSize);
      for (std::size_t k = 0; k < kHalfBins; ++k) bins[k] *= response[k] * scale;
      fft_raw::c2r(bins.data(), time.data(), kFftSize);
      std::copy(time.begin() + kValidBegin, time.begin() + kValidEnd, out.begin() + b * kBlockHop);
    }
  } else {
    std::array<cf32, kFftSize> bins{};
    std::array<cf32, kFftSize> time{};
    for (std::size_t b = 0; b < framed.n_blocks; ++b) {
      fft_raw::c2c(framed.block(b).data(), bins.data(), kFftSize, true);
      for (std::size_t k = 0; k < kFftSize; ++k) bins[k] *= response[k] * scale;
      fft_raw::c2c(bins.data(), time.data(), kFftSize, false);
      std::copy(time.begin() + kValidBegin, time.begin() + kValidEnd, out.begin() + b * kBlockHop);
    }
  }
  return out;
}

/// Streaming zero-delay frequency-domain filter for long or mask-defined responses
/// (transmit pulse shaping, optical band-pass). Blocks of n samples advance by n/2
/// and keep the central half, so the implied impulse response must be confined to
/// +-n/4 samples. Samples before the first push are taken as zero.
template <class T>
class StreamingFdFilter {
 public:
  StreamingFdFilter() = default;

  /// `response` holds n bins in FFT order (n/2+1 bins suffice for real T).
  StreamingFdFilter(std::size_t n, std::vector<cf32> response) : n_(n), response_(std::move(response)) {
    if (n_ < 8 || (n_ & (n_ - 1)) != 0) throw std::invalid_argument("filter FFT size must be a power of two");
    const std::size_t need = std::is_same_v<T, float> ? n_ / 2 + 1 : n_;
    if (response_.size() < need) throw std::invalid_argument("response too short for FFT size");
    const float scale = 1.0f / static_cast<float>(n_);
    for (auto& r : response_) r *= scale;
    pending_.assign(n_ / 4, T{});
  }

  /// Builds the response of a centered FIR on an n-point grid.
  template <class Tap>
  static StreamingFdFilter from_centered_taps(std::span<const Tap> taps, std::size_t n) {
    if (taps.size() % 2 == 0 || taps.size() > n / 2 + 1) throw std::invalid_argument("taps too long for FFT size");
    std::vector<cf32> buf(n), resp(n);
    const std::size_t half = taps.size() / 2;
    for (std::size_t i = 0; i < taps.size(); ++i) buf[(i + n - half) % n] = cf32(taps[i]);
    fft_raw::c2c(buf.data(), resp.data(), n, true);
    return StreamingFdFilter(n, std::move(resp));
  }

  [[nodiscard]] std::size_t fft_size() const { return n_; }

  /// Filters `in` and appends every output whose support is complete to `out`.
  void process(std::span<const T> in, std::vector<T>& out) {
    pending_.insert(pending_.end(), in.begin(), in.end());
    const std::size_t hop = n_ / 2;
    std::size_t offset = 0;
    std::vector<cf32> bins(n_), ctime(n_);
    std::vector<float> rtime;
    if constexpr (std::is_same_v<T, float>) rtime.resize(n_);
    while (pending_.size() - offset >= n_) {
      const T* blk = pending_.data() + offset;
      if constexpr (std::is_same_v<T, float>) {
        fft_raw::r2c(blk, bins.data(), n_);
        for (std::size_t k = 0; k <= n_ / 2; ++k) bins[k] *= response_[k];
        fft_raw::c2r(bins.data(), rtime.data(), n_);
        out.insert(out.end(), rtime.begin() + n_ / 4, rtime.begin() + n_ / 4 + hop);
      } else {
        fft_raw::c2c(blk, bins.data(), n_, true);
        for (std::size_t k = 0; k < n_; ++k) bins[k] *= response_[k];
        fft_raw::c2c(bins.data(), ctime.data(), n_, false);
        out.insert(out.end(), ctime.begin() + n_ / 4, ctime.begin() + n_ / 4 + hop);
      }
      offset += hop;
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(offset));
  }

  /// Number of additional input samples needed before the next output block.
  [[nodiscard]] std::size_t input_deficit() const { return pending_.size() >= n_ ? 0 : n_ - pending_.size(); }

 private:
  std::size_t n_ = 0;
  std::vector<cf32> response_;
  std::vector<T> pending_;
};

}  // namespace srx
