#pragma once

#include <cstdint>
#include <vector>

#include "srx/core/types.hpp"

namespace srx::rx {

/// Decoded output of one buffer.
struct SymbolFrame {
  std::uint64_t sequence_index = 0;
  bool warmup = false;
  bool tail = false;  // emitted by flush() after the last buffer
  std::vector<std::uint8_t> bits;
  std::vector<cf32> symbols;  // pre-decision symbols (real for PAM), filled when requested
  std::uint64_t n_symbols = 0;

  // IMDD diagnostics
  double dc_offset = 0.0;
  double amplitude = 0.0;
  std::int64_t slip_counter = 0;  // symbols dropped (+) or inserted (-) so far
  std::vector<float> tau_trace;   // timing per emitted block, in symbols
  std::vector<float> waveform;    // normalized clock-corrected 2 sps samples, filled when requested
  std::vector<std::uint64_t> level_histogram;

  // KK diagnostics
  double evm_db = 0.0;
  double evm_err_energy = 0.0, evm_ref_energy = 0.0;  // decision-directed part only
  std::uint64_t clamped_samples = 0;
  std::vector<cf64> taps_w, taps_v;
};

}  // namespace srx::rx
