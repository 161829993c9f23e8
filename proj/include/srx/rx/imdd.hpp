#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srx/channel/channel.hpp"
#include "srx/core/fft.hpp"
#include "srx/core/overlap_save.hpp"
#include "srx/core/types.hpp"
#include "srx/rx/equalizer_design.hpp"
#include "srx/rx/frame.hpp"
#include "srx/tx/modulation.hpp"

namespace srx::rx {

struct ImddConfig {
  tx::ModulationFormat format{tx::Family::pam, 4};
  double baud = 2e9;
  double rolloff = 0.5;
  std::size_t eq_taps = 503;
  double eq_lambda = 1e-3;
  std::size_t avg_window = 105;  // odd; (avg_window-1)/2 past and future blocks
  double slip_hysteresis = 0.1;
  std::vector<double> thresholds;  // normalized domain; empty: ideal midpoints
  unsigned adc_bits = 12;
  bool keep_symbols = false;

  [[nodiscard]] std::size_t half_window() const { return avg_window / 2; }

  void validate() const {
    if (!format.is_pam()) throw std::invalid_argument("IMDD chain needs a PAM format");
    if (avg_window % 2 == 0 || avg_window < 1) throw std::invalid_argument("avg_window must be odd");
    if (avg_window / 2 >= kBlocksPerBuffer) throw std::invalid_argument("avg_window too long");
    if (eq_taps > kMaxCenteredTaps || eq_taps % 2 == 0) throw std::invalid_argument("eq_taps must be odd and <= 513");
    if (eq_taps > 503) throw std::invalid_argument("IMDD equalizer is limited to 503 taps");
    if (std::abs(kAdcRate / baud - 2.0) > 1e-9) throw std::invalid_argument("IMDD chain runs at 2 samples per symbol");
    if (!thresholds.empty()) {
      if (thresholds.size() != format.order() - 1) throw std::invalid_argument("need N-1 thresholds");
      for (std::size_t i = 1; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > thresholds[i - 1])) throw std::invalid_argument("thresholds must be strictly ascending");
      }
    }
  }
};

/// Static equalizer for the IMDD path: inverse of the electrical response toward the
/// matched RRC, real taps.
inline StaticEqualizer design_imdd_equalizer(const ImddConfig& cfg, const channel::ChannelConfig& ch) {
  const channel::ElectricalResponse h(ch);
  EqDesignProblem pb;
  pb.channel = sample_response([&](double f) { return h(f); }, ch.adc_rate);
  pb.target = matched_rrc_target(RrcSpec{cfg.rolloff, cfg.baud, 32}, ch.adc_rate);
  pb.n_taps = cfg.eq_taps;
  pb.lambda = cfg.eq_lambda;
  pb.real_taps = true;
  return design_static_equalizer(pb);
}

// ---------------------------------------------------------------------------
// Clock phase

struct ClockEstimate {
  cf64 acc{};
  bool low_confidence = false;
};

/// Band of bins [lo, hi] where the spectrum overlaps its copy shifted by the baud rate.
inline std::pair<std::size_t, std::size_t> excess_band(double rolloff) {
  const double half = kFftSize / 4.0;  // baud/2 at 2 samples per symbol
  auto lo = static_cast<std::size_t>(std::ceil(half * (1.0 - rolloff)));
  auto hi = static_cast<std::size_t>(std::floor(half * (1.0 + rolloff)));
  lo = std::max<std::size_t>(lo, 1);
  hi = std::min<std::size_t>(hi, kFftSize / 2 - 1);
  return {lo, hi};
}

/// C = sum_k X[k] * conj(X[k+512]) over the excess band. For real input
/// conj(X[k+512]) = X[512-k], so only the half spectrum is needed. The timing
/// phase is tau = -arg(C)/(2*pi) symbols; a delay of d samples rotates arg(C) by -pi*d.
inline ClockEstimate estimate_clock_phase(std::span<const cf32> half_bins, double rolloff) {
  if (half_bins.size() < kHalfBins) throw std::invalid_argument("need 513 bins");
  const auto [lo, hi] = excess_band(rolloff);
  cf64 acc = 0.0;
  double energy = 0.0;
  for (std::size_t k = lo; k <= hi; ++k) {
    acc += cf64(half_bins[k]) * cf64(half_bins[kFftSize / 2 - k]);
    energy += std::norm(cf64(half_bins[k]));
  }
  ClockEstimate e;
  e.acc = acc;
  e.low_confidence = !(energy > 0.0) || !(std::abs(acc) > 1e-12 * energy);
  return e;
}

inline ClockEstimate estimate_clock_phase(const BlockSpectrum& spec, double rolloff) {
  return estimate_clock_phase(std::span<const cf32>(spec.bins.data(), kHalfBins), rolloff);
}

/// Windowed vector averaging and unwrapping of block timing estimates, continuous over
/// buffer boundaries. Block g is emitted once estimate g+H is known (H = half window),
/// averaging the estimates in [g-H, g+H] that exist. Output is the unwrapped phase in
/// radians; tau in symbols is -phase/(2*pi).
class ClockPhaseTrack {
 public:
  explicit ClockPhaseTrack(std::size_t window = 105) : half_(window / 2) {
    if (window % 2 == 0) throw std::invalid_argument("window must be odd");
  }

  [[nodiscard]] std::size_t half_window() const { return half_; }
  [[nodiscard]] std::uint64_t next_block() const { return next_out_; }

  /// Feeds estimates; returns unwrapped phases for every block that became complete.
  std::vector<double> push(std::span<const ClockEstimate> est) {
    received_.insert(received_.end(), est.begin(), est.end());
    received_end_ += est.size();
    std::vector<double> out;
    while (next_out_ + half_ < received_end_) out.push_back(emit(next_out_ + half_ + 1));
    trim();
    return out;
  }

  /// Emits the remaining blocks with a one-sided future window.
  std::vector<double> flush() {
    std::vector<double> out;
    while (next_out_ < received_end_) out.push_back(emit(received_end_));
    trim();
    return out;
  }

 private:
  double emit(std::uint64_t end_exclusive) {
    const std::uint64_t g = next_out_;
    const std::uint64_t lo = g >= half_ ? g - half_ : 0;
    const std::uint64_t hi = std::min<std::uint64_t>(g + half_ + 1, end_exclusive);
    cf64 sum = 0.0;
    bool any = false;
    for (std::uint64_t j = lo; j < hi; ++j) {
      const auto& e = received_[static_cast<std::size_t>(j - base_)];
      if (e.low_confidence) continue;
      sum += e.acc;
      any = true;
    }
    double phi = prev_phi_;
    if (any && std::abs(sum) > 0.0) phi = std::arg(sum);
    if (!started_) {
      unwrapped_ = phi;
      started_ = true;
    } else {
      double d = phi - prev_phi_;
      d -= kTwoPi * std::round(d / kTwoPi);
      unwrapped_ += d;
    }
    prev_phi_ = phi;
    ++next_out_;
    return unwrapped_;
  }

  void trim() {
    const std::uint64_t keep = next_out_ >= half_ ? next_out_ - half_ : 0;
    if (keep > base_) {
      const auto n = static_cast<std::size_t>(keep - base_);
      received_.erase(received_.begin(), received_.begin() + static_cast<std::ptrdiff_t>(n));
      base_ = keep;
    }
  }

  std::size_t half_;
  std::deque<ClockEstimate> received_;
  std::uint64_t base_ = 0;  // global block index of received_[0]
  std::uint64_t received_end_ = 0;
  std::uint64_t next_out_ = 0;
  double prev_phi_ = 0.0;
  double unwrapped_ = 0.0;
  bool started_ = false;
};

/// Batch form of the averaging: a fresh track over `estimates`, flushed at the end.
inline std::vector<double> average_unwrap(ClockPhaseTrack& track, std::span<const ClockEstimate> estimates) {
  return track.push(estimates);
}

// ---------------------------------------------------------------------------
// Clock correction and symbol extraction

/// Integer symbol slip with hysteresis. The residual tau - slip stays within
/// +-(0.5 + hysteresis) symbols.
struct SlipState {
  std::int64_t slip = 0;
  double last_tau = 0.0;
  bool started = false;
};

struct BlockTiming {
  double advance_samples = 0.0;  // fractional advance applied in FD
  int delta = 0;                 // change of the slip counter at this block
};

inline BlockTiming update_slip(SlipState& st, double tau, double hysteresis) {
  if (st.started && std::abs(tau - st.last_tau) > 1.0) {
    throw std::runtime_error("clock phase jumped by more than one symbol between blocks");
  }
  st.started = true;
  st.last_tau = tau;
  const double bound = 0.5 + hysteresis;
  int delta = 0;
  while (tau - static_cast<double>(st.slip) > bound) {
    ++st.slip;
    ++delta;
  }
  while (tau - static_cast<double>(st.slip) < -bound) {
    --st.slip;
    --delta;
  }
  return {2.0 * (tau - static_cast<double>(st.slip)), delta};
}

/// Applies the fractional advance exp(+j*2*pi*k*s/1024) to a half spectrum in place.
/// The Nyquist bin keeps the real-signal consistent factor cos(pi*s).
inline void apply_fractional_advance(std::span<cf32> half_bins, double s) {
  const cf64 step = std::polar(1.0, kTwoPi * s / kFftSize);
  cf64 rot = 1.0;
  for (std::size_t k = 0; k < kFftSize / 2; ++k) {
    if (k % 64 == 0) rot = std::polar(1.0, kTwoPi * static_cast<double>(k) * s / kFftSize);
    half_bins[k] *= cf32(rot);
    rot *= step;
  }
  half_bins[kFftSize / 2] *= static_cast<float>(std::cos(kPi * s));
}

/// Inverse transform of a corrected half spectrum and extraction of the block's symbols:
/// 256 - delta symbols taken at samples 256 + 2*delta + 2t.
/// With `wave` set, the corrected 2 sps samples of the same span are appended too.
inline void extract_symbols(std::span<const cf32> half_bins, int delta, std::vector<float>& out,
                            std::vector<float>* wave = nullptr) {
  std::array<float, kFftSize> time{};
  fft_raw::c2r(half_bins.data(), time.data(), kFftSize);
  const int count = 256 - delta;
  const int start = static_cast<int>(kValidBegin) + 2 * delta;
  for (int t = 0; t < count; ++t) out.push_back(time[static_cast<std::size_t>(start + 2 * t)] * kUnitaryScale1024);
  if (wave) {
    for (int i = 0; i < 2 * count; ++i) wave->push_back(time[static_cast<std::size_t>(start + i)] * kUnitaryScale1024);
  }
}

/// Step 5-7 for one block: FD fractional-delay correction, inverse, variable-rate
/// extraction (255, 256 or 257 symbols).
inline std::vector<float> clock_correct_extract(const BlockSpectrum& spec, double tau, SlipState& st,
                                                double hysteresis = 0.1) {
  std::array<cf32, kHalfBins> half{};
  std::copy(spec.bins.begin(), spec.bins.begin() + kHalfBins, half.begin());
  const auto timing = update_slip(st, tau, hysteresis);
  apply_fractional_advance(half, timing.advance_samples);
  std::vector<float> out;
  out.reserve(257);
  extract_symbols(half, timing.delta, out);
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and decision

struct Normalization {
  double dc = 0.0;
  double amplitude = 1.0;
};

inline constexpr std::size_t kMinNormalizeSymbols = std::size_t{1} << 15;

/// dc = mean; amplitude = mean |s - dc| divided by the alphabet's ideal mean |level|, so an
/// ideal constellation maps to unit peak.
inline Normalization normalize_buffer(std::span<const float> symbols, const tx::ModulationFormat& fmt,
                                      std::size_t min_symbols = kMinNormalizeSymbols) {
  if (symbols.size() < min_symbols) throw std::invalid_argument("normalization needs at least 2^15 symbols");
  double sum = 0.0;
  for (float s : symbols) sum += s;
  const double dc = sum / static_cast<double>(symbols.size());
  double mad = 0.0;
  for (float s : symbols) mad += std::abs(s - dc);
  mad /= static_cast<double>(symbols.size());
  if (!(mad > 0.0)) throw std::runtime_error("zero signal amplitude");
  return {dc, mad / fmt.pam_mean_abs_level()};
}

struct PamDecisionTable {
  double dc_offset = 0.0;
  double amplitude = 1.0;
  std::vector<double> thresholds;  // N-1 ascending, normalized domain
  tx::ModulationFormat format{tx::Family::pam, 4};

  static std::vector<double> ideal_thresholds(const tx::ModulationFormat& fmt) {
    std::vector<double> t(fmt.order() - 1);
    for (unsigned i = 0; i + 1 < fmt.order(); ++i) {
      t[i] = 0.5 * (tx::ModulationFormat::level(i, fmt.order()) + tx::ModulationFormat::level(i + 1, fmt.order()));
    }
    return t;
  }
};

struct PamDecisions {
  std::vector<std::uint8_t> bits;
  std::vector<std::uint64_t> level_histogram;
};

/// Region index = number of thresholds <= s, so a sample exactly on a threshold goes to
/// the upper region. Gray demap of the region index.
inline unsigned pam_region(double s, std::span<const double> thresholds) {
  return static_cast<unsigned>(std::upper_bound(thresholds.begin(), thresholds.end(), s) - thresholds.begin());
}

inline PamDecisions pam_decide(std::span<const float> symbols, const PamDecisionTable& table) {
  PamDecisions d;
  const unsigned k = table.format.bits_per_symbol();
  d.bits.resize(symbols.size() * k);
  d.level_histogram.assign(table.format.order(), 0);
  const double inv = 1.0 / table.amplitude;
  std::uint8_t* out = d.bits.data();
  for (float s : symbols) {
    const double v = (s - table.dc_offset) * inv;
    const unsigned region = pam_region(v, table.thresholds);
    ++d.level_histogram[region];
    const unsigned g = tx::ModulationFormat::gray(region);
    for (unsigned b = 0; b < k; ++b) *out++ = static_cast<std::uint8_t>((g >> (k - 1 - b)) & 1u);
  }
  return d;
}

/// Thresholds from a calibration run: normalized symbols split into N equiprobable
/// quantile groups; thresholds are midpoints between adjacent group means.
inline std::vector<double> calibrate_thresholds(std::span<const float> normalized, const tx::ModulationFormat& fmt) {
  const unsigned n = fmt.order();
  if (normalized.size() < 16 * n) throw std::invalid_argument("too few calibration symbols");
  std::vector<float> v(normalized.begin(), normalized.end());
  std::sort(v.begin(), v.end());
  std::vector<double> means(n);
  for (unsigned i = 0; i < n; ++i) {
    const std::size_t a = v.size() * i / n;
    const std::size_t b = v.size() * (i + 1) / n;
    double s = 0.0;
    for (std::size_t j = a; j < b; ++j) s += v[j];
    means[i] = s / static_cast<double>(b - a);
  }
  std::vector<double> t(n - 1);
  for (unsigned i = 0; i + 1 < n; ++i) t[i] = 0.5 * (means[i] + means[i + 1]);
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) throw std::runtime_error("calibrated thresholds are not ascending");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Chain

/// The nine IMDD stages as a pipeline chain. Stage 0 (overlap) and stage 4
/// (average/unwrap, which also owns the slip counter and the spectra delayed by the
/// look-ahead) carry state from buffer n-1 to n; all others are per-buffer.
class ImddChain {
 public:
  using Input = CodeBuffer;
  using Output = SymbolFrame;

  static constexpr std::size_t kStages = 9;
  static constexpr std::array<const char*, kStages> kStageNames = {
      "overlap", "fft", "static_eq", "clock_phase_est", "average_unwrap",
      "clock_correct", "ifft_extract", "normalize", "decide"};
  static constexpr std::array<bool, kStages> kDependent = {true, false, false, false, true,
                                                           false, false, false, false};

  struct Work {
    std::uint64_t seq = 0;
    CodeBuffer input;
    std::vector<float> extended;
    std::vector<cf32> spectra;  // kBlocksPerBuffer x 513
    std::vector<ClockEstimate> estimates;
    std::vector<cf32> emit_spectra;  // emitted blocks x 513
    std::vector<BlockTiming> timing;
    std::vector<float> taus;
    std::vector<float> symbols;
    std::vector<float> wave;
    std::int64_t slip_after = 0;
    Normalization norm;
    SymbolFrame frame;
    bool is_flush = false;
  };

  ImddChain(ImddConfig cfg, StaticEqualizer eq) : cfg_(std::move(cfg)), eq_(std::move(eq)), track_(cfg_.avg_window) {
    cfg_.validate();
    thresholds_ = cfg_.thresholds.empty() ? PamDecisionTable::ideal_thresholds(cfg_.format) : cfg_.thresholds;
    tail_.assign(kBlockHop, 0.0f);
  }

  [[nodiscard]] const ImddConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<double>& thresholds() const { return thresholds_; }

  Work make_work(Input&& in) {
    validate_pipeline_buffer(in);
    Work w;
    w.seq = in.sequence_index;
    w.input = std::move(in);
    return w;
  }

  void run_stage(std::size_t stage, Work& w) {
    switch (stage) {
      case 0: stage_overlap(w); break;
      case 1: stage_fft(w); break;
      case 2: stage_eq(w); break;
      case 3: stage_estimate(w); break;
      case 4: stage_unwrap(w); break;
      case 5: stage_correct(w); break;
      case 6: stage_extract(w); break;
      case 7: stage_normalize(w); break;
      case 8: stage_decide(w); break;
      default: throw std::out_of_range("stage index");
    }
  }

  Output finish(Work& w) { return std::move(w.frame); }

  /// Emits the blocks held back for the averaging look-ahead after the last buffer.
  std::optional<Output> flush() {
    Work w;
    w.is_flush = true;
    w.seq = next_seq_unwrap_;
    const auto phases = track_.flush();
    if (phases.empty()) return std::nullopt;
    take_delayed(w, phases);
    stage_correct(w);
    stage_extract(w);
    w.norm = last_norm_;
    stage_decide(w);
    w.frame.tail = true;
    return std::move(w.frame);
  }

  /// Processes one buffer through all stages on the calling thread.
  Output process(Input&& in) {
    Work w = make_work(std::move(in));
    for (std::size_t s = 0; s < kStages; ++s) run_stage(s, w);
    return finish(w);
  }

 private:
  void check_stamp(std::uint64_t& expected, std::uint64_t seq, const char* what) {
    if (seq != expected) {
      throw std::logic_error(std::string(what) + ": carried state is for buffer " + std::to_string(expected) +
                             ", got buffer " + std::to_string(seq));
    }
    ++expected;
  }

  void stage_overlap(Work& w) {
    check_stamp(next_seq_overlap_, w.seq, "overlap");
    w.extended.resize(kBlockHop + kBufferSamples);
    std::copy(tail_.begin(), tail_.end(), w.extended.begin());
    for (std::size_t i = 0; i < kBufferSamples; ++i) {
      w.extended[kBlockHop + i] = channel::dequantize_sample(w.input.samples[i], cfg_.adc_bits);
    }
    std::copy(w.extended.end() - kBlockHop, w.extended.end(), tail_.begin());
    w.input.samples = {};
  }

  void stage_fft(Work& w) {
    w.spectra.resize(kBlocksPerBuffer * kHalfBins);
    for (std::size_t b = 0; b < kBlocksPerBuffer; ++b) {
      cf32* dst = &w.spectra[b * kHalfBins];
      fft_raw::r2c(&w.extended[b * kBlockHop], dst, kFftSize);
      for (std::size_t k = 0; k < kHalfBins; ++k) dst[k] *= kUnitaryScale1024;
    }
    w.extended = {};
  }

  void stage_eq(Work& w) {
    for (std::size_t b = 0; b < kBlocksPerBuffer; ++b) {
      cf32* dst = &w.spectra[b * kHalfBins];
      for (std::size_t k = 0; k < kHalfBins; ++k) dst[k] *= eq_.taps_fd[k];
    }
  }

  void stage_estimate(Work& w) {
    w.estimates.resize(kBlocksPerBuffer);
    for (std::size_t b = 0; b < kBlocksPerBuffer; ++b) {
      w.estimates[b] = estimate_clock_phase(std::span<const cf32>(&w.spectra[b * kHalfBins], kHalfBins), cfg_.rolloff);
    }
  }

  void stage_unwrap(Work& w) {
    check_stamp(next_seq_unwrap_, w.seq, "average_unwrap");
    const auto phases = track_.push(w.estimates);
    // The delayed spectra of the previous buffer come first, then this buffer's.
    take_delayed(w, phases, &w.spectra);
    w.spectra = {};
  }

  /// Emitted spectra are the held-back blocks followed by the head of `incoming`; the
  /// rest of `incoming` is held back for the next call.
  void take_delayed(Work& w, const std::vector<double>& phases, const std::vector<cf32>* incoming = nullptr) {
    const std::size_t n = phases.size() * kHalfBins;
    const std::size_t held = delayed_.size();
    const std::size_t in_size = incoming ? incoming->size() : 0;
    if (n > held + in_size) throw std::logic_error("average_unwrap: emitted more blocks than received");
    w.emit_spectra.resize(n);
    const std::size_t from_held = std::min(n, held);
    std::copy_n(delayed_.begin(), from_held, w.emit_spectra.begin());
    std::vector<cf32> next;
    if (from_held < held) next.assign(delayed_.begin() + static_cast<std::ptrdiff_t>(from_held), delayed_.end());
    if (incoming) {
      const std::size_t from_in = n - from_held;
      std::copy_n(incoming->begin(), from_in, w.emit_spectra.begin() + static_cast<std::ptrdiff_t>(from_held));
      next.insert(next.end(), incoming->begin() + static_cast<std::ptrdiff_t>(from_in), incoming->end());
    }
    delayed_ = std::move(next);
    const std::size_t nb = phases.size();
    w.timing.resize(nb);
    w.taus.resize(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      const double tau = -phases[i] / kTwoPi;
      w.taus[i] = static_cast<float>(tau);
      w.timing[i] = update_slip(slip_, tau, cfg_.slip_hysteresis);
    }
    w.slip_after = slip_.slip;
  }

  void stage_correct(Work& w) {
    for (std::size_t i = 0; i < w.timing.size(); ++i) {
      apply_fractional_advance(std::span<cf32>(&w.emit_spectra[i * kHalfBins], kHalfBins), w.timing[i].advance_samples);
    }
  }

  void stage_extract(Work& w) {
    w.symbols.clear();
    w.symbols.reserve(w.timing.size() * 257);
    for (std::size_t i = 0; i < w.timing.size(); ++i) {
      extract_symbols(std::span<const cf32>(&w.emit_spectra[i * kHalfBins], kHalfBins), w.timing[i].delta, w.symbols,
                      cfg_.keep_symbols ? &w.wave : nullptr);
    }
    w.emit_spectra = {};
  }

  void stage_normalize(Work& w) {
    w.norm = normalize_buffer(w.symbols, cfg_.format);
    last_norm_ = w.norm;
  }

  void stage_decide(Work& w) {
    PamDecisionTable table{w.norm.dc, w.norm.amplitude, thresholds_, cfg_.format};
    auto d = pam_decide(w.symbols, table);
    auto& f = w.frame;
    f.sequence_index = w.seq;
    f.bits = std::move(d.bits);
    f.level_histogram = std::move(d.level_histogram);
    f.n_symbols = w.symbols.size();
    f.dc_offset = w.norm.dc;
    f.amplitude = w.norm.amplitude;
    f.slip_counter = w.slip_after;
    f.tau_trace = std::move(w.taus);
    if (cfg_.keep_symbols) {
      f.symbols.resize(w.symbols.size());
      const double inv = 1.0 / w.norm.amplitude;
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        f.symbols[i] = cf32(static_cast<float>((w.symbols[i] - w.norm.dc) * inv), 0.0f);
      }
      f.waveform.resize(w.wave.size());
      for (std::size_t i = 0; i < w.wave.size(); ++i) f.waveform[i] = static_cast<float>((w.wave[i] - w.norm.dc) * inv);
      w.wave = {};
    }
    w.symbols = {};
  }

  ImddConfig cfg_;
  StaticEqualizer eq_;
  std::vector<double> thresholds_;

  // carried state, stage 0
  std::vector<float> tail_;
  std::uint64_t next_seq_overlap_ = 0;
  // carried state, stage 4
  ClockPhaseTrack track_;
  SlipState slip_;
  std::vector<cf32> delayed_;
  std::uint64_t next_seq_unwrap_ = 0;
  Normalization last_norm_;
};

/// Runs a fresh chain over one buffer and derives decision thresholds from its
/// normalized symbols (the offline calibration).
inline std::vector<double> calibrate_imdd_thresholds(const ImddConfig& cfg, const StaticEqualizer& eq, CodeBuffer warmup) {
  ImddConfig c = cfg;
  c.thresholds.clear();
  c.keep_symbols = true;
  ImddChain chain(c, eq);
  warmup.sequence_index = 0;
  const auto frame = chain.process(std::move(warmup));
  std::vector<float> norm(frame.symbols.size());
  for (std::size_t i = 0; i < norm.size(); ++i) norm[i] = frame.symbols[i].real();
  return calibrate_thresholds(norm, cfg.format);
}

}  // namespace srx::rx
