#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srx/channel/channel.hpp"
#include "srx/core/fft.hpp"
#include "srx/core/overlap_save.hpp"
#include "srx/core/prbs.hpp"
#include "srx/core/types.hpp"
#include "srx/rx/equalizer_design.hpp"
#include "srx/rx/frame.hpp"
#include "srx/tx/modulation.hpp"

namespace srx::rx {

struct KkConfig {
  tx::ModulationFormat format{tx::Family::qam, 16};
  double baud = 1e9;
  double rolloff = 0.01;
  double carrier_offset = 0.547e9;
  double dc_offset = std::numeric_limits<double>::quiet_NaN();  // ADC units; must be set
  std::size_t eq_taps = 203;
  double eq_lambda = 1e-4;
  double mu = 5e-4;
  std::size_t train_symbols = 20000;
  bool widely_linear = true;
  double divergence_norm = 1e3;
  unsigned prbs_order = 15;
  std::uint32_t prbs_seed = 1;
  std::size_t align_skip = 4096;     // 2 sps samples skipped before training alignment
  std::size_t align_window = 8192;  // symbols correlated for alignment
  float intensity_floor = 1e-6f;
  unsigned adc_bits = 12;
  bool keep_symbols = false;

  void validate() const {
    if (format.is_pam()) throw std::invalid_argument("KK chain needs a QAM format");
    if (!std::isfinite(dc_offset)) throw std::invalid_argument("KK dc_offset is not set (run the calibration)");
    if (eq_taps > 203 || eq_taps % 2 == 0) throw std::invalid_argument("KK equalizer taps must be odd and <= 203");
    if (std::abs(kAdcRate / baud - 4.0) > 1e-9) throw std::invalid_argument("KK chain runs at 4 samples per symbol");
    if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  }
};

/// Static equalizer for the KK path: after the downshift the signal at baseband f went
/// through the electrical response at f + carrier_offset. Target is the matched RRC.
/// The reconstructed carrier sits at -carrier_offset and is weighted heavily so the
/// filter places a deep notch there.
inline StaticEqualizer design_kk_equalizer(const KkConfig& cfg, const channel::ChannelConfig& ch) {
  const channel::ElectricalResponse h(ch);
  EqDesignProblem pb;
  pb.channel = sample_response([&](double f) { return h(f + cfg.carrier_offset); }, ch.adc_rate);
  pb.target = matched_rrc_target(RrcSpec{cfg.rolloff, cfg.baud, 256}, ch.adc_rate);
  pb.weight.assign(kFftSize, 1.0);
  const double carrier_bin = -cfg.carrier_offset / ch.adc_rate * kFftSize;
  for (std::size_t k = 0; k < kFftSize; ++k) {
    if (std::abs(static_cast<double>(signed_bin(k, kFftSize)) - carrier_bin) < 3.0) pb.weight[k] = 1e3;
  }
  pb.n_taps = cfg.eq_taps;
  pb.lambda = cfg.eq_lambda;
  pb.real_taps = false;
  return design_static_equalizer(pb);
}

// ---------------------------------------------------------------------------
// Front-end, Hilbert, reconstruction

struct FrontEndOut {
  std::vector<float> amplitude;
  std::vector<float> half_log;
};

/// sqrt and 0.5*ln of I + dc_offset. Throws on the first non-positive sample.
inline FrontEndOut kk_frontend(std::span<const float> samples, double dc_offset) {
  FrontEndOut out;
  out.amplitude.resize(samples.size());
  out.half_log.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = static_cast<double>(samples[i]) + dc_offset;
    if (!(v > 0.0)) {
      throw std::runtime_error("KK front-end: non-positive intensity at sample " + std::to_string(i) +
                               " (dc_offset too small)");
    }
    out.amplitude[i] = static_cast<float>(std::sqrt(v));
    out.half_log[i] = static_cast<float>(0.5 * std::log(v));
  }
  return out;
}

/// In-stream variant: values below the floor are clamped and counted.
inline std::uint64_t kk_frontend_clamped(std::span<const float> samples, float dc_offset, float floor,
                                         std::span<float> amplitude, std::span<float> half_log) {
  std::uint64_t clamped = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    float v = samples[i] + dc_offset;
    if (!(v > floor)) {
      v = floor;
      ++clamped;
    }
    amplitude[i] = std::sqrt(v);
    half_log[i] = 0.5f * std::log(v);
  }
  return clamped;
}

/// Forward r2c of `n_blocks` overlapping 1024-sample blocks (hop 512) into 513 bins each.
inline void r2c_blocks(std::span<const float> ext, std::size_t n_blocks, std::vector<cf32>& spectra) {
  if (ext.size() < (n_blocks - 1) * kBlockHop + kFftSize) throw std::invalid_argument("r2c_blocks: input too short");
  spectra.resize(n_blocks * kHalfBins);
  for (std::size_t b = 0; b < n_blocks; ++b) fft_raw::r2c(&ext[b * kBlockHop], &spectra[b * kHalfBins], kFftSize);
}

/// Multiplier -j*sign(f) on half spectra; DC and Nyquist zeroed.
inline void hilbert_multiply(std::span<cf32> spectra) {
  for (std::size_t off = 0; off < spectra.size(); off += kHalfBins) {
    spectra[off] = 0.0f;
    for (std::size_t k = 1; k < kFftSize / 2; ++k) {
      const cf32 v = spectra[off + k];
      spectra[off + k] = cf32(v.imag(), -v.real());
    }
    spectra[off + kFftSize / 2] = 0.0f;
  }
}

/// c2r of each half spectrum, keeping samples [256, 768) of every block.
inline void c2r_valid(std::span<const cf32> spectra, std::vector<float>& out) {
  const std::size_t n_blocks = spectra.size() / kHalfBins;
  out.resize(n_blocks * kBlockHop);
  std::array<float, kFftSize> time{};
  constexpr float scale = 1.0f / kFftSize;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    fft_raw::c2r(&spectra[b * kHalfBins], time.data(), kFftSize);
    for (std::size_t i = 0; i < kBlockHop; ++i) out[b * kBlockHop + i] = time[kValidBegin + i] * scale;
  }
}

/// Hilbert transform of a real stream by 1024-point overlap-save. Output sample i
/// corresponds to input sample i + 256; the first and last 256 inputs are consumed as
/// context only.
inline std::vector<float> hilbert_phase(std::span<const float> half_log) {
  if (half_log.size() < kFftSize || (half_log.size() - kFftSize) % kBlockHop != 0) {
    throw std::invalid_argument("hilbert_phase needs 1024 + k*512 samples");
  }
  const std::size_t n_blocks = (half_log.size() - kFftSize) / kBlockHop + 1;
  std::vector<cf32> spectra;
  r2c_blocks(half_log, n_blocks, spectra);
  hilbert_multiply(spectra);
  std::vector<float> out;
  c2r_valid(spectra, out);
  return out;
}

/// Hilbert transform of a whole framed buffer.
inline std::vector<float> hilbert_phase(const FramedBuffer<float>& framed) {
  std::vector<float> out;
  out.reserve(framed.n_blocks * kBlockHop);
  std::vector<cf32> spectra(kHalfBins);
  std::array<float, kFftSize> time{};
  for (std::size_t b = 0; b < framed.n_blocks; ++b) {
    fft_raw::r2c(framed.block(b).data(), spectra.data(), kFftSize);
    hilbert_multiply(spectra);
    fft_raw::c2r(spectra.data(), time.data(), kFftSize);
    for (std::size_t i = kValidBegin; i < kValidEnd; ++i) out.push_back(time[i] / kFftSize);
  }
  return out;
}

/// Phase accumulator for the digital downshift, indexed by the absolute ADC sample.
class Downshifter {
 public:
  Downshifter() = default;
  Downshifter(double carrier_offset, double sample_rate)
      : step_(static_cast<long double>(carrier_offset) / static_cast<long double>(sample_rate)) {}

  /// exp(-j*2*pi*f*n/fs)
  [[nodiscard]] double phase(std::int64_t n) const {
    const long double c = step_ * static_cast<long double>(n);
    const long double frac = c - std::floor(c);
    return -kTwoPi * static_cast<double>(frac);
  }

 private:
  long double step_ = 0.0L;
};

/// E = amplitude * exp(j*phase) * exp(-j*2*pi*f_c*(first_index + i)/fs).
inline void kk_reconstruct(std::span<const float> amplitude, std::span<const float> phase, const Downshifter& ds,
                           std::int64_t first_index, std::span<cf32> out) {
  if (amplitude.size() != phase.size() || out.size() != phase.size()) throw std::invalid_argument("kk_reconstruct: stream misalignment");
  // The carrier phase is evaluated exactly once per 512 samples and advanced by a
  // double-precision rotation in between.
  constexpr std::size_t kAnchor = 512;
  for (std::size_t a = 0; a < out.size(); a += kAnchor) {
    const std::size_t end = std::min(out.size(), a + kAnchor);
    const double p0 = ds.phase(first_index + static_cast<std::int64_t>(a));
    const double dp = ds.phase(first_index + static_cast<std::int64_t>(a) + 1) - p0;
    const cf64 step = std::polar(1.0, dp);
    cf64 rot = std::polar(1.0, p0);
    for (std::size_t i = a; i < end; ++i) {
      const float ph = phase[i];
      out[i] = cf32(amplitude[i] * std::cos(ph), amplitude[i] * std::sin(ph)) * cf32(rot);
      rot *= step;
    }
  }
}

inline std::vector<cf32> kk_reconstruct(std::span<const float> amplitude, std::span<const float> phase,
                                        double carrier_offset, double sample_rate, std::int64_t first_index = 0) {
  std::vector<cf32> out(amplitude.size());
  kk_reconstruct(amplitude, phase, Downshifter(carrier_offset, sample_rate), first_index, out);
  return out;
}

/// Unitary 1024-point spectra of overlapping complex blocks.
inline void c2c_blocks(std::span<const cf32> field, std::size_t n_blocks, std::vector<cf32>& spectra) {
  if (field.size() < (n_blocks - 1) * kBlockHop + kFftSize) throw std::invalid_argument("c2c_blocks: input too short");
  spectra.resize(n_blocks * kFftSize);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    cf32* dst = &spectra[b * kFftSize];
    fft_raw::c2c(&field[b * kBlockHop], dst, kFftSize, true);
    for (std::size_t k = 0; k < kFftSize; ++k) dst[k] *= kUnitaryScale1024;
  }
}

inline void eq_multiply(std::span<cf32> spectra, const StaticEqualizer& eq) {
  for (std::size_t off = 0; off < spectra.size(); off += kFftSize) {
    for (std::size_t k = 0; k < kFftSize; ++k) spectra[off + k] *= eq.taps_fd[k];
  }
}

/// Central-band 512-point inverse of each block, keeping decimated samples [128, 384).
inline void decimate_valid(std::span<const cf32> spectra, std::vector<cf32>& out) {
  const std::size_t n_blocks = spectra.size() / kFftSize;
  constexpr std::size_t half = kFftSize / 2;
  out.resize(n_blocks * (half / 2));
  std::array<cf32, half> band{}, time{};
  for (std::size_t b = 0; b < n_blocks; ++b) {
    extract_center_band(spectra.subspan(b * kFftSize, kFftSize), band);
    fft_raw::c2c(band.data(), time.data(), half, false);
    for (std::size_t i = 0; i < half / 2; ++i) out[b * (half / 2) + i] = time[half / 4 + i] * kUnitaryScale1024;
  }
}

/// Static FD equalization followed by the 2x decimating inverse, over a complex stream
/// framed with hop 512. Output sample j is the input at 256 + 2j, filtered.
inline std::vector<cf32> kk_static_equalize_decimate(std::span<const cf32> field, const StaticEqualizer& eq) {
  if (field.size() < kFftSize || (field.size() - kFftSize) % kBlockHop != 0) {
    throw std::invalid_argument("kk_static_equalize_decimate: grid mismatch (need 1024 + k*512 samples)");
  }
  const std::size_t n_blocks = (field.size() - kFftSize) / kBlockHop + 1;
  std::vector<cf32> spectra;
  c2c_blocks(field, n_blocks, spectra);
  eq_multiply(spectra, eq);
  std::vector<cf32> out;
  decimate_valid(spectra, out);
  return out;
}

// ---------------------------------------------------------------------------
// Widely-linear DDLMS

/// Four-tap T/2-spaced widely-linear equalizer. For symbol n the regressor is
/// u = [r(2n+1), r(2n), r(2n-1), r(2n-2)], y = w^H u + v^H conj(u), e = d - y,
/// w += mu * conj(e) * u and v += mu * conj(e) * conj(u) (steepest descent on |e|^2).
struct WidelyLinearEq {
  static constexpr std::size_t kTaps = 4;
  std::array<cf64, kTaps> w{};
  std::array<cf64, kTaps> v{};
  double mu = 5e-4;
  bool widely_linear = true;
  double divergence_norm = 1e3;

  static WidelyLinearEq spike(double mu, cf64 gain = 1.0) {
    WidelyLinearEq eq;
    eq.mu = mu;
    eq.w[1] = gain;
    return eq;
  }

  [[nodiscard]] cf64 output(const std::array<cf64, kTaps>& u) const {
    cf64 y = 0.0;
    for (std::size_t i = 0; i < kTaps; ++i) y += std::conj(w[i]) * u[i] + std::conj(v[i]) * std::conj(u[i]);
    return y;
  }

  void update(const std::array<cf64, kTaps>& u, cf64 e) {
    const cf64 ge = mu * std::conj(e);
    for (std::size_t i = 0; i < kTaps; ++i) w[i] += ge * u[i];
    if (widely_linear) {
      for (std::size_t i = 0; i < kTaps; ++i) v[i] += ge * std::conj(u[i]);
    }
  }

  [[nodiscard]] double norm_w() const {
    double s = 0.0;
    for (const auto& t : w) s += std::norm(t);
    return std::sqrt(s);
  }

  void check_divergence(std::uint64_t symbol) const {
    if (!(norm_w() <= divergence_norm)) {
      throw std::runtime_error("DDLMS diverged at symbol " + std::to_string(symbol) + ": |w| = " + std::to_string(norm_w()));
    }
  }
};

struct DdlmsResult {
  std::vector<cf64> outputs;    // equalized symbols
  std::vector<cf64> decisions;  // decided (or training) symbols
  std::vector<std::uint8_t> bits;
  double evm_db = 0.0;
};

/// Equalizes samples at 2 sps whose even samples are symbol centers: symbol n uses
/// samples 2n+1..2n-2 (samples before 0 are zero). `training` supplies known symbols for
/// the first training.size() outputs; later symbols are decision directed.
inline DdlmsResult ddlms_equalize(std::span<const cf64> samples, WidelyLinearEq& eq, const tx::ModulationFormat& fmt,
                                  std::span<const cf64> training = {}) {
  DdlmsResult res;
  const std::size_t n_sym = samples.size() / 2;
  res.outputs.reserve(n_sym);
  res.decisions.reserve(n_sym);
  const auto pts = fmt.constellation();
  const unsigned k = fmt.bits_per_symbol();
  double err = 0.0, ref = 0.0;
  auto at = [&](long i) { return i >= 0 && i < static_cast<long>(samples.size()) ? samples[static_cast<std::size_t>(i)] : cf64{}; };
  for (std::size_t n = 0; n < n_sym; ++n) {
    const long c = 2 * static_cast<long>(n);
    const std::array<cf64, 4> u = {at(c + 1), at(c), at(c - 1), at(c - 2)};
    const cf64 y = eq.output(u);
    const unsigned pattern = fmt.qam_decide(y);
    const cf64 d = n < training.size() ? training[n] : pts[pattern];
    const cf64 e = d - y;
    eq.update(u, e);
    eq.check_divergence(n);
    res.outputs.push_back(y);
    res.decisions.push_back(d);
    tx::write_pattern(pattern, k, res.bits);
    err += std::norm(e);
    ref += std::norm(d);
  }
  res.evm_db = ref > 0.0 ? lin_to_db(err / ref) : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// Training alignment

/// One period of the transmitted symbol sequence.
inline std::vector<cf64> reference_symbols(const tx::ModulationFormat& fmt, unsigned prbs_order, std::uint32_t seed) {
  const auto st = PrbsState::maximal(prbs_order, seed);
  const std::uint64_t p_bits = st.period();
  const unsigned k = fmt.bits_per_symbol();
  // Symbol period: the bit period times k / gcd(period, k) bits.
  std::uint64_t g = std::gcd(p_bits, static_cast<std::uint64_t>(k));
  const std::uint64_t n_bits = p_bits * (k / g);
  const auto bits = prbs_bits(st, static_cast<std::size_t>(n_bits)).first;
  return tx::map_symbols(bits, fmt);
}

struct Alignment {
  unsigned sample_phase = 0;  // symbol centers at 2 sps index = phase (mod 2)
  std::size_t lag = 0;        // reference index of the first window symbol
  cf64 gain{};                // LS gain: symbol ~ gain * sample
  double peak_ratio = 0.0;    // peak over mean correlation magnitude
};

/// Finds sample phase and reference lag by circular cross-correlation of `window`
/// symbols (taken from `samples` at both phases) against the periodic reference.
inline Alignment align_to_reference(std::span<const cf32> samples, std::span<const cf64> ref, std::size_t window) {
  const std::size_t p = ref.size();
  window = std::min(window, p);
  if (samples.size() < 2 * window + 2) throw std::invalid_argument("alignment needs more samples");
  std::vector<cf32> rf(p), rspec(p);
  for (std::size_t i = 0; i < p; ++i) rf[i] = cf32(ref[i]);
  fft_raw::c2c(rf.data(), rspec.data(), p, true);
  Alignment best;
  double best_peak = -1.0;
  std::vector<cf32> x(p), xs(p), c(p);
  for (unsigned ph = 0; ph < 2; ++ph) {
    std::fill(x.begin(), x.end(), cf32{});
    for (std::size_t i = 0; i < window; ++i) x[i] = samples[2 * i + ph];
    fft_raw::c2c(x.data(), xs.data(), p, true);
    // c[L] = sum_i x[i] conj(ref[i+L]) -> spectrum conj(X) * R, then conj of the result
    for (std::size_t k = 0; k < p; ++k) xs[k] = std::conj(xs[k]) * rspec[k];
    fft_raw::c2c(xs.data(), c.data(), p, false);
    double mean = 0.0;
    std::size_t arg = 0;
    double peak = -1.0;
    for (std::size_t l = 0; l < p; ++l) {
      const double m = std::abs(c[l]);
      mean += m;
      if (m > peak) {
        peak = m;
        arg = l;
      }
    }
    mean /= static_cast<double>(p);
    if (peak > best_peak) {
      best_peak = peak;
      best.sample_phase = ph;
      best.lag = arg;
      best.peak_ratio = mean > 0.0 ? peak / mean : 0.0;
    }
  }
  // LS gain at the chosen alignment
  cf64 num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const cf64 s = samples[2 * i + best.sample_phase];
    num += ref[(i + best.lag) % p] * std::conj(s);
    den += std::norm(s);
  }
  best.gain = den > 0.0 ? num / den : cf64(1.0);
  return best;
}

/// Streaming DDLMS over the 2 sps sequence, with the training bootstrap.
class DdlmsStream {
 public:
  DdlmsStream() = default;
  DdlmsStream(const KkConfig& cfg, std::vector<cf64> reference)
      : cfg_(cfg), ref_(std::move(reference)), pts_(cfg.format.constellation()) {}

  [[nodiscard]] const WidelyLinearEq& equalizer() const { return eq_; }
  [[nodiscard]] bool aligned() const { return aligned_; }
  [[nodiscard]] const Alignment& alignment() const { return align_; }

  struct Chunk {
    std::vector<std::uint8_t> bits;
    std::vector<cf32> outputs;
    double err = 0.0, ref = 0.0;  // DD-mode error energy and reference energy
    std::uint64_t n_symbols = 0;
  };

  /// Consumes the next samples of the 2 sps stream.
  Chunk process(std::span<const cf32> in) {
    Chunk out;
    std::size_t start = 0;
    if (!aligned_) {
      if (in.size() < cfg_.align_skip + 2 * cfg_.align_window + 8) {
        throw std::runtime_error("KK training alignment needs a longer first buffer");
      }
      align_ = align_to_reference(in.subspan(cfg_.align_skip), ref_, cfg_.align_window);
      if (align_.peak_ratio < 8.0) throw std::runtime_error("KK training alignment failed (no correlation peak)");
      eq_ = WidelyLinearEq::spike(cfg_.mu, std::conj(align_.gain));
      eq_.widely_linear = cfg_.widely_linear;
      eq_.divergence_norm = cfg_.divergence_norm;
      aligned_ = true;
      start = cfg_.align_skip + align_.sample_phase;
      ref_pos_ = align_.lag;
      parity_ = 0;
    }
    const unsigned k = cfg_.format.bits_per_symbol();
    out.bits.reserve((in.size() - start) / 2 * k);
    for (std::size_t i = start; i < in.size(); ++i) {
      hist_[0] = hist_[1];
      hist_[1] = hist_[2];
      hist_[2] = hist_[3];
      hist_[3] = cf64(in[i]);
      // hist_ = [r(2n-2), r(2n-1), r(2n), r(2n+1)] once the sample after a center arrives.
      if (parity_++ % 2 == 0) continue;
      const std::array<cf64, 4> u = {hist_[3], hist_[2], hist_[1], hist_[0]};
      const cf64 y = eq_.output(u);
      const unsigned pattern = cfg_.format.qam_decide(y);
      const bool train = symbols_ < cfg_.train_symbols;
      const cf64 d = train ? ref_[ref_pos_] : pts_[pattern];
      const cf64 e = d - y;
      eq_.update(u, e);
      eq_.check_divergence(symbols_);
      if (!train) {
        out.err += std::norm(e);
        out.ref += std::norm(d);
      }
      tx::write_pattern(pattern, k, out.bits);
      if (cfg_.keep_symbols) out.outputs.emplace_back(y);
      ++symbols_;
      ++out.n_symbols;
      if (++ref_pos_ == ref_.size()) ref_pos_ = 0;
    }
    return out;
  }

 private:
  KkConfig cfg_;
  std::vector<cf64> ref_;
  std::vector<cf64> pts_;
  WidelyLinearEq eq_;
  Alignment align_;
  bool aligned_ = false;
  std::array<cf64, 4> hist_{};
  std::uint64_t parity_ = 0;
  std::uint64_t symbols_ = 0;
  std::size_t ref_pos_ = 0;
};

// ---------------------------------------------------------------------------
// Batch processing and DC-offset search

/// Runs the KK receiver on a short capture (ADC units) and returns the post-equalizer
/// EVM in dB of the decision-directed part. Throws if any intensity is non-positive.
inline double kk_calibration_evm(std::span<const float> samples, const KkConfig& cfg, const StaticEqualizer& eq,
                                 const std::vector<cf64>& reference) {
  const auto fe = kk_frontend(samples, cfg.dc_offset);
  const std::size_t usable = (samples.size() - kFftSize) / kBlockHop * kBlockHop + kFftSize;
  const auto phase = hilbert_phase(std::span<const float>(fe.half_log.data(), usable));
  // phase[i] belongs to sample i + 256
  std::vector<cf32> field(phase.size());
  kk_reconstruct(std::span<const float>(fe.amplitude.data() + kValidBegin, phase.size()), phase,
                 Downshifter(cfg.carrier_offset, kAdcRate), static_cast<std::int64_t>(kValidBegin), field);
  const std::size_t fusable = (field.size() - kFftSize) / kBlockHop * kBlockHop + kFftSize;
  const auto y = kk_static_equalize_decimate(std::span<const cf32>(field.data(), fusable), eq);
  KkConfig c = cfg;
  c.align_skip = std::min<std::size_t>(cfg.align_skip, 1024);
  c.train_symbols = std::min<std::size_t>(cfg.train_symbols, (y.size() / 2) / 2);
  DdlmsStream st(c, reference);
  const auto chunk = st.process(y);
  return chunk.ref > 0.0 ? lin_to_db(chunk.err / chunk.ref) : 0.0;
}

struct DcOffsetSearch {
  double best = 0.0;
  double best_evm_db = 0.0;
  std::vector<std::pair<double, double>> curve;  // (offset, EVM dB)
};

/// Coarse-to-fine grid search of the DC offset that minimizes post-equalizer EVM.
/// The grid starts just above -min(I) so every evaluated point has positive intensity.
inline DcOffsetSearch optimize_dc_offset(std::span<const float> samples, const KkConfig& cfg, const StaticEqualizer& eq,
                                         std::size_t coarse_points = 24, std::size_t fine_points = 12) {
  if (samples.empty()) throw std::invalid_argument("empty calibration capture");
  const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  const double mn = *mn_it, mx = *mx_it;
  const double span = std::max(mx - mn, 1e-9);
  const double lo = -mn + 1e-3 * span;
  const double hi = -mn + 3.0 * span;
  const auto ref = reference_symbols(cfg.format, cfg.prbs_order, cfg.prbs_seed);
  DcOffsetSearch res;
  res.best_evm_db = std::numeric_limits<double>::infinity();
  auto eval = [&](double off) {
    KkConfig c = cfg;
    c.dc_offset = off;
    double evm = std::numeric_limits<double>::infinity();
    try {
      evm = kk_calibration_evm(samples, c, eq, ref);
    } catch (const std::runtime_error&) {
      // divergence or failed alignment at this offset: leave it at +inf
    }
    res.curve.emplace_back(off, evm);
    if (evm < res.best_evm_db) {
      res.best_evm_db = evm;
      res.best = off;
    }
  };
  const double step = (hi - lo) / static_cast<double>(coarse_points - 1);
  for (std::size_t i = 0; i < coarse_points; ++i) eval(lo + step * static_cast<double>(i));
  if (!std::isfinite(res.best_evm_db)) throw std::runtime_error("DC-offset search: no grid point produced a usable EVM");
  const double center = res.best;
  const double fstep = 2.0 * step / static_cast<double>(fine_points);
  for (std::size_t i = 0; i <= fine_points; ++i) {
    if ((2 * i) % fine_points == 0) continue;  // already on the coarse grid
    const double off = center - step + fstep * static_cast<double>(i);
    if (off > lo) eval(off);
  }
  std::sort(res.curve.begin(), res.curve.end());
  return res;
}

// ---------------------------------------------------------------------------
// Chain

/// The nine KK stages as a pipeline chain. Stage 0 (overlap + front-end) and stage 8
/// (DDLMS) carry state between buffers.
class KkChain {
 public:
  using Input = CodeBuffer;
  using Output = SymbolFrame;

  static constexpr std::size_t kStages = 9;
  static constexpr std::array<const char*, kStages> kStageNames = {
      "overlap_frontend", "fft_r2c", "hilbert", "ifft", "reconstruct_downshift",
      "fft", "static_eq", "ifft512", "ddlms"};
  static constexpr std::array<bool, kStages> kDependent = {true, false, false, false, false,
                                                           false, false, false, true};

  // Raw samples carried from the previous buffer: Hilbert context (512) plus the static
  // equalizer's context (256 each side of the 2 sps output).
  static constexpr std::size_t kTail = 2 * kBlockHop;

  struct Work {
    std::uint64_t seq = 0;
    CodeBuffer input;
    std::vector<float> amplitude, half_log;  // extended: kTail + buffer
    std::vector<cf32> spectra;
    std::vector<float> phase;
    std::vector<cf32> field;
    std::vector<cf32> decimated;
    std::uint64_t clamped = 0;
    SymbolFrame frame;
  };

  KkChain(KkConfig cfg, StaticEqualizer eq)
      : cfg_(std::move(cfg)), eq_(std::move(eq)), ds_(cfg_.carrier_offset, kAdcRate) {
    cfg_.validate();
    ddlms_ = DdlmsStream(cfg_, reference_symbols(cfg_.format, cfg_.prbs_order, cfg_.prbs_seed));
    tail_.assign(kTail, 0.0f);
  }

  [[nodiscard]] const KkConfig& config() const { return cfg_; }

  Work make_work(Input&& in) {
    validate_pipeline_buffer(in);
    Work w;
    w.seq = in.sequence_index;
    w.input = std::move(in);
    return w;
  }

  void run_stage(std::size_t stage, Work& w) {
    switch (stage) {
      case 0: stage_frontend(w); break;
      case 1: r2c_blocks(w.half_log, kBlocksPerBuffer + 1, w.spectra); w.half_log = {}; break;
      case 2: hilbert_multiply(w.spectra); break;
      case 3: c2r_valid(w.spectra, w.phase); w.spectra = {}; break;
      case 4: stage_reconstruct(w); break;
      case 5: c2c_blocks(w.field, kBlocksPerBuffer, w.spectra); w.field = {}; break;
      case 6: eq_multiply(w.spectra, eq_); break;
      case 7: decimate_valid(w.spectra, w.decimated); w.spectra = {}; break;
      case 8: stage_ddlms(w); break;
      default: throw std::out_of_range("stage index");
    }
  }

  Output finish(Work& w) { return std::move(w.frame); }

  std::optional<Output> flush() { return std::nullopt; }

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

  void stage_frontend(Work& w) {
    check_stamp(next_seq_front_, w.seq, "overlap_frontend");
    std::vector<float> raw(kTail + kBufferSamples);
    std::copy(tail_.begin(), tail_.end(), raw.begin());
    for (std::size_t i = 0; i < kBufferSamples; ++i) raw[kTail + i] = channel::dequantize_sample(w.input.samples[i], cfg_.adc_bits);
    std::copy(raw.end() - static_cast<std::ptrdiff_t>(kTail), raw.end(), tail_.begin());
    w.input.samples = {};
    w.amplitude.resize(raw.size());
    w.half_log.resize(raw.size());
    w.clamped = kk_frontend_clamped(raw, static_cast<float>(cfg_.dc_offset), cfg_.intensity_floor, w.amplitude, w.half_log);
  }

  void stage_reconstruct(Work& w) {
    // phase[i] is extended sample i + 256, i.e. stream sample S - 768 + i.
    const auto first = static_cast<std::int64_t>(w.seq * kBufferSamples) - static_cast<std::int64_t>(kTail) +
                       static_cast<std::int64_t>(kValidBegin);
    w.field.resize(w.phase.size());
    kk_reconstruct(std::span<const float>(w.amplitude.data() + kValidBegin, w.phase.size()), w.phase, ds_, first, w.field);
    w.amplitude = {};
    w.phase = {};
  }

  void stage_ddlms(Work& w) {
    check_stamp(next_seq_ddlms_, w.seq, "ddlms");
    auto chunk = ddlms_.process(w.decimated);
    w.decimated = {};
    auto& f = w.frame;
    f.sequence_index = w.seq;
    f.bits = std::move(chunk.bits);
    f.n_symbols = chunk.n_symbols;
    f.evm_db = chunk.ref > 0.0 ? lin_to_db(chunk.err / chunk.ref) : 0.0;
    f.evm_err_energy = chunk.err;
    f.evm_ref_energy = chunk.ref;
    f.clamped_samples = w.clamped;
    f.symbols = std::move(chunk.outputs);
    const auto& eq = ddlms_.equalizer();
    f.taps_w.assign(eq.w.begin(), eq.w.end());
    f.taps_v.assign(eq.v.begin(), eq.v.end());
  }

  KkConfig cfg_;
  StaticEqualizer eq_;
  Downshifter ds_;
  std::vector<float> tail_;
  std::uint64_t next_seq_front_ = 0;
  DdlmsStream ddlms_;
  std::uint64_t next_seq_ddlms_ = 0;
};

}  // namespace srx::rx
