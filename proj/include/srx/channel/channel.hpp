#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <span>
#include <stdexcept>
#include <vector>

#include "srx/channel/filters.hpp"
#include "srx/core/fft.hpp"
#include "srx/core/overlap_save.hpp"
#include "srx/core/types.hpp"
#include "srx/tx/txgen.hpp"

namespace srx::channel {

inline constexpr double kOsnrRefBandwidth = 12.5e9;  // 0.1 nm

struct ChannelConfig {
  double osnr_db = std::numeric_limits<double>::infinity();
  double obpf_bw = 5e9;
  double pd_bw = 1e9;
  double adc_bw = 1e9;
  // One-sided density of white electrical noise added between the photodiode and the
  // ADC filter, in units of the mean photocurrent per sqrt(Hz).
  double elec_noise_density = 8.0e-7;
  // ADC noise as an effective number of bits: white noise of RMS 2 / (2^enob * sqrt(12))
  // full scales added at the quantizer input. Values >= adc_bits disable it.
  double adc_enob = 12.0;
  double clock_offset_ppm = 0.0;
  double ppm_triangle_amplitude = 0.0;  // > 0 selects the triangle profile
  double ppm_triangle_period_s = 0.02;
  unsigned adc_bits = 12;
  double adc_rate = kAdcRate;
  double field_rate = 8e9;
  std::optional<bool> ac_coupled;  // unset: on for QAM, off for PAM
  double ac_corner = 1e6;
  double adc_rms_target = 0.25;  // of full scale, set once from the first buffer
  std::uint64_t seed = 7;

  [[nodiscard]] bool ac_for(bool qam) const { return ac_coupled.value_or(qam); }

  [[nodiscard]] unsigned decimation() const {
    const double d = field_rate / adc_rate;
    const auto r = static_cast<unsigned>(std::lround(d));
    if (r < 1 || std::abs(d - r) > 1e-9) throw std::invalid_argument("field_rate must be an integer multiple of adc_rate");
    return r;
  }

  [[nodiscard]] PpmProfile ppm_profile() const {
    if (ppm_triangle_amplitude > 0.0) return triangle_ppm(ppm_triangle_amplitude, ppm_triangle_period_s);
    return constant_ppm(clock_offset_ppm);
  }

  void validate() const {
    if (std::isnan(osnr_db) || osnr_db == -std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument("osnr_db must be finite or +inf");
    }
    if (std::abs(clock_offset_ppm) >= 1000.0 || std::abs(ppm_triangle_amplitude) >= 1000.0) {
      throw std::invalid_argument("clock offset must stay below 1000 ppm");
    }
    if (adc_bits < 2 || adc_bits > 16) throw std::invalid_argument("adc_bits must lie in [2, 16]");
    if (!(obpf_bw > 0.0) || obpf_bw > field_rate) throw std::invalid_argument("obpf_bw must lie in (0, field_rate]");
    if (!(pd_bw > 0.0) || pd_bw >= field_rate / 2 || !(adc_bw > 0.0) || adc_bw >= field_rate / 2) {
      throw std::invalid_argument("pd_bw/adc_bw must lie below field_rate/2");
    }
    if (elec_noise_density < 0.0) throw std::invalid_argument("elec_noise_density must be >= 0");
    if (!(adc_enob > 0.0)) throw std::invalid_argument("adc_enob must be positive");
    (void)decimation();
  }
};

/// Cutoff of the decimating resampler relative to the field-rate Nyquist band.
inline double decimating_cutoff(const ChannelConfig& cfg) { return 0.9 / cfg.decimation(); }

/// Linear response seen by the photocurrent between photodiode and ADC output:
/// PD low-pass x ADC low-pass x resampler kernel, evaluated at f (Hz).
class ElectricalResponse {
 public:
  explicit ElectricalResponse(const ChannelConfig& cfg)
      : fs_(cfg.field_rate),
        pd_(Biquad::butterworth_lowpass(cfg.pd_bw, cfg.field_rate)),
        adc_(Biquad::butterworth_lowpass(cfg.adc_bw, cfg.field_rate)),
        rs_(cfg.decimation(), decimating_cutoff(cfg), cfg.field_rate, constant_ppm(0.0)) {}

  cf64 operator()(double f) const { return pd_.response(f, fs_) * adc_.response(f, fs_) * rs_.response(f); }

 private:
  double fs_;
  Biquad pd_, adc_;
  ClockResampler rs_;
};

struct NoiseState {
  std::uint64_t seed = 1;
  std::mt19937_64 engine{1};

  NoiseState() = default;
  explicit NoiseState(std::uint64_t s) : seed(s), engine(s) {}
};

inline double mean_power(std::span<const cf32> v) {
  double p = 0.0;
  for (const auto& x : v) p += std::norm(cf64(x));
  return v.empty() ? 0.0 : p / static_cast<double>(v.size());
}

/// Noise variance (complex, both quadratures) for a given OSNR at sample_rate.
inline double osnr_noise_variance(double signal_power, double osnr_db, double sample_rate) {
  return signal_power * sample_rate / (db_to_lin(osnr_db) * kOsnrRefBandwidth);
}

/// Adds circular complex white Gaussian noise: P_signal / (PSD * 12.5 GHz) = OSNR,
/// single polarization, PSD two-sided over the sample rate.
inline SampleBuffer<cf32> load_noise(const SampleBuffer<cf32>& field, const ChannelConfig& cfg, NoiseState& noise) {
  if (std::isnan(cfg.osnr_db) || cfg.osnr_db == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("noise requested with non-finite OSNR");
  }
  SampleBuffer<cf32> out = field;
  if (std::isinf(cfg.osnr_db)) return out;
  const double var = osnr_noise_variance(mean_power(field.samples), cfg.osnr_db, field.sample_rate);
  boost::random::normal_distribution<double> gauss(0.0, std::sqrt(var / 2.0));
  for (auto& x : out.samples) {
    const double re = gauss(noise.engine);
    const double im = gauss(noise.engine);
    x += cf32(static_cast<float>(re), static_cast<float>(im));
  }
  return out;
}

/// Brick-wall pass band |f| <= bw/2 around the carrier (0 Hz) on an n-point grid.
inline std::vector<cf32> bpf_mask(std::size_t n, double bw, double sample_rate) {
  std::vector<cf32> m(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(signed_bin(k, n)) * sample_rate / static_cast<double>(n);
    m[k] = std::abs(f) <= bw / 2.0 ? cf32(1.0f) : cf32(0.0f);
  }
  return m;
}

/// Whole-signal optical band-pass: one DFT over the buffer, mask, inverse.
inline SampleBuffer<cf32> optical_bpf(const SampleBuffer<cf32>& field, const ChannelConfig& cfg) {
  const std::size_t n = field.samples.size();
  SampleBuffer<cf32> out = field;
  if (n == 0) return out;
  std::vector<cf32> spec(n);
  fft_raw::c2c(field.samples.data(), spec.data(), n, true);
  const auto mask = bpf_mask(n, cfg.obpf_bw, field.sample_rate);
  const float scale = 1.0f / static_cast<float>(n);
  for (std::size_t k = 0; k < n; ++k) spec[k] *= mask[k] * scale;
  fft_raw::c2c(spec.data(), out.samples.data(), n, false);
  return out;
}

/// Square-law detection followed by the photodiode's 2nd-order low-pass. The filter
/// starts settled on the first sample so a constant field gives a constant output.
inline RealBuffer photodiode(const SampleBuffer<cf32>& field, const ChannelConfig& cfg) {
  RealBuffer out;
  out.sample_rate = field.sample_rate;
  out.samples_per_symbol = field.samples_per_symbol;
  out.domain = DomainTag::real_electrical;
  out.sequence_index = field.sequence_index;
  out.samples.resize(field.samples.size());
  for (std::size_t i = 0; i < field.samples.size(); ++i) out.samples[i] = std::norm(field.samples[i]);
  auto lp = Biquad::butterworth_lowpass(cfg.pd_bw, field.sample_rate);
  if (!out.samples.empty()) lp.prime(out.samples.front());
  lp.process(out.samples);
  return out;
}

inline RealBuffer ac_couple(const RealBuffer& signal, const ChannelConfig& cfg) {
  RealBuffer out = signal;
  OnePoleHighpass hp(cfg.ac_corner, signal.sample_rate);
  if (!out.samples.empty()) hp.prime(out.samples.front());
  hp.process(out.samples);
  return out;
}

/// Same-rate resampling by (1 + ppm*1e-6) with the full-band kernel; the last 16
/// outputs whose kernel would run past the end are not produced.
inline RealBuffer clock_offset_resample(const RealBuffer& signal, const ChannelConfig& cfg) {
  ClockResampler rs(1, 1.0, signal.sample_rate, cfg.ppm_profile());
  RealBuffer out = signal;
  out.samples.clear();
  out.samples.reserve(signal.samples.size());
  rs.process(signal.samples, out.samples);
  return out;
}

struct QuantizeResult {
  CodeBuffer codes;
  std::uint64_t clipped = 0;
  [[nodiscard]] double clip_fraction() const {
    return codes.samples.empty() ? 0.0 : static_cast<double>(clipped) / static_cast<double>(codes.samples.size());
  }
};

inline std::uint16_t quantize_sample(float x, unsigned bits, std::uint64_t& clipped) {
  const double half = (static_cast<double>(1u << bits) - 1.0) / 2.0;
  const double maxc = static_cast<double>((1u << bits) - 1u);
  double c = std::round((static_cast<double>(x) + 1.0) * half);
  if (c < 0.0 || c > maxc || !std::isfinite(c)) {
    ++clipped;
    c = std::isfinite(c) ? std::clamp(c, 0.0, maxc) : 0.0;
  }
  return static_cast<std::uint16_t>(c);
}

inline float dequantize_sample(std::uint16_t code, unsigned bits = 12) {
  const float half = (static_cast<float>(1u << bits) - 1.0f) / 2.0f;
  return static_cast<float>(code) / half - 1.0f;
}

/// Uniform quantizer over full scale [-1, 1] to unsigned codes; out-of-range samples clip
/// and are counted.
inline QuantizeResult adc_quantize(const RealBuffer& signal, const ChannelConfig& cfg) {
  QuantizeResult r;
  r.codes.sample_rate = signal.sample_rate;
  r.codes.samples_per_symbol = signal.samples_per_symbol;
  r.codes.sequence_index = signal.sequence_index;
  r.codes.samples.resize(signal.samples.size());
  for (std::size_t i = 0; i < signal.samples.size(); ++i) {
    r.codes.samples[i] = quantize_sample(signal.samples[i], cfg.adc_bits, r.clipped);
  }
  return r;
}

struct ChannelStats {
  std::uint64_t field_samples = 0;
  double signal_energy = 0.0;  // sum |E|^2 before noise
  double noise_energy = 0.0;   // sum |n|^2 actually added
  std::uint64_t codes = 0;
  std::uint64_t clipped = 0;
  double adc_gain = 0.0;
  double adc_offset = 0.0;

  /// OSNR realized by the noise that was actually drawn.
  [[nodiscard]] double realized_osnr_db(double field_rate) const {
    if (noise_energy <= 0.0) return std::numeric_limits<double>::infinity();
    const double ps = signal_energy / static_cast<double>(field_samples);
    const double psd = noise_energy / static_cast<double>(field_samples) / field_rate;
    return lin_to_db(ps / (psd * kOsnrRefBandwidth));
  }
  [[nodiscard]] double clip_fraction() const {
    return codes == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(codes);
  }
};

/// Streaming transmitter + channel producing consecutive 2^22-code ADC buffers.
///
/// Order: ASE loading -> optical band-pass -> |E|^2 -> PD low-pass -> electrical noise
/// -> ADC low-pass -> clock-offset resampling with decimation to the ADC rate ->
/// optional AC coupling -> fixed offset/gain (from the first buffer) -> quantizer.
class ChannelStream {
 public:
  /// Appends the next n field samples (at the field rate) to out.
  using FieldSource = std::function<void(std::size_t, std::vector<cf32>&)>;

  ChannelStream(const tx::TxConfig& tx_cfg, const ChannelConfig& cfg) : ChannelStream(tx_cfg, cfg, FieldSource{}) {}

  /// Channel fed from `source` instead of the built-in transmitter; `tx_cfg` still
  /// describes the signal (format, baud).
  ChannelStream(const tx::TxConfig& tx_cfg, const ChannelConfig& cfg, FieldSource source)
      : tx_(tx_cfg), source_(std::move(source)), cfg_(cfg), noise_(cfg.seed), elec_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull),
        adc_rng_(cfg.seed ^ 0xc2b2ae3d27d4eb4full) {
    cfg_.validate();
    if (std::abs(tx_cfg.dac_rate - cfg_.field_rate) > 1e-3) {
      throw std::invalid_argument("transmitter dac_rate must equal channel field_rate");
    }
    qam_ = !tx_cfg.format.is_pam();
    sps_adc_ = Rational{static_cast<std::uint32_t>(std::lround(cfg_.adc_rate / tx_cfg.baud)), 1};
    if (!std::isinf(cfg_.osnr_db)) {
      noise_sigma_ = std::sqrt(osnr_noise_variance(1.0, cfg_.osnr_db, cfg_.field_rate) / 2.0);
    }
    elec_sigma_ = cfg_.elec_noise_density * std::sqrt(cfg_.field_rate / 2.0);
    if (cfg_.adc_enob < static_cast<double>(cfg_.adc_bits)) adc_sigma_ = 2.0 / (std::exp2(cfg_.adc_enob) * std::sqrt(12.0));
    bpf_ = StreamingFdFilter<cf32>(4096, bpf_mask(4096, cfg_.obpf_bw, cfg_.field_rate));
    pd_ = Biquad::butterworth_lowpass(cfg_.pd_bw, cfg_.field_rate);
    adc_lp_ = Biquad::butterworth_lowpass(cfg_.adc_bw, cfg_.field_rate);
    resampler_ = ClockResampler(cfg_.decimation(), decimating_cutoff(cfg_), cfg_.field_rate, cfg_.ppm_profile());
    if (cfg_.ac_for(qam_)) hp_ = OnePoleHighpass(cfg_.ac_corner, cfg_.adc_rate);
  }

  /// Keeps a copy of the first `n` noise-loaded field samples for OSNR measurement.
  void capture_field(std::size_t n) { capture_n_ = n; }
  [[nodiscard]] const std::vector<cf32>& captured_field() const { return captured_; }
  /// The same samples before noise loading.
  [[nodiscard]] const std::vector<cf32>& captured_clean_field() const { return captured_clean_; }

  [[nodiscard]] const ChannelConfig& config() const { return cfg_; }
  [[nodiscard]] const ChannelStats& stats() const { return stats_; }
  [[nodiscard]] const tx::TxStream& transmitter() const { return tx_; }

  /// Analog samples (before quantization) of the next buffer.
  RealBuffer next_analog() {
    while (analog_.size() < kBufferSamples) step();
    RealBuffer b;
    b.sample_rate = cfg_.adc_rate;
    b.samples_per_symbol = sps_adc_;
    b.sequence_index = seq_;
    b.samples.assign(analog_.begin(), analog_.begin() + static_cast<std::ptrdiff_t>(kBufferSamples));
    analog_.erase(analog_.begin(), analog_.begin() + static_cast<std::ptrdiff_t>(kBufferSamples));
    return b;
  }

  CodeBuffer next_buffer() {
    RealBuffer a = next_analog();
    if (seq_ == 0) set_gain(a.samples);
    CodeBuffer c;
    c.sample_rate = a.sample_rate;
    c.samples_per_symbol = a.samples_per_symbol;
    c.sequence_index = seq_++;
    c.samples.resize(a.samples.size());
    std::uint64_t clipped = 0;
    const auto gain = static_cast<float>(stats_.adc_gain);
    const auto off = static_cast<float>(stats_.adc_offset);
    if (adc_sigma_ > 0.0) {
      boost::random::normal_distribution<float> g(0.0f, static_cast<float>(adc_sigma_));
      for (std::size_t i = 0; i < a.samples.size(); ++i) {
        c.samples[i] = quantize_sample((a.samples[i] + off) * gain + g(adc_rng_), cfg_.adc_bits, clipped);
      }
    } else {
      for (std::size_t i = 0; i < a.samples.size(); ++i) {
        c.samples[i] = quantize_sample((a.samples[i] + off) * gain, cfg_.adc_bits, clipped);
      }
    }
    stats_.codes += c.samples.size();
    stats_.clipped += clipped;
    return c;
  }

 private:
  void set_gain(std::span<const float> v) {
    double m = 0.0;
    for (float x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (float x : v) var += (x - m) * (x - m);
    const double rms = std::sqrt(var / static_cast<double>(v.size()));
    stats_.adc_offset = -m;
    stats_.adc_gain = rms > 0.0 ? cfg_.adc_rms_target / rms : 1.0;
  }

  void step() {
    constexpr std::size_t kChunk = 1 << 16;
    field_.clear();
    if (source_) {
      source_(kChunk, field_);
    } else {
      tx_.generate(kChunk, field_);
    }
    for (const auto& x : field_) stats_.signal_energy += std::norm(cf64(x));
    stats_.field_samples += field_.size();
    if (captured_clean_.size() < capture_n_) {
      const std::size_t take = std::min(capture_n_ - captured_clean_.size(), field_.size());
      captured_clean_.insert(captured_clean_.end(), field_.begin(), field_.begin() + static_cast<std::ptrdiff_t>(take));
    }
    if (noise_sigma_ > 0.0) {
      boost::random::normal_distribution<float> g(0.0f, static_cast<float>(noise_sigma_));
      double e = 0.0;
      for (auto& x : field_) {
        const cf32 n(g(noise_.engine), g(noise_.engine));
        e += std::norm(cf64(n));
        x += n;
      }
      stats_.noise_energy += e;
    }
    if (captured_.size() < capture_n_) {
      const std::size_t take = std::min(capture_n_ - captured_.size(), field_.size());
      captured_.insert(captured_.end(), field_.begin(), field_.begin() + static_cast<std::ptrdiff_t>(take));
    }
    filtered_.clear();
    bpf_.process(field_, filtered_);
    elec_.resize(filtered_.size());
    boost::random::normal_distribution<float> ge(0.0f, static_cast<float>(elec_sigma_));
    for (std::size_t i = 0; i < filtered_.size(); ++i) {
      float v = pd_.step(std::norm(filtered_[i]));
      if (elec_sigma_ > 0.0) v += ge(elec_rng_);
      elec_[i] = adc_lp_.step(v);
    }
    const std::size_t before = analog_.size();
    resampler_.process(elec_, analog_);
    if (cfg_.ac_for(qam_)) hp_.process(std::span<float>(analog_).subspan(before));
  }

  tx::TxStream tx_;
  FieldSource source_;
  ChannelConfig cfg_;
  bool qam_ = false;
  Rational sps_adc_{};
  NoiseState noise_;
  std::mt19937_64 elec_rng_, adc_rng_;
  double noise_sigma_ = 0.0;
  double elec_sigma_ = 0.0;
  double adc_sigma_ = 0.0;
  StreamingFdFilter<cf32> bpf_;
  Biquad pd_, adc_lp_;
  ClockResampler resampler_;
  OnePoleHighpass hp_;
  std::vector<cf32> field_, filtered_;
  std::vector<float> elec_, analog_;
  std::size_t capture_n_ = 0;
  std::vector<cf32> captured_, captured_clean_;
  ChannelStats stats_;
  std::uint64_t seq_ = 0;
};

}  // namespace srx::channel
