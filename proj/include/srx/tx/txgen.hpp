#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "srx/core/overlap_save.hpp"
#include "srx/core/prbs.hpp"
#include "srx/core/rrc.hpp"
#include "srx/core/types.hpp"
#include "srx/tx/modulation.hpp"

namespace srx::tx {

struct TxConfig {
  ModulationFormat format{Family::pam, 4};
  double baud = 2e9;
  double rolloff = 0.5;
  double dac_rate = 8e9;
  double carrier_offset = 0.547e9;
  double cspr_db = 6.0;
  std::size_t span_symbols = 32;  // RRC truncation, total span
  unsigned prbs_order = 15;
  std::uint32_t seed = 1;

  /// Defaults for a format: 2 GBd / 0.5 roll-off for PAM, 1 GBd / 0.01 roll-off for QAM
  /// with 6 dB CSPR for QAM-4 and 11 dB otherwise.
  static TxConfig defaults_for(const ModulationFormat& fmt) {
    TxConfig c;
    c.format = fmt;
    if (fmt.is_pam()) {
      c.baud = 2e9;
      c.rolloff = 0.5;
      c.span_symbols = 32;
    } else {
      c.baud = 1e9;
      c.rolloff = 0.01;
      c.span_symbols = 256;
      c.cspr_db = fmt.order() == 4 ? 6.0 : 11.0;
    }
    return c;
  }

  [[nodiscard]] RrcSpec rrc() const { return RrcSpec{rolloff, baud, span_symbols}; }

  [[nodiscard]] unsigned samples_per_symbol() const {
    const double sps = dac_rate / baud;
    const auto r = static_cast<unsigned>(std::lround(sps));
    if (r < 2 || std::abs(sps - r) > 1e-9) throw std::invalid_argument("dac_rate must be an integer multiple (>= 2) of baud");
    return r;
  }

  void validate() const {
    if (!(baud > 0.0) || !(dac_rate > 0.0)) throw std::invalid_argument("baud and dac_rate must be positive");
    if (rolloff < 0.0 || rolloff > 1.0) throw std::invalid_argument("rolloff must lie in [0, 1]");
    if (dac_rate < (1.0 + rolloff) * baud) throw std::invalid_argument("dac_rate below (1 + rolloff) * baud");
    (void)samples_per_symbol();
    if (!format.is_pam() && carrier_offset <= (1.0 + rolloff) * baud / 2.0) {
      throw std::invalid_argument("carrier inside the signal band");
    }
  }
};

/// Transmit pulse: unit-energy RRC taps at the DAC rate.
inline std::vector<double> tx_pulse(const TxConfig& cfg) {
  const unsigned sps = cfg.samples_per_symbol();
  return rrc_filter_taps(cfg.rrc(), cfg.dac_rate, cfg.span_symbols * sps + 1);
}

/// Largest |output| for unit-peak symbols: max over polyphase branches of sum |h|.
inline double pulse_peak_bound(std::span<const double> taps, unsigned sps) {
  double worst = 0.0;
  for (unsigned p = 0; p < sps; ++p) {
    double acc = 0.0;
    for (std::size_t i = p; i < taps.size(); i += sps) acc += std::abs(taps[i]);
    worst = std::max(worst, acc);
  }
  return worst;
}

/// Zero-stuffs and filters with the transmit RRC, keeping the pulse tails of the first
/// and last symbols: symbol k peaks at sample k*sps + taps/2. Scaled by sqrt(sps) so
/// unit-power symbols give unit average power.
inline SampleBuffer<cf32> shape_waveform(std::span<const cf64> symbols, const TxConfig& cfg) {
  cfg.validate();
  const unsigned sps = cfg.samples_per_symbol();
  const auto taps = tx_pulse(cfg);
  const double gain = std::sqrt(static_cast<double>(sps));
  SampleBuffer<cf32> out;
  out.sample_rate = cfg.dac_rate;
  out.samples_per_symbol = Rational{sps, 1};
  out.domain = DomainTag::complex_field;
  const std::size_t len = symbols.empty() ? 0 : (symbols.size() - 1) * sps + taps.size();
  std::vector<cf64> acc(len);
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    const cf64 a = symbols[k] * gain;
    if (a == cf64{}) continue;
    cf64* dst = acc.data() + k * sps;
    for (std::size_t i = 0; i < taps.size(); ++i) dst[i] += a * taps[i];
  }
  out.samples.resize(len);
  for (std::size_t n = 0; n < len; ++n) out.samples[n] = cf32(acc[n]);
  return out;
}

/// Carrier amplitude for a CSPR in dB given signal power.
inline double carrier_amplitude(double cspr_db, double signal_power) {
  return std::sqrt(signal_power * db_to_lin(cspr_db));
}

/// Power split for unit total field power: {signal, carrier}.
inline std::pair<double, double> unit_power_split(double cspr_db) {
  if (std::isinf(cspr_db) && cspr_db > 0) return {0.0, 1.0};
  const double c = db_to_lin(cspr_db);
  return {1.0 / (1.0 + c), c / (1.0 + c)};
}

/// Adds A*exp(j*2*pi*f_c*t) to a baseband complex waveform, with A set from the
/// measured waveform power so the tone-to-signal ratio equals cspr_db.
inline SampleBuffer<cf32> add_carrier_tone(const SampleBuffer<cf32>& waveform, const TxConfig& cfg) {
  if (cfg.format.is_pam()) throw std::invalid_argument("carrier tone applies to QAM only");
  if (cfg.carrier_offset <= (1.0 + cfg.rolloff) * cfg.baud / 2.0) {
    throw std::invalid_argument("carrier inside the signal band");
  }
  double p = 0.0;
  for (const auto& v : waveform.samples) p += std::norm(cf64(v));
  p /= std::max<std::size_t>(waveform.samples.size(), 1);
  const double a = carrier_amplitude(cfg.cspr_db, p);
  SampleBuffer<cf32> out = waveform;
  const double step = cfg.carrier_offset / waveform.sample_rate;
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    const double ph = kTwoPi * std::fmod(step * static_cast<double>(n), 1.0);
    out.samples[n] += cf32(std::polar(a, ph));
  }
  return out;
}

/// Streaming transmitter. Emits the optical field at dac_rate sample by sample
/// continuously from a PRBS, in chunks of any size.
///
/// PAM: field = sqrt(1 + m*s), s the RRC-shaped level waveform and m = 1/peak bound, so
/// the intensity stays in [0, 2] with unit mean.
/// QAM: field = sqrt(Ps)*s*exp(j*2*pi*f_c*t) + sqrt(Pc), i.e. the carrier sits at 0 Hz and
/// the data occupies f_c +- (1+b)*baud/2 on the positive side only. Ps + Pc = 1.
class TxStream {
 public:
  explicit TxStream(const TxConfig& cfg) : cfg_(cfg), prbs_(PrbsState::maximal(cfg.prbs_order, cfg.seed)) {
    cfg_.validate();
    sps_ = cfg_.samples_per_symbol();
    const auto taps = tx_pulse(cfg_);
    std::size_t n = 64;
    while (n / 4 < taps.size() / 2 || n < 8 * sps_) n *= 2;
    n = std::max<std::size_t>(n, 1024);
    const double gain = std::sqrt(static_cast<double>(sps_));
    std::vector<double> scaled(taps);
    if (cfg_.format.is_pam()) {
      mod_index_ = 1.0 / pulse_peak_bound(taps, sps_);
      for (auto& t : scaled) t *= mod_index_;
    } else {
      for (auto& t : scaled) t *= gain;
      const auto [ps, pc] = unit_power_split(cfg_.cspr_db);
      sig_amp_ = std::sqrt(ps);
      carrier_amp_ = std::sqrt(pc);
    }
    filter_ = StreamingFdFilter<cf32>::from_centered_taps<double>(scaled, n);
    phase_step_ = cfg_.carrier_offset / cfg_.dac_rate;
  }

  [[nodiscard]] const TxConfig& config() const { return cfg_; }
  [[nodiscard]] unsigned samples_per_symbol() const { return sps_; }
  [[nodiscard]] double modulation_index() const { return mod_index_; }

  /// Appends exactly `n` field samples.
  void generate(std::size_t n, std::vector<cf32>& out) {
    while (ready_.size() - ready_pos_ < n) refill();
    const std::size_t start = out.size();
    out.insert(out.end(), ready_.begin() + static_cast<std::ptrdiff_t>(ready_pos_),
               ready_.begin() + static_cast<std::ptrdiff_t>(ready_pos_ + n));
    ready_pos_ += n;
    finish(std::span<cf32>(out).subspan(start));
    if (ready_pos_ > (1u << 20)) {
      ready_.erase(ready_.begin(), ready_.begin() + static_cast<std::ptrdiff_t>(ready_pos_));
      ready_pos_ = 0;
    }
  }

  [[nodiscard]] std::uint64_t samples_emitted() const { return emitted_; }

 private:
  void refill() {
    constexpr std::size_t kChunkSymbols = 4096;
    auto [bits, next] = prbs_bits(prbs_, kChunkSymbols * cfg_.format.bits_per_symbol());
    prbs_ = next;
    const auto syms = map_symbols(bits, cfg_.format);
    std::vector<cf32> up(syms.size() * sps_);
    for (std::size_t k = 0; k < syms.size(); ++k) up[k * sps_] = cf32(syms[k]);
    filter_.process(up, ready_);
  }

  void finish(std::span<cf32> v) {
    if (cfg_.format.is_pam()) {
      for (auto& x : v) {
        const float i = std::max(0.0f, 1.0f + x.real());
        x = cf32(std::sqrt(i), 0.0f);
      }
    } else {
      for (auto& x : v) {
        const double ph = kTwoPi * carrier_phase(emitted_);
        x = cf32(cf64(x) * sig_amp_ * std::polar(1.0, ph) + carrier_amp_);
        ++emitted_;
      }
      return;
    }
    emitted_ += v.size();
  }

  // Fractional cycles of the carrier at sample n, exact for long runs.
  [[nodiscard]] double carrier_phase(std::uint64_t n) const {
    const long double c = static_cast<long double>(phase_step_) * static_cast<long double>(n);
    return static_cast<double>(c - std::floor(c));
  }

  TxConfig cfg_;
  PrbsState prbs_;
  unsigned sps_ = 1;
  double mod_index_ = 1.0;
  double sig_amp_ = 1.0;
  double carrier_amp_ = 0.0;
  double phase_step_ = 0.0;
  StreamingFdFilter<cf32> filter_;
  std::vector<cf32> ready_;
  std::size_t ready_pos_ = 0;
  std::uint64_t emitted_ = 0;
};

/// Whole-signal field for a given bit sequence (used by tests and the tx command).
/// Symbol k is centered on sample k*sps; the waveform covers the symbols' span only
/// (pulse tails before symbol 0 and after the last symbol are cut).
inline SampleBuffer<cf32> tx_field(const TxConfig& cfg, std::span<const std::uint8_t> bits) {
  cfg.validate();
  const auto syms = map_symbols(bits, cfg.format);
  const unsigned sps = cfg.samples_per_symbol();
  auto shaped = shape_waveform(syms, cfg);
  const std::size_t half = tx_pulse(cfg).size() / 2;
  SampleBuffer<cf32> out;
  out.sample_rate = cfg.dac_rate;
  out.samples_per_symbol = Rational{sps, 1};
  out.domain = DomainTag::complex_field;
  out.samples.assign(shaped.samples.begin() + static_cast<std::ptrdiff_t>(half),
                     shaped.samples.begin() + static_cast<std::ptrdiff_t>(half + syms.size() * sps));
  if (cfg.format.is_pam()) {
    const auto taps = tx_pulse(cfg);
    const double m = 1.0 / (pulse_peak_bound(taps, sps) * std::sqrt(static_cast<double>(sps)));
    for (auto& x : out.samples) {
      const double i = std::max(0.0, 1.0 + m * x.real());
      x = cf32(static_cast<float>(std::sqrt(i)), 0.0f);
    }
  } else {
    const auto [ps, pc] = unit_power_split(cfg.cspr_db);
    const double step = cfg.carrier_offset / cfg.dac_rate;
    for (std::size_t n = 0; n < out.samples.size(); ++n) {
      const double ph = kTwoPi * std::fmod(step * static_cast<double>(n), 1.0);
      out.samples[n] = cf32(cf64(out.samples[n]) * std::sqrt(ps) * std::polar(1.0, ph) + std::sqrt(pc));
    }
  }
  return out;
}

}  // namespace srx::tx
