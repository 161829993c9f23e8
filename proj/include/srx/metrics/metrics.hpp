#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "srx/core/fft.hpp"
#include "srx/core/types.hpp"
#include "srx/tx/modulation.hpp"

namespace srx::metrics {

class SyncError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Q factor

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Gaussian-equivalent Q in dB. BER 0 gives +inf, BER >= 0.5 gives -inf.
inline double q_from_ber(double ber) {
  if (std::isnan(ber) || ber < 0.0) throw std::invalid_argument("BER must be >= 0");
  if (ber == 0.0) return kInf;
  if (ber >= 0.5) return -kInf;
  return 20.0 * std::log10(std::sqrt(2.0) * boost::math::erfc_inv(2.0 * ber));
}

inline double ber_from_q(double q_db) {
  if (q_db == kInf) return 0.0;
  if (q_db == -kInf) return 0.5;
  const double q = std::pow(10.0, q_db / 20.0);
  return 0.5 * std::erfc(q / std::sqrt(2.0));
}

// ---------------------------------------------------------------------------
// Bit synchronization

struct SyncResult {
  std::size_t offset = 0;  // rx bit i corresponds to ref[(i + offset) mod P]
  bool inverted = false;
  double agreement = 0.0;  // fraction of matching bits at the chosen offset
  std::uint64_t errors = 0;
  std::uint64_t bits = 0;
};

/// Counts mismatches between rx and the periodic reference at a given offset.
inline std::uint64_t count_errors(std::span<const std::uint8_t> rx, std::span<const std::uint8_t> ref, std::size_t offset,
                                  bool inverted, std::vector<std::uint8_t>* flags = nullptr) {
  const std::size_t p = ref.size();
  const std::uint8_t inv = inverted ? 1 : 0;
  std::uint64_t err = 0;
  std::size_t j = offset % p;
  if (flags) flags->resize(rx.size());
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const std::uint8_t e = static_cast<std::uint8_t>((rx[i] ^ inv ^ ref[j]) & 1u);
    err += e;
    if (flags) (*flags)[i] = e;
    if (++j == p) j = 0;
  }
  return err;
}

/// Aligns received bits to one period of the reference sequence. The received bits are
/// folded modulo the period and circularly cross-correlated (as +-1) with the
/// reference, so every offset is scored with all received bits; the sign of the peak
/// gives the polarity. Agreement is then counted exactly at that offset.
inline SyncResult synchronize(std::span<const std::uint8_t> rx, std::span<const std::uint8_t> ref) {
  const std::size_t p = ref.size();
  if (p < 2) throw std::invalid_argument("reference too short");
  if (p > (std::size_t{1} << 24)) throw std::invalid_argument("reference period too long for correlation sync");
  if (rx.empty()) throw SyncError("no bits to synchronize");
  std::vector<cf32> fold(p), fs(p), rs(p), corr(p);
  for (std::size_t i = 0, j = 0; i < rx.size(); ++i) {
    fold[j] += rx[i] ? 1.0f : -1.0f;
    if (++j == p) j = 0;
  }
  std::vector<cf32> r(p);
  for (std::size_t i = 0; i < p; ++i) r[i] = ref[i] ? 1.0f : -1.0f;
  fft_raw::c2c(fold.data(), fs.data(), p, true);
  fft_raw::c2c(r.data(), rs.data(), p, true);
  // c[L] = sum_j fold[j] r[j+L] = IDFT(conj(F) R)
  for (std::size_t k = 0; k < p; ++k) fs[k] = std::conj(fs[k]) * rs[k];
  fft_raw::c2c(fs.data(), corr.data(), p, false);
  std::size_t best = 0;
  double best_abs = -1.0;
  for (std::size_t l = 0; l < p; ++l) {
    const double a = std::abs(corr[l].real());
    if (a > best_abs) {
      best_abs = a;
      best = l;
    }
  }
  SyncResult s;
  s.offset = best;
  s.inverted = corr[best].real() < 0.0f;
  s.bits = rx.size();
  s.errors = count_errors(rx, ref, s.offset, s.inverted);
  s.agreement = 1.0 - static_cast<double>(s.errors) / static_cast<double>(s.bits);
  if (s.agreement < 0.7) {
    throw SyncError("bit synchronization failed: best agreement " + std::to_string(s.agreement));
  }
  return s;
}

/// Error counter for a continuous bit stream that may drop or insert whole symbols
/// (IMDD clock slips). The first call synchronizes on its bits; afterwards the
/// reference position is carried along. A block whose error count exceeds a quarter
/// of its length is retried at shifts of +-1..4 symbols; if one fits, the split point
/// between the old and new alignment is placed where the total error count is lowest.
class SlipTolerantCounter {
 public:
  SlipTolerantCounter() = default;
  SlipTolerantCounter(std::vector<std::uint8_t> ref, unsigned bits_per_symbol, std::size_t block = 4096)
      : ref_(std::move(ref)), k_(bits_per_symbol), block_(block) {
    if (ref_.size() < 2 || k_ == 0 || block_ < 64) throw std::invalid_argument("SlipTolerantCounter: bad parameters");
  }

  [[nodiscard]] bool synced() const { return synced_; }
  [[nodiscard]] std::uint64_t resyncs() const { return resyncs_; }
  [[nodiscard]] bool inverted() const { return inverted_; }

  /// Returns the error count of `rx`; per-bit error flags go to `flags` if given.
  std::uint64_t add(std::span<const std::uint8_t> rx, std::vector<std::uint8_t>* flags = nullptr) {
    if (rx.empty()) return 0;
    if (!synced_) {
      const auto s = synchronize(rx, ref_);
      pos_ = s.offset;
      inverted_ = s.inverted;
      synced_ = true;
    }
    const std::size_t p = ref_.size();
    if (flags) flags->assign(rx.size(), 0);
    std::vector<std::uint8_t> a, b;
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < rx.size(); i += block_) {
      const std::size_t len = std::min(block_, rx.size() - i);
      const auto blk = rx.subspan(i, len);
      std::uint64_t e = count_errors(blk, ref_, pos_, inverted_, &a);
      if (4 * e > len && len >= 64) {
        std::uint64_t best_e = e;
        std::ptrdiff_t best_d = 0;
        for (int m = 1; m <= 4; ++m) {
          for (int sgn : {1, -1}) {
            const auto d = static_cast<std::ptrdiff_t>(sgn * m * static_cast<int>(k_));
            const std::uint64_t ed = count_errors(blk, ref_, wrap(d), inverted_);
            if (ed < best_e) {
              best_e = ed;
              best_d = d;
            }
          }
        }
        if (best_d != 0 && 8 * best_e < len) {
          count_errors(blk, ref_, wrap(best_d), inverted_, &b);
          // old alignment before t, new from t on
          std::uint64_t tail = std::accumulate(b.begin(), b.end(), std::uint64_t{0});
          std::uint64_t head = 0, best_total = tail;
          std::size_t best_t = 0;
          for (std::size_t t = 0; t < len; ++t) {
            head += a[t];
            tail -= b[t];
            if (head + tail < best_total) {
              best_total = head + tail;
              best_t = t + 1;
            }
          }
          for (std::size_t t = best_t; t < len; ++t) a[t] = b[t];
          e = best_total;
          pos_ = wrap(best_d);
          ++resyncs_;
        }
      }
      if (flags) std::copy(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(len), flags->begin() + static_cast<std::ptrdiff_t>(i));
      total += e;
      pos_ = (pos_ + len) % p;
    }
    return total;
  }

 private:
  [[nodiscard]] std::size_t wrap(std::ptrdiff_t d) const {
    const auto p = static_cast<std::ptrdiff_t>(ref_.size());
    return static_cast<std::size_t>(((static_cast<std::ptrdiff_t>(pos_) + d) % p + p) % p);
  }

  std::vector<std::uint8_t> ref_;
  unsigned k_ = 1;
  std::size_t block_ = 4096;
  bool synced_ = false;
  bool inverted_ = false;
  std::size_t pos_ = 0;
  std::uint64_t resyncs_ = 0;
};

// ---------------------------------------------------------------------------
// Windowed BER / Q

/// Accumulates error flags into fixed-size windows (in bits). Only complete windows are
/// reported, so the mean of the per-window BER equals the BER over those windows.
class WindowedBer {
 public:
  WindowedBer() = default;
  explicit WindowedBer(std::uint64_t window_bits) : window_(window_bits) {
    if (window_bits == 0) throw std::invalid_argument("window must hold at least one bit");
  }

  /// Window of `seconds` at the given bit rate.
  static WindowedBer for_duration(double seconds, double bit_rate) {
    return WindowedBer(static_cast<std::uint64_t>(std::llround(seconds * bit_rate)));
  }

  void add(std::span<const std::uint8_t> error_flags) {
    for (std::uint8_t e : error_flags) {
      cur_err_ += e;
      if (++cur_bits_ == window_) {
        errors_.push_back(cur_err_);
        cur_err_ = 0;
        cur_bits_ = 0;
      }
    }
  }

  [[nodiscard]] std::uint64_t window_bits() const { return window_; }
  [[nodiscard]] const std::vector<std::uint64_t>& window_errors() const { return errors_; }

  [[nodiscard]] std::vector<double> ber_trace() const {
    std::vector<double> out;
    for (auto e : errors_) out.push_back(static_cast<double>(e) / static_cast<double>(window_));
    return out;
  }

  [[nodiscard]] std::vector<double> q_trace() const {
    std::vector<double> out;
    for (double b : ber_trace()) out.push_back(q_from_ber(b));
    return out;
  }

 private:
  std::uint64_t window_ = 1;
  std::uint64_t cur_err_ = 0, cur_bits_ = 0;
  std::vector<std::uint64_t> errors_;
};

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  std::uint64_t bit_errors = 0;
  std::uint64_t bits_counted = 0;
  double evm_err_energy = 0.0;
  double evm_ref_energy = 0.0;
  double osnr_db_measured = std::numeric_limits<double>::quiet_NaN();
  double cspr_db_measured = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> window_ber;  // per-window BER, in time order

  [[nodiscard]] double ber() const {
    return bits_counted == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(bit_errors) / static_cast<double>(bits_counted);
  }
  [[nodiscard]] double q_db() const { return q_from_ber(ber()); }
  [[nodiscard]] double evm_db() const {
    return evm_ref_energy > 0.0 ? lin_to_db(evm_err_energy / evm_ref_energy) : std::numeric_limits<double>::quiet_NaN();
  }
  [[nodiscard]] std::vector<double> window_q() const {
    std::vector<double> q;
    for (double b : window_ber) q.push_back(q_from_ber(b));
    return q;
  }

  /// Associative combine of two partial reports (b follows a in time). Measured
  /// OSNR/CSPR keep the first defined value.
  friend MetricsReport merge(const MetricsReport& a, const MetricsReport& b) {
    MetricsReport r = a;
    r.bit_errors += b.bit_errors;
    r.bits_counted += b.bits_counted;
    r.evm_err_energy += b.evm_err_energy;
    r.evm_ref_energy += b.evm_ref_energy;
    if (std::isnan(r.osnr_db_measured)) r.osnr_db_measured = b.osnr_db_measured;
    if (std::isnan(r.cspr_db_measured)) r.cspr_db_measured = b.cspr_db_measured;
    r.window_ber.insert(r.window_ber.end(), b.window_ber.begin(), b.window_ber.end());
    return r;
  }
};

// ---------------------------------------------------------------------------
// OSNR / CSPR

/// Welch power spectral density (Hann, 50% overlap), two-sided, FFT order, in power/Hz.
inline std::vector<double> welch_psd(std::span<const cf32> x, double sample_rate, std::size_t nfft = 4096) {
  if (x.size() < nfft) throw std::invalid_argument("welch_psd: signal shorter than one segment");
  std::vector<double> win(nfft);
  double wpow = 0.0;
  for (std::size_t i = 0; i < nfft; ++i) {
    win[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(nfft));
    wpow += win[i] * win[i];
  }
  std::vector<double> psd(nfft, 0.0);
  std::vector<cf32> seg(nfft), spec(nfft);
  std::size_t n_seg = 0;
  for (std::size_t start = 0; start + nfft <= x.size(); start += nfft / 2) {
    for (std::size_t i = 0; i < nfft; ++i) seg[i] = x[start + i] * static_cast<float>(win[i]);
    fft_raw::c2c(seg.data(), spec.data(), nfft, true);
    for (std::size_t k = 0; k < nfft; ++k) psd[k] += std::norm(cf64(spec[k]));
    ++n_seg;
  }
  for (auto& v : psd) v /= static_cast<double>(n_seg) * wpow * sample_rate;
  return psd;
}

struct OsnrBands {
  double noise_lo = 3.0e9;  // |f| range holding only noise
  double noise_hi = 3.9e9;
};

/// OSNR from a noise-loaded field: the noise PSD is read in a noise-only band and
/// assumed white over the full sampled band; signal power is the total minus that
/// noise. Referenced to 12.5 GHz. Returns +inf when no noise is detectable.
inline double measure_osnr(std::span<const cf32> field, double sample_rate, OsnrBands bands = {},
                           std::span<const cf32> clean = {}) {
  if (!(bands.noise_hi > bands.noise_lo) || bands.noise_hi > sample_rate / 2.0) {
    throw std::invalid_argument("measure_osnr: no noise-only band inside the sampled bandwidth");
  }
  auto band_psd = [&](std::span<const cf32> x) {
    const auto psd = welch_psd(x, sample_rate);
    const std::size_t n = psd.size();
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double f = std::abs(static_cast<double>(signed_bin(k, n)) * sample_rate / static_cast<double>(n));
      if (f >= bands.noise_lo && f <= bands.noise_hi) {
        acc += psd[k];
        ++cnt;
      }
    }
    if (cnt == 0) throw std::invalid_argument("measure_osnr: noise band holds no bins");
    return acc / static_cast<double>(cnt);
  };
  double total = 0.0;
  for (const auto& v : field) total += std::norm(cf64(v));
  total /= static_cast<double>(field.size());
  double noise_psd = band_psd(field);
  // signal spectral tails inside the noise band, taken from the noise-free copy
  if (!clean.empty()) {
    if (clean.size() != field.size()) throw std::invalid_argument("measure_osnr: reference length differs");
    noise_psd -= band_psd(clean);
  }
  const double noise_total = noise_psd * sample_rate;
  if (!(noise_total > 1e-9 * total)) return kInf;
  const double sig = total - noise_total;
  if (!(sig > 0.0)) return -kInf;
  return lin_to_db(sig / (noise_psd * 12.5e9));
}

/// CSPR of a baseband field whose carrier sits at DC: carrier power is |mean|^2.
inline double measure_cspr(std::span<const cf32> field) {
  cf64 m = 0.0;
  double p = 0.0;
  for (const auto& v : field) {
    m += cf64(v);
    p += std::norm(cf64(v));
  }
  m /= static_cast<double>(field.size());
  p /= static_cast<double>(field.size());
  const double pc = std::norm(m);
  const double ps = p - pc;
  if (!(ps > 0.0)) return kInf;
  return lin_to_db(pc / ps);
}

// ---------------------------------------------------------------------------
// Eye diagram and constellation

struct EyeDiagram {
  std::size_t time_bins = 64;        // across one symbol (2 samples)
  std::size_t amplitude_bins = 128;
  double amp_lo = -1.5, amp_hi = 1.5;
  std::vector<std::uint64_t> counts;  // [time][amplitude]
  std::uint64_t folded = 0;           // interpolated points folded in (mass)
  std::uint64_t outside = 0;          // points beyond the amplitude range (clamped to the edge bins)

  [[nodiscard]] std::uint64_t at(std::size_t t, std::size_t a) const { return counts[t * amplitude_bins + a]; }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "time_bin,phase_symbols,amplitude_bin,amplitude,count\n";
    for (std::size_t t = 0; t < time_bins; ++t) {
      for (std::size_t a = 0; a < amplitude_bins; ++a) {
        const auto c = at(t, a);
        if (c == 0) continue;
        const double amp = amp_lo + (amp_hi - amp_lo) * (static_cast<double>(a) + 0.5) / static_cast<double>(amplitude_bins);
        os << t << "," << static_cast<double>(t) / static_cast<double>(time_bins) << "," << a << "," << amp << "," << c << "\n";
      }
    }
    return os.str();
  }
};

/// Eye of a clock-recovered 2 sps stream whose even samples are symbol centers. Each
/// 1024-sample stretch is band-limited interpolated by `time_bins / 2` through FFT zero
/// padding, then folded modulo one symbol. Time bin 0 is the sampling instant.
inline EyeDiagram eye_diagram(std::span<const float> samples, std::size_t time_bins = 64, std::size_t amplitude_bins = 128,
                              double amp_lo = -1.5, double amp_hi = 1.5) {
  if (time_bins % 2 != 0 || time_bins == 0) throw std::invalid_argument("time_bins must be even");
  EyeDiagram eye;
  eye.time_bins = time_bins;
  eye.amplitude_bins = amplitude_bins;
  eye.amp_lo = amp_lo;
  eye.amp_hi = amp_hi;
  eye.counts.assign(time_bins * amplitude_bins, 0);
  const std::size_t up = time_bins / 2;
  constexpr std::size_t seg = 1024;
  const std::size_t big = seg * up;
  std::vector<cf32> in(seg), spec(seg), pad(big), out(big);
  auto bin_amp = [&](double v) {
    if (v < amp_lo || v >= amp_hi) ++eye.outside;
    const double r = (v - amp_lo) / (amp_hi - amp_lo) * static_cast<double>(amplitude_bins);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(amplitude_bins - 1)));
  };
  for (std::size_t s0 = 0; s0 + seg <= samples.size(); s0 += seg) {
    for (std::size_t i = 0; i < seg; ++i) in[i] = samples[s0 + i];
    fft_raw::c2c(in.data(), spec.data(), seg, true);
    std::fill(pad.begin(), pad.end(), cf32{});
    for (std::size_t k = 0; k < seg / 2; ++k) {
      pad[k] = spec[k];
      pad[big - seg / 2 + k] = spec[seg / 2 + k];
    }
    fft_raw::c2c(pad.data(), out.data(), big, false);
    const float scale = 1.0f / static_cast<float>(seg);
    // Skip the edges of each stretch where the periodic interpolation is inaccurate.
    for (std::size_t i = 64 * up; i < big - 64 * up; ++i) {
      const std::size_t t = i % time_bins;
      ++eye.counts[t * amplitude_bins + bin_amp(out[i].real() * scale)];
      ++eye.folded;
    }
  }
  return eye;
}

struct ClusterStats {
  cf64 ideal{};
  cf64 mean{};
  double variance = 0.0;
  std::uint64_t count = 0;
};

struct ConstellationDump {
  std::vector<cf32> points;
  std::vector<ClusterStats> clusters;  // indexed by bit pattern
  double evm_db = 0.0;                 // against decided symbols

  [[nodiscard]] std::string points_csv() const {
    std::ostringstream os;
    os << "i,q\n";
    os.precision(7);
    for (const auto& p : points) os << p.real() << "," << p.imag() << "\n";
    return os.str();
  }

  [[nodiscard]] std::string clusters_csv() const {
    std::ostringstream os;
    os << "pattern,ideal_i,ideal_q,mean_i,mean_q,variance,count\n";
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      const auto& c = clusters[i];
      os << i << "," << c.ideal.real() << "," << c.ideal.imag() << "," << c.mean.real() << "," << c.mean.imag() << ","
         << c.variance << "," << c.count << "\n";
    }
    return os.str();
  }
};

inline ConstellationDump constellation_dump(std::span<const cf32> symbols, const tx::ModulationFormat& fmt) {
  ConstellationDump d;
  d.points.assign(symbols.begin(), symbols.end());
  const auto pts = fmt.constellation();
  d.clusters.resize(pts.size());
  std::vector<cf64> sum(pts.size());
  std::vector<double> sum2(pts.size());
  double err = 0.0, ref = 0.0;
  for (const auto& s : symbols) {
    const cf64 y(s);
    const unsigned p = fmt.is_pam() ? tx::ModulationFormat::gray(static_cast<unsigned>(std::clamp(
                                          std::round((y.real() + 1.0) * (fmt.order() - 1) / 2.0), 0.0, fmt.order() - 1.0)))
                                    : fmt.qam_decide(y);
    const cf64 dsym = pts[p];
    err += std::norm(y - dsym);
    ref += std::norm(dsym);
    sum[p] += y;
    sum2[p] += std::norm(y);
    ++d.clusters[p].count;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto& c = d.clusters[i];
    c.ideal = pts[i];
    if (c.count > 0) {
      c.mean = sum[i] / static_cast<double>(c.count);
      c.variance = sum2[i] / static_cast<double>(c.count) - std::norm(c.mean);
    }
  }
  d.evm_db = ref > 0.0 ? lin_to_db(err / ref) : 0.0;
  return d;
}

}  // namespace srx::metrics
