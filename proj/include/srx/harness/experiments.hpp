#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "srx/channel/channel.hpp"
#include "srx/core/prbs.hpp"
#include "srx/harness/config.hpp"
#include "srx/metrics/metrics.hpp"
#include "srx/pipeline/pipeline.hpp"
#include "srx/rx/imdd.hpp"
#include "srx/rx/kk.hpp"

namespace srx::harness {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> reference_bits(const RunConfig& cfg) {
  return prbs_period(PrbsState::maximal(cfg.tx.prbs_order, cfg.tx.seed));
}

inline double bit_rate(const RunConfig& cfg) { return cfg.tx.baud * cfg.format().bits_per_symbol(); }

/// Dequantized samples of a buffer slice, in ADC units.
inline std::vector<float> dequantize(const CodeBuffer& b, std::size_t begin, std::size_t n, unsigned bits) {
  n = std::min(n, b.samples.size() - std::min(begin, b.samples.size()));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = channel::dequantize_sample(b.samples[begin + i], bits);
  return out;
}

struct Calibration {
  std::vector<double> thresholds;  // IMDD
  double dc_offset = std::numeric_limits<double>::quiet_NaN();  // KK
  std::vector<std::pair<double, double>> dc_curve;
  double dc_best_evm_db = std::numeric_limits<double>::quiet_NaN();
};

using AnyChain = std::variant<std::unique_ptr<rx::ImddChain>, std::unique_ptr<rx::KkChain>>;

struct Receiver {
  AnyChain chain;
  Calibration calib;
  rx::StaticEqualizer eq;
};

/// DC-offset search on a 2^18-sample slice of the warm-up buffer (skipping the first
/// 2^20 samples, where AC coupling and the filters settle).
inline Calibration calibrate_kk(const RunConfig& cfg, const rx::StaticEqualizer& eq, const CodeBuffer& warmup) {
  Calibration c;
  const std::size_t begin = std::min<std::size_t>(1 << 20, warmup.samples.size() / 4);
  const auto x = dequantize(warmup, begin, 1 << 18, cfg.kk.adc_bits);
  try {
    rx::KkConfig k = cfg.kk;
    const auto s = rx::optimize_dc_offset(x, k, eq);
    c.dc_offset = s.best;
    c.dc_curve = s.curve;
    c.dc_best_evm_db = s.best_evm_db;
  } catch (const std::runtime_error& e) {
    throw CalibrationError(std::string("KK dc-offset calibration failed: ") + e.what());
  }
  return c;
}

inline Calibration calibrate_imdd(const RunConfig& cfg, const rx::StaticEqualizer& eq, const CodeBuffer& warmup) {
  Calibration c;
  try {
    c.thresholds = rx::calibrate_imdd_thresholds(cfg.imdd, eq, warmup);
  } catch (const std::runtime_error& e) {
    throw CalibrationError(std::string("threshold calibration failed: ") + e.what());
  }
  return c;
}

/// Designs the static equalizer, calibrates on the warm-up buffer as configured and
/// builds the chain.
inline Receiver make_receiver(const RunConfig& cfg, const CodeBuffer& warmup, bool keep_symbols = false) {
  Receiver r;
  if (cfg.is_imdd()) {
    rx::ImddConfig ic = cfg.imdd;
    ic.keep_symbols = keep_symbols;
    r.eq = rx::design_imdd_equalizer(ic, cfg.channel);
    switch (cfg.run.thresholds) {
      case ThresholdMode::calibrate: r.calib = calibrate_imdd(cfg, r.eq, warmup); break;
      case ThresholdMode::ideal: r.calib.thresholds = rx::PamDecisionTable::ideal_thresholds(ic.format); break;
      case ThresholdMode::fixed: r.calib.thresholds = ic.thresholds; break;
    }
    ic.thresholds = r.calib.thresholds;
    r.chain = std::make_unique<rx::ImddChain>(ic, r.eq);
  } else {
    rx::KkConfig kc = cfg.kk;
    kc.keep_symbols = keep_symbols;
    r.eq = rx::design_kk_equalizer(kc, cfg.channel);
    if (cfg.run.calibrate_dc) {
      r.calib = calibrate_kk(cfg, r.eq, warmup);
    } else {
      r.calib.dc_offset = kc.dc_offset;
    }
    kc.dc_offset = r.calib.dc_offset;
    r.chain = std::make_unique<rx::KkChain>(kc, r.eq);
  }
  return r;
}

struct LinkOptions {
  std::size_t buffers = 0;  // 0: cfg.run.buffers
  bool adaptive = false;    // stop early once min_errors / max_bits is reached
  std::uint64_t min_errors = 100;
  std::uint64_t max_bits = 40'000'000;
  bool keep_symbols = false;
  std::uint64_t window_bits = 0;  // 0: derived from cfg.run.window_s
  std::size_t exclude_warmup = 0;  // buffers left out of the budget report
  std::function<void(std::size_t, std::uint64_t)> jitter;
  std::function<void(const rx::SymbolFrame&, bool counted)> on_frame;
  std::function<void(const CodeBuffer&)> on_buffer;  // sees every ADC buffer before the receiver
};

struct LinkResult {
  metrics::MetricsReport report;
  pipeline::BudgetReport budget;
  channel::ChannelStats channel_stats;
  double realized_osnr_db = std::numeric_limits<double>::infinity();
  Calibration calib;
  std::size_t buffers = 0;
  std::size_t frames_counted = 0;
  std::uint64_t resyncs = 0;
  std::uint64_t clamped_samples = 0;
  std::int64_t final_slip = 0;
  double measured_ppm = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::uint64_t> window_errors;
  std::uint64_t window_bits = 0;
};

namespace detail {

/// Accumulates metrics from frames in order.
struct FrameAccounting {
  const RunConfig& cfg;
  LinkResult& res;
  metrics::SlipTolerantCounter counter;
  metrics::WindowedBer windows;
  std::vector<std::uint8_t> flags;
  std::uint64_t symbols_total = 0;
  double first_tau = std::numeric_limits<double>::quiet_NaN(), last_tau = 0.0;
  const LinkOptions& opt;

  FrameAccounting(const RunConfig& c, LinkResult& r, const LinkOptions& o, std::uint64_t window_bits)
      : cfg(c), res(r), counter(reference_bits(c), c.format().bits_per_symbol()), windows(window_bits), opt(o) {}

  void operator()(rx::SymbolFrame&& f) {
    if (f.tail) {
      if (opt.on_frame) opt.on_frame(f, false);
      return;
    }
    const bool count = f.sequence_index >= cfg.run.warmup_buffers;
    if (count) {
      const auto e = counter.add(f.bits, &flags);
      res.report.bit_errors += e;
      res.report.bits_counted += f.bits.size();
      windows.add(flags);
      res.report.evm_err_energy += f.evm_err_energy;
      res.report.evm_ref_energy += f.evm_ref_energy;
      ++res.frames_counted;
      res.clamped_samples += f.clamped_samples;
    } else {
      counter.add(f.bits);
    }
    if (!f.tau_trace.empty()) {
      if (std::isnan(first_tau)) first_tau = f.tau_trace.front();
      last_tau = f.tau_trace.back();
    }
    symbols_total += f.n_symbols;
    res.final_slip = f.slip_counter;
    if (opt.on_frame) opt.on_frame(f, count);
  }
};

}  // namespace detail

/// Runs the receiver over `first` followed by the buffers from `next` (empty at the
/// end). Buffer 0 calibrates the receiver (thresholds or DC offset) and, with the other
/// warm-up buffers, is left out of the BER. Fills everything but the channel fields.
inline void run_receiver(const RunConfig& cfg, CodeBuffer first, const std::function<std::optional<CodeBuffer>()>& next,
                         const LinkOptions& opt, LinkResult& res) {
  if (opt.on_buffer) opt.on_buffer(first);
  Receiver rcv = make_receiver(cfg, first, opt.keep_symbols);
  res.calib = rcv.calib;

  const std::size_t n_buffers = opt.buffers ? opt.buffers : cfg.run.buffers;
  const std::uint64_t wbits =
      opt.window_bits ? opt.window_bits : std::max<std::uint64_t>(1, std::llround(cfg.run.window_s * bit_rate(cfg)));
  detail::FrameAccounting acct(cfg, res, opt, wbits);

  std::optional<CodeBuffer> pending(std::move(first));
  std::size_t fed = 0;
  auto source = [&]() -> std::optional<CodeBuffer> {
    if (fed >= n_buffers) return std::nullopt;
    if (opt.adaptive && fed > cfg.run.warmup_buffers &&
        (res.report.bit_errors >= opt.min_errors || res.report.bits_counted >= opt.max_bits)) {
      return std::nullopt;
    }
    if (pending) {
      auto b = std::move(*pending);
      pending.reset();
      ++fed;
      return b;
    }
    auto b = next();
    if (!b) return std::nullopt;
    if (opt.on_buffer) opt.on_buffer(*b);
    ++fed;
    return b;
  };
  pipeline::PipelineOptions po;
  po.n_streams = cfg.streams;
  po.jitter = opt.jitter;
  po.exclude_warmup = opt.exclude_warmup;
  std::visit([&](auto& chain) { res.budget = pipeline::run_pipeline(*chain, source, std::ref(acct), po); }, rcv.chain);

  res.buffers = fed;
  res.resyncs = acct.counter.resyncs();
  res.report.window_ber = acct.windows.ber_trace();
  res.window_errors = acct.windows.window_errors();
  res.window_bits = wbits;
  if (cfg.is_imdd() && acct.symbols_total > 0 && !std::isnan(acct.first_tau)) {
    // tau is unwrapped, so it already carries the slips
    const double drift = acct.last_tau - acct.first_tau;
    res.measured_ppm = -drift / static_cast<double>(acct.symbols_total) * 1e6;
  }
}

/// Transmitter, channel and receiver for the configured number of buffers.
inline LinkResult run_link(const RunConfig& cfg, const LinkOptions& opt = {}) {
  LinkResult res;
  channel::ChannelStream ch(cfg.tx, cfg.channel);
  if (cfg.run.capture_osnr) ch.capture_field(1 << 20);
  CodeBuffer first = ch.next_buffer();
  if (cfg.run.capture_osnr && ch.captured_field().size() >= 8192) {
    res.report.osnr_db_measured = metrics::measure_osnr(ch.captured_field(), cfg.channel.field_rate, {}, ch.captured_clean_field());
    if (!cfg.is_imdd()) res.report.cspr_db_measured = metrics::measure_cspr(ch.captured_clean_field());
  }
  run_receiver(cfg, std::move(first), [&]() -> std::optional<CodeBuffer> { return ch.next_buffer(); }, opt, res);
  res.channel_stats = ch.stats();
  res.realized_osnr_db = ch.stats().realized_osnr_db(cfg.channel.field_rate);
  return res;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepPoint {
  double value = 0.0;
  double measured = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t bits = 0;
  std::uint64_t errors = 0;
  double ber = std::numeric_limits<double>::quiet_NaN();
  double q_db = std::numeric_limits<double>::quiet_NaN();
  double evm_db = std::numeric_limits<double>::quiet_NaN();
  std::size_t buffers = 0;
  std::string status = "ok";
  bool cached = false;
};

inline nlohmann::json to_json(const SweepPoint& p) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  return {{"value", p.value}, {"measured", num(p.measured)}, {"bits", p.bits},     {"errors", p.errors},
          {"ber", num(p.ber)},  {"q_db", num(p.q_db)},         {"evm_db", num(p.evm_db)}, {"buffers", p.buffers},
          {"status", p.status}};
}

inline SweepPoint point_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) {
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (v.is_string()) return v.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    return v.get<double>();
  };
  SweepPoint p;
  p.value = j.at("value").get<double>();
  p.measured = num(j.at("measured"));
  p.bits = j.at("bits").get<std::uint64_t>();
  p.errors = j.at("errors").get<std::uint64_t>();
  p.ber = num(j.at("ber"));
  p.q_db = num(j.at("q_db"));
  p.evm_db = num(j.at("evm_db"));
  p.buffers = j.at("buffers").get<std::size_t>();
  p.status = j.at("status").get<std::string>();
  return p;
}

/// Config for one sweep point: axis value applied and an independent noise seed.
inline RunConfig point_config(const RunConfig& base, double value, std::size_t index) {
  RunConfig c = base;
  if (base.sweep.axis == "osnr") {
    c.channel.osnr_db = value;
  } else if (base.sweep.axis == "cspr") {
    if (c.is_imdd()) throw ConfigError("cspr sweep needs a QAM format");
    c.tx.cspr_db = value;
  } else {
    c.channel.clock_offset_ppm = value;
    c.channel.ppm_triangle_amplitude = 0.0;
  }
  c.channel.seed = base.channel.seed + 1000003ull * (index + 1);
  return c;
}

inline std::string cache_key(const RunConfig& base, double value) {
  std::ostringstream os;
  boost::property_tree::ini_parser::write_ini(os, base.source);
  os << "|" << base.sweep.axis << "|" << std::setprecision(17) << value << "|" << base.sweep.min_errors << "|"
     << base.sweep.max_bits;
  std::ostringstream name;
  name << base.sweep.axis << "_" << std::setprecision(6) << value << "_" << std::hex << std::hash<std::string>{}(os.str())
       << ".json";
  return name.str();
}

/// Runs one point: adaptive bit count, failures recorded in `status`.
inline SweepPoint run_point(const RunConfig& base, double value, std::size_t index) {
  SweepPoint p;
  p.value = value;
  try {
    const RunConfig c = point_config(base, value, index);
    LinkOptions opt;
    opt.adaptive = true;
    opt.min_errors = base.sweep.min_errors;
    opt.max_bits = base.sweep.max_bits;
    const auto bits_per_buffer = static_cast<double>(kBufferSamples) / (c.channel.adc_rate / c.tx.baud) *
                                 c.format().bits_per_symbol();
    opt.buffers = c.run.warmup_buffers + static_cast<std::size_t>(std::ceil(static_cast<double>(opt.max_bits) / bits_per_buffer));
    opt.buffers = std::max(opt.buffers, c.run.warmup_buffers + 1);
    const auto r = run_link(c, opt);
    p.bits = r.report.bits_counted;
    p.errors = r.report.bit_errors;
    p.ber = r.report.ber();
    p.q_db = r.report.q_db();
    p.evm_db = r.report.evm_db();
    p.buffers = r.buffers;
    if (base.sweep.axis == "osnr") p.measured = r.report.osnr_db_measured;
    if (base.sweep.axis == "cspr") p.measured = r.report.cspr_db_measured;
    if (base.sweep.axis == "clock_ppm") p.measured = r.measured_ppm;
  } catch (const metrics::SyncError& e) {
    p.status = std::string("sync_failure: ") + e.what();
  } catch (const CalibrationError& e) {
    p.status = std::string("calibration_failure: ") + e.what();
  } catch (const std::exception& e) {
    p.status = std::string("error: ") + e.what();
  }
  return p;
}

/// Runs every grid point, reusing cached results in `cache_dir` when present.
inline std::vector<SweepPoint> run_sweep(const RunConfig& base, const std::function<void(const SweepPoint&)>& progress = {}) {
  std::vector<SweepPoint> out;
  const bool use_cache = !base.sweep.cache_dir.empty();
  if (use_cache) std::filesystem::create_directories(base.sweep.cache_dir);
  for (std::size_t i = 0; i < base.sweep.grid.size(); ++i) {
    const double v = base.sweep.grid[i];
    const std::filesystem::path file = use_cache ? std::filesystem::path(base.sweep.cache_dir) / cache_key(base, v) : std::filesystem::path{};
    SweepPoint p;
    bool have = false;
    if (use_cache && std::filesystem::exists(file)) {
      try {
        std::ifstream in(file);
        p = point_from_json(nlohmann::json::parse(in));
        p.cached = true;
        have = true;
      } catch (const std::exception&) {
        have = false;  // unreadable cache entry: recompute
      }
    }
    if (!have) {
      p = run_point(base, v, i);
      if (use_cache) {
        const auto tmp = file.string() + ".tmp";
        {
          std::ofstream o(tmp);
          o << to_json(p).dump(2) << "\n";
        }
        std::filesystem::rename(tmp, file);
      }
    }
    if (progress) progress(p);
    out.push_back(p);
  }
  return out;
}

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepPoint>& pts) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "axis,value,measured,bits,errors,ber,q_db,evm_db,buffers,status\n";
  for (const auto& p : pts) {
    std::string status = p.status;
    for (auto& ch : status) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    os << axis << "," << p.value << "," << p.measured << "," << p.bits << "," << p.errors << "," << p.ber << ","
       << p.q_db << "," << p.evm_db << "," << p.buffers << "," << status << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Trace

struct TraceResult {
  LinkResult link;
  std::vector<double> window_q;
  double mean_q = 0.0, std_q = 0.0;
  double window_s = 0.0;
};

/// Continuous run of at least `symbols` symbols after warm-up, reported in windows of
/// cfg.run.window_s.
inline TraceResult run_trace(const RunConfig& cfg, std::uint64_t symbols) {
  TraceResult t;
  const double sps = cfg.channel.adc_rate / cfg.tx.baud;
  const auto per_buffer = static_cast<double>(kBufferSamples) / sps;
  LinkOptions opt;
  opt.buffers = cfg.run.warmup_buffers + static_cast<std::size_t>(std::ceil(static_cast<double>(symbols) / per_buffer));
  t.link = run_link(cfg, opt);
  t.window_q = t.link.report.window_q();
  t.window_s = static_cast<double>(t.link.window_bits) / bit_rate(cfg);
  std::vector<double> finite;
  for (double q : t.window_q) {
    if (std::isfinite(q)) finite.push_back(q);
  }
  if (!finite.empty()) {
    double m = 0.0;
    for (double q : finite) m += q;
    m /= static_cast<double>(finite.size());
    double v = 0.0;
    for (double q : finite) v += (q - m) * (q - m);
    t.mean_q = m;
    t.std_q = finite.size() > 1 ? std::sqrt(v / static_cast<double>(finite.size() - 1)) : 0.0;
  }
  return t;
}

inline std::string trace_csv(const TraceResult& t) {
  std::ostringstream os;
  os << std::setprecision(10) << "window,start_s,bits,errors,ber,q_db\n";
  const auto& e = t.link.window_errors;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double ber = static_cast<double>(e[i]) / static_cast<double>(t.link.window_bits);
    os << i << "," << static_cast<double>(i) * t.window_s << "," << t.link.window_bits << "," << e[i] << "," << ber << ","
       << metrics::q_from_ber(ber) << "\n";
  }
  return os.str();
}

}  // namespace srx::harness
