// srx: transmitter, channel, receivers and experiments from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "srx/channel/channel.hpp"
#include "srx/harness/config.hpp"
#include "srx/harness/experiments.hpp"
#include "srx/io/srx1.hpp"
#include "srx/metrics/metrics.hpp"
#include "srx/tx/txgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace srx;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitSync = 3;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string format;
  std::string osnr;
  std::size_t buffers = 0;
  std::size_t streams = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_file, "INI config file");
  sub->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  sub->add_option("-f,--format", c.format, "shortcut for run.format");
  sub->add_option("--osnr", c.osnr, "shortcut for channel.osnr_db");
  sub->add_option("-n,--buffers", c.buffers, "shortcut for run.buffers");
  sub->add_option("-s,--streams", c.streams, "shortcut for pipeline.streams");
}

harness::RunConfig load(const Common& c) {
  boost::property_tree::ptree pt;
  if (!c.config_file.empty()) pt = harness::parse_ini_file(c.config_file);
  if (!c.format.empty()) harness::apply_setting(pt, "run.format=" + c.format);
  if (!c.osnr.empty()) harness::apply_setting(pt, "channel.osnr_db=" + c.osnr);
  if (c.buffers) harness::apply_setting(pt, "run.buffers=" + std::to_string(c.buffers));
  if (c.streams) harness::apply_setting(pt, "pipeline.streams=" + std::to_string(c.streams));
  for (const auto& s : c.sets) harness::apply_setting(pt, s);
  return harness::build_config(pt);
}

json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

json config_json(const harness::RunConfig& cfg) {
  std::ostringstream os;
  boost::property_tree::ini_parser::write_ini(os, cfg.source);
  return {{"format", cfg.format().name()}, {"settings", os.str()}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream o(p);
  if (!o) throw std::runtime_error("cannot write " + p.string());
  o << text;
}

std::uint64_t field_samples_for(const harness::RunConfig& cfg, std::size_t buffers) {
  return static_cast<std::uint64_t>(buffers) * kBufferSamples * cfg.channel.decimation() + (1u << 16);
}

// ---------------------------------------------------------------------------

int cmd_tx(const Common& c, const std::string& out, std::uint64_t samples) {
  const auto cfg = load(c);
  if (samples == 0) samples = field_samples_for(cfg, cfg.run.buffers);
  tx::TxStream tx(cfg.tx);
  io::Srx1Writer w(out, io::SampleFormat::cf32, static_cast<std::uint64_t>(cfg.tx.dac_rate),
                   Rational{tx.samples_per_symbol(), 1});
  std::vector<cf32> chunk;
  for (std::uint64_t done = 0; done < samples;) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(1u << 20, samples - done));
    chunk.clear();
    tx.generate(n, chunk);
    w.write(std::span<const cf32>(chunk));
    done += n;
  }
  w.close();
  io::write_sidecar(out, {{"kind", "tx_field"},
                          {"samples", samples},
                          {"baud", cfg.tx.baud},
                          {"rolloff", cfg.tx.rolloff},
                          {"cspr_db", cfg.format().is_pam() ? json(nullptr) : json(cfg.tx.cspr_db)},
                          {"prbs_order", cfg.tx.prbs_order},
                          {"seed", cfg.tx.seed},
                          {"config", config_json(cfg)}});
  std::cout << "wrote " << samples << " field samples to " << out << "\n";
  return kExitOk;
}

int cmd_channel(const Common& c, const std::string& in, const std::string& out) {
  const auto cfg = load(c);
  io::Srx1Reader reader(in);
  const auto& h = reader.header();
  if (h.format != io::SampleFormat::cf32) throw io::FormatError("channel input must be a complex-f32 field file");
  if (static_cast<double>(h.sample_rate_hz) != cfg.channel.field_rate) {
    throw io::FormatError("field file rate " + std::to_string(h.sample_rate_hz) + " differs from channel field rate");
  }
  const std::uint64_t per_buffer = kBufferSamples * cfg.channel.decimation();
  if (h.n_samples < per_buffer + (1u << 16)) throw io::FormatError("field file too short for one ADC buffer");
  const std::size_t n_buffers = static_cast<std::size_t>((h.n_samples - (1u << 16)) / per_buffer);
  std::vector<cf32> tmp;
  channel::ChannelStream ch(cfg.tx, cfg.channel, [&](std::size_t n, std::vector<cf32>& dst) {
    const std::size_t got = reader.read(n, tmp);
    dst.insert(dst.end(), tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(got));
    dst.resize(dst.size() + (n - got), cf32{});
  });
  ch.capture_field(1 << 20);
  io::Srx1Writer w(out, io::SampleFormat::u12, static_cast<std::uint64_t>(cfg.channel.adc_rate),
                   Rational{static_cast<std::uint32_t>(std::lround(cfg.channel.adc_rate / cfg.tx.baud)), 1});
  for (std::size_t b = 0; b < n_buffers; ++b) {
    const auto buf = ch.next_buffer();
    w.write(std::span<const std::uint16_t>(buf.samples));
  }
  w.close();
  const auto& st = ch.stats();
  const double measured = metrics::measure_osnr(ch.captured_field(), cfg.channel.field_rate, {}, ch.captured_clean_field());
  io::write_sidecar(out, {{"kind", "adc_codes"},
                          {"buffers", n_buffers},
                          {"format", cfg.format().name()},
                          {"clip_fraction", st.clip_fraction()},
                          {"clipped", st.clipped},
                          {"osnr_db_requested", num(cfg.channel.osnr_db)},
                          {"osnr_db_realized", num(st.realized_osnr_db(cfg.channel.field_rate))},
                          {"osnr_db_measured", num(measured)},
                          {"adc_gain", st.adc_gain},
                          {"adc_offset", st.adc_offset},
                          {"config", config_json(cfg)}});
  std::cout << "wrote " << n_buffers << " ADC buffers to " << out << " (clip fraction " << st.clip_fraction()
            << ", measured OSNR " << measured << " dB)\n";
  return kExitOk;
}

struct RxOutputs {
  std::string bits, report, eye, constellation, budget;
};

void write_bits(const fs::path& p, const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  std::ofstream o(p, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + p.string());
  o.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  io::write_sidecar(p, {{"kind", "bits"}, {"n_bits", bits.size()}, {"packing", "msb-first"}});
}

json link_json(const harness::RunConfig& cfg, const harness::LinkResult& r) {
  json j = {{"format", cfg.format().name()},
            {"bits_counted", r.report.bits_counted},
            {"bit_errors", r.report.bit_errors},
            {"ber", num(r.report.ber())},
            {"q_db", num(r.report.q_db())},
            {"evm_db", num(r.report.evm_db())},
            {"osnr_db_measured", num(r.report.osnr_db_measured)},
            {"cspr_db_measured", num(r.report.cspr_db_measured)},
            {"buffers", r.buffers},
            {"frames_counted", r.frames_counted},
            {"resyncs", r.resyncs},
            {"clamped_samples", r.clamped_samples},
            {"realtime_ratio", r.budget.realtime_ratio()},
            {"mean_processing_s", r.budget.mean_processing_s()},
            {"streams", cfg.streams}};
  if (cfg.is_imdd()) {
    j["thresholds"] = r.calib.thresholds;
    j["final_slip"] = r.final_slip;
    j["measured_ppm"] = num(r.measured_ppm);
  } else {
    j["dc_offset"] = r.calib.dc_offset;
  }
  json q = json::array();
  for (double v : r.report.window_q()) q.push_back(num(v));
  j["window_q_db"] = q;
  return j;
}

/// Shared by `rx`: receiver over an SRX1 code file.
int cmd_rx(const Common& c, const std::string& in, const RxOutputs& outs) {
  const auto cfg = load(c);
  io::Srx1Reader reader(in);
  const auto& h = reader.header();
  if (h.format != io::SampleFormat::u12) throw io::FormatError("rx input must be a real-u12 code file");
  if (static_cast<double>(h.sample_rate_hz) != cfg.channel.adc_rate) throw io::FormatError("code file rate differs from adc_rate");
  std::uint64_t seq = 0;
  auto next = [&]() -> std::optional<CodeBuffer> {
    if (reader.remaining() < kBufferSamples) return std::nullopt;
    CodeBuffer b;
    b.sample_rate = cfg.channel.adc_rate;
    b.samples_per_symbol = h.samples_per_symbol;
    b.sequence_index = seq++;
    reader.read(kBufferSamples, b.samples);
    return b;
  };
  auto first = next();
  if (!first) throw io::FormatError("code file holds less than one 2^22-sample buffer");

  std::vector<std::uint8_t> all_bits;
  std::vector<float> eye_wave;
  std::vector<cf32> const_points;
  harness::LinkOptions opt;
  opt.buffers = static_cast<std::size_t>(h.n_samples / kBufferSamples);
  opt.keep_symbols = !outs.eye.empty() || !outs.constellation.empty();
  opt.on_frame = [&](const rx::SymbolFrame& f, bool counted) {
    if (!outs.bits.empty()) all_bits.insert(all_bits.end(), f.bits.begin(), f.bits.end());
    if (counted && eye_wave.empty() && !f.waveform.empty()) eye_wave = f.waveform;
    if (counted && const_points.empty() && !f.symbols.empty() && !cfg.is_imdd()) {
      const_points.assign(f.symbols.begin(), f.symbols.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(f.symbols.size(), 100000)));
    }
  };
  harness::LinkResult res;
  const auto meta = io::read_sidecar(in);
  if (meta.contains("osnr_db_measured")) {
    const auto& v = meta["osnr_db_measured"];
    if (v.is_number()) res.report.osnr_db_measured = v.get<double>();
    if (v.is_string() && v.get<std::string>() == "inf") res.report.osnr_db_measured = std::numeric_limits<double>::infinity();
  }
  harness::run_receiver(cfg, std::move(*first), next, opt, res);

  const json j = link_json(cfg, res);
  if (!outs.report.empty()) write_text(outs.report, j.dump(2) + "\n");
  if (!outs.bits.empty()) write_bits(outs.bits, all_bits);
  if (!outs.budget.empty()) write_text(outs.budget, res.budget.to_csv());
  if (!outs.eye.empty()) {
    if (!cfg.is_imdd()) throw harness::ConfigError("eye diagrams are produced by the PAM (IMDD) chain");
    write_text(outs.eye, metrics::eye_diagram(eye_wave).to_csv());
  }
  if (!outs.constellation.empty()) {
    if (cfg.is_imdd()) throw harness::ConfigError("constellation dumps are produced by the QAM (KK) chain");
    const auto d = metrics::constellation_dump(const_points, cfg.format());
    write_text(outs.constellation, d.points_csv());
    write_text(outs.constellation + ".clusters.csv", d.clusters_csv());
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_sweep(const Common& c, const std::string& out) {
  const auto cfg = load(c);
  const auto pts = harness::run_sweep(cfg, [&](const harness::SweepPoint& p) {
    std::cerr << cfg.sweep.axis << " " << p.value << ": Q " << p.q_db << " dB, " << p.errors << "/" << p.bits << " bits"
              << (p.cached ? " (cached)" : "") << (p.status == "ok" ? "" : "  [" + p.status + "]") << "\n";
  });
  const auto csv = harness::sweep_csv(cfg.sweep.axis, pts);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(out, csv);
  }
  return kExitOk;
}

int cmd_trace(const Common& c, std::uint64_t symbols, const std::string& out) {
  const auto cfg = load(c);
  const auto t = harness::run_trace(cfg, symbols);
  const auto csv = harness::trace_csv(t);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(out, csv);
  }
  std::cerr << "windows " << t.window_q.size() << " of " << t.window_s * 1e3 << " ms, mean Q " << t.mean_q << " dB, stddev "
            << t.std_q << " dB, aggregate BER " << t.link.report.ber() << "\n";
  return kExitOk;
}

int cmd_probe(const Common& c, const std::string& out) {
  const auto cfg = load(c);
  harness::LinkOptions opt;
  opt.exclude_warmup = 3;
  const auto r = harness::run_link(cfg, opt);
  std::cout << r.budget.to_table();
  if (!out.empty()) write_text(out, r.budget.to_csv());
  return kExitOk;
}

int cmd_design_eq(const Common& c, const std::string& out) {
  const auto cfg = load(c);
  const auto eq = cfg.is_imdd() ? rx::design_imdd_equalizer(cfg.imdd, cfg.channel) : rx::design_kk_equalizer(cfg.kk, cfg.channel);
  std::ostringstream os;
  os.precision(10);
  os << "tap,re,im\n";
  const auto half = static_cast<long>(eq.taps_td.size() / 2);
  for (std::size_t i = 0; i < eq.taps_td.size(); ++i) {
    os << static_cast<long>(i) - half << "," << eq.taps_td[i].real() << "," << eq.taps_td[i].imag() << "\n";
  }
  std::ostringstream fr;
  fr.precision(10);
  fr << "bin,freq_hz,re,im,mag_db\n";
  for (std::size_t k = 0; k < kFftSize; ++k) {
    const auto b = signed_bin(k, kFftSize);
    const cf64 v(eq.taps_fd[k]);
    fr << b << "," << static_cast<double>(b) * cfg.channel.adc_rate / kFftSize << "," << v.real() << "," << v.imag() << ","
       << lin_to_db(std::max(std::norm(v), 1e-30)) << "\n";
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_text(out, os.str());
    write_text(out + ".response.csv", fr.str());
  }
  std::cerr << eq.taps_td.size() << " taps (" << (cfg.is_imdd() ? "IMDD" : "KK") << ")\n";
  return kExitOk;
}

int cmd_calibrate(const Common& c, const std::string& out) {
  const auto cfg = load(c);
  channel::ChannelStream ch(cfg.tx, cfg.channel);
  const auto warm = ch.next_buffer();
  json j = {{"format", cfg.format().name()}};
  if (cfg.is_imdd()) {
    const auto eq = rx::design_imdd_equalizer(cfg.imdd, cfg.channel);
    const auto cal = harness::calibrate_imdd(cfg, eq, warm);
    j["thresholds"] = cal.thresholds;
    std::ostringstream os;
    for (std::size_t i = 0; i < cal.thresholds.size(); ++i) os << (i ? "," : "") << cal.thresholds[i];
    std::cout << "imdd.thresholds=" << os.str() << "\n";
  } else {
    const auto eq = rx::design_kk_equalizer(cfg.kk, cfg.channel);
    const auto cal = harness::calibrate_kk(cfg, eq, warm);
    j["dc_offset"] = cal.dc_offset;
    j["best_evm_db"] = cal.dc_best_evm_db;
    json curve = json::array();
    for (const auto& [off, evm] : cal.dc_curve) curve.push_back({{"offset", off}, {"evm_db", num(evm)}});
    j["curve"] = curve;
    std::cout << "kk.dc_offset=" << cal.dc_offset << "  (EVM " << cal.dc_best_evm_db << " dB)\n";
  }
  if (!out.empty()) write_text(out, j.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"srx: streaming optical receiver toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string out, in;
  std::uint64_t samples = 0, symbols = 0;
  RxOutputs rx_out;

  auto* tx = app.add_subcommand("tx", "generate a transmitter field file (complex-f32)");
  add_common(tx, common);
  tx->add_option("-o,--out", out, "output SRX1 file")->required();
  tx->add_option("--samples", samples, "field samples (default: enough for run.buffers ADC buffers)");

  auto* chn = app.add_subcommand("channel", "apply the channel to a field file, write 12-bit ADC codes");
  add_common(chn, common);
  chn->add_option("-i,--in", in, "input field file")->required()->check(CLI::ExistingFile);
  chn->add_option("-o,--out", out, "output code file")->required();

  auto* rxc = app.add_subcommand("rx", "run the receiver chain on a code file");
  add_common(rxc, common);
  rxc->add_option("-i,--in", in, "input code file")->required()->check(CLI::ExistingFile);
  rxc->add_option("--bits", rx_out.bits, "decoded bits (packed, MSB first)");
  rxc->add_option("--report", rx_out.report, "metrics report (JSON)");
  rxc->add_option("--eye", rx_out.eye, "eye diagram histogram CSV (PAM)");
  rxc->add_option("--constellation", rx_out.constellation, "constellation points CSV (QAM)");
  rxc->add_option("--budget", rx_out.budget, "per-stage timing CSV");

  auto* sw = app.add_subcommand("sweep", "Q versus OSNR, CSPR or clock offset");
  add_common(sw, common);
  sw->add_option("-o,--out", out, "CSV output (default stdout)");

  auto* tr = app.add_subcommand("trace", "continuous run, windowed Q trace");
  add_common(tr, common);
  tr->add_option("--symbols", symbols, "symbols after warm-up")->required();
  tr->add_option("-o,--out", out, "CSV output (default stdout)");

  auto* pr = app.add_subcommand("probe", "throughput probe: realtime ratio and stage breakdown");
  add_common(pr, common);
  pr->add_option("-o,--out", out, "budget CSV");

  auto* de = app.add_subcommand("design-eq", "static equalizer taps and response");
  add_common(de, common);
  de->add_option("-o,--out", out, "taps CSV (response goes to <out>.response.csv)");

  auto* ca = app.add_subcommand("calibrate", "PAM thresholds or KK DC offset from one buffer");
  add_common(ca, common);
  ca->add_option("-o,--out", out, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*tx) return cmd_tx(common, out, samples);
    if (*chn) return cmd_channel(common, in, out);
    if (*rxc) return cmd_rx(common, in, rx_out);
    if (*sw) return cmd_sweep(common, out);
    if (*tr) return cmd_trace(common, symbols, out);
    if (*pr) return cmd_probe(common, out);
    if (*de) return cmd_design_eq(common, out);
    if (*ca) return cmd_calibrate(common, out);
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const io::FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const metrics::SyncError& e) {
    std::cerr << "sync failure: " << e.what() << "\n";
    return kExitSync;
  } catch (const harness::CalibrationError& e) {
    std::cerr << "calibration failure: " << e.what() << "\n";
    return kExitSync;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
