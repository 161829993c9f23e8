#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "srx/channel/channel.hpp"
#include "srx/rx/imdd.hpp"
#include "srx/rx/kk.hpp"
#include "srx/tx/txgen.hpp"

namespace srx::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One documented configuration key. `def` is the default as written in a config file;
/// "auto" means the value depends on the modulation format (see `note`).
struct ConfigKey {
  const char* section;
  const char* key;
  const char* def;
  const char* note;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"run", "format", "PAM4", "PAM2/4/8/16 (IMDD chain) or QAM4/16/64 (KK chain)"},
      {"run", "buffers", "4", "ADC buffers of 2^22 samples, warm-up included"},
      {"run", "warmup_buffers", "1", "leading buffers excluded from BER"},
      {"run", "window_ms", "21", "Q trace window length"},
      {"run", "capture_osnr", "true", "measure OSNR on the first 2^20 noise-loaded field samples"},
      {"tx", "baud", "auto", "2e9 for PAM, 1e9 for QAM"},
      {"tx", "rolloff", "auto", "0.5 for PAM, 0.01 for QAM"},
      {"tx", "dac_rate", "8e9", "field sample rate"},
      {"tx", "carrier_offset", "0.547e9", "QAM carrier to signal-center offset"},
      {"tx", "cspr_db", "auto", "6 for QAM4, 11 for QAM16/64"},
      {"tx", "span_symbols", "auto", "RRC truncation: 32 for PAM, 256 for QAM"},
      {"tx", "prbs_order", "15", "PRBS length 2^order - 1"},
      {"tx", "seed", "1", "PRBS seed"},
      {"channel", "osnr_db", "inf", "ASE loading, 12.5 GHz reference"},
      {"channel", "obpf_bw", "5e9", "optical band-pass width"},
      {"channel", "pd_bw", "1e9", "photodiode 3 dB bandwidth"},
      {"channel", "adc_bw", "1e9", "ADC front-end 3 dB bandwidth"},
      {"channel", "elec_noise_density", "8e-7", "receiver noise density per sqrt(Hz) before the ADC filter, mean photocurrent = 1"},
      {"channel", "adc_enob", "12", "ADC effective number of bits (noise at the quantizer input; >= adc_bits: off)"},
      {"channel", "clock_offset_ppm", "0", "static ADC clock offset"},
      {"channel", "ppm_triangle_amplitude", "0", "> 0 selects a triangle clock-offset profile"},
      {"channel", "ppm_triangle_period_s", "0.02", "triangle profile period"},
      {"channel", "adc_bits", "12", "ADC resolution"},
      {"channel", "adc_rate", "4e9", "ADC sample rate"},
      {"channel", "ac_coupled", "auto", "on for QAM, off for PAM"},
      {"channel", "ac_corner", "1e6", "AC-coupling corner frequency"},
      {"channel", "adc_rms_target", "0.25", "RMS of the first buffer relative to full scale"},
      {"channel", "seed", "7", "noise seed"},
      {"imdd", "eq_taps", "503", "static equalizer taps"},
      {"imdd", "eq_lambda", "1e-3", "equalizer design regularization"},
      {"imdd", "avg_window", "105", "clock-phase averaging window in blocks"},
      {"imdd", "slip_hysteresis", "0.1", "symbol-slip hysteresis in symbols"},
      {"imdd", "thresholds", "calibrate", "calibrate | ideal | comma-separated list"},
      {"kk", "eq_taps", "203", "static equalizer taps"},
      {"kk", "eq_lambda", "1e-4", "equalizer design regularization"},
      {"kk", "mu", "5e-4", "DDLMS step size"},
      {"kk", "train_symbols", "20000", "known-symbol training length"},
      {"kk", "widely_linear", "true", "enable the conjugate branch"},
      {"kk", "dc_offset", "calibrate", "calibrate | value in ADC units"},
      {"kk", "align_skip", "4096", "2 sps samples skipped before training alignment"},
      {"kk", "align_window", "8192", "symbols correlated for alignment"},
      {"pipeline", "streams", "5", "parallel streams"},
      {"sweep", "axis", "osnr", "osnr | cspr | clock_ppm"},
      {"sweep", "grid", "10,15,20,25,30", "comma list or start:step:stop"},
      {"sweep", "min_errors", "100", "stop a point after this many bit errors"},
      {"sweep", "max_bits", "4e7", "bit cap per point"},
      {"sweep", "cache_dir", "", "per-point result cache (empty: none)"},
  };
  return keys;
}

inline const ConfigKey* find_key(const std::string& section, const std::string& key) {
  for (const auto& k : config_schema()) {
    if (section == k.section && key == k.key) return &k;
  }
  return nullptr;
}

enum class ThresholdMode { calibrate, ideal, fixed };

struct RunSettings {
  std::size_t buffers = 4;
  std::size_t warmup_buffers = 1;
  double window_s = 21e-3;
  bool capture_osnr = true;
  ThresholdMode thresholds = ThresholdMode::calibrate;
  bool calibrate_dc = true;
};

struct SweepSettings {
  std::string axis = "osnr";
  std::vector<double> grid;
  std::uint64_t min_errors = 100;
  std::uint64_t max_bits = 40'000'000;
  std::string cache_dir;
};

struct RunConfig {
  tx::TxConfig tx;
  channel::ChannelConfig channel;
  rx::ImddConfig imdd;
  rx::KkConfig kk;
  std::size_t streams = 5;
  RunSettings run;
  SweepSettings sweep;
  boost::property_tree::ptree source;  // the settings as given

  [[nodiscard]] const tx::ModulationFormat& format() const { return tx.format; }
  [[nodiscard]] bool is_imdd() const { return tx.format.is_pam(); }
};

namespace detail {

inline double parse_double(const std::string& s, const std::string& what) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "inf" || v == "+inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double d = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(what + ": not a number: '" + s + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  const double d = parse_double(s, what);
  if (!(d >= 0.0) || d != std::floor(d) || d > 1.8e19) throw ConfigError(what + ": not a non-negative integer: '" + s + "'");
  return static_cast<std::uint64_t>(d);
}

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(what + ": not a boolean: '" + s + "'");
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

}  // namespace detail

/// "10,15,20" or "start:step:stop" (inclusive of stop within half a step).
inline std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> g;
  if (s.find(':') != std::string::npos) {
    std::vector<double> p;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ':')) p.push_back(detail::parse_double(detail::trim(tok), "sweep.grid"));
    if (p.size() != 3 || !(p[1] != 0.0)) throw ConfigError("sweep.grid: expected start:step:stop");
    const auto n = static_cast<long>(std::floor((p[2] - p[0]) / p[1] + 0.5));
    if (n < 0 || n > 10000) throw ConfigError("sweep.grid: empty or too long range");
    for (long i = 0; i <= n; ++i) g.push_back(p[0] + p[1] * static_cast<double>(i));
  } else {
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = detail::trim(tok);
      if (!tok.empty()) g.push_back(detail::parse_double(tok, "sweep.grid"));
    }
  }
  if (g.empty()) throw ConfigError("sweep.grid is empty");
  return g;
}

/// Rejects sections and keys that are not in the schema.
inline void check_keys(const boost::property_tree::ptree& pt) {
  for (const auto& [section, body] : pt) {
    if (!body.data().empty() && body.empty()) throw ConfigError("key '" + section + "' outside of a section");
    for (const auto& [key, value] : body) {
      if (!find_key(section, key)) throw ConfigError("unknown config key [" + section + "] " + key);
      (void)value;
    }
  }
}

/// KK checks that do not need the (possibly still uncalibrated) DC offset.
inline void KkCheck(const rx::KkConfig& kk) {
  rx::KkConfig k = kk;
  if (!std::isfinite(k.dc_offset)) k.dc_offset = 1.0;
  k.validate();
}

/// Builds typed configs from a property tree. Format-dependent defaults come from the
/// format first; explicit keys override them.
inline RunConfig build_config(const boost::property_tree::ptree& pt) {
  check_keys(pt);
  auto get = [&](const char* section, const char* key) -> std::optional<std::string> {
    const auto v = pt.get_optional<std::string>(boost::property_tree::ptree::path_type(std::string(section) + "/" + key, '/'));
    if (!v || detail::trim(*v) == "auto") return std::nullopt;  // "auto" keeps the format default
    return detail::trim(*v);
  };
  auto name = [](const char* s, const char* k) { return std::string(s) + "." + k; };
  auto num = [&](const char* s, const char* k, double& dst) {
    if (auto v = get(s, k)) dst = detail::parse_double(*v, name(s, k));
  };
  auto uint = [&](const char* s, const char* k, auto& dst) {
    if (auto v = get(s, k)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(detail::parse_uint(*v, name(s, k)));
  };
  auto boolean = [&](const char* s, const char* k, bool& dst) {
    if (auto v = get(s, k)) dst = detail::parse_bool(*v, name(s, k));
  };

  RunConfig c;
  c.source = pt;
  tx::ModulationFormat fmt{tx::Family::pam, 4};
  try {
    fmt = tx::ModulationFormat::parse(get("run", "format").value_or("PAM4"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("run.format: ") + e.what());
  }
  c.tx = tx::TxConfig::defaults_for(fmt);
  num("tx", "baud", c.tx.baud);
  num("tx", "rolloff", c.tx.rolloff);
  num("tx", "dac_rate", c.tx.dac_rate);
  num("tx", "carrier_offset", c.tx.carrier_offset);
  num("tx", "cspr_db", c.tx.cspr_db);
  uint("tx", "span_symbols", c.tx.span_symbols);
  uint("tx", "prbs_order", c.tx.prbs_order);
  uint("tx", "seed", c.tx.seed);

  auto& ch = c.channel;
  num("channel", "osnr_db", ch.osnr_db);
  num("channel", "obpf_bw", ch.obpf_bw);
  num("channel", "pd_bw", ch.pd_bw);
  num("channel", "adc_bw", ch.adc_bw);
  num("channel", "elec_noise_density", ch.elec_noise_density);
  num("channel", "adc_enob", ch.adc_enob);
  num("channel", "clock_offset_ppm", ch.clock_offset_ppm);
  num("channel", "ppm_triangle_amplitude", ch.ppm_triangle_amplitude);
  num("channel", "ppm_triangle_period_s", ch.ppm_triangle_period_s);
  uint("channel", "adc_bits", ch.adc_bits);
  num("channel", "adc_rate", ch.adc_rate);
  if (auto v = get("channel", "ac_coupled")) ch.ac_coupled = detail::parse_bool(*v, "channel.ac_coupled");
  num("channel", "ac_corner", ch.ac_corner);
  num("channel", "adc_rms_target", ch.adc_rms_target);
  uint("channel", "seed", ch.seed);
  ch.field_rate = c.tx.dac_rate;

  auto& im = c.imdd;
  im.format = fmt.is_pam() ? fmt : tx::ModulationFormat{tx::Family::pam, 4};
  im.baud = c.tx.baud;
  im.rolloff = c.tx.rolloff;
  im.adc_bits = ch.adc_bits;
  uint("imdd", "eq_taps", im.eq_taps);
  num("imdd", "eq_lambda", im.eq_lambda);
  uint("imdd", "avg_window", im.avg_window);
  num("imdd", "slip_hysteresis", im.slip_hysteresis);
  if (auto v = get("imdd", "thresholds")) {
    if (*v == "calibrate") {
      c.run.thresholds = ThresholdMode::calibrate;
    } else if (*v == "ideal") {
      c.run.thresholds = ThresholdMode::ideal;
    } else {
      c.run.thresholds = ThresholdMode::fixed;
      std::stringstream ss(*v);
      std::string tok;
      while (std::getline(ss, tok, ',')) im.thresholds.push_back(detail::parse_double(detail::trim(tok), "imdd.thresholds"));
    }
  }

  auto& kk = c.kk;
  kk.format = fmt.is_pam() ? tx::ModulationFormat{tx::Family::qam, 16} : fmt;
  kk.baud = c.tx.baud;
  kk.rolloff = c.tx.rolloff;
  kk.carrier_offset = c.tx.carrier_offset;
  kk.prbs_order = c.tx.prbs_order;
  kk.prbs_seed = c.tx.seed;
  kk.adc_bits = ch.adc_bits;
  uint("kk", "eq_taps", kk.eq_taps);
  num("kk", "eq_lambda", kk.eq_lambda);
  num("kk", "mu", kk.mu);
  uint("kk", "train_symbols", kk.train_symbols);
  boolean("kk", "widely_linear", kk.widely_linear);
  if (auto v = get("kk", "dc_offset"); v && *v != "calibrate") {
    kk.dc_offset = detail::parse_double(*v, "kk.dc_offset");
    c.run.calibrate_dc = false;
  }
  uint("kk", "align_skip", kk.align_skip);
  uint("kk", "align_window", kk.align_window);

  uint("pipeline", "streams", c.streams);

  uint("run", "buffers", c.run.buffers);
  uint("run", "warmup_buffers", c.run.warmup_buffers);
  if (auto v = get("run", "window_ms")) c.run.window_s = detail::parse_double(*v, "run.window_ms") * 1e-3;
  boolean("run", "capture_osnr", c.run.capture_osnr);

  c.sweep.axis = get("sweep", "axis").value_or("osnr");
  c.sweep.grid = parse_grid(get("sweep", "grid").value_or("10,15,20,25,30"));
  uint("sweep", "min_errors", c.sweep.min_errors);
  uint("sweep", "max_bits", c.sweep.max_bits);
  c.sweep.cache_dir = get("sweep", "cache_dir").value_or("");

  // validation
  try {
    c.tx.validate();
    ch.validate();
    if (c.is_imdd()) {
      im.validate();
    } else {
      KkCheck(kk);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.streams < 1) throw ConfigError("pipeline.streams must be >= 1");
  if (c.run.buffers <= c.run.warmup_buffers) throw ConfigError("run.buffers must exceed run.warmup_buffers");
  if (c.run.warmup_buffers < 1) throw ConfigError("run.warmup_buffers must be >= 1 (calibration uses buffer 0)");
  if (!(c.run.window_s > 0.0)) throw ConfigError("run.window_ms must be positive");
  if (c.sweep.axis != "osnr" && c.sweep.axis != "cspr" && c.sweep.axis != "clock_ppm") {
    throw ConfigError("sweep.axis must be osnr, cspr or clock_ppm");
  }
  return c;
}

inline boost::property_tree::ptree parse_ini_text(const std::string& text) {
  boost::property_tree::ptree pt;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  return pt;
}

inline boost::property_tree::ptree parse_ini_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini_text(ss.str());
}

/// Applies "section.key=value" on top of a tree.
inline void apply_setting(boost::property_tree::ptree& pt, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("expected section.key=value, got '" + assignment + "'");
  }
  const std::string section = detail::trim(assignment.substr(0, dot));
  const std::string key = detail::trim(assignment.substr(dot + 1, eq - dot - 1));
  if (!find_key(section, key)) throw ConfigError("unknown config key [" + section + "] " + key);
  pt.put(boost::property_tree::ptree::path_type(section + "/" + key, '/'), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig config_from_text(const std::string& text) { return build_config(parse_ini_text(text)); }

/// Markdown table of the schema (the defaults table in the README is this output).
inline std::string schema_markdown() {
  std::ostringstream os;
  os << "| section | key | default | meaning |\n|---|---|---|---|\n";
  for (const auto& k : config_schema()) os << "| " << k.section << " | " << k.key << " | " << k.def << " | " << k.note << " |\n";
  return os.str();
}

}  // namespace srx::harness
