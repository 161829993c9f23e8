#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "srx/harness/config.hpp"
#include "srx/harness/experiments.hpp"
#include "srx/io/srx1.hpp"

using namespace srx;
using namespace srx::harness;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("srx_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SRX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsMatchTheDocumentedValues) {
  const auto c = config_from_text("");
  EXPECT_EQ(c.format().name(), "PAM4");
  EXPECT_EQ(c.tx.baud, 2e9);
  EXPECT_EQ(c.tx.rolloff, 0.5);
  EXPECT_EQ(c.imdd.eq_taps, 503u);
  EXPECT_EQ(c.imdd.avg_window, 105u);
  EXPECT_EQ(c.streams, 5u);
  EXPECT_EQ(c.channel.adc_bits, 12u);
  EXPECT_EQ(c.channel.adc_rate, 4e9);
  EXPECT_EQ(kBufferSamples, std::size_t{1} << 22);
  const auto q = config_from_text("[run]\nformat = QAM16\n");
  EXPECT_EQ(q.tx.baud, 1e9);
  EXPECT_EQ(q.tx.rolloff, 0.01);
  EXPECT_EQ(q.tx.carrier_offset, 0.547e9);
  EXPECT_EQ(q.kk.eq_taps, 203u);
  EXPECT_EQ(q.tx.cspr_db, 11.0);
  EXPECT_EQ(config_from_text("[run]\nformat = QAM4\n").tx.cspr_db, 6.0);
  // every schema key parses at its documented default
  std::ostringstream ini;
  std::string section;
  for (const auto& k : config_schema()) {
    if (std::string(k.def).empty()) continue;
    if (section != k.section) ini << "[" << (section = k.section) << "]\n";
    ini << k.key << " = " << k.def << "\n";
  }
  EXPECT_NO_THROW(config_from_text(ini.str())) << ini.str();
}

TEST(Config, ReadmeTableIsTheSchema) {
  const auto readme = slurp(fs::path(SRX_SOURCE_DIR) / "README.md");
  EXPECT_NE(readme.find(schema_markdown()), std::string::npos) << "README defaults table is out of date";
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_text("[run]\nformt = PAM4\n"), ConfigError);
  EXPECT_THROW(config_from_text("[nosuch]\nx = 1\n"), ConfigError);
  EXPECT_THROW(config_from_text("[run]\nformat = PAM3\n"), ConfigError);
  EXPECT_THROW(config_from_text("[imdd]\neq_taps = 600\n"), ConfigError);
  EXPECT_THROW(config_from_text("[channel]\nosnr_db = banana\n"), ConfigError);
  EXPECT_THROW(config_from_text("[run]\nbuffers = 1\nwarmup_buffers = 1\n"), ConfigError);
  EXPECT_THROW(config_from_text("[kk]\neq_taps = 205\n[run]\nformat = QAM16\n"), ConfigError);
}

TEST(Config, SetOverridesAndGrids) {
  auto pt = parse_ini_text("[channel]\nosnr_db = 20\n");
  apply_setting(pt, "channel.osnr_db=25");
  apply_setting(pt, "sweep.grid=10:5:30");
  const auto c = build_config(pt);
  EXPECT_EQ(c.channel.osnr_db, 25.0);
  EXPECT_EQ(c.sweep.grid, (std::vector<double>{10, 15, 20, 25, 30}));
  EXPECT_THROW(apply_setting(pt, "channel.osnr=1"), ConfigError);
  EXPECT_THROW(apply_setting(pt, "osnr_db=1"), ConfigError);
  EXPECT_EQ(config_from_text("[sweep]\ngrid = 1, 2.5,4\n").sweep.grid, (std::vector<double>{1, 2.5, 4}));
  EXPECT_TRUE(std::isinf(config_from_text("[channel]\nosnr_db = inf\n").channel.osnr_db));
}

TEST(Config, SampleConfigsParse) {
  for (const auto& e : fs::directory_iterator(fs::path(SRX_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(build_config(parse_ini_file(e.path()))) << e.path();
  }
}

TEST(Srx1, RoundTripAllFormats) {
  const auto dir = temp_dir("srx1");
  std::mt19937_64 rng(1);
  std::vector<std::uint16_t> codes(5000);
  for (auto& c : codes) c = static_cast<std::uint16_t>(rng() % 4096);
  std::vector<float> f(3000);
  for (auto& v : f) v = static_cast<float>(rng() % 100000) / 7.0f;
  std::vector<cf32> z(2000);
  for (auto& v : z) v = cf32(float(rng() % 1000) / 3.0f, -float(rng() % 1000) / 9.0f);
  io::write_srx1<std::uint16_t>(dir / "a.srx", codes, 4'000'000'000ull, Rational{2, 1});
  io::write_srx1<float>(dir / "b.srx", f, 4'000'000'000ull, Rational{4, 1});
  io::write_srx1<cf32>(dir / "c.srx", z, 8'000'000'000ull, Rational{8, 1});
  io::Srx1Header h;
  EXPECT_EQ(io::read_srx1<std::uint16_t>(dir / "a.srx", &h), codes);
  EXPECT_EQ(h.sample_rate_hz, 4'000'000'000ull);
  EXPECT_EQ(h.samples_per_symbol.num, 2u);
  EXPECT_EQ(io::read_srx1<float>(dir / "b.srx"), f);
  EXPECT_EQ(io::read_srx1<cf32>(dir / "c.srx"), z);
  EXPECT_EQ(fs::file_size(dir / "a.srx"), 32u + 2u * codes.size());
  // reading with the wrong type is a format error
  EXPECT_THROW(io::read_srx1<float>(dir / "a.srx"), io::FormatError);
  io::write_sidecar(dir / "a.srx", {{"k", 1}});
  EXPECT_EQ(io::read_sidecar(dir / "a.srx")["k"], 1);
  fs::remove_all(dir);
}

TEST(Srx1, BadMagicAndTruncation) {
  const auto dir = temp_dir("srx1bad");
  std::vector<std::uint16_t> codes(100, 7);
  io::write_srx1<std::uint16_t>(dir / "a.srx", codes, 4'000'000'000ull, Rational{2, 1});
  auto bytes = slurp(dir / "a.srx");
  bytes[0] = 'X';
  std::ofstream(dir / "bad.srx", std::ios::binary) << bytes;
  EXPECT_THROW(io::read_srx1<std::uint16_t>(dir / "bad.srx"), io::FormatError);
  fs::resize_file(dir / "a.srx", 32 + 150);
  EXPECT_THROW(io::read_srx1<std::uint16_t>(dir / "a.srx"), io::FormatError);
  std::vector<std::uint16_t> over = {5000};
  EXPECT_THROW(io::write_srx1<std::uint16_t>(dir / "o.srx", over, 1, Rational{1, 1}), io::FormatError);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const auto dir = temp_dir("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("design-eq -o " + (dir / "taps.csv").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "taps.csv.response.csv"));
  EXPECT_EQ(run_cli("design-eq --set imdd.bogus=1"), 2);
  EXPECT_EQ(run_cli("design-eq --set imdd.eq_taps=1000"), 2);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("rx -i " + (dir / "taps.csv").string()), 2);  // not an SRX1 file
  // two buffers of random codes: nothing to synchronize to
  std::mt19937_64 rng(2);
  std::vector<std::uint16_t> codes(2 * kBufferSamples);
  for (auto& c : codes) c = static_cast<std::uint16_t>(1024 + rng() % 2048);
  io::write_srx1<std::uint16_t>(dir / "noise.srx", codes, 4'000'000'000ull, Rational{2, 1});
  EXPECT_EQ(run_cli("rx -n 2 -i " + (dir / "noise.srx").string()), 3);
  fs::remove_all(dir);
}

TEST(Cli, TxIsDeterministic) {
  const auto dir = temp_dir("tx");
  ASSERT_EQ(run_cli("tx -f QAM16 --samples 100000 -o " + (dir / "a.srx").string()), 0);
  ASSERT_EQ(run_cli("tx -f QAM16 --samples 100000 -o " + (dir / "b.srx").string()), 0);
  EXPECT_EQ(slurp(dir / "a.srx"), slurp(dir / "b.srx"));
  const auto z = io::read_srx1<cf32>(dir / "a.srx");
  EXPECT_EQ(z.size(), 100000u);
  fs::remove_all(dir);
}

TEST(Link, NoiselessPam4DecodesWithoutErrors) {
  auto cfg = config_from_text("[run]\nformat = PAM4\nbuffers = 2\n[channel]\nosnr_db = inf\nelec_noise_density = 0\n");
  const auto r = run_link(cfg);
  EXPECT_EQ(r.report.bits_counted, 2u * (kBufferSamples / 2));  // one counted buffer, 2 bits per symbol
  EXPECT_EQ(r.report.bit_errors, 0u);
  EXPECT_EQ(r.buffers, 2u);
}

TEST(Link, MeasuredClockOffsetMatchesTheChannel) {
  auto cfg = config_from_text("[run]\nformat = PAM4\nbuffers = 3\ncapture_osnr = false\n[channel]\nosnr_db = inf\nelec_noise_density = 0\nclock_offset_ppm = -20\n");
  const auto r = run_link(cfg);
  EXPECT_NEAR(r.measured_ppm, -20.0, 0.5);
  EXPECT_NEAR(double(r.final_slip), 20e-6 * 3.0 * double(kBufferSamples / 2), 3.0);  // symbols dropped
  EXPECT_EQ(r.report.bit_errors, 0u);
}

TEST(Link, StreamsDoNotChangeBits) {
  auto cfg = config_from_text("[run]\nformat = QAM4\nbuffers = 3\n[channel]\nosnr_db = 15\n");
  std::vector<std::uint8_t> a, b;
  LinkOptions o;
  o.on_frame = [&](const rx::SymbolFrame& f, bool) { a.insert(a.end(), f.bits.begin(), f.bits.end()); };
  cfg.streams = 1;
  const auto r1 = run_link(cfg, o);
  o.on_frame = [&](const rx::SymbolFrame& f, bool) { b.insert(b.end(), f.bits.begin(), f.bits.end()); };
  cfg.streams = 5;
  const auto r5 = run_link(cfg, o);
  EXPECT_EQ(a, b);
  EXPECT_EQ(r1.report.bit_errors, r5.report.bit_errors);
  EXPECT_GT(a.size(), 0u);
}

TEST(Sweep, CachedPointsAreReused) {
  const auto dir = temp_dir("sweep");
  auto cfg = config_from_text("[run]\nformat = PAM2\n[sweep]\ngrid = 8\nmax_bits = 1e6\ncache_dir = " + dir.string() + "\n");
  const auto first = run_sweep(cfg);
  ASSERT_EQ(first.size(), 1u);
  EXPECT_FALSE(first[0].cached);
  EXPECT_EQ(first[0].status, "ok");
  const auto second = run_sweep(cfg);
  EXPECT_TRUE(second[0].cached);
  EXPECT_EQ(second[0].errors, first[0].errors);
  EXPECT_EQ(second[0].bits, first[0].bits);
  const auto csv = sweep_csv("osnr", second);
  EXPECT_EQ(csv.rfind("axis,value,measured,bits,errors,ber,q_db,evm_db,buffers,status\n", 0), 0u);
  fs::remove_all(dir);
}
