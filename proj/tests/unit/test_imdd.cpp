#include <gtest/gtest.h>

#include <boost/math/special_functions/erf.hpp>
#include <random>

#include "srx/rx/imdd.hpp"
#include "srx/tx/txgen.hpp"
#include "test_util.hpp"

using namespace srx;
using namespace srx::rx;

namespace {

const tx::ModulationFormat kPam2{tx::Family::pam, 2}, kPam4{tx::Family::pam, 4}, kPam8{tx::Family::pam, 8};

/// PAM waveform rendered at 8 samples per symbol (2 GBd at 16 GSa/s) from random symbols.
std::vector<float> render8(const tx::ModulationFormat& fmt, std::size_t n_sym, std::uint64_t seed) {
  auto cfg = tx::TxConfig::defaults_for(fmt);
  cfg.dac_rate = 16e9;
  std::mt19937_64 rng(seed);
  std::vector<cf64> s(n_sym);
  for (auto& v : s) v = tx::ModulationFormat::level(static_cast<unsigned>(rng() % fmt.order()), fmt.order());
  const auto w = tx::shape_waveform(s, cfg);
  std::vector<float> out(w.samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w.samples[i].real();
  return out;
}

/// 2 sps decimation of an 8 sps waveform starting at sub-sample offset o (quarter samples).
/// Symbol k peaks at 8 sps index k*8 + half, i.e. 2 sps index 2k + half/4.
std::vector<float> decimate(const std::vector<float>& x8, std::size_t first, std::size_t n) {
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x8[first + 4 * i];
  return out;
}

}  // namespace

TEST(StaticEq, IdentityAndDelay) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  std::vector<float> x(kFftSize);
  for (auto& v : x) v = g(rng);
  const auto s = fft_forward(x);
  const auto same = static_fd_equalize(s, StaticEqualizer::identity());
  for (std::size_t k = 0; k < kFftSize; ++k) EXPECT_NEAR(std::abs(same.bins[k] - s.bins[k]), 0.0, 1e-6);
  const std::vector<double> delay = {0.0, 0.0, 1.0};  // centered: tap 2 is a delay of one sample
  const auto d = static_fd_equalize(s, StaticEqualizer::from_real_taps(delay));
  for (std::size_t k = 1; k < 100; ++k) {
    const cf64 ratio = cf64(d.bins[k]) / cf64(s.bins[k]);
    EXPECT_NEAR(std::abs(ratio - std::polar(1.0, -kTwoPi * double(k) / 1024.0)), 0.0, 1e-5);
  }
}

TEST(StaticEq, BlockPathMatchesDirectConvolution) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> taps(503);
  for (auto& t : taps) t = g(rng) / 20.0;
  const auto eq = StaticEqualizer::from_real_taps(taps);
  std::vector<float> x(512 * 33);
  for (auto& v : x) v = static_cast<float>(g(rng));
  std::vector<float> y;
  for (std::size_t b = 0; b + 1 < x.size() / 512; ++b) {
    const auto spec = static_fd_equalize(fft_forward(std::span<const float>(x).subspan(b * 512, 1024)), eq);
    const auto t = fft_inverse(spec, 1024);
    for (std::size_t i = kValidBegin; i < kValidEnd; ++i) y.push_back(t[i].real());
  }
  EXPECT_LT(testutil::rel_err(y, testutil::direct_centered_conv(taps, x), 256), 1e-5);
}

TEST(EqDesign, FlatChannelGivesMatchedRrc) {
  EqDesignProblem pb;
  pb.channel.assign(kFftSize, 1.0);
  const RrcSpec rrc{0.5, 2e9, 32};
  pb.target = matched_rrc_target(rrc, 4e9);
  pb.lambda = 0.0;
  pb.n_taps = 503;
  const auto eq = design_static_equalizer(pb);
  const auto ref = rrc_filter_taps(rrc, 4e9, 503);
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(eq.taps_td[i] - ref[i]));
  EXPECT_LT(worst, 1e-4);
  EXPECT_TRUE(eq.is_real());
}

TEST(EqDesign, LowpassChannelInverseRisesAndMatchesPerBinMmse) {
  channel::ChannelConfig ch;
  ImddConfig cfg;
  const auto eq = design_imdd_equalizer(cfg, ch);
  const channel::ElectricalResponse h(ch);
  const auto target = matched_rrc_target(RrcSpec{cfg.rolloff, cfg.baud, 32}, ch.adc_rate);
  double prev = 0.0;
  double max_h = 0.0;
  for (std::size_t k = 0; k < kFftSize; ++k) max_h = std::max(max_h, std::norm(h(bin_frequency(k, ch.adc_rate))));
  const double lam = cfg.eq_lambda * max_h;
  // inside the flat part of the target (|f| < 0.5 GHz) the inverse rises with f
  for (std::size_t k = 0; k <= 128; k += 8) {
    const double mag = std::abs(cf64(eq.taps_fd[k]));
    if (k > 0) {
      EXPECT_GT(mag, prev) << k;
    }
    prev = mag;
    // closed-form per-bin MMSE oracle conj(H) T / (|H|^2 + lambda)
    const cf64 hk = h(bin_frequency(k, ch.adc_rate));
    const cf64 oracle = std::conj(hk) * target[k] / (std::norm(hk) + lam);
    EXPECT_NEAR(std::abs(cf64(eq.taps_fd[k]) - oracle) / std::abs(oracle), 0.0, 0.03) << k;
  }
}

TEST(EqDesign, HugeRegularizationGivesZeroTaps) {
  EqDesignProblem pb;
  pb.channel.assign(kFftSize, 1.0);
  pb.target = matched_rrc_target(RrcSpec{0.5, 2e9, 32}, 4e9);
  pb.lambda = 1e12;
  pb.n_taps = 101;
  const auto eq = design_static_equalizer(pb);
  for (const auto& t : eq.taps_td) EXPECT_LT(std::abs(t), 1e-9);
}

TEST(ClockPhase, OnSymbolSamplingGivesZeroAndEyeOracleAgrees) {
  const auto x8 = render8(kPam2, 40000, 3);
  const std::size_t half = x8.size() - (40000 - 1) * 8;  // pulse length
  const std::size_t peak0 = half / 2;
  // oracle: least-squares fit of the on-grid samples to the known symbols, for each of
  // the 4 sub-sample offsets; the residual is smallest at the pulse peak
  std::mt19937_64 rng(3);
  std::vector<double> sym(40000);
  for (auto& v : sym) v = tx::ModulationFormat::level(static_cast<unsigned>(rng() % 2), 2);
  int best = -1;
  double best_res = 1e300;
  for (int o = 0; o < 4; ++o) {
    const auto x2 = decimate(x8, peak0 + 2000 * 8 + o, 40000);
    double xs = 0.0, ss = 0.0, xx = 0.0;
    for (std::size_t i = 0; i < x2.size(); i += 2) {
      const double s = sym[2000 + i / 2];
      xs += x2[i] * s;
      ss += s * s;
      xx += double(x2[i]) * x2[i];
    }
    const double res = xx - xs * xs / ss;
    if (res < best_res) {
      best_res = res;
      best = o;
    }
  }
  EXPECT_EQ(best, 0);
  // estimator, vector-averaged over blocks
  for (int o = 0; o < 4; ++o) {
    const auto x2 = decimate(x8, peak0 + 2000 * 8 + o, 60000);
    cf64 acc = 0.0;
    for (std::size_t b = 0; b + 1024 <= x2.size(); b += 512) {
      acc += estimate_clock_phase(fft_forward(std::span<const float>(x2).subspan(b, 1024)), 0.5).acc;
    }
    // a delay of d samples rotates arg(C) by -pi*d; offset o advances by o/4 samples
    const double want = kPi * o / 4.0;
    double err = std::arg(acc) - want;
    err -= kTwoPi * std::round(err / kTwoPi);
    EXPECT_NEAR(err, 0.0, 5e-3) << o;  // 5e-3 rad is under 1e-3 symbol
  }
}

TEST(ClockPhase, OneSampleDelayIsHalfSymbol) {
  const auto x8 = render8(kPam4, 30000, 4);
  const auto a = decimate(x8, 1000 * 8, 40000);
  const auto b = decimate(x8, 1000 * 8 - 4, 40000);  // one 2 sps sample later
  cf64 ca = 0.0, cb = 0.0;
  for (std::size_t s = 0; s + 1024 <= a.size(); s += 512) {
    ca += estimate_clock_phase(fft_forward(std::span<const float>(a).subspan(s, 1024)), 0.5).acc;
    cb += estimate_clock_phase(fft_forward(std::span<const float>(b).subspan(s, 1024)), 0.5).acc;
  }
  const double tau_a = -std::arg(ca) / kTwoPi, tau_b = -std::arg(cb) / kTwoPi;
  double d = tau_b - tau_a;
  d -= std::round(d);  // tau is defined modulo one symbol
  EXPECT_NEAR(std::abs(d), 0.5, 2e-3);
}

TEST(ClockPhase, CircularShiftRotation) {
  const auto x8 = render8(kPam4, 20000, 5);
  const auto x2 = decimate(x8, 4000, 1024);
  const auto base = estimate_clock_phase(fft_forward(x2), 0.5).acc;
  for (int d : {1, 2, 3}) {
    std::vector<float> r(1024);
    for (std::size_t i = 0; i < 1024; ++i) r[(i + static_cast<std::size_t>(d)) % 1024] = x2[i];
    const auto c = estimate_clock_phase(fft_forward(r), 0.5).acc;
    double rot = std::arg(c / base) + kPi * d;
    rot -= kTwoPi * std::round(rot / kTwoPi);
    EXPECT_NEAR(rot, 0.0, 1e-4) << d;
  }
  std::vector<float> z(1024, 0.0f);
  EXPECT_TRUE(estimate_clock_phase(fft_forward(z), 0.5).low_confidence);
}

namespace {

std::vector<ClockEstimate> from_angles(const std::vector<double>& a) {
  std::vector<ClockEstimate> e;
  for (double v : a) e.push_back({std::polar(1.0, v), false});
  return e;
}

}  // namespace

TEST(AverageUnwrap, ConstantAndWrap) {
  ClockPhaseTrack t(105);
  auto out = t.push(from_angles(std::vector<double>(400, 0.3)));
  const auto rest = t.flush();
  out.insert(out.end(), rest.begin(), rest.end());
  ASSERT_EQ(out.size(), 400u);
  for (double v : out) EXPECT_NEAR(v, 0.3, 1e-12);

  ClockPhaseTrack w(1);
  auto o = w.push(from_angles({3.1, -3.1}));
  ASSERT_EQ(o.size(), 2u);
  EXPECT_NEAR(o[0], 3.1, 1e-12);
  EXPECT_NEAR(o[1], 3.1832, 1e-4);
}

TEST(AverageUnwrap, RampSlopeAndBoundaryIndependence) {
  // constant offset: the timing phase advances by a fixed step per block
  const double ppm = 30.5;
  const double step = -kTwoPi * 512.0 / 2.0 * ppm * 1e-6;  // radians per block: 256 symbols of drift per block
  std::vector<double> ang(20000);
  for (std::size_t i = 0; i < ang.size(); ++i) ang[i] = std::remainder(step * double(i) + 1.0, kTwoPi);
  const auto est = from_angles(ang);
  ClockPhaseTrack a(105);
  auto oa = a.push(est);
  // same stream in uneven pieces
  ClockPhaseTrack b(105);
  std::vector<double> ob;
  std::size_t pos = 0;
  for (std::size_t n : {1u, 52u, 53u, 8192u, 7u, 11695u}) {
    const auto part = b.push(std::span<const ClockEstimate>(est).subspan(pos, n));
    ob.insert(ob.end(), part.begin(), part.end());
    pos += n;
  }
  ASSERT_EQ(pos, est.size());
  ASSERT_EQ(oa.size(), ob.size());
  for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_EQ(oa[i], ob[i]);
  const double slope = (oa[15000] - oa[5000]) / 10000.0;
  EXPECT_NEAR(slope, step, 0.01 * std::abs(step));
  for (std::size_t i = 1; i < oa.size(); ++i) EXPECT_LE(std::abs(oa[i] - oa[i - 1]), kPi);
}

TEST(Extract, ZeroTauIsOnGridDecimation) {
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g;
  std::vector<float> x(1024);
  for (auto& v : x) v = g(rng);
  SlipState st;
  const auto s = clock_correct_extract(fft_forward(x), 0.0, st);
  ASSERT_EQ(s.size(), 256u);
  for (std::size_t t = 0; t < 256; ++t) EXPECT_NEAR(s[t], x[256 + 2 * t], 1e-5);
}

TEST(Extract, SlipsChangeTheSymbolCount) {
  std::vector<float> x(1024, 0.1f);
  const auto spec = fft_forward(x);
  SlipState st;
  EXPECT_EQ(clock_correct_extract(spec, 0.55, st).size(), 256u);  // inside the hysteresis band
  EXPECT_EQ(clock_correct_extract(spec, 0.65, st).size(), 255u);
  EXPECT_EQ(st.slip, 1);
  EXPECT_EQ(clock_correct_extract(spec, 0.45, st).size(), 256u);
  EXPECT_EQ(clock_correct_extract(spec, 0.0, st).size(), 257u);  // back across 0.5 below the slip
  EXPECT_EQ(st.slip, 0);
  EXPECT_EQ(clock_correct_extract(spec, -0.65, st).size(), 257u);
  EXPECT_EQ(st.slip, -1);
  EXPECT_THROW(clock_correct_extract(spec, 1.0, st), std::runtime_error);
}

TEST(Extract, ConstantOffsetEmissionRate) {
  const double ppm = 30.5;
  SlipState st;
  std::uint64_t count = 0;
  const std::size_t blocks = 2000000;
  for (std::size_t b = 0; b < blocks; ++b) {
    const double tau = -256.0 * ppm * 1e-6 * double(b);
    count += static_cast<std::uint64_t>(256 - update_slip(st, tau, 0.1).delta);
  }
  const double rate = double(count) / double(blocks);
  EXPECT_NEAR(rate, 256.0 * (1.0 + ppm * 1e-6), 256.0 * 1e-6);
}

TEST(Extract, HalfSampleDelayRecovered) {
  const auto x8 = render8(kPam4, 4000, 7);
  const std::size_t first = 500 * 8;
  const auto ideal = decimate(x8, first, 1024);
  const auto delayed = decimate(x8, first - 2, 1024);  // half a 2 sps sample later
  SlipState st;
  const auto s = clock_correct_extract(fft_forward(delayed), 0.25, st);  // 0.5 samples = 0.25 symbols
  ASSERT_EQ(s.size(), 256u);
  double e = 0.0;
  for (std::size_t t = 0; t < 256; ++t) e += std::pow(double(s[t]) - ideal[256 + 2 * t], 2);
  EXPECT_LT(std::sqrt(e / 256.0), 1e-3);
}

TEST(Normalize, Pam4Examples) {
  std::vector<float> s(1 << 16);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(tx::ModulationFormat::level(i % 4, 4));
  auto n = normalize_buffer(s, kPam4);
  EXPECT_NEAR(n.dc, 0.0, 1e-6);
  EXPECT_NEAR(n.amplitude, 1.0, 1e-3);
  for (auto& v : s) v += 0.2f;
  EXPECT_NEAR(normalize_buffer(s, kPam4).dc, 0.2, 1e-6);
  for (auto& v : s) v = (v - 0.2f) * 3.0f;
  EXPECT_NEAR(normalize_buffer(s, kPam4).amplitude, 3.0, 1e-3);
  std::vector<float> few(100, 1.0f);
  EXPECT_THROW(normalize_buffer(few, kPam4), std::invalid_argument);
  std::vector<float> flat(1 << 15, 1.0f);
  EXPECT_THROW(normalize_buffer(flat, kPam4), std::runtime_error);
}

TEST(Decide, NoiselessPam8AndTieBreak) {
  PamDecisionTable t;
  t.format = kPam8;
  t.thresholds = PamDecisionTable::ideal_thresholds(kPam8);
  std::vector<float> s;
  std::vector<std::uint8_t> bits;
  for (unsigned p = 0; p < 8; ++p) {
    s.push_back(static_cast<float>(kPam8.pam_level(p)));
    tx::write_pattern(p, 3, bits);
  }
  EXPECT_EQ(pam_decide(s, t).bits, bits);
  // a sample exactly on a threshold goes to the upper region
  EXPECT_EQ(pam_region(t.thresholds[3], t.thresholds), 4u);
  PamDecisionTable t4;
  t4.format = kPam4;
  t4.thresholds = {-2.0 / 3.0, 0.0, 2.0 / 3.0};
  const std::vector<float> zero = {0.0f};
  EXPECT_EQ(pam_decide(zero, t4).bits, (std::vector<std::uint8_t>{1, 1}));  // region 2 = +1/3 = "11"
}

TEST(Decide, Pam2AwgnMatchesClosedForm) {
  std::mt19937_64 rng(9);
  PamDecisionTable t;
  t.format = kPam2;
  t.thresholds = {0.0};
  for (double snr_db : {4.0, 7.0, 9.0}) {
    const double gamma = db_to_lin(snr_db);
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(gamma));
    const std::size_t n = 2'000'000;
    std::vector<float> s(n);
    std::vector<std::uint8_t> ref(n);
    for (std::size_t i = 0; i < n; ++i) {
      ref[i] = static_cast<std::uint8_t>(rng() & 1u);
      s[i] = static_cast<float>((ref[i] ? 1.0 : -1.0) + g(rng));
    }
    const auto d = pam_decide(s, t);
    std::uint64_t err = 0;
    for (std::size_t i = 0; i < n; ++i) err += d.bits[i] != ref[i];
    const double p = 0.5 * std::erfc(std::sqrt(gamma) / std::sqrt(2.0));
    const double sigma = std::sqrt(p * (1 - p) / double(n));
    EXPECT_NEAR(double(err) / double(n), p, 3.0 * sigma) << snr_db;
  }
}

TEST(Calibrate, ThresholdsFromLevels) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.02);
  std::vector<float> s(1 << 16);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(tx::ModulationFormat::level(rng() % 4, 4) + g(rng));
  const auto t = calibrate_thresholds(s, kPam4);
  const auto ideal = PamDecisionTable::ideal_thresholds(kPam4);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(t[i], ideal[i], 0.02);
}

TEST(Chain, RejectsBadConfigAndOutOfOrderBuffers) {
  ImddConfig bad;
  bad.avg_window = 104;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.eq_taps = 505;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  ImddChain chain(ImddConfig{}, StaticEqualizer::identity());
  CodeBuffer b;
  b.samples.assign(kBufferSamples, 2048);
  b.sequence_index = 1;
  EXPECT_THROW(chain.process(std::move(b)), std::logic_error);
}
