#include <gtest/gtest.h>

#include <random>

#include "../common/wl_oracle.hpp"
#include "srx/rx/kk.hpp"
#include "test_util.hpp"

using namespace srx;
using namespace srx::rx;

namespace {

const tx::ModulationFormat kQpsk{tx::Family::qam, 4}, kQam16{tx::Family::qam, 16};

std::vector<cf64> random_symbols(const tx::ModulationFormat& fmt, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pts = fmt.constellation();
  std::vector<cf64> s(n);
  for (auto& v : s) v = pts[rng() % pts.size()];
  return s;
}

/// Baseband QAM waveform at 4 GSa/s (1 GBd, 1% RRC), trimmed to the symbol span.
std::vector<cf64> baseband(std::span<const cf64> syms) {
  auto cfg = tx::TxConfig::defaults_for(kQam16);
  cfg.dac_rate = 4e9;
  const auto w = tx::shape_waveform(syms, cfg);
  const std::size_t half = tx::tx_pulse(cfg).size() / 2;
  std::vector<cf64> out(syms.size() * 4);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cf64(w.samples[half + i]);
  return out;
}

/// Single-sideband field A + s*exp(j*2*pi*f_c*n/fs) at the given carrier-to-signal ratio.
std::vector<cf64> ssb_field(const std::vector<cf64>& s, double cspr_db, double fc = 0.547e9) {
  double p = 0.0;
  for (const auto& v : s) p += std::norm(v);
  p /= double(s.size());
  const double a = std::sqrt(p * db_to_lin(cspr_db));
  std::vector<cf64> e(s.size());
  for (std::size_t n = 0; n < s.size(); ++n) e[n] = a + s[n] * std::polar(1.0, kTwoPi * std::fmod(fc / 4e9 * double(n), 1.0));
  return e;
}

std::vector<float> intensity(const std::vector<cf64>& e) {
  std::vector<float> i(e.size());
  for (std::size_t n = 0; n < e.size(); ++n) i[n] = static_cast<float>(std::norm(e[n]));
  return i;
}

/// Full KK reconstruction of a usable prefix; out[i] belongs to input sample 256 + i.
std::vector<cf32> reconstruct(const std::vector<float>& samples, double dc) {
  const auto fe = kk_frontend(samples, dc);
  const std::size_t usable = (samples.size() - kFftSize) / kBlockHop * kBlockHop + kFftSize;
  const auto phase = hilbert_phase(std::span<const float>(fe.half_log.data(), usable));
  return kk_reconstruct(std::span<const float>(fe.amplitude.data() + kValidBegin, phase.size()), phase, 0.547e9, 4e9,
                        static_cast<std::int64_t>(kValidBegin));
}

/// Reconstruction EVM (dB) against the downshifted data signal, carrier term removed.
double reconstruction_evm(double cspr_db) {
  const auto s = baseband(random_symbols(kQam16, 1 << 15, 11));
  const auto e = ssb_field(s, cspr_db);
  const auto out = reconstruct(intensity(e), 0.0);
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 2048; i + 2048 < out.size(); ++i) {
    const std::size_t n = i + kValidBegin;
    const cf64 want = e[n] * std::polar(1.0, -kTwoPi * std::fmod(0.547e9 / 4e9 * double(n), 1.0));
    err += std::norm(cf64(out[i]) - want);
    ref += std::norm(s[n]);
  }
  return lin_to_db(err / ref);
}

StaticEqualizer flat_kk_equalizer() {
  EqDesignProblem pb;
  pb.channel.assign(kFftSize, 1.0);
  pb.target = matched_rrc_target(RrcSpec{0.01, 1e9, 256}, 4e9);
  pb.weight.assign(kFftSize, 1.0);
  const double carrier_bin = -0.547e9 / 4e9 * kFftSize;
  for (std::size_t k = 0; k < kFftSize; ++k) {
    if (std::abs(double(signed_bin(k, kFftSize)) - carrier_bin) < 3.0) pb.weight[k] = 1e3;
  }
  pb.n_taps = 203;
  pb.lambda = 1e-4;
  pb.real_taps = false;
  return design_static_equalizer(pb);
}

}  // namespace

TEST(KkFrontend, Examples) {
  const std::vector<float> four = {4.0f};
  auto fe = kk_frontend(four, 0.0);
  EXPECT_FLOAT_EQ(fe.amplitude[0], 2.0f);
  EXPECT_NEAR(fe.half_log[0], std::log(2.0), 1e-6);
  const std::vector<float> zero = {0.0f};
  fe = kk_frontend(zero, 1.0);
  EXPECT_FLOAT_EQ(fe.amplitude[0], 1.0f);
  EXPECT_FLOAT_EQ(fe.half_log[0], 0.0f);
  const std::vector<float> bad = {1.0f, 0.5f, -0.2f};
  try {
    kk_frontend(bad, 0.0);
    FAIL() << "no throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos);
  }
}

TEST(Hilbert, CosineToSineAndConstantToZero) {
  std::vector<float> c(kFftSize + 8 * kBlockHop), one(c.size(), 3.0f);
  for (std::size_t n = 0; n < c.size(); ++n) c[n] = static_cast<float>(std::cos(kTwoPi * 32.0 * double(n) / 1024.0));
  const auto h = hilbert_phase(c);
  ASSERT_EQ(h.size(), 9 * kBlockHop);
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_NEAR(h[i], std::sin(kTwoPi * 32.0 * double(i + kValidBegin) / 1024.0), 1e-5);
  }
  for (float v : hilbert_phase(one)) EXPECT_NEAR(v, 0.0f, 1e-6);
  std::vector<float> bad(1500);
  EXPECT_THROW(hilbert_phase(bad), std::invalid_argument);
}

TEST(Hilbert, AppliedTwiceNegates) {
  // zero-mean, on-bin content so the block transform is exact
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  std::vector<float> x(kFftSize + 10 * kBlockHop, 0.0f);
  for (int t = 0; t < 40; ++t) {
    const double k = double(1 + rng() % 510), p = ph(rng);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] += static_cast<float>(std::cos(kTwoPi * k * double(n) / 1024.0 + p) / 10.0);
  }
  const auto h = hilbert_phase(x);
  const auto hh = hilbert_phase(h);
  for (std::size_t i = 0; i < hh.size(); ++i) EXPECT_NEAR(hh[i], -x[i + 2 * kValidBegin], 2e-5);
}

TEST(Reconstruct, ConstantBecomesToneAtMinusCarrier) {
  const std::size_t n = 1 << 20;
  std::vector<float> amp(n, 1.0f), phase(n, 0.0f);
  const std::int64_t first = 123456789;
  const auto out = kk_reconstruct(amp, phase, 0.547e9, 4e9, first);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; i += 997) {
    const long double c = 0.547e9L / 4e9L * static_cast<long double>(first + static_cast<std::int64_t>(i));
    const cf64 want = std::polar(1.0, -kTwoPi * static_cast<double>(c - std::floor(c)));
    worst = std::max(worst, std::abs(cf64(out[i]) - want));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Reconstruct, SsbQam16AtHighCsprMatchesTheField) {
  EXPECT_LT(reconstruction_evm(20.0), -25.0);
}

TEST(Reconstruct, ScalingTheIntensityScalesTheField) {
  const auto s = baseband(random_symbols(kQam16, 4096, 4));
  const auto i1 = intensity(ssb_field(s, 12.0));
  auto i4 = i1;
  for (auto& v : i4) v *= 4.0f;
  const auto a = reconstruct(i1, 0.0), b = reconstruct(i4, 0.0);
  for (std::size_t k = 0; k < a.size(); k += 7) EXPECT_NEAR(std::abs(cf64(b[k]) - 2.0 * cf64(a[k])), 0.0, 1e-4);
}

TEST(EqualizeDecimate, IdentityIsDecimationForInBandSignals) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  std::vector<cf32> x(kFftSize + 6 * kBlockHop);
  for (int t = 0; t < 30; ++t) {
    const double k = double(static_cast<int>(rng() % 500) - 250), p = ph(rng);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] += cf32(std::polar(0.1, kTwoPi * k * double(n) / 1024.0 + p));
  }
  const auto y = kk_static_equalize_decimate(x, StaticEqualizer::identity());
  ASSERT_EQ(y.size(), 7 * 256u);
  for (std::size_t j = 0; j < y.size(); ++j) EXPECT_NEAR(std::abs(y[j] - x[kValidBegin + 2 * j]), 0.0, 1e-5);
}

TEST(EqualizeDecimate, MatchesDirectConvolutionThenDecimation) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  std::vector<cf64> taps(203);
  for (auto& t : taps) t = cf64(g(rng), g(rng)) / 30.0;
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  std::vector<cf32> x(kFftSize + 10 * kBlockHop);
  for (int t = 0; t < 60; ++t) {
    const double k = double(static_cast<int>(rng() % 500) - 250), p = ph(rng);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] += cf32(std::polar(0.1, kTwoPi * k * double(n) / 1024.0 + p));
  }
  const auto y = kk_static_equalize_decimate(x, StaticEqualizer::from_taps(taps));
  const auto full = testutil::direct_centered_conv(taps, x);
  // keep the comparison away from the zero-padded ends of the direct convolution
  double e = 0.0, r = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    const std::size_t n = kValidBegin + 2 * j;
    if (n < 101 || n + 101 >= x.size()) continue;
    e += std::norm(cf64(y[j]) - full[n]);
    r += std::norm(full[n]);
  }
  EXPECT_LT(std::sqrt(e / r), 1e-5);
}

TEST(EqualizeDecimate, MatchedFilterIsIsiFreeOnQpsk) {
  // full-length matched filter: direct convolution of the transmit pulse with its match
  auto cfg = tx::TxConfig::defaults_for(kQpsk);
  cfg.dac_rate = 4e9;
  const auto p = tx::tx_pulse(cfg);
  const auto c = testutil::direct_centered_conv(p, p);
  const std::size_t mid = p.size() / 2;  // output is aligned with the input
  double worst = 0.0;
  for (std::size_t k = mid % 4; k < c.size(); k += 4) {
    if (k != mid) worst = std::max(worst, std::abs(c[k]) / std::abs(c[mid]));
  }
  EXPECT_LT(worst, 1e-3);

  // the 203-tap block filter approximates the same match over only ~50 symbols, so its
  // residual ISI is larger (the DDLMS stage removes it)
  EqDesignProblem pb;
  pb.channel.assign(kFftSize, 1.0);
  pb.target = matched_rrc_target(RrcSpec{0.01, 1e9, 256}, 4e9);
  pb.n_taps = 203;
  pb.lambda = 0.0;
  pb.real_taps = false;
  const auto eq = design_static_equalizer(pb);
  std::vector<cf64> impulse(8192, cf64{});
  impulse[4096] = 1.0;
  const auto w = baseband(impulse);
  std::vector<cf32> field(kFftSize + 14 * kBlockHop);
  for (std::size_t n = 0; n < field.size(); ++n) field[n] = cf32(w[n + 16384 - 4096]);  // pulse peak at sample 4096
  const auto y = kk_static_equalize_decimate(field, eq);
  // y[j] is input sample 256 + 2j: the peak is at j = 1920, symbol instants every 2
  const double peak = std::abs(cf64(y[1920]));
  double worst_block = 0.0;
  for (std::size_t j = 0; j < y.size(); j += 2) {
    if (j != 1920) worst_block = std::max(worst_block, std::abs(cf64(y[j])) / peak);
  }
  EXPECT_LT(worst_block, 1e-2);
}

TEST(Ddlms, SpikeIsAFixedPointOnAnIdealChannel) {
  const auto s = random_symbols(kQpsk, 5000, 7);
  std::vector<cf64> r(2 * s.size());
  for (std::size_t n = 0; n < s.size(); ++n) {
    r[2 * n] = s[n];
    r[2 * n + 1] = 0.5 * (s[n] + (n + 1 < s.size() ? s[n + 1] : cf64{}));
  }
  auto eq = WidelyLinearEq::spike(1e-3);
  const auto before = eq;
  const auto res = ddlms_equalize(r, eq, kQpsk);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(eq.w[i], before.w[i]);
    EXPECT_EQ(eq.v[i], before.v[i]);
  }
  for (std::size_t n = 0; n < s.size(); ++n) ASSERT_EQ(res.outputs[n], s[n]);
}

TEST(Ddlms, StaticRotationConverges) {
  const auto s = random_symbols(kQpsk, 10000, 8);
  const cf64 rot = std::polar(1.0, kPi / 8.0);
  std::vector<cf64> r(2 * s.size());
  for (std::size_t n = 0; n < s.size(); ++n) {
    r[2 * n] = rot * s[n];
    r[2 * n + 1] = rot * 0.5 * (s[n] + (n + 1 < s.size() ? s[n + 1] : cf64{}));
  }
  auto eq = WidelyLinearEq::spike(1e-3);
  const auto res = ddlms_equalize(r, eq, kQpsk);
  double e = 0.0, ref = 0.0;
  for (std::size_t n = 8000; n < 10000; ++n) {
    e += std::norm(res.outputs[n] - s[n]);
    ref += std::norm(s[n]);
  }
  EXPECT_LT(lin_to_db(e / ref), -30.0);
}

TEST(Ddlms, WidelyLinearCancelsIqImage) {
  const auto ch = wloracle::make_iq_channel(kQam16, 60000, 0.1, 30.0, 9);
  const std::span<const cf64> train(ch.symbols.data(), 5000);
  auto wl = WidelyLinearEq::spike(5e-4);
  ddlms_equalize(ch.samples, wl, kQam16, train);
  auto lin = WidelyLinearEq::spike(5e-4);
  lin.widely_linear = false;
  ddlms_equalize(ch.samples, lin, kQam16, train);
  const double irr_wl = wloracle::image_rejection_db(wloracle::taps_of(wl), 0.1);
  const double irr_lin = wloracle::image_rejection_db(wloracle::taps_of(lin), 0.1);
  EXPECT_GT(irr_wl, 25.0);
  EXPECT_LE(irr_lin, 20.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(lin.v[i], cf64{});
  // against the closed-form solutions
  const auto w_wl = wloracle::wiener(ch, true, 30000, 60000);
  const auto w_lin = wloracle::wiener(ch, false, 30000, 60000);
  EXPECT_NEAR(lin_to_db(wloracle::mse(wloracle::taps_of(wl), ch, 30000, 60000)), lin_to_db(wloracle::mse(w_wl, ch, 30000, 60000)), 1.0);
  EXPECT_NEAR(lin_to_db(wloracle::mse(wloracle::taps_of(lin), ch, 30000, 60000)), lin_to_db(wloracle::mse(w_lin, ch, 30000, 60000)), 1.0);
  EXPECT_NEAR(irr_lin, wloracle::image_rejection_db(w_lin, 0.1), 1.0);
}

TEST(Ddlms, DivergenceIsDetected) {
  const auto s = random_symbols(kQpsk, 2000, 10);
  std::vector<cf64> r(2 * s.size());
  for (std::size_t n = 0; n < s.size(); ++n) r[2 * n] = r[2 * n + 1] = 50.0 * s[n];
  auto eq = WidelyLinearEq::spike(0.5);
  try {
    ddlms_equalize(r, eq, kQpsk);
    FAIL() << "no throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}

TEST(DcOffset, OptimumRestoresTheRemovedMean) {
  KkConfig cfg;
  const auto ref = reference_symbols(cfg.format, cfg.prbs_order, cfg.prbs_seed);
  std::vector<cf64> syms(40000);  // longer than one PRBS period, wraps
  for (std::size_t i = 0; i < syms.size(); ++i) syms[i] = ref[i % ref.size()];
  const auto e = ssb_field(baseband(syms), 11.0);
  const auto i_dc = intensity(e);
  double m = 0.0;
  for (float v : i_dc) m += v;
  m /= double(i_dc.size());
  auto i_ac = i_dc;
  for (auto& v : i_ac) v = static_cast<float>(v - m);
  const auto eq = flat_kk_equalizer();
  const auto ac = optimize_dc_offset(i_ac, cfg, eq);
  const double step = ac.curve.size() > 1 ? (3.0 - 1e-3) * (*std::max_element(i_ac.begin(), i_ac.end()) -
                                                            *std::min_element(i_ac.begin(), i_ac.end())) / 23.0
                                          : 0.0;
  EXPECT_NEAR(ac.best, m, step);
  EXPECT_LT(ac.best_evm_db, -20.0);
  const auto dc = optimize_dc_offset(i_dc, cfg, eq);
  EXPECT_NEAR(dc.best, 0.0, step);
}
