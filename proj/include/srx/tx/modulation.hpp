#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srx/core/types.hpp"

namespace srx::tx {

enum class Family : std::uint8_t { pam, qam };

/// PAM-N (N in {2,4,8,16}) or square QAM-N (N in {4,16,64}), Gray mapped.
///
/// PAM levels are equally spaced with unit peak, level i = (2i - N + 1)/(N - 1), and
/// carry the bits gray(i) = i ^ (i >> 1), MSB first: PAM-4 maps 00,01,11,10 to
/// -1,-1/3,+1/3,+1. QAM splits the bits in halves (I first, then Q); each half picks
/// an axis level through the same Gray code with the sign flipped, so bit 0 maps to
/// the positive side and QAM-4 "00" is (1+j)/sqrt(2). QAM points have unit mean power.
class ModulationFormat {
 public:
  ModulationFormat() = default;
  ModulationFormat(Family family, unsigned order) : family_(family), order_(order) {
    const bool ok = family == Family::pam ? (order == 2 || order == 4 || order == 8 || order == 16)
                                          : (order == 4 || order == 16 || order == 64);
    if (!ok) throw std::invalid_argument("unsupported modulation order " + std::to_string(order));
    bits_ = static_cast<unsigned>(std::countr_zero(order));
    axis_levels_ = family == Family::pam ? order : (1u << (bits_ / 2));
    qam_scale_ = family == Family::qam ? 1.0 / std::sqrt(2.0 * (order - 1) / 3.0) : 1.0;
  }

  static ModulationFormat parse(const std::string& name) {
    auto digits = name.find_first_of("0123456789");
    if (digits == std::string::npos) throw std::invalid_argument("bad format name: " + name);
    std::string fam = name.substr(0, digits);
    for (auto& c : fam) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!fam.empty() && fam.back() == '-') fam.pop_back();
    const unsigned n = static_cast<unsigned>(std::stoul(name.substr(digits)));
    if (fam == "pam") return {Family::pam, n};
    if (fam == "qam") return {Family::qam, n};
    throw std::invalid_argument("bad format name: " + name);
  }

  [[nodiscard]] std::string name() const { return (family_ == Family::pam ? "PAM" : "QAM") + std::to_string(order_); }
  [[nodiscard]] Family family() const { return family_; }
  [[nodiscard]] unsigned order() const { return order_; }
  [[nodiscard]] unsigned bits_per_symbol() const { return bits_; }
  [[nodiscard]] unsigned axis_levels() const { return axis_levels_; }
  [[nodiscard]] bool is_pam() const { return family_ == Family::pam; }

  /// Unit-peak level for index i of an M-level axis.
  static double level(unsigned i, unsigned m) {
    return (2.0 * i - (m - 1.0)) / (m - 1.0);
  }
  static unsigned gray(unsigned i) { return i ^ (i >> 1); }
  static unsigned gray_inverse(unsigned g) {
    unsigned i = 0;
    for (; g != 0; g >>= 1) i ^= g;
    return i;
  }

  /// PAM level for a bit pattern (MSB first within `bits`).
  [[nodiscard]] double pam_level(unsigned pattern) const {
    return level(gray_inverse(pattern), axis_levels_);
  }

  [[nodiscard]] cf64 qam_point(unsigned pattern) const {
    const unsigned half = bits_ / 2;
    const unsigned ib = pattern >> half;
    const unsigned qb = pattern & ((1u << half) - 1u);
    const double scale = qam_scale_ * (axis_levels_ - 1.0);
    return {-level(gray_inverse(ib), axis_levels_) * scale, -level(gray_inverse(qb), axis_levels_) * scale};
  }

  /// Axis decision for QAM: returns the Gray bits of the nearest axis level.
  [[nodiscard]] unsigned qam_axis_decide(double v) const {
    const double scale = qam_scale_ * (axis_levels_ - 1.0);
    const double u = -v / scale;  // unit-peak level domain
    const double idx = std::round((u * (axis_levels_ - 1.0) + (axis_levels_ - 1.0)) / 2.0);
    const auto i = static_cast<unsigned>(std::clamp(idx, 0.0, axis_levels_ - 1.0));
    return gray(i);
  }

  [[nodiscard]] unsigned qam_decide(cf64 v) const {
    const unsigned half = bits_ / 2;
    return (qam_axis_decide(v.real()) << half) | qam_axis_decide(v.imag());
  }

  /// All constellation points indexed by bit pattern.
  [[nodiscard]] std::vector<cf64> constellation() const {
    std::vector<cf64> pts(order_);
    for (unsigned p = 0; p < order_; ++p) pts[p] = is_pam() ? cf64(pam_level(p), 0.0) : qam_point(p);
    return pts;
  }

  /// Mean |level| of the unit-peak PAM alphabet (rescaling constant for normalization).
  [[nodiscard]] double pam_mean_abs_level() const {
    double acc = 0.0;
    for (unsigned i = 0; i < axis_levels_; ++i) acc += std::abs(level(i, axis_levels_));
    return acc / axis_levels_;
  }

  friend bool operator==(const ModulationFormat& a, const ModulationFormat& b) {
    return a.family_ == b.family_ && a.order_ == b.order_;
  }

 private:
  Family family_ = Family::pam;
  unsigned order_ = 4;
  unsigned bits_ = 2;
  unsigned axis_levels_ = 4;
  double qam_scale_ = 1.0;
};

inline unsigned read_pattern(std::span<const std::uint8_t> bits, std::size_t pos, unsigned n) {
  unsigned p = 0;
  for (unsigned b = 0; b < n; ++b) p = (p << 1) | (bits[pos + b] & 1u);
  return p;
}

inline void write_pattern(unsigned pattern, unsigned n, std::vector<std::uint8_t>& out) {
  for (unsigned b = n; b-- > 0;) out.push_back(static_cast<std::uint8_t>((pattern >> b) & 1u));
}

/// Real levels for PAM.
inline std::vector<double> map_pam(std::span<const std::uint8_t> bits, const ModulationFormat& fmt) {
  if (!fmt.is_pam()) throw std::invalid_argument("map_pam needs a PAM format");
  const unsigned k = fmt.bits_per_symbol();
  if (bits.size() % k != 0) throw std::invalid_argument("bit count not divisible by bits per symbol");
  std::vector<double> out(bits.size() / k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fmt.pam_level(read_pattern(bits, i * k, k));
  return out;
}

/// Complex symbols for either family (PAM symbols land on the real axis).
inline std::vector<cf64> map_symbols(std::span<const std::uint8_t> bits, const ModulationFormat& fmt) {
  const unsigned k = fmt.bits_per_symbol();
  if (bits.size() % k != 0) throw std::invalid_argument("bit count not divisible by bits per symbol");
  std::vector<cf64> out(bits.size() / k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned p = read_pattern(bits, i * k, k);
    out[i] = fmt.is_pam() ? cf64(fmt.pam_level(p), 0.0) : fmt.qam_point(p);
  }
  return out;
}

}  // namespace srx::tx
