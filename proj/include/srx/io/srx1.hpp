#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "srx/core/types.hpp"

namespace srx::io {

enum class SampleFormat : std::uint16_t { u12 = 1, f32 = 2, cf32 = 3 };

inline std::size_t bytes_per_sample(SampleFormat f) {
  switch (f) {
    case SampleFormat::u12: return 2;
    case SampleFormat::f32: return 4;
    case SampleFormat::cf32: return 8;
  }
  throw std::invalid_argument("unknown SRX1 sample format");
}

inline const char* format_name(SampleFormat f) {
  switch (f) {
    case SampleFormat::u12: return "real-u12";
    case SampleFormat::f32: return "real-f32";
    case SampleFormat::cf32: return "complex-f32";
  }
  return "unknown";
}

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 32-byte little-endian header: "SRX1", u16 version, u16 format, u64 sample rate,
/// u32 sps numerator, u32 sps denominator, u64 payload sample count.
struct Srx1Header {
  static constexpr std::array<char, 4> kMagic = {'S', 'R', 'X', '1'};
  static constexpr std::uint16_t kVersion = 1;
  static constexpr std::size_t kSize = 32;

  SampleFormat format = SampleFormat::u12;
  std::uint64_t sample_rate_hz = 0;
  Rational samples_per_symbol{};
  std::uint64_t n_samples = 0;

  [[nodiscard]] std::array<std::uint8_t, kSize> encode() const {
    std::array<std::uint8_t, kSize> b{};
    std::memcpy(b.data(), kMagic.data(), 4);
    put(b, 4, kVersion, 2);
    put(b, 6, static_cast<std::uint16_t>(format), 2);
    put(b, 8, sample_rate_hz, 8);
    put(b, 16, samples_per_symbol.num, 4);
    put(b, 20, samples_per_symbol.den, 4);
    put(b, 24, n_samples, 8);
    return b;
  }

  static Srx1Header decode(std::span<const std::uint8_t> b) {
    if (b.size() < kSize) throw FormatError("SRX1: truncated header");
    if (std::memcmp(b.data(), kMagic.data(), 4) != 0) throw FormatError("SRX1: bad magic");
    if (get(b, 4, 2) != kVersion) throw FormatError("SRX1: unsupported version " + std::to_string(get(b, 4, 2)));
    Srx1Header h;
    const auto code = get(b, 6, 2);
    if (code < 1 || code > 3) throw FormatError("SRX1: unknown format code " + std::to_string(code));
    h.format = static_cast<SampleFormat>(code);
    h.sample_rate_hz = get(b, 8, 8);
    h.samples_per_symbol.num = static_cast<std::uint32_t>(get(b, 16, 4));
    h.samples_per_symbol.den = static_cast<std::uint32_t>(get(b, 20, 4));
    h.n_samples = get(b, 24, 8);
    return h;
  }

 private:
  static void put(std::array<std::uint8_t, kSize>& b, std::size_t at, std::uint64_t v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  static std::uint64_t get(std::span<const std::uint8_t> b, std::size_t at, std::size_t n) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    return v;
  }
};

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint32_t v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_le(const std::uint8_t* p, std::size_t n) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

inline float bits_float(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

/// Streaming writer; the sample count in the header is patched on close().
class Srx1Writer {
 public:
  Srx1Writer(const std::filesystem::path& path, SampleFormat format, std::uint64_t sample_rate_hz, Rational sps)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    header_.format = format;
    header_.sample_rate_hz = sample_rate_hz;
    header_.samples_per_symbol = sps;
    write_header();
  }

  Srx1Writer(const Srx1Writer&) = delete;
  Srx1Writer& operator=(const Srx1Writer&) = delete;
  ~Srx1Writer() {
    try {
      close();
    } catch (...) {
    }
  }

  void write(std::span<const std::uint16_t> codes) {
    require(SampleFormat::u12);
    buf_.clear();
    for (auto c : codes) {
      if (c > 0x0fff) throw FormatError("SRX1: u12 code out of range");
      detail::put_le(buf_, c, 2);
    }
    flush_buf(codes.size());
  }

  void write(std::span<const float> v) {
    require(SampleFormat::f32);
    buf_.clear();
    for (float x : v) detail::put_le(buf_, detail::float_bits(x), 4);
    flush_buf(v.size());
  }

  void write(std::span<const cf32> v) {
    require(SampleFormat::cf32);
    buf_.clear();
    for (const auto& x : v) {
      detail::put_le(buf_, detail::float_bits(x.real()), 4);
      detail::put_le(buf_, detail::float_bits(x.imag()), 4);
    }
    flush_buf(v.size());
  }

  [[nodiscard]] std::uint64_t samples_written() const { return header_.n_samples; }

  void close() {
    if (!out_.is_open()) return;
    out_.seekp(0);
    write_header();
    out_.close();
    if (!out_) throw std::runtime_error("error writing " + path_.string());
  }

 private:
  void require(SampleFormat f) const {
    if (header_.format != f) throw FormatError("SRX1: writing " + std::string(format_name(f)) + " samples into a " +
                                               format_name(header_.format) + " file");
  }
  void write_header() {
    const auto h = header_.encode();
    out_.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size()));
  }
  void flush_buf(std::size_t n) {
    out_.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out_) throw std::runtime_error("error writing " + path_.string());
    header_.n_samples += n;
  }

  std::filesystem::path path_;
  std::ofstream out_;
  Srx1Header header_;
  std::vector<std::uint8_t> buf_;
};

/// Streaming reader. Checks that the payload length matches the header.
class Srx1Reader {
 public:
  explicit Srx1Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open " + path.string());
    std::array<std::uint8_t, Srx1Header::kSize> b{};
    in_.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (in_.gcount() != static_cast<std::streamsize>(b.size())) throw FormatError("SRX1: truncated header in " + path.string());
    header_ = Srx1Header::decode(b);
    const auto size = std::filesystem::file_size(path);
    const auto expect = Srx1Header::kSize + header_.n_samples * bytes_per_sample(header_.format);
    if (size != expect) {
      throw FormatError("SRX1: payload length mismatch in " + path.string() + " (header says " +
                        std::to_string(header_.n_samples) + " samples)");
    }
  }

  [[nodiscard]] const Srx1Header& header() const { return header_; }
  [[nodiscard]] std::uint64_t remaining() const { return header_.n_samples - pos_; }

  /// Reads up to n samples; returns the number read.
  std::size_t read(std::size_t n, std::vector<std::uint16_t>& out) {
    require(SampleFormat::u12);
    n = take(n);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::uint16_t>(detail::get_le(&buf_[2 * i], 2));
      if (c > 0x0fff) throw FormatError("SRX1: u12 sample with upper bits set");
      out[i] = c;
    }
    return n;
  }

  std::size_t read(std::size_t n, std::vector<float>& out) {
    require(SampleFormat::f32);
    n = take(n);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = detail::bits_float(detail::get_le(&buf_[4 * i], 4));
    return n;
  }

  std::size_t read(std::size_t n, std::vector<cf32>& out) {
    require(SampleFormat::cf32);
    n = take(n);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = cf32(detail::bits_float(detail::get_le(&buf_[8 * i], 4)), detail::bits_float(detail::get_le(&buf_[8 * i + 4], 4)));
    }
    return n;
  }

 private:
  void require(SampleFormat f) const {
    if (header_.format != f) throw FormatError("SRX1: file holds " + std::string(format_name(header_.format)) +
                                               " samples, expected " + format_name(f));
  }
  std::size_t take(std::size_t n) {
    n = static_cast<std::size_t>(std::min<std::uint64_t>(n, remaining()));
    const std::size_t bytes = n * bytes_per_sample(header_.format);
    buf_.resize(bytes);
    in_.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(bytes));
    if (in_.gcount() != static_cast<std::streamsize>(bytes)) throw FormatError("SRX1: short read in " + path_.string());
    pos_ += n;
    return n;
  }

  std::filesystem::path path_;
  std::ifstream in_;
  Srx1Header header_;
  std::uint64_t pos_ = 0;
  std::vector<std::uint8_t> buf_;
};

template <class T>
SampleFormat format_of();
template <>
inline SampleFormat format_of<std::uint16_t>() { return SampleFormat::u12; }
template <>
inline SampleFormat format_of<float>() { return SampleFormat::f32; }
template <>
inline SampleFormat format_of<cf32>() { return SampleFormat::cf32; }

template <class T>
void write_srx1(const std::filesystem::path& path, std::span<const T> samples, std::uint64_t sample_rate_hz, Rational sps) {
  Srx1Writer w(path, format_of<T>(), sample_rate_hz, sps);
  w.write(samples);
  w.close();
}

template <class T>
std::vector<T> read_srx1(const std::filesystem::path& path, Srx1Header* header = nullptr) {
  Srx1Reader r(path);
  if (header) *header = r.header();
  std::vector<T> out;
  r.read(static_cast<std::size_t>(r.header().n_samples), out);
  return out;
}

/// JSON metadata written next to a signal file as <file>.json.
inline std::filesystem::path sidecar_path(const std::filesystem::path& p) { return std::filesystem::path(p.string() + ".json"); }

inline void write_sidecar(const std::filesystem::path& p, const nlohmann::json& meta) {
  std::ofstream out(sidecar_path(p));
  if (!out) throw std::runtime_error("cannot write " + sidecar_path(p).string());
  out << meta.dump(2) << "\n";
}

inline nlohmann::json read_sidecar(const std::filesystem::path& p) {
  std::ifstream in(sidecar_path(p));
  if (!in) return nlohmann::json::object();
  return nlohmann::json::parse(in);
}

}  // namespace srx::io
