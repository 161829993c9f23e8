#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srx {

/// Fibonacci LFSR over x^k + x^m + 1 (maximal length for the supported orders).
struct PrbsState {
  unsigned order = 15;
  unsigned tap = 14;
  std::uint32_t state = 1;

  static PrbsState maximal(unsigned order, std::uint32_t seed = 1) {
    unsigned tap = 0;
    switch (order) {
      case 7: tap = 6; break;
      case 9: tap = 5; break;
      case 11: tap = 9; break;
      case 15: tap = 14; break;
      case 20: tap = 17; break;
      case 23: tap = 18; break;
      case 31: tap = 28; break;
      default: throw std::invalid_argument("no maximal polynomial tabulated for order " + std::to_string(order));
    }
    const std::uint32_t mask = order == 32 ? ~0u : ((1u << order) - 1u);
    return PrbsState{order, tap, seed & mask};
  }

  [[nodiscard]] std::uint64_t period() const { return (std::uint64_t{1} << order) - 1; }
};

/// Emits n bits and returns them with the advanced state.
inline std::pair<std::vector<std::uint8_t>, PrbsState> prbs_bits(PrbsState st, std::size_t n) {
  const std::uint32_t mask = (1u << st.order) - 1u;
  if ((st.state & mask) == 0) throw std::invalid_argument("PRBS state must be nonzero");
  std::vector<std::uint8_t> bits(n);
  std::uint32_t s = st.state & mask;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t fb = ((s >> (st.order - 1)) ^ (s >> (st.tap - 1))) & 1u;
    bits[i] = static_cast<std::uint8_t>(s >> (st.order - 1) & 1u);
    s = ((s << 1) | fb) & mask;
  }
  st.state = s;
  return {std::move(bits), st};
}

/// One full period of the sequence starting at `st`.
inline std::vector<std::uint8_t> prbs_period(const PrbsState& st) {
  return prbs_bits(st, static_cast<std::size_t>(st.period())).first;
}

}  // namespace srx
