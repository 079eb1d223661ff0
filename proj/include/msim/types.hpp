#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace msim {

// Prices are integers in half-cent units: 1 unit = 0.5 cent.
// The RL action offsets {0.5, 1, 1.5, 2} cents map to {1, 2, 3, 4} units.
using Price = std::int64_t;
// Cash and portfolio values share the half-cent unit so that all
// accounting stays in exact integer arithmetic.
using Money = std::int64_t;

using Timestamp = std::int64_t;  // nanoseconds since market open

inline constexpr Timestamp kNsPerMinute = 60'000'000'000LL;
inline constexpr int kDayMinutes = 390;  // 9:30 to 16:00

enum class Side : std::uint8_t { Buy, Sell };

inline constexpr Side opposite(Side s) {
  return s == Side::Buy ? Side::Sell : Side::Buy;
}

inline constexpr std::string_view to_string(Side s) {
  return s == Side::Buy ? "buy" : "sell";
}

inline constexpr Money cents_to_units(std::int64_t cents) { return cents * 2; }
inline constexpr double units_to_cents(Money units) { return static_cast<double>(units) / 2.0; }

// Stable 64-bit FNV-1a, used to derive per-agent RNG streams from names.
inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64 finalizer; mixing two seeds keeps derived streams independent.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b));
}

}  // namespace msim
