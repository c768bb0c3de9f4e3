#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace mixsim {

/// Canonical order; every argmax tie resolves to the earliest entry.
enum class Maneuver { StraightAccel = 0, StraightDecel, StraightConst, LeftTurn, RightTurn };

inline constexpr std::size_t kManeuverCount = 5;

inline constexpr std::array<Maneuver, kManeuverCount> kManeuvers = {
    Maneuver::StraightAccel, Maneuver::StraightDecel, Maneuver::StraightConst, Maneuver::LeftTurn,
    Maneuver::RightTurn};

template <typename T>
using PerManeuver = std::array<T, kManeuverCount>;

inline constexpr std::size_t index_of(Maneuver m) { return static_cast<std::size_t>(m); }

inline constexpr std::string_view to_string(Maneuver m) {
  switch (m) {
    case Maneuver::StraightAccel: return "StraightAccel";
    case Maneuver::StraightDecel: return "StraightDecel";
    case Maneuver::StraightConst: return "StraightConst";
    case Maneuver::LeftTurn: return "LeftTurn";
    case Maneuver::RightTurn: return "RightTurn";
  }
  return "StraightConst";
}

inline std::optional<Maneuver> maneuver_from_string(std::string_view s) {
  for (auto m : kManeuvers)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

inline constexpr bool is_turn(Maneuver m) { return m == Maneuver::LeftTurn || m == Maneuver::RightTurn; }

/// First maximum in canonical order.
template <typename T>
Maneuver argmax(const PerManeuver<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kManeuverCount; ++i)
    if (v[i] > v[best]) best = i;
  return kManeuvers[best];
}

}  // namespace mixsim
