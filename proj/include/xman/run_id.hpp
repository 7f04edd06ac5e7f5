#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

namespace xman {

/// Positive integer naming one run directory under a logs root.
struct RunId {
  std::uint64_t value = 0;

  friend auto operator<=>(const RunId&, const RunId&) = default;
  std::string str() const { return std::to_string(value); }
};

}  // namespace xman

template <>
struct std::hash<xman::RunId> {
  std::size_t operator()(const xman::RunId& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
