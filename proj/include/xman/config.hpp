#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "xman/run_id.hpp"

namespace xman {

/// Leaf value of a configuration tree. `std::monostate` is YAML null.
using Scalar = std::variant<std::monostate, bool, std::int64_t, double, std::string>;

bool is_text(const Scalar& s) noexcept;
bool is_number(const Scalar& s) noexcept;
std::optional<double> as_double(const Scalar& s) noexcept;

/// Canonical unquoted text: `null`, `true`, `10`, `10.0`, or the raw string.
std::string format_scalar(const Scalar& s);

/// Shortest round-trip representation that always reads back as a float.
std::string format_double(double v);

/// Typing of an unquoted token: integer, then float, then boolean, else text.
Scalar parse_scalar(std::string_view token);

/// Numeric values compare by value (1 == 1.0); everything else by type and value.
bool scalar_equivalent(const Scalar& a, const Scalar& b) noexcept;

/// Keys are non-empty and contain no `.`, `=` or whitespace.
bool is_valid_key(std::string_view key) noexcept;

/// Ordered nested map of scalars. Insertion order is preserved everywhere,
/// including through flatten/unflatten and YAML round trips.
class ConfigTree {
 public:
  struct Entry;
  using Value = std::variant<Scalar, ConfigTree>;

  ConfigTree() = default;

  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  const Value* find(std::string_view key) const;
  std::optional<Scalar> get(std::string_view dotted_path) const;
  bool contains(std::string_view dotted_path) const;

  /// Sets a leaf, creating intermediate maps. An existing scalar on the way is
  /// replaced by a map; an existing subtree at the leaf is replaced by the scalar.
  void set(std::string_view dotted_path, Scalar value);
  void set_subtree(std::string_view key, ConfigTree child);

  /// Leaves in depth-first order with dotted paths. Empty maps are dropped.
  std::vector<std::pair<std::string, Scalar>> flatten() const;
  static ConfigTree unflatten(std::span<const std::pair<std::string, Scalar>> leaves);

  friend bool operator==(const ConfigTree& a, const ConfigTree& b);

 private:
  std::vector<Entry> entries_;
};

struct ConfigTree::Entry {
  std::string key;
  ConfigTree::Value value;

  friend bool operator==(const Entry&, const Entry&) = default;
};

// ---- YAML ------------------------------------------------------------------

/// Parses a YAML document restricted to nested maps of scalars.
ConfigTree parse_yaml(std::string_view text, std::string_view source_name = "<string>");
ConfigTree load_yaml_file(const std::filesystem::path& path);
std::string to_yaml(const ConfigTree& tree);
void save_yaml_file(const std::filesystem::path& path, const ConfigTree& tree);

/// Reads `<config_dir>/config.yaml`. Tool settings in `mlxp.yaml` are not merged.
ConfigTree load_defaults(const std::filesystem::path& config_dir);

// ---- overrides and sweeps --------------------------------------------------

struct OverrideSpec {
  std::string path;
  std::vector<Scalar> values;

  bool is_sweep() const noexcept { return values.size() > 1; }
  friend bool operator==(const OverrideSpec&, const OverrideSpec&) = default;
};

struct Assignment {
  std::string path;
  Scalar value;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// True when `arg` has the `PATH=...` shape of a command-line override.
bool looks_like_override(std::string_view arg) noexcept;

std::vector<OverrideSpec> parse_overrides(std::span<const std::string> args);

/// `args` split into a command and its trailing run of override-shaped tokens.
std::pair<std::vector<std::string>, std::vector<std::string>> split_command_overrides(
    std::span<const std::string> args);

/// `path=value` with the value quoted when it would not read back identically.
std::string format_assignment(const Assignment& a);

struct PlannedRun {
  ConfigTree config;
  std::vector<Assignment> assignment;
  std::optional<RunId> id;

  /// The override tokens that reproduce this run's tuple, in spec order.
  std::vector<std::string> override_args() const;
};

struct RunPlan {
  std::vector<PlannedRun> runs;
  std::vector<OverrideSpec> provenance;
};

/// Cross product of all specs, first spec varying slowest.
RunPlan expand_plan(const ConfigTree& defaults, std::span<const OverrideSpec> specs);

}  // namespace xman
