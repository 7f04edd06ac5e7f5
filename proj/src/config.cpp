#include "xman/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_set>

#include "fs_util.hpp"
#include "xman/error.hpp"

namespace xman {

namespace fs = std::filesystem;

// ---- scalars ---------------------------------------------------------------

bool is_text(const Scalar& s) noexcept { return std::holds_alternative<std::string>(s); }

bool is_number(const Scalar& s) noexcept {
  return std::holds_alternative<std::int64_t>(s) || std::holds_alternative<double>(s);
}

std::optional<double> as_double(const Scalar& s) noexcept {
  if (auto* i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
  if (auto* d = std::get_if<double>(&s)) return *d;
  return std::nullopt;
}

std::string format_double(double v) {
  if (std::isnan(v)) return ".nan";
  if (std::isinf(v)) return v > 0 ? ".inf" : "-.inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, end);
  if (out.find_first_of(".e") == std::string::npos) out += ".0";
  return out;
}

std::string format_scalar(const Scalar& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) return "null";
        else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(v);
        else if constexpr (std::is_same_v<T, double>) return format_double(v);
        else return v;
      },
      s);
}

namespace {

bool is_integer_token(std::string_view t) {
  std::size_t i = (!t.empty() && (t[0] == '+' || t[0] == '-')) ? 1 : 0;
  if (i == t.size()) return false;
  return std::all_of(t.begin() + static_cast<std::ptrdiff_t>(i), t.end(),
                     [](char c) { return c >= '0' && c <= '9'; });
}

std::optional<double> parse_float_token(std::string_view t) {
  if (t.empty()) return std::nullopt;
  if (t.find_first_not_of("0123456789.eE+-") != std::string_view::npos) return std::nullopt;
  if (t.find_first_of("0123456789") == std::string_view::npos) return std::nullopt;
  std::string_view body = t;
  bool negative = false;
  if (body[0] == '+' || body[0] == '-') {
    negative = body[0] == '-';
    body.remove_prefix(1);
  }
  if (body.empty() || body[0] == '+' || body[0] == '-') return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
  if (ec != std::errc() || ptr != body.data() + body.size()) return std::nullopt;
  return negative ? -v : v;
}

}  // namespace

Scalar parse_scalar(std::string_view token) {
  if (is_integer_token(token)) {
    std::string_view digits = token[0] == '+' ? token.substr(1) : token;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec == std::errc() && ptr == digits.data() + digits.size()) return v;
  }
  if (auto f = parse_float_token(token)) return *f;
  if (token == "true" || token == "True" || token == "TRUE") return true;
  if (token == "false" || token == "False" || token == "FALSE") return false;
  return std::string(token);
}

bool scalar_equivalent(const Scalar& a, const Scalar& b) noexcept {
  if (is_number(a) && is_number(b)) return *as_double(a) == *as_double(b);
  return a == b;
}

bool is_valid_key(std::string_view key) noexcept {
  if (key.empty()) return false;
  return std::none_of(key.begin(), key.end(), [](char c) {
    return c == '.' || c == '=' || c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
           c == '\v' || c == '\f';
  });
}

// ---- ConfigTree ------------------------------------------------------------

namespace {

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

}  // namespace

const ConfigTree::Value* ConfigTree::find(std::string_view key) const {
  for (const auto& e : entries_)
    if (e.key == key) return &e.value;
  return nullptr;
}

std::optional<Scalar> ConfigTree::get(std::string_view dotted_path) const {
  const ConfigTree* node = this;
  auto parts = split_path(dotted_path);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Value* v = node->find(parts[i]);
    if (!v) return std::nullopt;
    if (i + 1 == parts.size()) {
      if (auto* s = std::get_if<Scalar>(v)) return *s;
      return std::nullopt;
    }
    node = std::get_if<ConfigTree>(v);
    if (!node) return std::nullopt;
  }
  return std::nullopt;
}

bool ConfigTree::contains(std::string_view dotted_path) const {
  return get(dotted_path).has_value();
}

void ConfigTree::set(std::string_view dotted_path, Scalar value) {
  ConfigTree* node = this;
  auto parts = split_path(dotted_path);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto it = std::find_if(node->entries_.begin(), node->entries_.end(),
                           [&](const Entry& e) { return e.key == parts[i]; });
    const bool last = i + 1 == parts.size();
    if (it == node->entries_.end()) {
      node->entries_.push_back(Entry{std::string(parts[i]), ConfigTree{}});
      it = std::prev(node->entries_.end());
    }
    if (last) {
      it->value = std::move(value);
      return;
    }
    if (!std::holds_alternative<ConfigTree>(it->value)) it->value = ConfigTree{};
    node = &std::get<ConfigTree>(it->value);
  }
}

void ConfigTree::set_subtree(std::string_view key, ConfigTree child) {
  for (auto& e : entries_) {
    if (e.key == key) {
      e.value = std::move(child);
      return;
    }
  }
  entries_.push_back(Entry{std::string(key), std::move(child)});
}

namespace {

void flatten_into(const ConfigTree& t, const std::string& prefix,
                  std::vector<std::pair<std::string, Scalar>>& out) {
  for (const auto& e : t.entries()) {
    std::string path = prefix.empty() ? e.key : prefix + "." + e.key;
    if (auto* s = std::get_if<Scalar>(&e.value)) out.emplace_back(std::move(path), *s);
    else flatten_into(std::get<ConfigTree>(e.value), path, out);
  }
}

}  // namespace

std::vector<std::pair<std::string, Scalar>> ConfigTree::flatten() const {
  std::vector<std::pair<std::string, Scalar>> out;
  flatten_into(*this, "", out);
  return out;
}

ConfigTree ConfigTree::unflatten(std::span<const std::pair<std::string, Scalar>> leaves) {
  ConfigTree t;
  for (const auto& [path, value] : leaves) t.set(path, value);
  return t;
}

bool operator==(const ConfigTree& a, const ConfigTree& b) { return a.entries_ == b.entries_; }

// ---- YAML ------------------------------------------------------------------

namespace {

[[noreturn]] void malformed(std::string_view source, const YAML::Mark& mark, const std::string& msg) {
  throw Error(Errc::MalformedConfigFile, std::string(source) + ":" + std::to_string(mark.line + 1) +
                                             ":" + std::to_string(mark.column + 1) + ": " + msg);
}

Scalar yaml_scalar(const YAML::Node& node) {
  if (node.IsNull()) return std::monostate{};
  const std::string& raw = node.Scalar();
  const std::string& tag = node.Tag();
  if (tag == "!" || (tag.size() > 4 && tag.ends_with(":str"))) return raw;
  if (raw == "~" || raw == "null" || raw == "Null" || raw == "NULL") return std::monostate{};
  if (raw == ".inf" || raw == "+.inf" || raw == ".Inf") return HUGE_VAL;
  if (raw == "-.inf" || raw == "-.Inf") return -HUGE_VAL;
  if (raw == ".nan" || raw == ".NaN") return std::nan("");
  return parse_scalar(raw);
}

ConfigTree yaml_map(const YAML::Node& node, std::string_view source, const std::string& prefix) {
  ConfigTree tree;
  std::unordered_set<std::string> seen;
  for (const auto& kv : node) {
    if (!kv.first.IsScalar()) malformed(source, kv.first.Mark(), "map keys must be scalars");
    std::string key = kv.first.Scalar();
    if (!is_valid_key(key)) malformed(source, kv.first.Mark(), "invalid key '" + key + "'");
    if (!seen.insert(key).second) malformed(source, kv.first.Mark(), "duplicate key '" + key + "'");
    std::string path = prefix.empty() ? key : prefix + "." + key;
    const YAML::Node& v = kv.second;
    switch (v.Type()) {
      case YAML::NodeType::Map:
        tree.set_subtree(key, yaml_map(v, source, path));
        break;
      case YAML::NodeType::Sequence:
        throw Error(Errc::NonScalarLeaf, std::string(source) + ":" + std::to_string(v.Mark().line + 1) +
                                             ": sequence at '" + path + "'");
      default:
        tree.set(key, yaml_scalar(v));
        break;
    }
  }
  return tree;
}

std::string json_quote(std::string_view s) {
  std::string out = "\"";
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
  return out;
}

bool plain_safe(std::string_view s) {
  if (s.empty()) return false;
  char first = s[0];
  if (!(std::isalpha(static_cast<unsigned char>(first)) || first == '_' || first == '/')) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '/' || c == '-'))
      return false;
  }
  static const std::unordered_set<std::string_view> reserved = {
      "y", "Y", "n", "N", "yes", "Yes", "YES", "no", "No", "NO", "on", "On", "ON", "off", "Off", "OFF",
      "null", "Null", "NULL"};
  if (reserved.count(s)) return false;
  return is_text(parse_scalar(s));
}

std::string emit_text(std::string_view s) { return plain_safe(s) ? std::string(s) : json_quote(s); }

std::string emit_key(std::string_view key) {
  bool plain = !key.empty() && (std::isalnum(static_cast<unsigned char>(key[0])) || key[0] == '_') &&
               std::all_of(key.begin(), key.end(), [](char c) {
                 return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
               });
  return plain ? std::string(key) : json_quote(key);
}

std::string emit_scalar(const Scalar& s) {
  if (auto* t = std::get_if<std::string>(&s)) return emit_text(*t);
  return format_scalar(s);
}

void emit(const ConfigTree& t, int indent, std::string& out) {
  for (const auto& e : t.entries()) {
    out.append(static_cast<std::size_t>(indent), ' ');
    out += emit_key(e.key);
    out += ':';
    if (auto* s = std::get_if<Scalar>(&e.value)) {
      out += ' ';
      out += emit_scalar(*s);
      out += '\n';
    } else {
      const auto& child = std::get<ConfigTree>(e.value);
      if (child.empty()) {
        out += " {}\n";
      } else {
        out += '\n';
        emit(child, indent + 2, out);
      }
    }
  }
}

}  // namespace

ConfigTree parse_yaml(std::string_view text, std::string_view source_name) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    malformed(source_name, e.mark, e.msg);
  }
  if (!root.IsDefined() || root.IsNull()) return {};
  if (root.IsSequence()) throw Error(Errc::NonScalarLeaf, std::string(source_name) + ": top-level sequence");
  if (!root.IsMap()) malformed(source_name, root.Mark(), "top-level node must be a map");
  try {
    return yaml_map(root, source_name, "");
  } catch (const YAML::Exception& e) {
    malformed(source_name, e.mark, e.msg);
  }
}

ConfigTree load_yaml_file(const fs::path& path) {
  return parse_yaml(detail::read_file(path), path.string());
}

std::string to_yaml(const ConfigTree& tree) {
  if (tree.empty()) return "{}\n";
  std::string out;
  emit(tree, 0, out);
  return out;
}

void save_yaml_file(const fs::path& path, const ConfigTree& tree) {
  detail::write_file_atomic(path, to_yaml(tree));
}

ConfigTree load_defaults(const fs::path& config_dir) {
  std::error_code ec;
  if (!fs::is_directory(config_dir, ec))
    throw Error(Errc::MissingConfigDir, "config directory '" + config_dir.string() + "' does not exist");
  fs::path file = config_dir / "config.yaml";
  if (!fs::is_regular_file(file, ec))
    throw Error(Errc::MissingConfigDir, "no config.yaml in '" + config_dir.string() + "'");
  return load_yaml_file(file);
}

// ---- overrides -------------------------------------------------------------

namespace {

bool valid_path(std::string_view path) {
  auto parts = split_path(path);
  return std::all_of(parts.begin(), parts.end(), is_valid_key);
}

// Splits on commas outside quotes. Each piece keeps its quotes.
std::vector<std::string> split_values(std::string_view text, std::string_view arg) {
  std::vector<std::string> pieces;
  std::string current;
  char quote = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quote) {
      current += c;
      if (c == '\\' && i + 1 < text.size()) {
        current += text[++i];
      } else if (c == quote) {
        quote = 0;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      current += c;
    } else if (c == ',') {
      pieces.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (quote) throw Error(Errc::BadOverrideSyntax, "unterminated quote in '" + std::string(arg) + "'");
  pieces.push_back(std::move(current));
  return pieces;
}

Scalar typed_value(const std::string& piece, std::string_view arg) {
  if (piece.empty()) throw Error(Errc::EmptyValueList, "empty value in '" + std::string(arg) + "'");
  char q = piece.front();
  if (q == '\'' || q == '"') {
    if (piece.size() < 2 || piece.back() != q)
      throw Error(Errc::BadOverrideSyntax, "malformed quoted value in '" + std::string(arg) + "'");
    std::string text;
    for (std::size_t i = 1; i + 1 < piece.size(); ++i) {
      if (piece[i] == '\\' && i + 2 < piece.size()) ++i;
      text += piece[i];
    }
    return text;
  }
  if (piece.find_first_of("='\"") != std::string::npos)
    throw Error(Errc::BadOverrideSyntax, "unexpected character in value of '" + std::string(arg) + "'");
  return parse_scalar(piece);
}

std::string quote_override_text(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'' || c == '\\') out += '\\';
    out += c;
  }
  out += '\'';
  return out;
}

}  // namespace

bool looks_like_override(std::string_view arg) noexcept {
  auto eq = arg.find('=');
  if (eq == std::string_view::npos || eq == 0) return false;
  return valid_path(arg.substr(0, eq));
}

std::vector<OverrideSpec> parse_overrides(std::span<const std::string> args) {
  std::vector<OverrideSpec> specs;
  for (const auto& arg : args) {
    auto eq = arg.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::BadOverrideSyntax, "expected path=value, got '" + arg + "'");
    std::string_view path = std::string_view(arg).substr(0, eq);
    if (!valid_path(path)) throw Error(Errc::BadOverrideSyntax, "invalid key path in '" + arg + "'");
    std::string_view rest = std::string_view(arg).substr(eq + 1);
    if (rest.empty()) throw Error(Errc::EmptyValueList, "no value given in '" + arg + "'");
    OverrideSpec spec{std::string(path), {}};
    for (const auto& piece : split_values(rest, arg)) {
      Scalar v = typed_value(piece, arg);
      for (const auto& prev : spec.values) {
        if (scalar_equivalent(prev, v))
          throw Error(Errc::DuplicateSweepValue, "value '" + piece + "' repeated in '" + arg + "'");
      }
      spec.values.push_back(std::move(v));
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_command_overrides(
    std::span<const std::string> args) {
  std::size_t split = args.size();
  while (split > 0 && looks_like_override(args[split - 1])) --split;
  return {{args.begin(), args.begin() + static_cast<std::ptrdiff_t>(split)},
          {args.begin() + static_cast<std::ptrdiff_t>(split), args.end()}};
}

std::string format_assignment(const Assignment& a) {
  std::string value;
  if (auto* t = std::get_if<std::string>(&a.value)) {
    bool needs_quotes = t->empty() || !is_text(parse_scalar(*t)) ||
                        t->find_first_of(",='\"\\ \t\n") != std::string::npos;
    value = needs_quotes ? quote_override_text(*t) : *t;
  } else {
    value = format_scalar(a.value);
  }
  return a.path + "=" + value;
}

std::vector<std::string> PlannedRun::override_args() const {
  std::vector<std::string> out;
  out.reserve(assignment.size());
  for (const auto& a : assignment) out.push_back(format_assignment(a));
  return out;
}

RunPlan expand_plan(const ConfigTree& defaults, std::span<const OverrideSpec> specs) {
  RunPlan plan;
  plan.provenance.assign(specs.begin(), specs.end());
  std::size_t total = 1;
  for (const auto& s : specs) total *= s.values.size();
  plan.runs.reserve(total);

  // Mixed-radix counter; the last spec is the fastest digit.
  std::vector<std::size_t> digit(specs.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    PlannedRun run{defaults, {}, std::nullopt};
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const Scalar& v = specs[i].values[digit[i]];
      run.config.set(specs[i].path, v);
      run.assignment.push_back({specs[i].path, v});
    }
    plan.runs.push_back(std::move(run));
    for (std::size_t i = specs.size(); i-- > 0;) {
      if (++digit[i] < specs[i].values.size()) break;
      digit[i] = 0;
    }
  }
  return plan;
}

}  // namespace xman
