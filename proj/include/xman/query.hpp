#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xman/config.hpp"
#include "xman/error.hpp"

namespace xman {

enum class CompareOp { Eq, Ne, Lt, Gt, Le, Ge };
std::string_view to_string(CompareOp op) noexcept;

enum class QueryKind { All, Compare, In, Not, And, Or };

/// Query tree. And/Or hold two or more children; Not holds one.
struct Query {
  QueryKind kind = QueryKind::All;
  std::string key;               // Compare, In
  CompareOp op = CompareOp::Eq;  // Compare
  std::vector<Scalar> literals;  // Compare: one; In: one or more
  std::vector<Query> children;

  static Query all() { return {}; }
  static Query compare(std::string key, CompareOp op, Scalar literal);
  static Query in(std::string key, std::vector<Scalar> literals);
  static Query negate(Query q);
  static Query conj(std::vector<Query> qs);
  static Query disj(std::vector<Query> qs);

  friend bool operator==(const Query&, const Query&) = default;
};

/// Syntax errors carry the character offset of the offending token.
class QueryError : public Error {
 public:
  QueryError(Errc code, std::size_t position, const std::string& msg);
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Precedence, tightest first: comparison, `~`, `&`, `|`. Empty text is match-all.
/// Throws QueryError with SyntaxError or UnknownOperator.
Query parse_query(std::string_view text);

/// Canonical text that parses back to the same tree.
std::string to_string(const Query& q);

/// Keys referenced anywhere in `q`.
std::vector<std::string> query_keys(const Query& q);

enum class MatchMode { Lenient, Strict };

/// Evaluates against one run's flat metadata. Lenient: missing keys and text/number
/// comparisons are false. Strict: the latter throws TypeMismatch.
bool evaluate(const Query& q, const std::map<std::string, Scalar, std::less<>>& row, MatchMode mode = MatchMode::Lenient);

}  // namespace xman
