#include "xman/query.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace xman {

namespace {

bool key_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool key_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-'; }
bool op_char(char c) { return c == '=' || c == '!' || c == '<' || c == '>'; }

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Query parse() {
    skip_ws();
    if (pos_ == text_.size()) return Query::all();
    Query q = parse_or();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return q;
  }

 private:
  [[noreturn]] void fail(const std::string& msg, Errc code = Errc::SyntaxError) const { fail_at(pos_, msg, code); }
  [[noreturn]] void fail_at(std::size_t at, const std::string& msg, Errc code = Errc::SyntaxError) const {
    throw QueryError(code, at, "at offset " + std::to_string(at) + ": " + msg);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool at(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  Query parse_or() {
    std::vector<Query> parts{parse_and()};
    while (at('|')) {
      ++pos_;
      parts.push_back(parse_and());
    }
    return parts.size() == 1 ? std::move(parts.front()) : Query::disj(std::move(parts));
  }

  Query parse_and() {
    std::vector<Query> parts{parse_not()};
    while (at('&')) {
      ++pos_;
      parts.push_back(parse_not());
    }
    return parts.size() == 1 ? std::move(parts.front()) : Query::conj(std::move(parts));
  }

  Query parse_not() {
    if (at('~')) {
      ++pos_;
      return Query::negate(parse_not());
    }
    return parse_primary();
  }

  Query parse_primary() {
    skip_ws();
    if (pos_ == text_.size()) fail("unexpected end of query");
    if (text_[pos_] == '(') {
      ++pos_;
      Query q = parse_or();
      if (!at(')')) fail(pos_ == text_.size() ? "missing ')'" : "expected ')'");
      ++pos_;
      return q;
    }
    return parse_comparison();
  }

  std::string parse_key() {
    skip_ws();
    const std::size_t start = pos_;
    if (pos_ == text_.size() || !key_start(text_[pos_])) fail("expected a key");
    while (pos_ < text_.size() && key_char(text_[pos_])) ++pos_;
    std::string key(text_.substr(start, pos_ - start));
    if (key.back() == '.' || key.find("..") != std::string::npos) fail_at(start, "malformed key '" + key + "'");
    return key;
  }

  Query parse_comparison() {
    std::string key = parse_key();
    skip_ws();
    const std::size_t op_pos = pos_;
    if (pos_ < text_.size() && key_start(text_[pos_])) {
      std::size_t end = pos_;
      while (end < text_.size() && key_char(text_[end])) ++end;
      std::string_view word = text_.substr(pos_, end - pos_);
      if (word != "in") fail_at(op_pos, "unknown operator '" + std::string(word) + "'", Errc::UnknownOperator);
      pos_ = end;
      return Query::in(std::move(key), parse_list());
    }
    std::size_t end = pos_;
    while (end < text_.size() && op_char(text_[end])) ++end;
    std::string_view sym = text_.substr(pos_, end - pos_);
    if (sym.empty()) fail("expected a comparison operator after '" + key + "'");
    CompareOp op;
    if (sym == "==") op = CompareOp::Eq;
    else if (sym == "!=") op = CompareOp::Ne;
    else if (sym == "<") op = CompareOp::Lt;
    else if (sym == ">") op = CompareOp::Gt;
    else if (sym == "<=") op = CompareOp::Le;
    else if (sym == ">=") op = CompareOp::Ge;
    else fail_at(op_pos, "unknown operator '" + std::string(sym) + "'", Errc::UnknownOperator);
    pos_ = end;
    return Query::compare(std::move(key), op, parse_literal());
  }

  std::vector<Scalar> parse_list() {
    if (!at('[')) fail("expected '[' after 'in'");
    ++pos_;
    std::vector<Scalar> items{parse_literal()};
    while (at(',')) {
      ++pos_;
      items.push_back(parse_literal());
    }
    if (!at(']')) fail(pos_ == text_.size() ? "missing ']'" : "expected ',' or ']'");
    ++pos_;
    return items;
  }

  Scalar parse_literal() {
    skip_ws();
    if (pos_ == text_.size()) fail("expected a literal");
    const std::size_t start = pos_;
    const char c = text_[pos_];
    if (c == '\'' || c == '"') {
      ++pos_;
      std::string out;
      while (pos_ < text_.size() && text_[pos_] != c) {
        char ch = text_[pos_++];
        if (ch == '\\') {
          if (pos_ == text_.size()) break;
          char esc = text_[pos_++];
          ch = esc == 'n' ? '\n' : esc == 't' ? '\t' : esc;
        }
        out += ch;
      }
      if (pos_ == text_.size()) fail_at(start, "unterminated string literal");
      ++pos_;
      return out;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.') {
      std::size_t end = pos_ + 1;
      while (end < text_.size()) {
        char d = text_[end];
        bool exp_sign = (d == '-' || d == '+') && (text_[end - 1] == 'e' || text_[end - 1] == 'E');
        if (!(std::isdigit(static_cast<unsigned char>(d)) || d == '.' || d == 'e' || d == 'E' || exp_sign)) break;
        ++end;
      }
      std::string_view token = text_.substr(pos_, end - pos_);
      Scalar v = parse_scalar(token);
      if (!is_number(v)) fail_at(start, "malformed number '" + std::string(token) + "'");
      pos_ = end;
      return v;
    }
    if (key_start(c)) {
      std::size_t end = pos_;
      while (end < text_.size() && key_char(text_[end])) ++end;
      std::string_view word = text_.substr(pos_, end - pos_);
      if (word == "true" || word == "True" || word == "TRUE") {
        pos_ = end;
        return true;
      }
      if (word == "false" || word == "False" || word == "FALSE") {
        pos_ = end;
        return false;
      }
      fail_at(start, "expected a literal, found '" + std::string(word) + "' (quote text values)");
    }
    fail_at(start, "expected a literal");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string literal_text(const Scalar& v) {
  if (auto* s = std::get_if<std::string>(&v)) {
    std::string out = "'";
    for (char c : *s) {
      if (c == '\\' || c == '\'') out += '\\';
      if (c == '\n') {
        out += "\\n";
        continue;
      }
      if (c == '\t') {
        out += "\\t";
        continue;
      }
      out += c;
    }
    return out + "'";
  }
  return format_scalar(v);
}

void collect_keys(const Query& q, std::set<std::string>& out) {
  if (!q.key.empty()) out.insert(q.key);
  for (const auto& c : q.children) collect_keys(c, out);
}

enum class Order { Less, Equal, Greater, Unordered, Mismatch };

Order order(const Scalar& a, const Scalar& b) {
  auto cmp = [](const auto& x, const auto& y) { return x < y ? Order::Less : y < x ? Order::Greater : Order::Equal; };
  if (is_number(a) && is_number(b)) {
    auto* ia = std::get_if<std::int64_t>(&a);
    auto* ib = std::get_if<std::int64_t>(&b);
    if (ia && ib) return cmp(*ia, *ib);
    double da = *as_double(a), db = *as_double(b);
    if (std::isnan(da) || std::isnan(db)) return Order::Unordered;
    return cmp(da, db);
  }
  if (auto* ta = std::get_if<std::string>(&a))
    if (auto* tb = std::get_if<std::string>(&b)) return cmp(*ta, *tb);
  if (auto* ba = std::get_if<bool>(&a))
    if (auto* bb = std::get_if<bool>(&b)) return cmp(*ba, *bb);
  return Order::Mismatch;
}

bool holds(Order o, CompareOp op) {
  if (o == Order::Unordered) return op == CompareOp::Ne;
  switch (op) {
    case CompareOp::Eq: return o == Order::Equal;
    case CompareOp::Ne: return o != Order::Equal;
    case CompareOp::Lt: return o == Order::Less;
    case CompareOp::Gt: return o == Order::Greater;
    case CompareOp::Le: return o == Order::Less || o == Order::Equal;
    case CompareOp::Ge: return o == Order::Greater || o == Order::Equal;
  }
  return false;
}

[[noreturn]] void mismatch(const std::string& key, const Scalar& value, const Scalar& literal) {
  throw Error(Errc::TypeMismatch, "'" + key + "' holds " + literal_text(value) + ", not comparable with " +
                                      literal_text(literal));
}

}  // namespace

QueryError::QueryError(Errc code, std::size_t position, const std::string& msg)
    : Error(code, msg), position_(position) {}

std::string_view to_string(CompareOp op) noexcept {
  switch (op) {
    case CompareOp::Eq: return "==";
    case CompareOp::Ne: return "!=";
    case CompareOp::Lt: return "<";
    case CompareOp::Gt: return ">";
    case CompareOp::Le: return "<=";
    case CompareOp::Ge: return ">=";
  }
  return "==";
}

Query Query::compare(std::string key, CompareOp op, Scalar literal) {
  Query q;
  q.kind = QueryKind::Compare;
  q.key = std::move(key);
  q.op = op;
  q.literals = {std::move(literal)};
  return q;
}

Query Query::in(std::string key, std::vector<Scalar> literals) {
  Query q;
  q.kind = QueryKind::In;
  q.key = std::move(key);
  q.literals = std::move(literals);
  return q;
}

Query Query::negate(Query inner) {
  Query q;
  q.kind = QueryKind::Not;
  q.children.push_back(std::move(inner));
  return q;
}

Query Query::conj(std::vector<Query> qs) {
  Query q;
  q.kind = QueryKind::And;
  q.children = std::move(qs);
  return q;
}

Query Query::disj(std::vector<Query> qs) {
  Query q;
  q.kind = QueryKind::Or;
  q.children = std::move(qs);
  return q;
}

Query parse_query(std::string_view text) { return Parser(text).parse(); }

std::string to_string(const Query& q) {
  auto wrapped = [](const Query& c, bool paren) { return paren ? "(" + to_string(c) + ")" : to_string(c); };
  switch (q.kind) {
    case QueryKind::All:
      return "";
    case QueryKind::Compare:
      return q.key + " " + std::string(to_string(q.op)) + " " + literal_text(q.literals.front());
    case QueryKind::In: {
      std::string out = q.key + " in [";
      for (std::size_t i = 0; i < q.literals.size(); ++i) out += (i ? ", " : "") + literal_text(q.literals[i]);
      return out + "]";
    }
    case QueryKind::Not: {
      const Query& c = q.children.front();
      return "~" + wrapped(c, c.kind == QueryKind::And || c.kind == QueryKind::Or);
    }
    case QueryKind::And:
    case QueryKind::Or: {
      const bool is_and = q.kind == QueryKind::And;
      std::string out;
      for (std::size_t i = 0; i < q.children.size(); ++i) {
        const Query& c = q.children[i];
        bool paren = c.kind == QueryKind::Or || (is_and && c.kind == QueryKind::And);
        out += (i ? (is_and ? " & " : " | ") : "") + wrapped(c, paren);
      }
      return out;
    }
  }
  return "";
}

std::vector<std::string> query_keys(const Query& q) {
  std::set<std::string> keys;
  collect_keys(q, keys);
  return {keys.begin(), keys.end()};
}

bool evaluate(const Query& q, const std::map<std::string, Scalar, std::less<>>& row, MatchMode mode) {
  switch (q.kind) {
    case QueryKind::All:
      return true;
    case QueryKind::Not:
      return !evaluate(q.children.front(), row, mode);
    case QueryKind::And:
      return std::all_of(q.children.begin(), q.children.end(), [&](const Query& c) { return evaluate(c, row, mode); });
    case QueryKind::Or:
      return std::any_of(q.children.begin(), q.children.end(), [&](const Query& c) { return evaluate(c, row, mode); });
    case QueryKind::Compare: {
      auto it = row.find(q.key);
      if (it == row.end() || std::holds_alternative<std::monostate>(it->second)) return false;
      Order o = order(it->second, q.literals.front());
      if (o == Order::Mismatch) {
        if (mode == MatchMode::Strict) mismatch(q.key, it->second, q.literals.front());
        return false;
      }
      return holds(o, q.op);
    }
    case QueryKind::In: {
      auto it = row.find(q.key);
      if (it == row.end() || std::holds_alternative<std::monostate>(it->second)) return false;
      bool comparable = false;
      for (const auto& lit : q.literals) {
        Order o = order(it->second, lit);
        if (o == Order::Mismatch) continue;
        comparable = true;
        if (o == Order::Equal) return true;
      }
      if (!comparable && mode == MatchMode::Strict) mismatch(q.key, it->second, q.literals.front());
      return false;
    }
  }
  return false;
}

}  // namespace xman
