#include "xman/query.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xman/error.hpp"

namespace xman {
namespace {

template <class F>
std::pair<Errc, std::size_t> query_error_of(F&& f) {
  try {
    f();
  } catch (const QueryError& e) {
    return {e.code(), e.position()};
  }
  ADD_FAILURE() << "expected a QueryError";
  return {Errc::IoFailure, 0};
}

Query cmp(const std::string& key, CompareOp op, Scalar v) { return Query::compare(key, op, std::move(v)); }

TEST(ParseQuery, LrSeedQuery) {
  Query q = parse_query("info.status == 'COMPLETE' & config.optimizer.lr <= 1.");
  Query expected = Query::conj({cmp("info.status", CompareOp::Eq, std::string("COMPLETE")),
                                cmp("config.optimizer.lr", CompareOp::Le, 1.0)});
  EXPECT_EQ(q, expected);
  EXPECT_EQ(to_string(q), "info.status == 'COMPLETE' & config.optimizer.lr <= 1.0");
}

TEST(ParseQuery, EmptyIsMatchAll) {
  EXPECT_EQ(parse_query(""), Query::all());
  EXPECT_EQ(parse_query("  \t "), Query::all());
  EXPECT_TRUE(evaluate(parse_query(""), {}));
}

TEST(ParseQuery, Precedence) {
  Query a = cmp("a", CompareOp::Eq, std::int64_t{1});
  Query b = cmp("b", CompareOp::Eq, std::int64_t{2});
  Query c = cmp("c", CompareOp::Eq, std::int64_t{3});
  EXPECT_EQ(parse_query("a == 1 | b == 2 & c == 3"), Query::disj({a, Query::conj({b, c})}));
  EXPECT_EQ(parse_query("(a == 1 | b == 2) & c == 3"), Query::conj({Query::disj({a, b}), c}));
  EXPECT_EQ(parse_query("~a == 1 & b == 2"), Query::conj({Query::negate(a), b}));
  EXPECT_EQ(parse_query("~(a == 1 & b == 2)"), Query::negate(Query::conj({a, b})));
  EXPECT_EQ(parse_query("~~a==1"), Query::negate(Query::negate(a)));
  EXPECT_EQ(parse_query("a == 1 | b == 2 | c == 3"), Query::disj({a, b, c}));
}

TEST(ParseQuery, LiteralsAndOperators) {
  EXPECT_EQ(parse_query("k != \"it's\""), cmp("k", CompareOp::Ne, std::string("it's")));
  EXPECT_EQ(parse_query("k < 'a\\'b'"), cmp("k", CompareOp::Lt, std::string("a'b")));
  EXPECT_EQ(parse_query("k > -2"), cmp("k", CompareOp::Gt, std::int64_t{-2}));
  EXPECT_EQ(parse_query("k >= 1e-3"), cmp("k", CompareOp::Ge, 1e-3));
  EXPECT_EQ(parse_query("k == True"), cmp("k", CompareOp::Eq, true));
  EXPECT_EQ(parse_query("k == false"), cmp("k", CompareOp::Eq, false));
  EXPECT_EQ(parse_query("k == '10'"), cmp("k", CompareOp::Eq, std::string("10")));
  EXPECT_EQ(parse_query("config.method in ['RF', 'GD', 3]"),
            Query::in("config.method", {std::string("RF"), std::string("GD"), std::int64_t{3}}));
  EXPECT_EQ(parse_query("a-b_c.d2 == 1"), cmp("a-b_c.d2", CompareOp::Eq, std::int64_t{1}));
}

TEST(ParseQuery, Errors) {
  EXPECT_EQ(query_error_of([] { parse_query("a = 1"); }), std::make_pair(Errc::UnknownOperator, std::size_t{2}));
  EXPECT_EQ(query_error_of([] { parse_query("a => 1"); }).first, Errc::UnknownOperator);
  EXPECT_EQ(query_error_of([] { parse_query("a === 1"); }).first, Errc::UnknownOperator);
  EXPECT_EQ(query_error_of([] { parse_query("a like 'x'"); }), std::make_pair(Errc::UnknownOperator, std::size_t{2}));
  EXPECT_EQ(query_error_of([] { parse_query("a == "); }), std::make_pair(Errc::SyntaxError, std::size_t{5}));
  EXPECT_EQ(query_error_of([] { parse_query("(a == 1"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a == 'x"); }), std::make_pair(Errc::SyntaxError, std::size_t{5}));
  EXPECT_EQ(query_error_of([] { parse_query("a == COMPLETE"); }), std::make_pair(Errc::SyntaxError, std::size_t{5}));
  EXPECT_EQ(query_error_of([] { parse_query("a == 1 b == 2"); }), std::make_pair(Errc::SyntaxError, std::size_t{7}));
  EXPECT_EQ(query_error_of([] { parse_query("== 1"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a in 1"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a in []"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a == 1 &"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a == 1e"); }).first, Errc::SyntaxError);
  EXPECT_EQ(query_error_of([] { parse_query("a.. == 1"); }).first, Errc::SyntaxError);
}

// ---- independent Pratt-parser oracle ---------------------------------------------

struct ONode {
  char kind;          // 'a' atom, '~', '&', '|'
  std::string atom;   // canonical text of a comparison
  std::vector<ONode> kids;
  friend bool operator==(const ONode&, const ONode&) = default;
};

ONode flatten(ONode n) {
  for (auto& k : n.kids) k = flatten(std::move(k));
  if (n.kind != '&' && n.kind != '|') return n;
  std::vector<ONode> flat;
  for (auto& k : n.kids) {
    if (k.kind == n.kind) {
      for (auto& g : k.kids) flat.push_back(std::move(g));
    } else {
      flat.push_back(std::move(k));
    }
  }
  n.kids = std::move(flat);
  return n;
}

ONode from_query(const Query& q) {
  switch (q.kind) {
    case QueryKind::Compare:
    case QueryKind::In:
      return ONode{'a', to_string(q), {}};
    case QueryKind::Not:
      return ONode{'~', {}, {from_query(q.children[0])}};
    case QueryKind::And:
    case QueryKind::Or: {
      ONode n{q.kind == QueryKind::And ? '&' : '|', {}, {}};
      for (const auto& c : q.children) n.kids.push_back(from_query(c));
      return n;
    }
    case QueryKind::All:
      break;
  }
  return ONode{'0', {}, {}};
}

// Tokens are separated by single spaces in generated text; atoms are pre-joined by '\x1f'.
class Pratt {
 public:
  explicit Pratt(std::vector<std::string> toks) : toks_(std::move(toks)) {}
  ONode parse() {
    ONode n = expr(0);
    EXPECT_EQ(pos_, toks_.size());
    return n;
  }

 private:
  static int lbp(const std::string& t) { return t == "|" ? 1 : t == "&" ? 3 : -1; }
  ONode expr(int min_bp) {
    ONode lhs = prefix();
    for (;;) {
      if (pos_ >= toks_.size()) break;
      int bp = lbp(toks_[pos_]);
      if (bp < 0 || bp < min_bp) break;
      char op = toks_[pos_++][0];
      ONode rhs = expr(bp + 1);
      lhs = ONode{op, {}, {std::move(lhs), std::move(rhs)}};
    }
    return lhs;
  }
  ONode prefix() {
    const std::string& t = toks_.at(pos_++);
    if (t == "~") return ONode{'~', {}, {expr(5)}};
    if (t == "(") {
      ONode inner = expr(0);
      EXPECT_EQ(toks_.at(pos_), ")");
      ++pos_;
      return inner;
    }
    std::string atom = t;
    for (char& c : atom)
      if (c == '\x1f') c = ' ';
    return ONode{'a', atom, {}};
  }
  std::vector<std::string> toks_;
  std::size_t pos_ = 0;
};

struct Generated {
  std::string text;
  std::vector<std::string> tokens;
};

class ExprGen {
 public:
  explicit ExprGen(unsigned seed) : rng_(seed) {}

  Generated make() {
    Generated g;
    emit(g, 0);
    return g;
  }

  Scalar literal() {
    switch (rng_() % 5) {
      case 0: return static_cast<std::int64_t>(static_cast<int>(rng_() % 2001) - 1000);
      case 1: {
        double mant = std::uniform_real_distribution<double>(-10.0, 10.0)(rng_);
        int exp = static_cast<int>(rng_() % 13) - 6;
        return mant * std::pow(10.0, exp);
      }
      case 2: return rng_() % 2 == 0;
      default: {
        static const std::string chars = "abcXYZ 019_-.'\"\\,[]()&|~=<>";
        std::string s;
        std::size_t n = rng_() % 6;
        for (std::size_t i = 0; i < n; ++i) s += chars[rng_() % chars.size()];
        return s;
      }
    }
  }

  std::string key() {
    static const std::vector<std::string> keys = {"a", "b", "config.lr", "info.status", "x_1.y-z", "in", "inx"};
    return keys[rng_() % keys.size()];
  }

  Query tree(int depth) {
    int choice = static_cast<int>(rng_() % (depth >= 4 ? 2 : 5));
    switch (choice) {
      case 0: return Query::compare(key(), static_cast<CompareOp>(rng_() % 6), literal());
      case 1: {
        std::vector<Scalar> lits;
        std::size_t n = 1 + rng_() % 3;
        for (std::size_t i = 0; i < n; ++i) lits.push_back(literal());
        return Query::in(key(), std::move(lits));
      }
      case 2: return Query::negate(tree(depth + 1));
      default: {
        std::vector<Query> kids;
        std::size_t n = 2 + rng_() % 2;
        for (std::size_t i = 0; i < n; ++i) kids.push_back(tree(depth + 1));
        return choice == 3 ? Query::conj(std::move(kids)) : Query::disj(std::move(kids));
      }
    }
  }

 private:
  void emit(Generated& g, int depth) {
    int choice = static_cast<int>(rng_() % (depth >= 5 ? 1 : 6));
    auto push = [&](const std::string& tok, const std::string& text) {
      g.tokens.push_back(tok);
      if (!g.text.empty()) g.text += std::string(1 + rng_() % 2, ' ');
      g.text += text;
    };
    switch (choice) {
      case 0: {
        Query atom = rng_() % 4 == 0 ? Query::in(key(), {literal(), literal()})
                                     : Query::compare(key(), static_cast<CompareOp>(rng_() % 6), literal());
        std::string text = to_string(atom);
        std::string tok = text;
        for (char& c : tok)
          if (c == ' ') c = '\x1f';
        push(tok, text);
        break;
      }
      case 1:
        push("~", "~");
        emit(g, depth + 1);
        break;
      case 2:
        push("(", "(");
        emit(g, depth + 1);
        push(")", ")");
        break;
      case 3:
      case 4:
        emit(g, depth + 1);
        push("&", "&");
        emit(g, depth + 1);
        break;
      default:
        emit(g, depth + 1);
        push("|", "|");
        emit(g, depth + 1);
        break;
    }
  }
  std::mt19937 rng_;
};

TEST(ParseQuery, MatchesPrattOracleOnRandomExpressions) {
  ExprGen gen(20240611);
  for (int i = 0; i < 1000; ++i) {
    Generated g = gen.make();
    ONode oracle = flatten(Pratt(g.tokens).parse());
    ONode ours = flatten(from_query(parse_query(g.text)));
    ASSERT_EQ(ours, oracle) << g.text;
  }
}

TEST(ParseQuery, PrinterRoundTripsRandomTrees) {
  ExprGen gen(99);
  for (int i = 0; i < 1000; ++i) {
    Query q = gen.tree(0);
    std::string text = to_string(q);
    ASSERT_EQ(parse_query(text), q) << text;
  }
}

TEST(QueryKeys, CollectsDistinctKeys) {
  EXPECT_EQ(query_keys(parse_query("b == 1 & (a in [1] | ~b < 2)")), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(query_keys(Query::all()).empty());
}

TEST(Evaluate, Semantics) {
  std::map<std::string, Scalar, std::less<>> row = {{"i", std::int64_t{3}},
                                                    {"f", 1.0},
                                                    {"t", std::string("COMPLETE")},
                                                    {"b", true},
                                                    {"n", Scalar{}}};
  auto eval = [&](std::string_view q) { return evaluate(parse_query(q), row); };
  EXPECT_TRUE(eval("i == 3.0"));
  EXPECT_TRUE(eval("f <= 1"));
  EXPECT_TRUE(eval("f == 1"));
  EXPECT_FALSE(eval("f < 1"));
  EXPECT_TRUE(eval("t == 'COMPLETE'"));
  EXPECT_TRUE(eval("t > 'ABC'"));
  EXPECT_TRUE(eval("b == true & b != false"));
  EXPECT_FALSE(eval("missing == 1"));
  EXPECT_FALSE(eval("missing != 1"));
  EXPECT_TRUE(eval("~missing == 1"));
  EXPECT_FALSE(eval("n == 1"));
  EXPECT_FALSE(eval("t == 1"));
  EXPECT_FALSE(eval("b == 1"));
  EXPECT_TRUE(eval("i in [1, 2, 3.0]"));
  EXPECT_TRUE(eval("t in [1, 'COMPLETE']"));
  EXPECT_FALSE(eval("i in ['3']"));
  EXPECT_TRUE(eval("i > 2 & (t == 'X' | f >= 1.)"));

  auto strict = [&](std::string_view q) { return evaluate(parse_query(q), row, MatchMode::Strict); };
  EXPECT_THROW(strict("t == 1"), Error);
  EXPECT_THROW(strict("i in ['3']"), Error);
  EXPECT_TRUE(strict("t in [1, 'COMPLETE']"));
  EXPECT_FALSE(strict("missing == 1"));
  try {
    strict("t < 2");
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TypeMismatch);
  }
}

}  // namespace
}  // namespace xman
