#pragma once

#include <cctype>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/kernel.hpp"

namespace gpreg {
namespace detail {

// Grammar:
//   expr   := term ('+' term)*
//   term   := factor ('*' factor)*
//   factor := NAME '(' NAME (',' NAME)* ')' | '(' expr ')'
// '+' binds looser than '*'; kernel names are case-insensitive.
class KernelParser {
 public:
  explicit KernelParser(const std::string& text) : text_(text) {}

  KernelExpr parse() {
    KernelExpr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size())
      throw SyntaxError("unexpected trailing input '" + text_.substr(pos_) +
                        "'", pos_);
    return e;
  }

 private:
  KernelExpr parse_expr() {
    std::vector<KernelExpr> terms;
    terms.push_back(parse_term());
    while (accept('+')) terms.push_back(parse_term());
    return KernelExpr::sum(std::move(terms));
  }

  KernelExpr parse_term() {
    std::vector<KernelExpr> factors;
    factors.push_back(parse_factor());
    while (accept('*')) factors.push_back(parse_factor());
    return KernelExpr::product(std::move(factors));
  }

  KernelExpr parse_factor() {
    skip_ws();
    if (accept('(')) {
      KernelExpr e = parse_expr();
      expect(')');
      return e;
    }
    const std::size_t name_pos = pos_;
    const std::string name = parse_name("kernel name");
    BaseKernel k;
    try {
      k.kind = kernel_kind_from_string(name);
    } catch (const UnknownKernel&) {
      throw UnknownKernel("unknown kernel '" + name + "' at position " +
                          std::to_string(name_pos) +
                          " (known: SE, Mat32, Mat52, Periodic)");
    }
    expect('(');
    k.features.push_back(parse_name("feature name"));
    while (accept(',')) k.features.push_back(parse_name("feature name"));
    expect(')');
    if (k.kind == KernelKind::Periodic && k.features.size() != 1)
      throw ArityError("Periodic takes exactly one feature, got " +
                       std::to_string(k.features.size()));
    for (std::size_t a = 0; a < k.features.size(); ++a)
      for (std::size_t b = a + 1; b < k.features.size(); ++b)
        if (k.features[a] == k.features[b])
          throw ArityError("duplicate feature '" + k.features[a] +
                           "' in kernel '" + name + "'");
    return KernelExpr::leaf(std::move(k));
  }

  std::string parse_name(const char* what) {
    skip_ws();
    const std::size_t start = pos_;
    auto head = [](char c) {
      return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
    };
    auto tail = [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    };
    if (pos_ >= text_.size() || !head(text_[pos_]))
      throw SyntaxError(std::string("expected ") + what, pos_);
    ++pos_;
    while (pos_ < text_.size() && tail(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c)
      throw SyntaxError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline KernelExpr parse_kernel_expr(const std::string& text) {
  return detail::KernelParser(text).parse();
}

// Canonical form: parse(print(e)) reproduces the structure of e. Products
// parenthesize sum children; leaf features keep their order.
inline std::string print_kernel_expr(const KernelExpr& e) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf: {
      std::string s = kernel_kind_name(e.base().kind);
      s += '(';
      for (std::size_t i = 0; i < e.base().features.size(); ++i) {
        if (i) s += ", ";
        s += e.base().features[i];
      }
      s += ')';
      return s;
    }
    case KernelExpr::Node::Sum: {
      std::string s;
      for (std::size_t i = 0; i < e.children().size(); ++i) {
        if (i) s += " + ";
        s += print_kernel_expr(e.children()[i]);
      }
      return s;
    }
    case KernelExpr::Node::Product: {
      std::string s;
      for (std::size_t i = 0; i < e.children().size(); ++i) {
        if (i) s += " * ";
        const auto& c = e.children()[i];
        if (c.node() == KernelExpr::Node::Sum)
          s += "(" + print_kernel_expr(c) + ")";
        else
          s += print_kernel_expr(c);
      }
      return s;
    }
  }
  throw Error("unreachable kernel node");
}

// Same tree shape, kinds, and feature lists; hyperparameter values ignored.
inline bool structurally_equal(const KernelExpr& a, const KernelExpr& b) {
  if (a.node() != b.node()) return false;
  if (a.is_leaf())
    return a.base().kind == b.base().kind &&
           a.base().features == b.base().features;
  if (a.children().size() != b.children().size()) return false;
  for (std::size_t i = 0; i < a.children().size(); ++i)
    if (!structurally_equal(a.children()[i], b.children()[i])) return false;
  return true;
}

}  // namespace gpreg
