#ifndef CALIMPUTE_EDITS_HPP
#define CALIMPUTE_EDITS_HPP

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "calimpute/error.hpp"

namespace calimpute {

/// Values of named variables for one record (observed, imputed or trial).
using Assignment = std::map<std::string, double, std::less<>>;

enum class EditKind { Equality, Inequality };

/// One linear edit in canonical form: a.x + b = 0 or a.x + b >= 0.
struct Edit {
  std::map<std::string, double, std::less<>> coeffs;
  double constant = 0.0;
  EditKind kind = EditKind::Inequality;

  bool is_equality() const noexcept { return kind == EditKind::Equality; }

  /// a.x + b at the given values; every referenced variable must be present.
  double evaluate(const Assignment& row) const {
    double s = constant;
    for (const auto& [name, a] : coeffs) {
      auto it = row.find(name);
      if (it == row.end()) throw DataError("no value for variable '" + name + "'");
      s += a * it->second;
    }
    return s;
  }

  friend bool operator==(const Edit&, const Edit&) = default;
};

/// An ordered edit list plus the variables it references, in first-use order.
class EditSystem {
public:
  EditSystem() = default;

  explicit EditSystem(std::vector<Edit> edits) {
    for (auto& e : edits) add(std::move(e));
  }

  /// Appends an edit; new variables are recorded in `appearance_order`
  /// first, then in name order.
  void add(Edit e, const std::vector<std::string>& appearance_order = {}) {
    std::erase_if(e.coeffs, [](const auto& kv) { return kv.second == 0.0; });
    if (e.coeffs.empty()) throw DataError("edit has no variables with a nonzero coefficient");
    for (const auto& v : appearance_order)
      if (e.coeffs.contains(v)) note_variable(v);
    for (const auto& [name, a] : e.coeffs) note_variable(name);
    edits_.push_back(std::move(e));
  }

  const std::vector<Edit>& edits() const noexcept { return edits_; }
  const std::vector<std::string>& variables() const noexcept { return variables_; }
  std::size_t size() const noexcept { return edits_.size(); }
  bool empty() const noexcept { return edits_.empty(); }
  const Edit& operator[](std::size_t k) const { return edits_[k]; }

  bool references(std::string_view name) const {
    return std::find(variables_.begin(), variables_.end(), name) != variables_.end();
  }

  friend bool operator==(const EditSystem&, const EditSystem&) = default;

private:
  void note_variable(const std::string& v) {
    if (std::find(variables_.begin(), variables_.end(), v) == variables_.end()) variables_.push_back(v);
  }

  std::vector<Edit> edits_;
  std::vector<std::string> variables_;
};

/// Edits left for one record after its known values were substituted.
struct ReducedSystem {
  std::vector<Edit> edits;
  std::size_t origin = 0;

  /// Variables still unknown, sorted by name.
  std::vector<std::string> variables() const {
    std::set<std::string> names;
    for (const auto& e : edits)
      for (const auto& [name, a] : e.coeffs) names.insert(name);
    return {names.begin(), names.end()};
  }
};

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class EditLexer {
public:
  enum class Tok { Number, Ident, Plus, Minus, Star, Eq, Ge, Le, End };

  EditLexer(std::string_view text, std::size_t line) : text_(text), line_(line) {}

  Tok peek() {
    if (!has_) advance();
    return tok_;
  }
  Tok next() {
    Tok t = peek();
    has_ = false;
    return t;
  }
  double number() const { return number_; }
  const std::string& ident() const { return ident_; }
  std::size_t column() const { return start_ + 1; }
  std::size_t line() const { return line_; }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, line_, column()); }

private:
  static bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
  static bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  }
  static bool digit(char c) { return c >= '0' && c <= '9'; }

  void advance() {
    has_ = true;
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    start_ = pos_;
    if (pos_ >= text_.size()) {
      tok_ = Tok::End;
      return;
    }
    char c = text_[pos_];
    if (digit(c) || (c == '.' && pos_ + 1 < text_.size() && digit(text_[pos_ + 1]))) {
      lex_number();
      return;
    }
    if (ident_start(c)) {
      std::size_t b = pos_;
      while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
      ident_.assign(text_.substr(b, pos_ - b));
      tok_ = Tok::Ident;
      return;
    }
    ++pos_;
    switch (c) {
      case '+': tok_ = Tok::Plus; return;
      case '-': tok_ = Tok::Minus; return;
      case '*': tok_ = Tok::Star; return;
      case '=':
        if (pos_ < text_.size() && text_[pos_] == '=') fail("unexpected '==', use '='");
        tok_ = Tok::Eq;
        return;
      case '>':
        if (pos_ < text_.size() && text_[pos_] == '=') {
          ++pos_;
          tok_ = Tok::Ge;
          return;
        }
        fail("strict inequality '>' is not allowed, use '>='");
      case '<':
        if (pos_ < text_.size() && text_[pos_] == '=') {
          ++pos_;
          tok_ = Tok::Le;
          return;
        }
        fail("strict inequality '<' is not allowed, use '<='");
      default:
        fail(std::string("unknown token '") + c + "'");
    }
  }

  void lex_number() {
    std::size_t b = pos_;
    while (pos_ < text_.size() && digit(text_[pos_])) ++pos_;
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      while (pos_ < text_.size() && digit(text_[pos_])) ++pos_;
    }
    // exponent only when digits follow, so "2e" lexes as 2 followed by ident e
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && digit(text_[p])) {
        pos_ = p;
        while (pos_ < text_.size() && digit(text_[pos_])) ++pos_;
      }
    }
    auto sv = text_.substr(b, pos_ - b);
    auto res = std::from_chars(sv.data(), sv.data() + sv.size(), number_);
    if (res.ec != std::errc{} || res.ptr != sv.data() + sv.size()) fail("malformed number '" + std::string(sv) + "'");
    tok_ = Tok::Number;
  }

  std::string_view text_;
  std::size_t line_;
  std::size_t pos_ = 0;
  std::size_t start_ = 0;
  bool has_ = false;
  Tok tok_ = Tok::End;
  double number_ = 0.0;
  std::string ident_;
};

struct ParsedSide {
  std::map<std::string, double, std::less<>> coeffs;
  std::vector<std::string> order;
  double constant = 0.0;
};

inline ParsedSide parse_expr(EditLexer& lex) {
  using Tok = EditLexer::Tok;
  ParsedSide side;
  bool first = true;
  for (;;) {
    double sign = 1.0;
    Tok t = lex.peek();
    if (t == Tok::Plus || t == Tok::Minus) {
      lex.next();
      sign = t == Tok::Minus ? -1.0 : 1.0;
      // a signed literal may follow the operator, as in "x + -1"
      const Tok unary = lex.peek();
      if (!first && (unary == Tok::Plus || unary == Tok::Minus)) {
        lex.next();
        if (unary == Tok::Minus) sign = -sign;
      }
    } else if (!first) {
      break;
    }
    t = lex.next();
    if (t == Tok::Number) {
      double value = lex.number();
      Tok after = lex.peek();
      if (after == Tok::Star) {
        lex.next();
        if (lex.next() != Tok::Ident) lex.fail("expected a variable name after '*'");
        after = Tok::Ident;
      } else if (after == Tok::Ident) {
        lex.next();
      }
      if (after == Tok::Ident) {
        const auto& name = lex.ident();
        if (!side.coeffs.contains(name)) side.order.push_back(name);
        side.coeffs[name] += sign * value;
      } else {
        side.constant += sign * value;
      }
    } else if (t == Tok::Ident) {
      const auto& name = lex.ident();
      if (!side.coeffs.contains(name)) side.order.push_back(name);
      side.coeffs[name] += sign;
    } else {
      lex.fail("expected a number or a variable name");
    }
    first = false;
  }
  return side;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

} // namespace detail

/// Parses one rule such as "net + tax = gross" or "gross >= 3*tax".
/// Returns the edit and its variables in order of appearance.
inline Edit parse_edit(std::string_view text, std::size_t line = 1,
                       std::vector<std::string>* appearance = nullptr) {
  using Tok = detail::EditLexer::Tok;
  detail::EditLexer lex(text, line);
  auto lhs = detail::parse_expr(lex);
  Tok rel = lex.next();
  if (rel != Tok::Eq && rel != Tok::Ge && rel != Tok::Le) lex.fail("expected '=', '>=' or '<='");
  auto rhs = detail::parse_expr(lex);
  if (lex.next() != Tok::End) lex.fail("unexpected trailing input");

  // lhs - rhs (= | >=) 0, or rhs - lhs >= 0 for '<='
  const double s = rel == Tok::Le ? -1.0 : 1.0;
  Edit e;
  e.kind = rel == Tok::Eq ? EditKind::Equality : EditKind::Inequality;
  e.constant = s * (lhs.constant - rhs.constant);
  for (const auto& [n, a] : lhs.coeffs) e.coeffs[n] += s * a;
  for (const auto& [n, a] : rhs.coeffs) e.coeffs[n] -= s * a;
  std::erase_if(e.coeffs, [](const auto& kv) { return kv.second == 0.0; });
  if (e.coeffs.empty()) throw ParseError("edit has no variables after simplification", line, 1);
  if (appearance) {
    appearance->clear();
    for (const auto* side : {&lhs, &rhs})
      for (const auto& n : side->order)
        if (e.coeffs.contains(n) && std::find(appearance->begin(), appearance->end(), n) == appearance->end())
          appearance->push_back(n);
  }
  return e;
}

/// Parses edit-DSL source: one rule per line, '#' starts a comment.
inline EditSystem parse_edit_rules(std::string_view text) {
  EditSystem system;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> order;
    Edit e = parse_edit(line, line_no, &order);
    system.add(std::move(e), order);
  }
  return system;
}

/// Canonical text of one edit, terms listed in `order` first.
inline std::string to_string(const Edit& e, const std::vector<std::string>& order = {}) {
  std::vector<std::string> names;
  for (const auto& v : order)
    if (e.coeffs.contains(v)) names.push_back(v);
  for (const auto& [n, a] : e.coeffs)
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);

  std::string out;
  for (const auto& n : names) {
    double a = e.coeffs.find(n)->second;
    if (out.empty()) {
      if (a < 0) out += "-";
    } else {
      out += a < 0 ? " - " : " + ";
    }
    double mag = std::abs(a);
    if (mag != 1.0) out += detail::format_number(mag) + "*";
    out += n;
  }
  if (e.constant != 0.0) {
    out += e.constant < 0 ? " - " : " + ";
    out += detail::format_number(std::abs(e.constant));
  }
  out += e.is_equality() ? " = 0" : " >= 0";
  return out;
}

/// Serializes a system so that parse_edit_rules reproduces it exactly.
inline std::string print_edits(const EditSystem& system) {
  std::string out;
  for (const auto& e : system.edits()) out += to_string(e, system.variables()) + "\n";
  return out;
}

/// Indices of the edits a fully specified record violates. The tolerance is
/// relative to max(1, max |x_j|) over the system's variables.
inline std::vector<std::size_t> check_record(const EditSystem& system, const Assignment& row, double tol = 1e-9) {
  double scale = 1.0;
  for (const auto& v : system.variables()) {
    auto it = row.find(v);
    if (it == row.end()) throw DataError("record has no value for variable '" + v + "'");
    scale = std::max(scale, std::abs(it->second));
  }
  std::vector<std::size_t> violated;
  const double bound = tol * scale;
  for (std::size_t k = 0; k < system.size(); ++k) {
    const Edit& e = system[k];
    double r = e.evaluate(row);
    bool bad = e.is_equality() ? std::abs(r) > bound : r < -bound;
    if (bad) violated.push_back(k);
  }
  return violated;
}

/// Substitutes the known values of a record into every edit. Edits left
/// without unknowns are dropped when satisfied; a violated one means the
/// record contradicts the edits and raises InfeasibleError.
inline ReducedSystem reduce_system(const EditSystem& system, const Assignment& known, std::size_t origin = 0,
                                   double tol = 1e-9) {
  ReducedSystem out;
  out.origin = origin;
  for (std::size_t k = 0; k < system.size(); ++k) {
    const Edit& e = system[k];
    Edit r;
    r.kind = e.kind;
    r.constant = e.constant;
    double scale = 1.0;
    for (const auto& [name, a] : e.coeffs) {
      if (auto it = known.find(name); it != known.end()) {
        r.constant += a * it->second;
        scale = std::max(scale, std::abs(it->second));
      } else {
        r.coeffs.emplace(name, a);
      }
    }
    if (!r.coeffs.empty()) {
      out.edits.push_back(std::move(r));
      continue;
    }
    const double bound = tol * scale;
    bool ok = e.is_equality() ? std::abs(r.constant) <= bound : r.constant >= -bound;
    if (!ok) {
      throw InfeasibleError("record " + std::to_string(origin) + " violates edit " + std::to_string(k) + " (" +
                                to_string(e) + ") before imputation",
                            to_string(e));
    }
  }
  return out;
}

} // namespace calimpute

#endif // CALIMPUTE_EDITS_HPP
