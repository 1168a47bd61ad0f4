#pragma once

// Sparse multivariate polynomials over binary64 coefficients, with a fixed
// ordered variable space split into four index groups:
//   x1  state variables the storage function's Gram matrix may depend on,
//   x2  remaining state variables,
//   y   quadratic-form directions used when a matrix inequality is written
//       as a scalar polynomial in an auxiliary vector,
//   z   scalarization variables introduced when a polynomial matrix
//       constraint is flattened to a single polynomial.
// Terms are kept in graded lexicographic order (total degree first, then
// exponent-vector comparison from the first variable), which makes printing,
// evaluation order, and downstream compilation deterministic.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace polystab {

class VariableSpace;
using SpacePtr = std::shared_ptr<const VariableSpace>;

// Exponent vector; entry i is the power of variable i of the owning space.
using Monomial = std::vector<std::uint8_t>;

inline int MonomialDegree(const Monomial& m) {
  int d = 0;
  for (auto e : m) d += e;
  return d;
}

// Graded lexicographic order: lower total degree first; ties broken by the
// exponent vector compared entry by entry from variable 0.
struct GradedLexLess {
  bool operator()(const Monomial& a, const Monomial& b) const {
    const int da = MonomialDegree(a);
    const int db = MonomialDegree(b);
    if (da != db) return da < db;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

class VariableSpace {
 public:
  enum class Group { kX1 = 0, kX2 = 1, kY = 2, kZ = 3 };

  static SpacePtr Make(std::vector<std::string> x1, std::vector<std::string> x2,
                       std::vector<std::string> y = {},
                       std::vector<std::string> z = {}) {
    if (x1.empty() && x2.empty() && y.empty() && z.empty())
      throw std::invalid_argument("VariableSpace: no variables");
    auto sp = std::shared_ptr<VariableSpace>(new VariableSpace());
    sp->sizes_ = {static_cast<int>(x1.size()), static_cast<int>(x2.size()),
                  static_cast<int>(y.size()), static_cast<int>(z.size())};
    for (auto& v : x1) sp->names_.push_back(std::move(v));
    for (auto& v : x2) sp->names_.push_back(std::move(v));
    for (auto& v : y) sp->names_.push_back(std::move(v));
    for (auto& v : z) sp->names_.push_back(std::move(v));
    for (int i = 0; i < sp->dim(); ++i) {
      const std::string& n = sp->names_[i];
      if (n.empty()) throw std::invalid_argument("variable name empty");
      if (!sp->index_.emplace(n, i).second)
        throw std::invalid_argument("duplicate variable name: " + n);
    }
    return sp;
  }

  int dim() const { return static_cast<int>(names_.size()); }
  int group_size(Group g) const { return sizes_[static_cast<int>(g)]; }
  int group_begin(Group g) const {
    int b = 0;
    for (int k = 0; k < static_cast<int>(g); ++k) b += sizes_[k];
    return b;
  }
  // Number of state variables (the x1 and x2 blocks together).
  int state_dim() const { return sizes_[0] + sizes_[1]; }

  const std::string& name(int i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<int> Find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Group group_of(int i) const {
    int b = 0;
    for (int k = 0; k < 4; ++k) {
      b += sizes_[k];
      if (i < b) return static_cast<Group>(k);
    }
    throw std::out_of_range("variable index out of range");
  }

  // New space with the y block filled in; this space must not have y or z
  // variables yet, so existing exponent vectors stay valid as prefixes.
  SpacePtr WithYBlock(std::vector<std::string> y) const {
    if (group_size(Group::kY) != 0 || group_size(Group::kZ) != 0)
      throw std::logic_error("WithYBlock: y/z block already present");
    std::vector<std::string> x1(names_.begin(), names_.begin() + sizes_[0]);
    std::vector<std::string> x2(names_.begin() + sizes_[0],
                                names_.begin() + sizes_[0] + sizes_[1]);
    return Make(std::move(x1), std::move(x2), std::move(y));
  }

  // New space with the z block filled in; must not have z variables yet.
  SpacePtr WithZBlock(std::vector<std::string> z) const {
    if (group_size(Group::kZ) != 0)
      throw std::logic_error("WithZBlock: z block already present");
    std::vector<std::string> x1(names_.begin(), names_.begin() + sizes_[0]);
    std::vector<std::string> x2(names_.begin() + sizes_[0],
                                names_.begin() + sizes_[0] + sizes_[1]);
    std::vector<std::string> y(names_.begin() + sizes_[0] + sizes_[1],
                               names_.begin() + sizes_[0] + sizes_[1] + sizes_[2]);
    return Make(std::move(x1), std::move(x2), std::move(y), std::move(z));
  }

  // True when `prefix` is this space restricted to its first variables, with
  // identical names and group layout up to the prefix dimension.
  bool HasPrefix(const VariableSpace& prefix) const {
    if (prefix.dim() > dim()) return false;
    for (int i = 0; i < prefix.dim(); ++i)
      if (names_[i] != prefix.names_[i]) return false;
    // Group layout must agree: each prefix group is a prefix of ours.
    for (int k = 0; k < 4; ++k) {
      if (prefix.sizes_[k] == 0) continue;
      if (prefix.group_begin(static_cast<Group>(k)) !=
          group_begin(static_cast<Group>(k)))
        return false;
      if (prefix.sizes_[k] > sizes_[k]) return false;
    }
    return true;
  }

  bool SameAs(const VariableSpace& other) const {
    return this == &other ||
           (names_ == other.names_ && sizes_ == other.sizes_);
  }

 private:
  VariableSpace() = default;
  std::vector<std::string> names_;
  std::array<int, 4> sizes_{0, 0, 0, 0};
  std::map<std::string, int> index_;
};

inline void CheckSameSpace(const SpacePtr& a, const SpacePtr& b,
                           const char* where) {
  if (!a || !b || !a->SameAs(*b))
    throw std::invalid_argument(std::string(where) +
                                ": operands use different variable spaces");
}

// Shortest decimal string that parses back to exactly the same binary64.
inline std::string FormatDouble(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

class Polynomial {
 public:
  explicit Polynomial(SpacePtr space) : space_(std::move(space)) {
    if (!space_) throw std::invalid_argument("Polynomial: null space");
  }

  static Polynomial Constant(SpacePtr space, double c) {
    Polynomial p(std::move(space));
    if (c != 0.0) p.terms_.emplace(Monomial(p.space_->dim(), 0), c);
    return p;
  }

  static Polynomial Variable(SpacePtr space, int index) {
    Polynomial p(std::move(space));
    if (index < 0 || index >= p.space_->dim())
      throw std::out_of_range("Polynomial::Variable: index out of range");
    Monomial m(p.space_->dim(), 0);
    m[index] = 1;
    p.terms_.emplace(std::move(m), 1.0);
    return p;
  }

  static Polynomial FromMonomial(SpacePtr space, Monomial m, double c) {
    Polynomial p(std::move(space));
    if (static_cast<int>(m.size()) != p.space_->dim())
      throw std::invalid_argument("FromMonomial: exponent size mismatch");
    if (c != 0.0) p.terms_.emplace(std::move(m), c);
    return p;
  }

  const SpacePtr& space() const { return space_; }
  const std::map<Monomial, double, GradedLexLess>& terms() const {
    return terms_;
  }
  bool IsZero() const { return terms_.empty(); }
  int TermCount() const { return static_cast<int>(terms_.size()); }

  bool IsConstant() const {
    return terms_.empty() ||
           (terms_.size() == 1 && MonomialDegree(terms_.begin()->first) == 0);
  }
  double ConstantValue() const {
    if (terms_.empty()) return 0.0;
    if (!IsConstant())
      throw std::logic_error("ConstantValue: polynomial is not constant");
    return terms_.begin()->second;
  }

  int TotalDegree() const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, MonomialDegree(m));
    return d;
  }
  int DegreeIn(int var) const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, static_cast<int>(m[var]));
    return d;
  }
  int DegreeInGroup(VariableSpace::Group g) const {
    const int b = space_->group_begin(g), n = space_->group_size(g);
    int d = 0;
    for (const auto& [m, c] : terms_) {
      int s = 0;
      for (int i = 0; i < n; ++i) s += m[b + i];
      d = std::max(d, s);
    }
    return d;
  }

  double CoefficientOf(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
  }

  void AddTerm(const Monomial& m, double c) {
    if (c == 0.0) return;
    auto [it, fresh] = terms_.emplace(m, c);
    if (!fresh) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  Polynomial& operator+=(const Polynomial& o) {
    CheckSameSpace(space_, o.space_, "Polynomial::operator+=");
    for (const auto& [m, c] : o.terms_) AddTerm(m, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& o) {
    CheckSameSpace(space_, o.space_, "Polynomial::operator-=");
    for (const auto& [m, c] : o.terms_) AddTerm(m, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [m, c] : terms_) c *= s;
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) {
    a += b;
    return a;
  }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) {
    a -= b;
    return a;
  }
  friend Polynomial operator-(Polynomial a) {
    a *= -1.0;
    return a;
  }
  friend Polynomial operator*(Polynomial a, double s) {
    a *= s;
    return a;
  }
  friend Polynomial operator*(double s, Polynomial a) {
    a *= s;
    return a;
  }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    CheckSameSpace(a.space_, b.space_, "Polynomial::operator*");
    Polynomial r(a.space_);
    const int n = a.space_->dim();
    Monomial m(n, 0);
    for (const auto& [ma, ca] : a.terms_) {
      for (const auto& [mb, cb] : b.terms_) {
        for (int i = 0; i < n; ++i) {
          const int e = ma[i] + mb[i];
          if (e > 255)
            throw std::overflow_error("Polynomial::operator*: exponent > 255");
          m[i] = static_cast<std::uint8_t>(e);
        }
        r.AddTerm(m, ca * cb);
      }
    }
    return r;
  }

  Polynomial Pow(int e) const {
    if (e < 0) throw std::invalid_argument("Polynomial::Pow: negative power");
    Polynomial r = Constant(space_, 1.0);
    Polynomial base = *this;
    while (e > 0) {
      if (e & 1) r = r * base;
      base = (e >>= 1) ? base * base : base;
    }
    return r;
  }

  Polynomial Derivative(int var) const {
    if (var < 0 || var >= space_->dim())
      throw std::out_of_range("Derivative: variable index out of range");
    Polynomial r(space_);
    for (const auto& [m, c] : terms_) {
      if (m[var] == 0) continue;
      Monomial d = m;
      const int e = d[var]--;
      r.AddTerm(d, c * e);
    }
    return r;
  }

  double Eval(const Eigen::VectorXd& point) const {
    if (point.size() != space_->dim())
      throw std::invalid_argument("Eval: point dimension mismatch");
    double sum = 0.0;
    for (const auto& [m, c] : terms_) {
      double t = c;
      for (int i = 0; i < space_->dim(); ++i)
        for (int k = 0; k < m[i]; ++k) t *= point[i];
      sum += t;
    }
    return sum;
  }

  // Drops terms with |coefficient| <= tol; used after long arithmetic chains
  // where exact cancellation leaves numerical dust.
  Polynomial Cleaned(double tol = 1e-14) const {
    Polynomial r(space_);
    for (const auto& [m, c] : terms_)
      if (std::abs(c) > tol) r.terms_.emplace(m, c);
    return r;
  }

  // Same polynomial over a larger space that extends this space's variable
  // list (exponents of the new trailing variables are zero).
  Polynomial Lifted(const SpacePtr& bigger) const {
    if (!bigger->HasPrefix(*space_))
      throw std::invalid_argument("Lifted: target space is not an extension");
    Polynomial r(bigger);
    for (const auto& [m, c] : terms_) {
      Monomial e(bigger->dim(), 0);
      std::copy(m.begin(), m.end(), e.begin());
      r.terms_.emplace(std::move(e), c);
    }
    return r;
  }

  double MaxAbsCoefficient() const {
    double v = 0.0;
    for (const auto& [m, c] : terms_) v = std::max(v, std::abs(c));
    return v;
  }

  bool EqualsWithin(const Polynomial& o, double tol) const {
    CheckSameSpace(space_, o.space_, "EqualsWithin");
    Polynomial d = *this - o;
    return d.MaxAbsCoefficient() <= tol;
  }

  std::string ToString() const {
    if (terms_.empty()) return "0";
    std::string out;
    // Print highest-degree terms first.
    for (auto it = terms_.rbegin(); it != terms_.rend(); ++it) {
      const auto& [m, c] = *it;
      const bool first = out.empty();
      const double a = std::abs(c);
      if (first)
        out += (c < 0 ? "-" : "");
      else
        out += (c < 0 ? " - " : " + ");
      std::string vars;
      for (int i = 0; i < space_->dim(); ++i) {
        if (m[i] == 0) continue;
        if (!vars.empty()) vars += "*";
        vars += space_->name(i);
        if (m[i] > 1) vars += "^" + std::to_string(static_cast<int>(m[i]));
      }
      if (vars.empty())
        out += FormatDouble(a);
      else if (a == 1.0)
        out += vars;
      else
        out += FormatDouble(a) + "*" + vars;
    }
    return out;
  }

 private:
  SpacePtr space_;
  std::map<Monomial, double, GradedLexLess> terms_;
};

// ---------------------------------------------------------------------------
// Parser for the expression grammar used in problem files:
//   expr   := ['-'] term { ('+'|'-') term }
//   term   := factor { '*' factor }
//   factor := base [ '^' uint ]
//   base   := number | variable | '(' expr ')'
// '^' binds tightest, then '*', then '+'/'-'. Implicit multiplication is not
// accepted; every product needs an explicit '*'.
class PolynomialParser {
 public:
  static Polynomial Parse(const SpacePtr& space, std::string_view text) {
    PolynomialParser p(space, text);
    Polynomial r = p.ParseExpr();
    p.SkipWs();
    if (p.pos_ != p.text_.size()) p.Fail("unexpected trailing input");
    return r;
  }

 private:
  PolynomialParser(SpacePtr space, std::string_view text)
      : space_(std::move(space)), text_(text) {}

  [[noreturn]] void Fail(const std::string& what) const {
    throw std::invalid_argument("parse error at position " +
                                std::to_string(pos_) + " in \"" +
                                std::string(text_) + "\": " + what);
  }

  void SkipWs() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  char Peek() {
    SkipWs();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  bool Accept(char c) {
    if (Peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Polynomial ParseExpr() {
    bool neg = false;
    if (Accept('-'))
      neg = true;
    else
      Accept('+');
    Polynomial r = ParseTerm();
    if (neg) r *= -1.0;
    for (;;) {
      if (Accept('+'))
        r += ParseTerm();
      else if (Accept('-'))
        r -= ParseTerm();
      else
        break;
    }
    return r;
  }

  Polynomial ParseTerm() {
    Polynomial r = ParseFactor();
    while (Accept('*')) r = r * ParseFactor();
    return r;
  }

  Polynomial ParseFactor() {
    Polynomial base = ParseBase();
    if (Accept('^')) {
      SkipWs();
      int e = 0;
      const char* begin = text_.data() + pos_;
      const char* end = text_.data() + text_.size();
      auto [ptr, ec] = std::from_chars(begin, end, e);
      if (ec != std::errc() || e < 0) Fail("expected nonnegative integer exponent");
      if (e > 200) Fail("exponent too large");
      pos_ += static_cast<std::size_t>(ptr - begin);
      return base.Pow(e);
    }
    return base;
  }

  Polynomial ParseBase() {
    const char c = Peek();
    if (c == '(') {
      ++pos_;
      Polynomial r = ParseExpr();
      if (!Accept(')')) Fail("expected ')'");
      return r;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = text_.data() + pos_;
      char* endp = nullptr;
      const double v = std::strtod(begin, &endp);
      if (endp == begin) Fail("expected number");
      pos_ += static_cast<std::size_t>(endp - begin);
      return Polynomial::Constant(space_, v);
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      const std::string name(text_.substr(start, pos_ - start));
      auto idx = space_->Find(name);
      if (!idx) Fail("unknown variable '" + name + "'");
      return Polynomial::Variable(space_, *idx);
    }
    Fail("expected number, variable, or '('");
  }

  SpacePtr space_;
  std::string_view text_;
  std::size_t pos_ = 0;
};

inline Polynomial ParsePoly(const SpacePtr& space, std::string_view text) {
  return PolynomialParser::Parse(space, text);
}

// ---------------------------------------------------------------------------

class PolynomialMatrix {
 public:
  PolynomialMatrix(SpacePtr space, int rows, int cols)
      : space_(std::move(space)), rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0)
      throw std::invalid_argument("PolynomialMatrix: negative dimension");
    data_.resize(static_cast<std::size_t>(rows) * cols, Polynomial(space_));
  }

  static PolynomialMatrix Identity(SpacePtr space, int n,
                                   const Polynomial& scale) {
    PolynomialMatrix m(space, n, n);
    for (int i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }
  static PolynomialMatrix Identity(SpacePtr space, int n, double scale = 1.0) {
    PolynomialMatrix m(space, n, n);
    for (int i = 0; i < n; ++i) m(i, i) = Polynomial::Constant(space, scale);
    return m;
  }
  static PolynomialMatrix FromDense(SpacePtr space,
                                    const Eigen::MatrixXd& a) {
    PolynomialMatrix m(space, static_cast<int>(a.rows()),
                       static_cast<int>(a.cols()));
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < a.cols(); ++j)
        m(i, j) = Polynomial::Constant(space, a(i, j));
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const SpacePtr& space() const { return space_; }

  Polynomial& operator()(int i, int j) {
    CheckIndex(i, j);
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  const Polynomial& operator()(int i, int j) const {
    CheckIndex(i, j);
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }

  PolynomialMatrix Transpose() const {
    PolynomialMatrix r(space_, cols_, rows_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) r(j, i) = (*this)(i, j);
    return r;
  }

  friend PolynomialMatrix operator+(const PolynomialMatrix& a,
                                    const PolynomialMatrix& b) {
    a.CheckSameShape(b, "operator+");
    PolynomialMatrix r = a;
    for (std::size_t k = 0; k < r.data_.size(); ++k) r.data_[k] += b.data_[k];
    return r;
  }
  friend PolynomialMatrix operator-(const PolynomialMatrix& a,
                                    const PolynomialMatrix& b) {
    a.CheckSameShape(b, "operator-");
    PolynomialMatrix r = a;
    for (std::size_t k = 0; k < r.data_.size(); ++k) r.data_[k] -= b.data_[k];
    return r;
  }
  friend PolynomialMatrix operator*(const PolynomialMatrix& a,
                                    const PolynomialMatrix& b) {
    CheckSameSpace(a.space_, b.space_, "PolynomialMatrix::operator*");
    if (a.cols_ != b.rows_)
      throw std::invalid_argument("PolynomialMatrix::operator*: shape mismatch");
    PolynomialMatrix r(a.space_, a.rows_, b.cols_);
    for (int i = 0; i < a.rows_; ++i)
      for (int k = 0; k < a.cols_; ++k) {
        const Polynomial& aik = a(i, k);
        if (aik.IsZero()) continue;
        for (int j = 0; j < b.cols_; ++j) {
          if (b(k, j).IsZero()) continue;
          r(i, j) += aik * b(k, j);
        }
      }
    return r;
  }
  friend PolynomialMatrix operator*(const Polynomial& s,
                                    const PolynomialMatrix& a) {
    CheckSameSpace(s.space(), a.space_, "Polynomial*PolynomialMatrix");
    PolynomialMatrix r(a.space_, a.rows_, a.cols_);
    for (int i = 0; i < a.rows_; ++i)
      for (int j = 0; j < a.cols_; ++j)
        if (!a(i, j).IsZero()) r(i, j) = s * a(i, j);
    return r;
  }
  friend PolynomialMatrix operator*(double s, const PolynomialMatrix& a) {
    PolynomialMatrix r = a;
    for (auto& p : r.data_) p *= s;
    return r;
  }

  Eigen::MatrixXd Eval(const Eigen::VectorXd& point) const {
    Eigen::MatrixXd r(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) r(i, j) = (*this)(i, j).Eval(point);
    return r;
  }

  PolynomialMatrix Cleaned(double tol = 1e-14) const {
    PolynomialMatrix r(space_, rows_, cols_);
    for (std::size_t k = 0; k < data_.size(); ++k)
      r.data_[k] = data_[k].Cleaned(tol);
    return r;
  }

  PolynomialMatrix Lifted(const SpacePtr& bigger) const {
    PolynomialMatrix r(bigger, rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) r(i, j) = (*this)(i, j).Lifted(bigger);
    return r;
  }

  int TotalDegree() const {
    int d = 0;
    for (const auto& p : data_) d = std::max(d, p.TotalDegree());
    return d;
  }

  bool IsSymmetricWithin(double tol) const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i)
      for (int j = i + 1; j < cols_; ++j)
        if (!(*this)(i, j).EqualsWithin((*this)(j, i), tol)) return false;
    return true;
  }

  double MaxAbsCoefficient() const {
    double v = 0.0;
    for (const auto& p : data_) v = std::max(v, p.MaxAbsCoefficient());
    return v;
  }

 private:
  void CheckIndex(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_)
      throw std::out_of_range("PolynomialMatrix: index out of range");
  }
  void CheckSameShape(const PolynomialMatrix& o, const char* where) const {
    CheckSameSpace(space_, o.space_, where);
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw std::invalid_argument(std::string(where) + ": shape mismatch");
  }

  SpacePtr space_;
  int rows_, cols_;
  std::vector<Polynomial> data_;
};

// Kronecker product with the usual block layout: entry block (i,j) of the
// result is a(i,j) * b.
inline PolynomialMatrix Kron(const PolynomialMatrix& a,
                             const PolynomialMatrix& b) {
  CheckSameSpace(a.space(), b.space(), "Kron");
  PolynomialMatrix r(a.space(), a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      if (a(i, j).IsZero()) continue;
      for (int k = 0; k < b.rows(); ++k)
        for (int l = 0; l < b.cols(); ++l)
          if (!b(k, l).IsZero())
            r(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
    }
  return r;
}

// Jacobian of a column vector of polynomials with respect to the listed
// variables: entry (i,k) is d v(i) / d vars[k].
inline PolynomialMatrix Jacobian(const PolynomialMatrix& v,
                                 const std::vector<int>& vars) {
  if (v.cols() != 1)
    throw std::invalid_argument("Jacobian: expected a column vector");
  PolynomialMatrix r(v.space(), v.rows(), static_cast<int>(vars.size()));
  for (int i = 0; i < v.rows(); ++i)
    for (int k = 0; k < static_cast<int>(vars.size()); ++k)
      r(i, k) = v(i, 0).Derivative(vars[k]);
  return r;
}

inline std::vector<int> GroupIndices(const VariableSpace& sp,
                                     VariableSpace::Group g) {
  std::vector<int> idx(sp.group_size(g));
  for (int i = 0; i < static_cast<int>(idx.size()); ++i)
    idx[i] = sp.group_begin(g) + i;
  return idx;
}

// Laplace-expansion determinant; intended for the small storage-function
// Gram matrices (size is capped to keep the term count sane).
inline Polynomial Determinant(const PolynomialMatrix& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("Determinant: matrix not square");
  if (m.rows() > 5)
    throw std::invalid_argument("Determinant: only implemented for size <= 5");
  const int n = m.rows();
  if (n == 0) return Polynomial::Constant(m.space(), 1.0);
  if (n == 1) return m(0, 0);
  Polynomial det(m.space());
  for (int j = 0; j < n; ++j) {
    if (m(0, j).IsZero()) continue;
    PolynomialMatrix minor(m.space(), n - 1, n - 1);
    for (int r = 1; r < n; ++r) {
      int cc = 0;
      for (int c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, cc++) = m(r, c);
      }
    }
    Polynomial term = m(0, j) * Determinant(minor);
    det += (j % 2 == 0) ? term : -term;
  }
  return det;
}

// Adjugate (transposed cofactor matrix), so m * Adjugate(m) = det(m) * I.
inline PolynomialMatrix Adjugate(const PolynomialMatrix& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("Adjugate: matrix not square");
  if (m.rows() > 5)
    throw std::invalid_argument("Adjugate: only implemented for size <= 5");
  const int n = m.rows();
  PolynomialMatrix adj(m.space(), n, n);
  if (n == 0) return adj;
  if (n == 1) {
    adj(0, 0) = Polynomial::Constant(m.space(), 1.0);
    return adj;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      PolynomialMatrix minor(m.space(), n - 1, n - 1);
      int rr = 0;
      for (int r = 0; r < n; ++r) {
        if (r == i) continue;
        int cc = 0;
        for (int c = 0; c < n; ++c) {
          if (c == j) continue;
          minor(rr, cc++) = m(r, c);
        }
        ++rr;
      }
      Polynomial cof = Determinant(minor);
      adj(j, i) = ((i + j) % 2 == 0) ? cof : -cof;
    }
  return adj;
}

}  // namespace polystab
