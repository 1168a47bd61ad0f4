#pragma once

// Sum-of-squares certificates for polynomial matrices whose entries depend
// affinely on scalar decision coefficients, compiled to conic programs.
//
// A constraint declares that a symmetric polynomial matrix C(x) lies in the
// cone of matrix sums of squares, C(x) = Q(x)'Q(x). The compiler scalarizes
// C against an auxiliary vector z (one slot per matrix row), builds a
// candidate monomial basis per slot from the halved degree box of the
// corresponding diagonal entry, splits candidates into sign-symmetry classes
// (one Gram block each), prunes candidates whose squared monomial can never
// be matched, eliminates purely linear coefficient rows, and emits the
// remaining coefficient-matching equations as a conic program.
//
// A global margin variable t is added to every Gram diagonal and maximized
// (capped at 1 so the program stays bounded). The optimal t reports how
// positive definite the Gram blocks can be made: the constraint system is
// sum-of-squares feasible exactly when the optimum is nonnegative. With all
// decision coefficients fixed this doubles as a numeric certificate check.

#include <array>
#include <bit>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "polystab/poly.hpp"
#include "polystab/sdp.hpp"

namespace polystab {

// ---------------------------------------------------------------------------
// Linear expressions over decision coefficients.

struct LinExpr {
  double constant = 0.0;
  std::vector<std::pair<int, double>> terms;  // sorted by id, ids unique

  void Add(int id, double c) {
    if (c == 0.0) return;
    auto it = std::lower_bound(
        terms.begin(), terms.end(), id,
        [](const std::pair<int, double>& t, int key) { return t.first < key; });
    if (it != terms.end() && it->first == id) {
      it->second += c;
      if (it->second == 0.0) terms.erase(it);
    } else {
      terms.insert(it, {id, c});
    }
  }
  LinExpr& operator+=(const LinExpr& o) {
    constant += o.constant;
    for (const auto& [id, c] : o.terms) Add(id, c);
    return *this;
  }
  LinExpr& operator*=(double s) {
    constant *= s;
    for (auto& [id, c] : terms) c *= s;
    if (s == 0.0) terms.clear();
    return *this;
  }
  double Eval(const std::vector<double>& values) const {
    double v = constant;
    for (const auto& [id, c] : terms) v += c * values[id];
    return v;
  }
};

// ---------------------------------------------------------------------------
// Polynomials with coefficients affine in decision variables:
//   p(x) = p0(x) + sum_d  d * p_d(x).
// Products of two decision-dependent polynomials are rejected so that every
// constructed expression stays affine (and hence convex to optimize over).

class AffinePoly {
 public:
  explicit AffinePoly(SpacePtr space) : space_(std::move(space)), constant_(space_) {}
  explicit AffinePoly(Polynomial constant)
      : space_(constant.space()), constant_(std::move(constant)) {}
  static AffinePoly Decision(int id, Polynomial coefficient) {
    AffinePoly p(coefficient.space());
    if (!coefficient.IsZero()) p.coef_.emplace(id, std::move(coefficient));
    return p;
  }

  const SpacePtr& space() const { return space_; }
  const Polynomial& constant_part() const { return constant_; }
  const std::map<int, Polynomial>& decision_parts() const { return coef_; }
  bool has_decisions() const { return !coef_.empty(); }
  bool IsZero() const { return constant_.IsZero() && coef_.empty(); }

  AffinePoly& operator+=(const AffinePoly& o) {
    CheckSameSpace(space_, o.space_, "AffinePoly::operator+=");
    constant_ += o.constant_;
    for (const auto& [id, p] : o.coef_) {
      auto [it, fresh] = coef_.emplace(id, p);
      if (!fresh) {
        it->second += p;
        if (it->second.IsZero()) coef_.erase(it);
      }
    }
    return *this;
  }
  AffinePoly& operator-=(const AffinePoly& o) {
    *this += o * -1.0;
    return *this;
  }
  friend AffinePoly operator+(AffinePoly a, const AffinePoly& b) { return a += b; }
  friend AffinePoly operator-(AffinePoly a, const AffinePoly& b) { return a -= b; }
  friend AffinePoly operator*(const AffinePoly& a, double s) {
    AffinePoly r(a.space_);
    r.constant_ = a.constant_ * s;
    if (s != 0.0)
      for (const auto& [id, p] : a.coef_) r.coef_.emplace(id, p * s);
    return r;
  }
  friend AffinePoly operator*(double s, const AffinePoly& a) { return a * s; }
  friend AffinePoly operator*(const AffinePoly& a, const Polynomial& q) {
    CheckSameSpace(a.space_, q.space(), "AffinePoly::operator*");
    AffinePoly r(a.space_);
    r.constant_ = a.constant_ * q;
    for (const auto& [id, p] : a.coef_) {
      Polynomial prod = p * q;
      if (!prod.IsZero()) r.coef_.emplace(id, std::move(prod));
    }
    return r;
  }
  friend AffinePoly operator*(const Polynomial& q, const AffinePoly& a) {
    return a * q;
  }
  friend AffinePoly operator*(const AffinePoly& a, const AffinePoly& b) {
    if (a.has_decisions() && b.has_decisions())
      throw std::invalid_argument(
          "AffinePoly: product of two decision-dependent polynomials is not "
          "affine");
    return a.has_decisions() ? a * b.constant_ : b * a.constant_;
  }
  friend AffinePoly operator-(const AffinePoly& a) { return a * -1.0; }

  AffinePoly Derivative(int var) const {
    AffinePoly r(space_);
    r.constant_ = constant_.Derivative(var);
    for (const auto& [id, p] : coef_) {
      Polynomial d = p.Derivative(var);
      if (!d.IsZero()) r.coef_.emplace(id, std::move(d));
    }
    return r;
  }
  Polynomial FixDecisions(const std::vector<double>& values) const {
    Polynomial r = constant_;
    for (const auto& [id, p] : coef_) {
      if (id < 0 || id >= static_cast<int>(values.size()))
        throw std::invalid_argument("AffinePoly::FixDecisions: missing value");
      r += p * values[id];
    }
    return r.Cleaned(0.0);
  }
  AffinePoly Lifted(const SpacePtr& bigger) const {
    AffinePoly r(bigger);
    r.constant_ = constant_.Lifted(bigger);
    for (const auto& [id, p] : coef_) r.coef_.emplace(id, p.Lifted(bigger));
    return r;
  }
  AffinePoly Cleaned(double tol = 1e-14) const {
    AffinePoly r(space_);
    r.constant_ = constant_.Cleaned(tol);
    for (const auto& [id, p] : coef_) {
      Polynomial c = p.Cleaned(tol);
      if (!c.IsZero()) r.coef_.emplace(id, std::move(c));
    }
    return r;
  }
  int TotalDegree() const {
    int d = constant_.TotalDegree();
    for (const auto& [id, p] : coef_) d = std::max(d, p.TotalDegree());
    return d;
  }
  int DegreeIn(int var) const {
    int d = constant_.DegreeIn(var);
    for (const auto& [id, p] : coef_) d = std::max(d, p.DegreeIn(var));
    return d;
  }
  int DegreeInGroup(VariableSpace::Group g) const {
    int d = constant_.DegreeInGroup(g);
    for (const auto& [id, p] : coef_) d = std::max(d, p.DegreeInGroup(g));
    return d;
  }
  bool EqualsWithin(const AffinePoly& o, double tol) const {
    if (!constant_.EqualsWithin(o.constant_, tol)) return false;
    auto covers = [&](const std::map<int, Polynomial>& a,
                      const std::map<int, Polynomial>& b) {
      for (const auto& [id, p] : a) {
        auto it = b.find(id);
        if (it == b.end()) {
          if (!p.EqualsWithin(Polynomial(p.space()), tol)) return false;
        } else if (!p.EqualsWithin(it->second, tol)) {
          return false;
        }
      }
      return true;
    };
    return covers(coef_, o.coef_) && covers(o.coef_, coef_);
  }

 private:
  SpacePtr space_;
  Polynomial constant_;
  std::map<int, Polynomial> coef_;
};

class AffinePolyMatrix {
 public:
  AffinePolyMatrix(SpacePtr space, int rows, int cols)
      : space_(std::move(space)), rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0)
      throw std::invalid_argument("AffinePolyMatrix: negative dimension");
    data_.assign(static_cast<std::size_t>(rows) * cols, AffinePoly(space_));
  }
  static AffinePolyMatrix FromPolynomialMatrix(const PolynomialMatrix& m) {
    AffinePolyMatrix r(m.space(), m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) r(i, j) = AffinePoly(m(i, j));
    return r;
  }
  static AffinePolyMatrix Identity(const SpacePtr& space, int n,
                                   const AffinePoly& scale) {
    AffinePolyMatrix r(space, n, n);
    for (int i = 0; i < n; ++i) r(i, i) = scale;
    return r;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const SpacePtr& space() const { return space_; }
  AffinePoly& operator()(int i, int j) {
    CheckIndex(i, j);
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  const AffinePoly& operator()(int i, int j) const {
    CheckIndex(i, j);
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }

  AffinePolyMatrix Transpose() const {
    AffinePolyMatrix r(space_, cols_, rows_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) r(j, i) = (*this)(i, j);
    return r;
  }
  friend AffinePolyMatrix operator+(const AffinePolyMatrix& a,
                                    const AffinePolyMatrix& b) {
    a.CheckSameShape(b, "AffinePolyMatrix::operator+");
    AffinePolyMatrix r = a;
    for (std::size_t k = 0; k < r.data_.size(); ++k) r.data_[k] += b.data_[k];
    return r;
  }
  friend AffinePolyMatrix operator-(const AffinePolyMatrix& a,
                                    const AffinePolyMatrix& b) {
    a.CheckSameShape(b, "AffinePolyMatrix::operator-");
    AffinePolyMatrix r = a;
    for (std::size_t k = 0; k < r.data_.size(); ++k) r.data_[k] -= b.data_[k];
    return r;
  }
  friend AffinePolyMatrix operator*(const AffinePolyMatrix& a,
                                    const AffinePolyMatrix& b) {
    CheckSameSpace(a.space_, b.space_, "AffinePolyMatrix::operator*");
    if (a.cols_ != b.rows_)
      throw std::invalid_argument("AffinePolyMatrix::operator*: shape mismatch");
    AffinePolyMatrix r(a.space_, a.rows_, b.cols_);
    for (int i = 0; i < a.rows_; ++i)
      for (int j = 0; j < b.cols_; ++j) {
        AffinePoly acc(a.space_);
        for (int k = 0; k < a.cols_; ++k) acc += a(i, k) * b(k, j);
        r(i, j) = std::move(acc);
      }
    return r;
  }
  friend AffinePolyMatrix operator*(const AffinePoly& s,
                                    const AffinePolyMatrix& m) {
    AffinePolyMatrix r = m;
    for (auto& e : r.data_) e = s * e;
    return r;
  }
  friend AffinePolyMatrix operator*(const Polynomial& s,
                                    const AffinePolyMatrix& m) {
    AffinePolyMatrix r = m;
    for (auto& e : r.data_) e = e * s;
    return r;
  }
  friend AffinePolyMatrix operator*(double s, const AffinePolyMatrix& m) {
    AffinePolyMatrix r = m;
    for (auto& e : r.data_) e = e * s;
    return r;
  }
  PolynomialMatrix FixDecisions(const std::vector<double>& values) const {
    PolynomialMatrix r(space_, rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) r(i, j) = (*this)(i, j).FixDecisions(values);
    return r;
  }
  AffinePolyMatrix Lifted(const SpacePtr& bigger) const {
    AffinePolyMatrix r(bigger, rows_, cols_);
    for (std::size_t k = 0; k < data_.size(); ++k) r.data_[k] = data_[k].Lifted(bigger);
    return r;
  }
  AffinePolyMatrix Cleaned(double tol = 1e-14) const {
    AffinePolyMatrix r = *this;
    for (auto& e : r.data_) e = e.Cleaned(tol);
    return r;
  }
  bool IsSymmetricWithin(double tol) const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i)
      for (int j = i + 1; j < cols_; ++j)
        if (!(*this)(i, j).EqualsWithin((*this)(j, i), tol)) return false;
    return true;
  }

 private:
  void CheckIndex(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_)
      throw std::out_of_range("AffinePolyMatrix: index out of range");
  }
  void CheckSameShape(const AffinePolyMatrix& o, const char* where) const {
    CheckSameSpace(space_, o.space_, where);
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw std::invalid_argument(std::string(where) + ": shape mismatch");
  }
  SpacePtr space_;
  int rows_, cols_;
  std::vector<AffinePoly> data_;
};

// ---------------------------------------------------------------------------
// Monomial set enumeration for declaring decision polynomials.

struct MonomialSetSpec {
  std::vector<int> vars;             // variables allowed to appear
  int max_total_degree = 0;
  std::map<int, int> var_degree_cap; // optional per-variable caps
  bool even_each = false;            // every exponent even
  bool include_constant = true;
};

inline std::vector<Monomial> EnumerateMonomials(const SpacePtr& space,
                                                const MonomialSetSpec& spec) {
  std::vector<Monomial> out;
  Monomial current(space->dim(), 0);
  auto rec = [&](auto&& self, std::size_t pos, int budget) -> void {
    if (pos == spec.vars.size()) {
      out.push_back(current);
      return;
    }
    const int v = spec.vars[pos];
    int cap = budget;
    auto it = spec.var_degree_cap.find(v);
    if (it != spec.var_degree_cap.end()) cap = std::min(cap, it->second);
    const int step = spec.even_each ? 2 : 1;
    for (int e = 0; e <= cap; e += step) {
      current[v] = static_cast<std::uint8_t>(e);
      self(self, pos + 1, budget - e);
    }
    current[v] = 0;
  };
  rec(rec, 0, spec.max_total_degree);
  if (!spec.include_constant) {
    out.erase(std::remove_if(out.begin(), out.end(),
                             [](const Monomial& m) {
                               return MonomialDegree(m) == 0;
                             }),
              out.end());
  }
  std::sort(out.begin(), out.end(), GradedLexLess());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Program declaration.

class SosProgram {
 public:
  int AddDecision(std::string name) {
    names_.push_back(std::move(name));
    return static_cast<int>(names_.size()) - 1;
  }
  int decision_count() const { return static_cast<int>(names_.size()); }
  const std::string& decision_name(int id) const { return names_.at(id); }

  AffinePoly NewDecisionPoly(const SpacePtr& space, const std::string& prefix,
                             const std::vector<Monomial>& monomials) {
    AffinePoly p(space);
    for (const Monomial& m : monomials) {
      const int id = AddDecision(prefix + ":" + MonoLabel(space, m));
      p += AffinePoly::Decision(id, Polynomial::FromMonomial(space, m, 1.0));
    }
    return p;
  }
  AffinePolyMatrix NewSymmetricDecisionMatrix(
      const SpacePtr& space, const std::string& prefix, int size,
      const std::vector<Monomial>& monomials) {
    AffinePolyMatrix m(space, size, size);
    for (int i = 0; i < size; ++i)
      for (int j = i; j < size; ++j) {
        const std::string name =
            prefix + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
        m(i, j) = NewDecisionPoly(space, name, monomials);
        if (i != j) m(j, i) = m(i, j);
      }
    return m;
  }
  AffinePolyMatrix NewDecisionMatrix(const SpacePtr& space,
                                     const std::string& prefix, int rows,
                                     int cols,
                                     const std::vector<Monomial>& monomials) {
    AffinePolyMatrix m(space, rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const std::string name =
            prefix + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
        m(i, j) = NewDecisionPoly(space, name, monomials);
      }
    return m;
  }

  // Declares: matrix is a (matrix) sum of squares in the variables of its
  // space. The matrix must be symmetric and its space must not already carry
  // auxiliary slot variables.
  void AddSosConstraint(AffinePolyMatrix matrix, std::string label) {
    if (matrix.rows() != matrix.cols())
      throw std::invalid_argument("AddSosConstraint: matrix not square");
    if (!matrix.IsSymmetricWithin(1e-12))
      throw std::invalid_argument("AddSosConstraint: matrix not symmetric: " +
                                  label);
    if (matrix.space()->group_size(VariableSpace::Group::kZ) != 0)
      throw std::invalid_argument(
          "AddSosConstraint: space already uses the slot variable group");
    constraints_.push_back({matrix.Cleaned(), std::move(label)});
  }

  struct Constraint {
    AffinePolyMatrix matrix;
    std::string label;
  };
  const std::vector<Constraint>& constraints() const { return constraints_; }

 private:
  static std::string MonoLabel(const SpacePtr& space, const Monomial& m) {
    if (MonomialDegree(m) == 0) return "1";
    std::string s;
    for (int v = 0; v < space->dim(); ++v) {
      if (!m[v]) continue;
      if (!s.empty()) s += "*";
      s += space->name(v);
      if (m[v] > 1) s += "^" + std::to_string(static_cast<int>(m[v]));
    }
    return s;
  }
  std::vector<std::string> names_;
  std::vector<Constraint> constraints_;
};

// ---------------------------------------------------------------------------
// Compilation result.

struct GramBlockDescriptor {
  int constraint_index = 0;
  int conic_block = 0;
  // Basis element: monomial in the constraint space paired with a slot index
  // (matrix row). The certificate row vectors are b(x) * z_slot.
  std::vector<std::pair<Monomial, int>> basis;
};

struct CompiledSos {
  ConicProgram program;
  std::vector<GramBlockDescriptor> gram_blocks;
  int margin_free_index = -1;
  int reduced_decision_count = 0;
  std::vector<LinExpr> recovery;  // decision id -> expression in conic frees
  bool contradiction = false;
  std::string note;
  // Size statistics for reporting.
  int row_count = 0;
  int pruned_elements = 0;
  int class_count = 0;
};

namespace detail {

struct ScalRowData {
  double constant = 0.0;
  std::map<int, double> dec;
  bool structural = false;
};

inline std::string FormatScalMono(const SpacePtr& space, int zdim,
                                  const Monomial& mu) {
  std::string s;
  const int n = space->dim();
  for (int v = 0; v < n; ++v) {
    if (!mu[v]) continue;
    if (!s.empty()) s += "*";
    s += space->name(v);
    if (mu[v] > 1) s += "^" + std::to_string(static_cast<int>(mu[v]));
  }
  for (int k = 0; k < zdim; ++k) {
    if (!mu[n + k]) continue;
    if (!s.empty()) s += "*";
    s += "slot" + std::to_string(k);
    if (mu[n + k] > 1) s += "^" + std::to_string(static_cast<int>(mu[n + k]));
  }
  return s.empty() ? "1" : s;
}

}  // namespace detail

inline CompiledSos CompileSos(const SosProgram& prog) {
  CompiledSos out;
  const int num_dec = prog.decision_count();

  struct PendingRow {
    // Gram pair entries: (gram block index, i, j) with i <= j.
    std::vector<std::array<int, 3>> pairs;
    int diag_count = 0;
    double constant = 0.0;
    std::map<int, double> dec;
  };
  std::vector<PendingRow> pending;
  struct LinearRow {
    std::map<int, double> dec;  // sum dec = rhs
    double rhs = 0.0;
    std::string origin;
  };
  std::vector<LinearRow> linear;

  for (std::size_t ci = 0; ci < prog.constraints().size(); ++ci) {
    const auto& con = prog.constraints()[ci];
    const AffinePolyMatrix& c = con.matrix;
    const SpacePtr& space = c.space();
    const int n = space->dim();
    const int q = c.rows();
    const int zdim = (q == 1) ? 0 : q;

    // Scalarized support: full monomial (x exponents ++ z exponents) ->
    // constant coefficient and affine decision coefficients.
    std::map<Monomial, detail::ScalRowData> support;
    auto add_poly = [&](const Polynomial& p, double scale, int k, int l,
                        int dec_id) {
      for (const auto& [mono, coef] : p.terms()) {
        Monomial mu(n + zdim, 0);
        std::copy(mono.begin(), mono.end(), mu.begin());
        if (zdim) {
          mu[n + k] += 1;
          mu[n + l] += 1;
        }
        auto& row = support[mu];
        row.structural = true;
        if (dec_id < 0)
          row.constant += scale * coef;
        else
          row.dec[dec_id] += scale * coef;
      }
    };
    for (int k = 0; k < q; ++k)
      for (int l = k; l < q; ++l) {
        const double scale = (k == l) ? 1.0 : 2.0;
        add_poly(c(k, l).constant_part(), scale, k, l, -1);
        for (const auto& [id, p] : c(k, l).decision_parts())
          add_poly(p, scale, k, l, id);
      }

    // Per-slot candidate monomials from the halved degree box of the
    // diagonal entry: per-variable caps, per-group caps, total cap.
    std::vector<std::vector<Monomial>> slot_candidates(q);
    for (int k = 0; k < q; ++k) {
      const AffinePoly& diag = c(k, k);
      if (diag.IsZero()) continue;  // zero diagonal: slot carries nothing
      std::vector<int> var_cap(n, 0);
      for (int v = 0; v < n; ++v)
        var_cap[v] = (diag.DegreeIn(v) + 1) / 2;
      std::array<int, 4> group_cap{};
      for (int g = 0; g < 4; ++g)
        group_cap[g] =
            (diag.DegreeInGroup(static_cast<VariableSpace::Group>(g)) + 1) / 2;
      const int total_cap = (diag.TotalDegree() + 1) / 2;

      std::vector<Monomial>& cands = slot_candidates[k];
      Monomial cur(n, 0);
      auto rec = [&](auto&& self, int v, int budget) -> void {
        if (v == n) {
          cands.push_back(cur);
          return;
        }
        const auto g = static_cast<int>(space->group_of(v));
        int gused = 0;
        const int gbegin = space->group_begin(static_cast<VariableSpace::Group>(g));
        for (int w = gbegin; w < v; ++w) gused += cur[w];
        const int cap =
            std::min({var_cap[v], budget, group_cap[g] - gused});
        for (int e = 0; e <= cap; ++e) {
          cur[v] = static_cast<std::uint8_t>(e);
          self(self, v + 1, budget - e);
        }
        cur[v] = 0;
      };
      rec(rec, 0, total_cap);
      std::sort(cands.begin(), cands.end(), GradedLexLess());
    }

    // Sign-symmetry generators: GF(2) nullspace of the support parities.
    const int bits = n + zdim;
    if (bits > 63)
      throw std::invalid_argument("CompileSos: too many variables for " +
                                  con.label);
    std::vector<std::uint64_t> echelon;  // reduced, one pivot bit per row
    std::vector<int> pivot_bit;
    auto reduce = [&](std::uint64_t v) {
      for (std::size_t r = 0; r < echelon.size(); ++r)
        if (v >> pivot_bit[r] & 1) v ^= echelon[r];
      return v;
    };
    for (const auto& [mu, data] : support) {
      std::uint64_t mask = 0;
      for (int b = 0; b < bits; ++b)
        if (mu[b] & 1) mask |= std::uint64_t{1} << b;
      mask = reduce(mask);
      if (!mask) continue;
      int pb = 63 - std::countl_zero(mask);
      // Back-substitute the new pivot out of earlier rows.
      for (std::size_t r = 0; r < echelon.size(); ++r)
        if (echelon[r] >> pb & 1) echelon[r] ^= mask;
      echelon.push_back(mask);
      pivot_bit.push_back(pb);
    }
    std::vector<std::uint64_t> generators;
    {
      std::uint64_t pivots = 0;
      for (int pb : pivot_bit) pivots |= std::uint64_t{1} << pb;
      for (int b = 0; b < bits; ++b) {
        if (pivots >> b & 1) continue;
        std::uint64_t v = std::uint64_t{1} << b;
        for (std::size_t r = 0; r < echelon.size(); ++r)
          if (echelon[r] >> b & 1) v |= std::uint64_t{1} << pivot_bit[r];
        generators.push_back(v);
      }
    }
    auto signature = [&](const Monomial& mono, int slot) {
      std::uint64_t elem = 0;
      for (int v = 0; v < n; ++v)
        if (mono[v] & 1) elem |= std::uint64_t{1} << v;
      if (zdim) elem |= std::uint64_t{1} << (n + slot);
      std::uint64_t sig = 0;
      for (std::size_t g = 0; g < generators.size(); ++g)
        if (std::popcount(generators[g] & elem) & 1)
          sig |= std::uint64_t{1} << g;
      return sig;
    };

    // Partition candidates into classes.
    struct Element {
      Monomial mono;
      int slot;
      bool alive = true;
    };
    std::map<std::uint64_t, int> class_of_sig;
    std::vector<std::vector<Element>> classes;
    for (int k = 0; k < q; ++k)
      for (const Monomial& mono : slot_candidates[k]) {
        const std::uint64_t sig = signature(mono, k);
        auto [it, fresh] =
            class_of_sig.emplace(sig, static_cast<int>(classes.size()));
        if (fresh) classes.emplace_back();
        classes[it->second].push_back({mono, k, true});
      }

    // Pair bookkeeping for pruning and row emission.
    struct PairRec {
      int cls, i, j;
      bool alive = true;
    };
    std::vector<PairRec> pool;
    struct MuInfo {
      std::vector<int> pair_ids;
      int alive_pairs = 0;
      std::pair<int, int> diag = {-1, -1};  // (class, index) with 2*elem = mu
    };
    std::map<Monomial, MuInfo> mu_map;
    auto product_key = [&](const Element& a, const Element& b) {
      Monomial mu(n + zdim, 0);
      for (int v = 0; v < n; ++v) {
        const int e = a.mono[v] + b.mono[v];
        if (e > 255) throw std::overflow_error("CompileSos: exponent overflow");
        mu[v] = static_cast<std::uint8_t>(e);
      }
      if (zdim) {
        mu[n + a.slot] += 1;
        mu[n + b.slot] += 1;
      }
      return mu;
    };
    std::vector<std::vector<std::vector<int>>> pairs_of_elem(classes.size());
    for (std::size_t cls = 0; cls < classes.size(); ++cls) {
      pairs_of_elem[cls].resize(classes[cls].size());
      for (std::size_t i = 0; i < classes[cls].size(); ++i)
        for (std::size_t j = i; j < classes[cls].size(); ++j) {
          const Monomial mu = product_key(classes[cls][i], classes[cls][j]);
          const int pid = static_cast<int>(pool.size());
          pool.push_back({static_cast<int>(cls), static_cast<int>(i),
                          static_cast<int>(j), true});
          auto& info = mu_map[mu];
          info.pair_ids.push_back(pid);
          info.alive_pairs++;
          if (i == j) info.diag = {static_cast<int>(cls), static_cast<int>(i)};
          pairs_of_elem[cls][i].push_back(pid);
          if (i != j) pairs_of_elem[cls][j].push_back(pid);
        }
    }

    // Iterative pruning: drop an element when its squared monomial has no
    // structural coefficient and no other live pair, which forces the Gram
    // diagonal (and with it the whole row) to zero.
    std::deque<std::pair<int, int>> queue;
    for (std::size_t cls = 0; cls < classes.size(); ++cls)
      for (std::size_t i = 0; i < classes[cls].size(); ++i)
        queue.push_back({static_cast<int>(cls), static_cast<int>(i)});
    while (!queue.empty()) {
      auto [cls, i] = queue.front();
      queue.pop_front();
      Element& e = classes[cls][i];
      if (!e.alive) continue;
      Element doubled = e;
      const Monomial mu = product_key(doubled, doubled);
      auto sit = support.find(mu);
      const bool structural = (sit != support.end() && sit->second.structural);
      const MuInfo& info = mu_map[mu];
      if (structural || info.alive_pairs != 1) continue;
      // The only live pair must be the diagonal one by construction.
      e.alive = false;
      ++out.pruned_elements;
      for (int pid : pairs_of_elem[cls][i]) {
        PairRec& pr = pool[pid];
        if (!pr.alive) continue;
        pr.alive = false;
        const Monomial pmu =
            product_key(classes[pr.cls][pr.i], classes[pr.cls][pr.j]);
        MuInfo& pinfo = mu_map[pmu];
        pinfo.alive_pairs--;
        if (pinfo.alive_pairs == 1 && pinfo.diag.first >= 0 &&
            classes[pinfo.diag.first][pinfo.diag.second].alive)
          queue.push_back(pinfo.diag);
      }
    }

    // Compact the classes into Gram block descriptors.
    std::vector<std::vector<int>> new_index(classes.size());
    std::vector<int> block_of_class(classes.size(), -1);
    for (std::size_t cls = 0; cls < classes.size(); ++cls) {
      new_index[cls].assign(classes[cls].size(), -1);
      GramBlockDescriptor desc;
      desc.constraint_index = static_cast<int>(ci);
      for (std::size_t i = 0; i < classes[cls].size(); ++i) {
        if (!classes[cls][i].alive) continue;
        new_index[cls][i] = static_cast<int>(desc.basis.size());
        desc.basis.push_back({classes[cls][i].mono, classes[cls][i].slot});
      }
      if (desc.basis.empty()) continue;
      desc.conic_block = out.program.AddBlock(
          con.label + "/g" + std::to_string(out.gram_blocks.size()),
          static_cast<int>(desc.basis.size()));
      block_of_class[cls] = static_cast<int>(out.gram_blocks.size());
      out.gram_blocks.push_back(std::move(desc));
      ++out.class_count;
    }

    // Emit one row per product monomial; monomials with support but no live
    // pairs become linear constraints on the decisions.
    std::set<Monomial> emitted;
    for (const auto& [mu, info] : mu_map) {
      emitted.insert(mu);
      PendingRow row;
      for (int pid : info.pair_ids) {
        const PairRec& pr = pool[pid];
        if (!pr.alive) continue;
        const int blk = block_of_class[pr.cls];
        const int a = new_index[pr.cls][pr.i];
        const int b = new_index[pr.cls][pr.j];
        row.pairs.push_back({out.gram_blocks[blk].conic_block, a, b});
        if (pr.i == pr.j) row.diag_count++;
      }
      auto sit = support.find(mu);
      if (sit != support.end()) {
        row.constant = sit->second.constant;
        row.dec = sit->second.dec;
      }
      if (!row.pairs.empty()) {
        pending.push_back(std::move(row));
      } else if (sit != support.end()) {
        LinearRow lr;
        lr.dec = row.dec;
        lr.rhs = -row.constant;
        lr.origin = con.label + ": coefficient of " +
                    detail::FormatScalMono(space, zdim, mu) +
                    " has no matching squares";
        linear.push_back(std::move(lr));
      }
    }
    // Support monomials never touched by any candidate pair.
    for (const auto& [mu, data] : support) {
      if (emitted.count(mu)) continue;
      LinearRow lr;
      lr.dec = data.dec;
      lr.rhs = -data.constant;
      lr.origin = con.label + ": coefficient of " +
                  detail::FormatScalMono(space, zdim, mu) +
                  " has no matching squares";
      linear.push_back(std::move(lr));
    }
  }

  // Global linear presolve: Gaussian elimination of the pair-free rows.
  std::vector<std::optional<LinExpr>> subst(num_dec);
  for (LinearRow& lr : linear) {
    // Substitute already eliminated decisions.
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto it = lr.dec.begin(); it != lr.dec.end();) {
        if (!subst[it->first]) {
          ++it;
          continue;
        }
        const double a = it->second;
        const LinExpr& e = *subst[it->first];
        it = lr.dec.erase(it);
        lr.rhs -= a * e.constant;
        for (const auto& [id, c] : e.terms) lr.dec[id] += a * c;
        changed = true;
      }
      for (auto it = lr.dec.begin(); it != lr.dec.end();)
        it = (std::abs(it->second) < 1e-12) ? lr.dec.erase(it) : std::next(it);
    }
    if (lr.dec.empty()) {
      if (std::abs(lr.rhs) > 1e-9) {
        out.contradiction = true;
        out.note = lr.origin;
        return out;
      }
      continue;
    }
    auto pivot = lr.dec.begin();
    for (auto it = lr.dec.begin(); it != lr.dec.end(); ++it)
      if (std::abs(it->second) > std::abs(pivot->second)) pivot = it;
    LinExpr e;
    e.constant = lr.rhs / pivot->second;
    for (const auto& [id, c] : lr.dec)
      if (id != pivot->first) e.Add(id, -c / pivot->second);
    subst[pivot->first] = std::move(e);
  }
  // Resolve substitution chains so every expression references only kept ids.
  std::vector<char> resolving(num_dec, 0);
  auto resolve = [&](auto&& self, int id) -> LinExpr {
    if (!subst[id]) {
      LinExpr e;
      e.Add(id, 1.0);
      return e;
    }
    if (resolving[id])
      throw std::logic_error("CompileSos: cyclic substitution");
    resolving[id] = 1;
    LinExpr flat;
    flat.constant = subst[id]->constant;
    for (const auto& [dep, c] : subst[id]->terms) {
      LinExpr sub = self(self, dep);
      sub *= c;
      flat += sub;
    }
    resolving[id] = 0;
    subst[id] = flat;  // memoize
    return flat;
  };
  for (int d = 0; d < num_dec; ++d)
    if (subst[d]) resolve(resolve, d);

  // Final rows: apply substitutions, find which decisions are actually used.
  std::vector<char> used(num_dec, 0);
  for (PendingRow& row : pending) {
    std::map<int, double> final_dec;
    for (const auto& [id, a] : row.dec) {
      if (subst[id]) {
        row.constant += a * subst[id]->constant;
        for (const auto& [dep, c] : subst[id]->terms) final_dec[dep] += a * c;
      } else {
        final_dec[id] += a;
      }
    }
    for (auto it = final_dec.begin(); it != final_dec.end();)
      it = (std::abs(it->second) < 1e-12) ? final_dec.erase(it) : std::next(it);
    row.dec = std::move(final_dec);
    for (const auto& [id, a] : row.dec) used[id] = 1;
  }

  std::vector<int> conic_index(num_dec, -1);
  int next_free = 0;
  for (int d = 0; d < num_dec; ++d)
    if (!subst[d] && used[d]) conic_index[d] = next_free++;
  out.reduced_decision_count = next_free;
  out.margin_free_index = next_free;
  out.program.free_count = next_free + 1;

  // Margin cap block: t + slack = 1 keeps the maximization bounded.
  const int cap_block = out.program.AddBlock("margin_cap", 1);
  {
    ConicProgram::Row cap;
    cap.psd.push_back({cap_block, 0, 0, 1.0});
    cap.free_terms.push_back({out.margin_free_index, 1.0});
    cap.rhs = 1.0;
    out.program.rows.push_back(std::move(cap));
  }
  out.program.objective_free.push_back({out.margin_free_index, -1.0});

  for (const PendingRow& row : pending) {
    ConicProgram::Row r;
    for (const auto& [blk, a, b] : row.pairs)
      r.psd.push_back({blk, std::min(a, b), std::max(a, b), 1.0});
    if (row.diag_count)
      r.free_terms.push_back({out.margin_free_index,
                              static_cast<double>(row.diag_count)});
    for (const auto& [id, a] : row.dec)
      r.free_terms.push_back({conic_index[id], -a});
    std::sort(r.free_terms.begin(), r.free_terms.end());
    r.rhs = row.constant;
    out.program.rows.push_back(std::move(r));
  }
  out.row_count = static_cast<int>(out.program.rows.size());

  // Recovery expressions mapping conic free values back to decisions.
  out.recovery.resize(num_dec);
  for (int d = 0; d < num_dec; ++d) {
    LinExpr e;
    if (subst[d]) {
      e.constant = subst[d]->constant;
      for (const auto& [dep, c] : subst[d]->terms)
        if (conic_index[dep] >= 0) e.Add(conic_index[dep], c);
      // Dependencies pinned to zero contribute nothing.
    } else if (conic_index[d] >= 0) {
      e.Add(conic_index[d], 1.0);
    }
    out.recovery[d] = std::move(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Solving and certificate extraction.

struct SosSolution {
  bool compiled = false;
  ConicStatus status = ConicStatus::kNumericalTrouble;
  double margin = -std::numeric_limits<double>::infinity();
  std::vector<double> decisions;
  std::vector<Eigen::MatrixXd> grams;  // one per Gram block descriptor
  std::string note;
  int iterations = 0;
  double seconds = 0.0;

  // The constraint system admits a sum-of-squares certificate (up to tol).
  bool SosFeasible(double tol = 1e-7) const {
    return compiled &&
           (status == ConicStatus::kOptimal ||
            status == ConicStatus::kIterationLimit) &&
           margin >= -tol;
  }
};

inline SosSolution ExtractSosSolution(const SosProgram& prog,
                                      const CompiledSos& compiled,
                                      const ConicSolution& conic) {
  SosSolution sol;
  sol.compiled = true;
  sol.status = conic.status;
  sol.note = conic.note;
  sol.iterations = conic.iterations;
  sol.seconds = conic.seconds;
  std::vector<double> frees(conic.free_values.data(),
                            conic.free_values.data() + conic.free_values.size());
  sol.margin = frees.at(compiled.margin_free_index);
  sol.decisions.resize(prog.decision_count());
  for (int d = 0; d < prog.decision_count(); ++d)
    sol.decisions[d] = compiled.recovery[d].Eval(frees);
  sol.grams.reserve(compiled.gram_blocks.size());
  for (const auto& desc : compiled.gram_blocks) {
    Eigen::MatrixXd g = conic.psd.at(desc.conic_block);
    g.diagonal().array() += sol.margin;
    sol.grams.push_back(std::move(g));
  }
  return sol;
}

inline SosSolution SolveSos(const SosProgram& prog, const CompiledSos& compiled,
                            const ConicOptions& opt = {}) {
  if (compiled.contradiction) {
    SosSolution sol;
    sol.compiled = false;
    sol.note = compiled.note;
    return sol;
  }
  const ConicSolution conic = SolveConic(compiled.program, opt);
  return ExtractSosSolution(prog, compiled, conic);
}

inline SosSolution SolveSos(const SosProgram& prog,
                            const ConicOptions& opt = {}) {
  return SolveSos(prog, CompileSos(prog), opt);
}

// Numeric re-check of an extracted certificate against the declared
// constraints: smallest Gram eigenvalue and largest coefficient mismatch
// between sum_blocks b(x)'G b(x) and the constraint matrix at the recovered
// decision values.
struct SosCheck {
  double min_gram_eigenvalue = 0.0;
  double max_coefficient_residual = 0.0;
  bool Accept(double eig_tol = 1e-7, double residual_tol = 1e-6) const {
    return min_gram_eigenvalue >= -eig_tol &&
           max_coefficient_residual <= residual_tol;
  }
};

inline SosCheck CheckSosCertificate(const SosProgram& prog,
                                    const CompiledSos& compiled,
                                    const SosSolution& sol) {
  SosCheck check;
  check.min_gram_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t ci = 0; ci < prog.constraints().size(); ++ci) {
    const auto& con = prog.constraints()[ci];
    const SpacePtr& space = con.matrix.space();
    const int n = space->dim();
    const int q = con.matrix.rows();
    const int zdim = (q == 1) ? 0 : q;

    std::map<Monomial, double> achieved;
    for (std::size_t g = 0; g < compiled.gram_blocks.size(); ++g) {
      const auto& desc = compiled.gram_blocks[g];
      if (desc.constraint_index != static_cast<int>(ci)) continue;
      const Eigen::MatrixXd& gram = sol.grams[g];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram,
                                                        Eigen::EigenvaluesOnly);
      check.min_gram_eigenvalue =
          std::min(check.min_gram_eigenvalue, es.eigenvalues().minCoeff());
      const auto& basis = desc.basis;
      for (std::size_t i = 0; i < basis.size(); ++i)
        for (std::size_t j = i; j < basis.size(); ++j) {
          Monomial mu(n + zdim, 0);
          for (int v = 0; v < n; ++v)
            mu[v] = static_cast<std::uint8_t>(basis[i].first[v] +
                                              basis[j].first[v]);
          if (zdim) {
            mu[n + basis[i].second] += 1;
            mu[n + basis[j].second] += 1;
          }
          achieved[mu] += (i == j ? 1.0 : 2.0) * gram(i, j);
        }
    }
    // Target coefficients of z' C z at the recovered decisions.
    std::map<Monomial, double> target;
    for (int k = 0; k < q; ++k)
      for (int l = k; l < q; ++l) {
        const Polynomial p = con.matrix(k, l).FixDecisions(sol.decisions);
        const double scale = (k == l) ? 1.0 : 2.0;
        for (const auto& [mono, coef] : p.terms()) {
          Monomial mu(n + zdim, 0);
          std::copy(mono.begin(), mono.end(), mu.begin());
          if (zdim) {
            mu[n + k] += 1;
            mu[n + l] += 1;
          }
          target[mu] += scale * coef;
        }
      }
    double scale = 1.0;
    for (const auto& [mu, c] : target) scale = std::max(scale, std::abs(c));
    for (const auto& [mu, c] : target) {
      auto it = achieved.find(mu);
      const double got = (it == achieved.end()) ? 0.0 : it->second;
      check.max_coefficient_residual =
          std::max(check.max_coefficient_residual, std::abs(got - c) / scale);
    }
    for (const auto& [mu, got] : achieved) {
      if (target.count(mu)) continue;
      check.max_coefficient_residual =
          std::max(check.max_coefficient_residual, std::abs(got) / scale);
    }
  }
  if (compiled.gram_blocks.empty()) check.min_gram_eigenvalue = 0.0;
  return check;
}

// Convenience wrapper for checking a fixed polynomial matrix (no decisions):
// returns the achievable Gram margin, or -inf with a note when the compile
// stage already proves the matrix cannot be a sum of squares.
struct FixedSosReport {
  bool is_sos = false;
  double margin = -std::numeric_limits<double>::infinity();
  double min_gram_eigenvalue = 0.0;
  double max_coefficient_residual = 0.0;
  std::string note;
};

inline FixedSosReport VerifyFixedSos(const PolynomialMatrix& m,
                                     const std::string& label,
                                     double margin_tol = 1e-7,
                                     const ConicOptions& opt = {}) {
  SosProgram prog;
  prog.AddSosConstraint(AffinePolyMatrix::FromPolynomialMatrix(m), label);
  const CompiledSos compiled = CompileSos(prog);
  FixedSosReport rep;
  if (compiled.contradiction) {
    rep.note = compiled.note;
    return rep;
  }
  const SosSolution sol = SolveSos(prog, compiled, opt);
  rep.margin = sol.margin;
  rep.note = sol.note;
  const SosCheck check = CheckSosCertificate(prog, compiled, sol);
  rep.min_gram_eigenvalue = check.min_gram_eigenvalue;
  rep.max_coefficient_residual = check.max_coefficient_residual;
  rep.is_sos = sol.SosFeasible(margin_tol) && check.max_coefficient_residual <= 1e-6;
  return rep;
}

}  // namespace polystab
