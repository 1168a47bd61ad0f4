#pragma once

// Synthesis of globally stabilizing polynomial state feedback for plants that
// are affine in the input and polynomial in the state,
//
//   xdot = [a1; a2] lift(x) + [0; b2] input_shape(x) u,
//
// where the state splits into a head group (rows driven by a1 alone) and a
// tail group (rows that also see the input). The controller is searched in
// the rational family
//
//   u(x) = gain(x) shape(xh)^{-1} basis(x),
//   V(x) = basis(x)' shape(xh)^{-1} basis(x),
//
// with shape a symmetric polynomial matrix in the head variables only, gain a
// polynomial matrix, and basis a polynomial vector that vanishes exactly at
// the origin and factors the lift as lift = lift_factor * basis. Feasibility
// of two matrix sum-of-squares conditions (shape bounded below, and a decay
// block that dominates the time derivative of V) certifies global asymptotic
// stability of the closed loop, with decay rate
//
//   Vdot <= -(rate_num / rate_den) |basis|^2.
//
// This header builds those conditions, solves them through the sum-of-squares
// compiler, and re-verifies returned certificates numerically on grids and
// along simulated directions, independently of the solver's own status.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polystab/poly.hpp"
#include "polystab/sos.hpp"

namespace polystab {

struct PlantModel {
  SpacePtr space;                // state variables only, head + tail groups
  PolynomialMatrix lift;         // f x 1 polynomial lift of the drift
  PolynomialMatrix input_shape;  // g x m polynomial input weighting
  Eigen::MatrixXd a1;            // n1 x f, head rows of the drift
  Eigen::MatrixXd a2;            // n2 x f, tail rows of the drift
  Eigen::MatrixXd b2;            // n2 x g, tail rows of the input map

  PlantModel(SpacePtr sp, PolynomialMatrix lift_in, PolynomialMatrix shape_in,
             Eigen::MatrixXd a1_in, Eigen::MatrixXd a2_in,
             Eigen::MatrixXd b2_in)
      : space(std::move(sp)),
        lift(std::move(lift_in)),
        input_shape(std::move(shape_in)),
        a1(std::move(a1_in)),
        a2(std::move(a2_in)),
        b2(std::move(b2_in)) {
    Validate();
  }

  int head_dim() const { return space->group_size(VariableSpace::Group::kX1); }
  int tail_dim() const { return space->group_size(VariableSpace::Group::kX2); }
  int state_dim() const { return space->state_dim(); }
  int lift_dim() const { return lift.rows(); }
  int weight_dim() const { return input_shape.rows(); }
  int input_dim() const { return input_shape.cols(); }

  void Validate() const {
    if (!space) throw std::invalid_argument("PlantModel: missing space");
    if (space->group_size(VariableSpace::Group::kY) != 0 ||
        space->group_size(VariableSpace::Group::kZ) != 0)
      throw std::invalid_argument(
          "PlantModel: space must contain state variables only");
    if (!lift.space()->SameAs(*space) || !input_shape.space()->SameAs(*space))
      throw std::invalid_argument("PlantModel: mixed variable spaces");
    if (lift.cols() != 1)
      throw std::invalid_argument("PlantModel: lift must be a column");
    if (input_shape.cols() < 1)
      throw std::invalid_argument("PlantModel: need at least one input");
    const int n1 = head_dim(), n2 = tail_dim();
    const int f = lift_dim(), g = weight_dim();
    if (a1.rows() != n1 || a1.cols() != f || a2.rows() != n2 ||
        a2.cols() != f || b2.rows() != n2 || b2.cols() != g)
      throw std::invalid_argument("PlantModel: coefficient shape mismatch");
  }

  // Numeric vector field at a state and input value.
  Eigen::VectorXd Derivative(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& u) const {
    if (x.size() != state_dim() || u.size() != input_dim())
      throw std::invalid_argument("PlantModel::Derivative: size mismatch");
    const Eigen::MatrixXd fv = lift.Eval(x);
    const Eigen::MatrixXd gv = input_shape.Eval(x);
    Eigen::VectorXd out(state_dim());
    out.head(head_dim()) = a1 * fv.col(0);
    out.tail(tail_dim()) = a2 * fv.col(0) + b2 * (gv * u);
    return out;
  }
};

// Choice of the basis vector and the factorization lift = lift_factor * basis.
struct ControlStructure {
  PolynomialMatrix basis;        // p x 1, vanishes exactly at the origin
  PolynomialMatrix lift_factor;  // f x p

  int dim() const { return basis.rows(); }
};

inline void ValidateStructure(const PlantModel& model,
                              const ControlStructure& s) {
  if (!s.basis.space()->SameAs(*model.space) ||
      !s.lift_factor.space()->SameAs(*model.space))
    throw std::invalid_argument("ValidateStructure: mixed variable spaces");
  if (s.basis.cols() != 1)
    throw std::invalid_argument("ValidateStructure: basis must be a column");
  if (s.lift_factor.rows() != model.lift_dim() ||
      s.lift_factor.cols() != s.basis.rows())
    throw std::invalid_argument("ValidateStructure: factor shape mismatch");
  const PolynomialMatrix prod = s.lift_factor * s.basis;
  for (int i = 0; i < model.lift_dim(); ++i)
    if (!prod(i, 0).EqualsWithin(model.lift(i, 0), 1e-10))
      throw std::invalid_argument(
          "ValidateStructure: lift_factor * basis does not reproduce the "
          "lift (row " +
          std::to_string(i) + ")");
}

// Whether the basis vector vanishes only at the origin. kProven covers the
// common shapes (full-rank linear part with no higher terms, or rows that
// reduce to pure powers of single variables after substituting variables
// already forced to zero); anything else falls back to sampling.
enum class OriginUniqueness { kProven, kSampledOnly, kViolated };

inline OriginUniqueness CheckBasisVanishesOnlyAtOrigin(
    const ControlStructure& s, std::string* note = nullptr) {
  const SpacePtr& sp = s.basis.space();
  const int n = sp->state_dim();
  const int p = s.basis.rows();
  const Eigen::VectorXd at0 =
      s.basis.Eval(Eigen::VectorXd::Zero(n)).col(0);
  if (at0.cwiseAbs().maxCoeff() > 1e-12) {
    if (note) *note = "basis does not vanish at the origin";
    return OriginUniqueness::kViolated;
  }

  // Rule 1: purely linear basis with full-rank coefficient matrix.
  bool linear = true;
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(p, n);
  for (int i = 0; i < p && linear; ++i)
    for (const auto& [mono, c] : s.basis(i, 0).terms()) {
      if (MonomialDegree(mono) > 1) {
        linear = false;
        break;
      }
      for (int v = 0; v < n; ++v)
        if (mono[v] == 1) coef(i, v) = c;
    }
  if (linear) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(coef);
    lu.setThreshold(1e-10);
    if (lu.rank() == n) {
      if (note) *note = "linear basis with full-rank coefficients";
      return OriginUniqueness::kProven;
    }
  }

  // Rule 2: triangular elimination. Repeatedly substitute zero for variables
  // already forced to zero; a row that reduces to a single power of a single
  // variable forces that variable as well.
  std::vector<bool> forced(n, false);
  bool progress = true;
  while (progress) {
    progress = false;
    for (int i = 0; i < p; ++i) {
      int var = -1;
      bool single = true;
      int nonzero_rows = 0;
      for (const auto& [mono, c] : s.basis(i, 0).terms()) {
        bool killed = false;
        for (int v = 0; v < n; ++v)
          if (forced[v] && mono[v] > 0) killed = true;
        if (killed) continue;
        ++nonzero_rows;
        int vars_in_mono = 0, last = -1;
        for (int v = 0; v < n; ++v)
          if (mono[v] > 0) {
            ++vars_in_mono;
            last = v;
          }
        if (vars_in_mono != 1) single = false;
        if (var == -1)
          var = last;
        else if (var != last)
          single = false;
      }
      if (single && nonzero_rows == 1 && var >= 0 && !forced[var]) {
        forced[var] = true;
        progress = true;
      }
    }
  }
  if (std::all_of(forced.begin(), forced.end(), [](bool b) { return b; })) {
    if (note) *note = "triangular elimination forces every variable";
    return OriginUniqueness::kProven;
  }

  // Sampled fallback over shells of radii spanning several decades.
  std::mt19937_64 rng(20240517);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double min_norm = std::numeric_limits<double>::infinity();
  for (double radius : {1e-3, 1e-1, 1.0, 10.0}) {
    for (int k = 0; k < 1024; ++k) {
      Eigen::VectorXd x(n);
      for (int v = 0; v < n; ++v) x[v] = gauss(rng);
      x *= radius / std::max(x.norm(), 1e-300);
      const double nz = s.basis.Eval(x).col(0).norm();
      min_norm = std::min(min_norm, nz);
      if (nz < 1e-12) {
        if (note)
          *note = "basis vanishes at a sampled point of norm " +
                  FormatDouble(radius);
        return OriginUniqueness::kViolated;
      }
    }
  }
  if (note)
    *note = "not proven structurally; smallest sampled basis norm " +
            FormatDouble(min_norm);
  return OriginUniqueness::kSampledOnly;
}

// Weights of the certified decay Vdot <= -(rate_num / rate_den) |basis|^2 and
// the lower bound shape >= shape_floor I.
struct DecayWeights {
  double shape_floor = 0.1;
  Polynomial rate_num;
  Polynomial rate_den;
};

// A full synthesis problem: the plant, the chosen basis factorization, and
// the decay weights.
struct Problem {
  PlantModel model;
  ControlStructure structure;
  DecayWeights weights;
};

// Radial level bound: rate_num/rate_den |basis|^2 >= level whenever |x| >=
// radius. Needed so that sublevel sets of V trap trajectories at any size.
struct RadialBound {
  double level = 0.0;
  double radius = 1.0;
  bool proven = false;
};

struct WeightReport {
  bool rate_num_positive = false;  // positive away from the origin
  bool rate_den_positive = false;  // positive everywhere
  bool sampled_only = false;       // some box relied on sampling, not proof
  RadialBound radial;
  std::string note;

  bool Accept() const {
    return rate_num_positive && rate_den_positive && radial.proven;
  }
};

struct WeightOptions {
  double radius = 1.0;       // radius of the radial bound
  double level = 0.0;        // 0 derives a level from sphere samples
  int sphere_samples = 4096;
  ConicOptions conic;
};

namespace detail {

// Positivity of a fixed polynomial, strict either everywhere or away from the
// origin, by subtracting a small positive witness and testing for a
// sum-of-squares decomposition.
inline bool ProvePositive(const Polynomial& q, bool away_from_origin_only,
                          const ConicOptions& opt, std::string* why) {
  const SpacePtr& sp = q.space();
  const int n = sp->state_dim();
  const double q0 = q.Eval(Eigen::VectorXd::Zero(sp->dim()));
  std::vector<Polynomial> witnesses;
  if (q0 > 0.0) {
    for (double frac : {0.5, 0.1, 1e-2, 1e-6})
      witnesses.push_back(Polynomial::Constant(sp, frac * q0));
  } else if (away_from_origin_only && q0 == 0.0) {
    int half = 1;
    for (const auto& [mono, c] : q.terms())
      half = std::max(half, MonomialDegree(mono) / 2);
    for (int k : {1, half})
      for (double delta : {1e-2, 1e-4, 1e-6}) {
        Polynomial w(sp);
        for (int v = 0; v < n; ++v) {
          Monomial m(sp->dim(), 0);
          m[v] = static_cast<std::uint8_t>(2 * k);
          w += Polynomial::FromMonomial(sp, m, delta);
        }
        witnesses.push_back(w);
      }
  } else {
    if (why) *why = "value at the origin is not positive";
    return false;
  }
  for (const Polynomial& w : witnesses) {
    PolynomialMatrix m(sp, 1, 1);
    m(0, 0) = q - w;
    const FixedSosReport rep = VerifyFixedSos(m, "positivity", 1e-7, opt);
    if (rep.is_sos) {
      if (why) *why = "sum of squares after subtracting a positive witness";
      return true;
    }
  }
  if (why) *why = "no sum-of-squares witness found";
  return false;
}

inline int EvenCeil(int d) { return d + (d % 2); }

}  // namespace detail

// Certify the decay weights: positivity of both rate polynomials and the
// radial bound, the latter through a multiplier search
//   rate_num |basis|^2 - level rate_den - sigma (|x|^2 - radius^2) is SOS,
//   sigma is SOS.
inline WeightReport CertifyWeights(const ControlStructure& s,
                                   const DecayWeights& w,
                                   const WeightOptions& opt = {}) {
  WeightReport rep;
  const SpacePtr& sp = s.basis.space();
  const int n = sp->state_dim();
  if (w.shape_floor <= 0.0)
    throw std::invalid_argument("CertifyWeights: shape_floor must be positive");

  std::string why;
  rep.rate_num_positive = detail::ProvePositive(w.rate_num, true, opt.conic, &why);
  std::string note = "rate_num: " + why;
  rep.rate_den_positive = detail::ProvePositive(w.rate_den, false, opt.conic, &why);
  note += "; rate_den: " + why;

  const Polynomial basis_sq = (s.basis.Transpose() * s.basis)(0, 0);
  Polynomial radius_sq(sp);
  for (int v = 0; v < n; ++v) {
    Monomial m(sp->dim(), 0);
    m[v] = 2;
    radius_sq += Polynomial::FromMonomial(sp, m, 1.0);
  }
  const double r = opt.radius;
  radius_sq += Polynomial::Constant(sp, -r * r);

  // Pick a level from samples on the sphere unless one was requested.
  double level = opt.level;
  if (level <= 0.0) {
    std::mt19937_64 rng(20240518);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double lo = std::numeric_limits<double>::infinity();
    for (int k = 0; k < opt.sphere_samples; ++k) {
      Eigen::VectorXd x(n);
      for (int v = 0; v < n; ++v) x[v] = gauss(rng);
      if (k < 2 * n) {
        x.setZero();
        x[k / 2] = (k % 2) ? -1.0 : 1.0;
      }
      x *= r / std::max(x.norm(), 1e-300);
      const double num = w.rate_num.Eval(x) * basis_sq.Eval(x);
      const double den = w.rate_den.Eval(x);
      if (den > 0) lo = std::min(lo, num / den);
    }
    if (!std::isfinite(lo) || lo <= 0) {
      rep.radial.proven = false;
      rep.note = note + "; radial: no positive level on the sphere";
      rep.sampled_only = true;
      return rep;
    }
    level = 0.8 * lo;
  }

  const Polynomial target_base = w.rate_num * basis_sq;
  const int deg = std::max(target_base.TotalDegree(), w.rate_den.TotalDegree());
  const int sigma_deg = std::max(0, detail::EvenCeil(deg) - 2);
  std::vector<int> all_vars(n);
  for (int v = 0; v < n; ++v) all_vars[v] = v;

  for (int attempt = 0; attempt < 7; ++attempt) {
    SosProgram prog;
    MonomialSetSpec sig_spec;
    sig_spec.vars = all_vars;
    sig_spec.max_total_degree = sigma_deg;
    const AffinePoly sigma =
        prog.NewDecisionPoly(sp, "sigma", EnumerateMonomials(sp, sig_spec));
    AffinePolyMatrix sig_mat(sp, 1, 1);
    sig_mat(0, 0) = sigma;
    prog.AddSosConstraint(sig_mat, "multiplier");
    AffinePolyMatrix target(sp, 1, 1);
    target(0, 0) = AffinePoly(target_base - w.rate_den * level) -
                   sigma * radius_sq;
    prog.AddSosConstraint(target, "radial_level");
    const SosSolution sol = SolveSos(prog, opt.conic);
    if (sol.SosFeasible() && CheckSosCertificate(prog, CompileSos(prog), sol).Accept()) {
      rep.radial.level = level;
      rep.radial.radius = r;
      rep.radial.proven = true;
      rep.note = note + "; radial: multiplier certificate at level " +
                 FormatDouble(level);
      rep.sampled_only = !(rep.rate_num_positive && rep.rate_den_positive);
      return rep;
    }
    level *= 0.5;
  }
  rep.radial.level = level;
  rep.radial.radius = r;
  rep.radial.proven = false;
  rep.sampled_only = true;
  rep.note = note + "; radial: no multiplier certificate found";
  return rep;
}

// The symmetric matrix governing the decay of V along the closed loop:
// Vdot = -basis' shape^{-1} decay shape^{-1} basis with
//   decay = -T - T' + sum_i d(shape)/d(xh_i) (a1 row i . lift),
//   T = d(basis)/dx [a1 0; a2 b2] [lift_factor shape; input_shape gain].
// Affine in the entries of shape and gain, which is what lets the decay
// condition compile to one semidefinite program.
inline AffinePolyMatrix BuildDecayMatrix(const PlantModel& model,
                                         const ControlStructure& s,
                                         const AffinePolyMatrix& shape,
                                         const AffinePolyMatrix& gain) {
  const SpacePtr& sp = model.space;
  const int p = s.dim();
  const int n1 = model.head_dim(), n2 = model.tail_dim();
  const int n = n1 + n2;
  const int f = model.lift_dim(), g = model.weight_dim();
  if (shape.rows() != p || shape.cols() != p)
    throw std::invalid_argument("BuildDecayMatrix: shape must be p x p");
  if (gain.rows() != model.input_dim() || gain.cols() != p)
    throw std::invalid_argument("BuildDecayMatrix: gain must be m x p");

  std::vector<int> all_vars(n);
  for (int v = 0; v < n; ++v) all_vars[v] = v;
  const PolynomialMatrix jac = Jacobian(s.basis, all_vars);

  Eigen::MatrixXd drift = Eigen::MatrixXd::Zero(n, f + g);
  drift.topLeftCorner(n1, f) = model.a1;
  drift.block(n1, 0, n2, f) = model.a2;
  drift.block(n1, f, n2, g) = model.b2;

  const AffinePolyMatrix top =
      AffinePolyMatrix::FromPolynomialMatrix(s.lift_factor) * shape;
  const AffinePolyMatrix bottom =
      AffinePolyMatrix::FromPolynomialMatrix(model.input_shape) * gain;
  AffinePolyMatrix stacked(sp, f + g, p);
  for (int j = 0; j < p; ++j) {
    for (int i = 0; i < f; ++i) stacked(i, j) = top(i, j);
    for (int i = 0; i < g; ++i) stacked(f + i, j) = bottom(i, j);
  }

  const AffinePolyMatrix transport =
      AffinePolyMatrix::FromPolynomialMatrix(jac) *
      AffinePolyMatrix::FromPolynomialMatrix(PolynomialMatrix::FromDense(sp, drift)) *
      stacked;

  AffinePolyMatrix decay(sp, p, p);
  decay = decay - transport - transport.Transpose();

  const int head_begin = sp->group_begin(VariableSpace::Group::kX1);
  for (int i = 0; i < n1; ++i) {
    Polynomial flow_i(sp);
    for (int j = 0; j < f; ++j)
      if (model.a1(i, j) != 0.0) flow_i += model.lift(j, 0) * model.a1(i, j);
    if (flow_i.IsZero()) continue;
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < p; ++c) {
        AffinePoly d = shape(r, c).Derivative(head_begin + i);
        decay(r, c) += d * flow_i;
      }
  }
  return decay;
}

inline PolynomialMatrix BuildDecayMatrix(const PlantModel& model,
                                         const ControlStructure& s,
                                         const PolynomialMatrix& shape,
                                         const PolynomialMatrix& gain) {
  const AffinePolyMatrix m =
      BuildDecayMatrix(model, s, AffinePolyMatrix::FromPolynomialMatrix(shape),
                       AffinePolyMatrix::FromPolynomialMatrix(gain));
  return m.FixDecisions({});
}

// The 2p x 2p block whose sum-of-squares membership certifies
//   decay >= (rate_num / rate_den) shape^2   pointwise,
// via the Schur complement of its positive lower-right corner.
inline AffinePolyMatrix AssembleDecayBlock(const AffinePolyMatrix& decay,
                                           const AffinePolyMatrix& shape,
                                           const Polynomial& rate_num,
                                           const Polynomial& rate_den) {
  const SpacePtr& sp = decay.space();
  const int p = decay.rows();
  AffinePolyMatrix block(sp, 2 * p, 2 * p);
  const Polynomial corner = rate_num * rate_den;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      block(i, j) = decay(i, j);
      const AffinePoly coupled = shape(i, j) * rate_num;
      block(i, p + j) = coupled;
      block(p + j, i) = coupled;
    }
    block(p + i, p + i) = AffinePoly(corner);
  }
  return block;
}

struct SynthesisOptions {
  int shape_degree = 2;               // degree of shape entries (head group)
  int gain_degree = 3;                // degree of gain entries (all states)
  std::vector<int> shape_variables;   // optional subset of the head group
  std::map<int, int> gain_variable_caps;  // optional per-variable caps
  bool even_monomials = false;  // restrict shape and gain to even exponents
  ConicOptions conic;
};

// Monomial sets for the two decision matrices under the given options.
inline MonomialSetSpec ShapeMonomialSpec(const VariableSpace& sp,
                                         const SynthesisOptions& opt) {
  MonomialSetSpec spec;
  if (opt.shape_variables.empty()) {
    spec.vars = GroupIndices(sp, VariableSpace::Group::kX1);
  } else {
    const int n1 = sp.group_size(VariableSpace::Group::kX1);
    for (int v : opt.shape_variables)
      if (v < 0 || v >= n1)
        throw std::invalid_argument(
            "SynthesisOptions: shape variable outside the head group");
    spec.vars = opt.shape_variables;
  }
  spec.max_total_degree = opt.shape_degree;
  spec.even_each = opt.even_monomials;
  return spec;
}

inline MonomialSetSpec GainMonomialSpec(const VariableSpace& sp,
                                        const SynthesisOptions& opt) {
  MonomialSetSpec spec;
  spec.vars.resize(sp.state_dim());
  for (int v = 0; v < sp.state_dim(); ++v) spec.vars[v] = v;
  spec.max_total_degree = opt.gain_degree;
  spec.var_degree_cap = opt.gain_variable_caps;
  spec.even_each = opt.even_monomials;
  return spec;
}

struct ModelProgram {
  SosProgram program;
  AffinePolyMatrix shape;
  AffinePolyMatrix gain;
};

inline ModelProgram AssembleModelProgram(const PlantModel& model,
                                         const ControlStructure& s,
                                         const DecayWeights& w,
                                         const SynthesisOptions& opt = {}) {
  ValidateStructure(model, s);
  const SpacePtr& sp = model.space;
  const int p = s.dim();

  SosProgram prog;
  AffinePolyMatrix shape = prog.NewSymmetricDecisionMatrix(
      sp, "P", p, EnumerateMonomials(sp, ShapeMonomialSpec(*sp, opt)));
  AffinePolyMatrix gain = prog.NewDecisionMatrix(
      sp, "L", model.input_dim(), p,
      EnumerateMonomials(sp, GainMonomialSpec(*sp, opt)));

  const AffinePolyMatrix floor_block =
      shape + AffinePolyMatrix::Identity(
                  sp, p, AffinePoly(Polynomial::Constant(sp, -w.shape_floor)));
  prog.AddSosConstraint(floor_block, "shape_floor");

  const AffinePolyMatrix decay = BuildDecayMatrix(model, s, shape, gain);
  prog.AddSosConstraint(AssembleDecayBlock(decay, shape, w.rate_num, w.rate_den),
                        "decay");

  ModelProgram mp{std::move(prog), std::move(shape), std::move(gain)};
  return mp;
}

struct SynthesisResult {
  bool feasible = false;
  PolynomialMatrix shape;
  PolynomialMatrix gain;
  SosSolution solution;
  SosCheck check;
  std::string note;

  explicit SynthesisResult(const SpacePtr& sp)
      : shape(sp, 0, 0), gain(sp, 0, 0) {}
};

inline SynthesisResult SynthesizeController(const PlantModel& model,
                                            const ControlStructure& s,
                                            const DecayWeights& w,
                                            const SynthesisOptions& opt = {}) {
  ModelProgram mp = AssembleModelProgram(model, s, w, opt);
  const CompiledSos compiled = CompileSos(mp.program);
  SosSolution sol = SolveSos(mp.program, compiled, opt.conic);
  SynthesisResult r(model.space);
  r.note = sol.note;
  if (sol.SosFeasible()) {
    r.check = CheckSosCertificate(mp.program, compiled, sol);
    if (r.check.Accept()) {
      r.feasible = true;
      r.shape = mp.shape.FixDecisions(sol.decisions).Cleaned(1e-12);
      r.gain = mp.gain.FixDecisions(sol.decisions).Cleaned(1e-12);
    } else {
      r.note += (r.note.empty() ? "" : "; ");
      r.note += "solver reported feasible but the certificate re-check failed";
    }
  }
  r.solution = std::move(sol);
  return r;
}

// A synthesized (or externally supplied) controller in evaluable form.
struct Controller {
  SpacePtr space;
  PolynomialMatrix shape;  // p x p, head variables only
  PolynomialMatrix gain;   // m x p
  PolynomialMatrix basis;  // p x 1
  PolynomialMatrix decay;  // p x p, fixed decay matrix of the closed loop

  Eigen::VectorXd ControlAt(const Eigen::VectorXd& x) const {
    const Eigen::MatrixXd pm = shape.Eval(x);
    const Eigen::VectorXd z = basis.Eval(x).col(0);
    const Eigen::VectorXd w = pm.ldlt().solve(z);
    return gain.Eval(x) * w;
  }
  double LyapunovAt(const Eigen::VectorXd& x) const {
    const Eigen::MatrixXd pm = shape.Eval(x);
    const Eigen::VectorXd z = basis.Eval(x).col(0);
    return z.dot(pm.ldlt().solve(z));
  }
  double LyapunovRateAt(const Eigen::VectorXd& x) const {
    const Eigen::MatrixXd pm = shape.Eval(x);
    const Eigen::VectorXd z = basis.Eval(x).col(0);
    const Eigen::VectorXd w = pm.ldlt().solve(z);
    return -w.dot(decay.Eval(x) * w);
  }
};

inline Controller MakeController(const PlantModel& model,
                                 const ControlStructure& s,
                                 const PolynomialMatrix& shape,
                                 const PolynomialMatrix& gain) {
  ValidateStructure(model, s);
  Controller c{model.space, shape, gain, s.basis,
               BuildDecayMatrix(model, s, shape, gain)};
  return c;
}

inline Eigen::VectorXd ClosedLoopDerivative(const PlantModel& model,
                                            const Controller& c,
                                            const Eigen::VectorXd& x) {
  return model.Derivative(x, c.ControlAt(x));
}

// Polynomial numerators of the rational controller and storage function:
//   V = lyapunov_numerator / shape_det, u = control_numerator / shape_det.
// Uses the adjugate, so it inherits its size cap on shape.
struct RationalForms {
  Polynomial shape_det;
  Polynomial lyapunov_numerator;
  PolynomialMatrix control_numerator;
};

inline RationalForms SymbolicForms(const Controller& c) {
  RationalForms r{Determinant(c.shape),
                  Polynomial(c.space),
                  PolynomialMatrix(c.space, c.gain.rows(), 1)};
  const PolynomialMatrix adj = Adjugate(c.shape);
  r.lyapunov_numerator =
      (c.basis.Transpose() * adj * c.basis)(0, 0).Cleaned(1e-14);
  r.control_numerator = (c.gain * adj * c.basis).Cleaned(1e-14);
  return r;
}

struct GridCheckOptions {
  double box_halfwidth = 3.0;
  int points_per_dim = 21;
  int rate_samples = 256;
  double shape_slack = 1e-7;   // shape >= (floor - slack) I on the grid
  double decay_slack = 1e-6;   // decay dominance margin on the grid
  double rate_tolerance = 1e-4;  // closed form vs finite difference
};

struct CertificateReport {
  bool shape_bounded_below = false;
  bool decay_dominates = false;
  bool rate_consistent = false;
  bool origin_is_equilibrium = false;
  double min_shape_margin = 0.0;   // min eig(shape) - floor over the grid
  double min_decay_margin = 0.0;   // min eig(decay - (num/den) shape^2)
  double worst_rate_error = 0.0;   // closed form vs finite difference
  double worst_decay_slack = 0.0;  // max of rate + (num/den) |basis|^2
  Eigen::VectorXd worst_shape_point;
  Eigen::VectorXd worst_decay_point;
  std::string note;

  bool Accept() const {
    return shape_bounded_below && decay_dominates && rate_consistent &&
           origin_is_equilibrium;
  }
};

namespace detail {

// Calls fn with every point of the uniform grid over [-h, h]^dims.
template <typename Fn>
void ForEachGridPoint(int dims, int points_per_dim, double h, Fn&& fn) {
  std::vector<int> idx(dims, 0);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dims);
  const int k = std::max(points_per_dim, 2);
  while (true) {
    for (int d = 0; d < dims; ++d)
      x[d] = -h + 2.0 * h * idx[d] / (k - 1);
    fn(x);
    int d = 0;
    while (d < dims && ++idx[d] == k) idx[d++] = 0;
    if (d == dims) break;
  }
}

}  // namespace detail

inline CertificateReport VerifyCertificate(const PlantModel& model,
                                           const ControlStructure& s,
                                           const DecayWeights& w,
                                           const PolynomialMatrix& shape,
                                           const PolynomialMatrix& gain,
                                           const GridCheckOptions& opt = {}) {
  ValidateStructure(model, s);
  const int n = model.state_dim();
  const int n1 = model.head_dim();
  const Controller ctrl = MakeController(model, s, shape, gain);

  CertificateReport rep;
  rep.min_shape_margin = std::numeric_limits<double>::infinity();
  rep.min_decay_margin = std::numeric_limits<double>::infinity();
  rep.worst_shape_point = Eigen::VectorXd::Zero(n);
  rep.worst_decay_point = Eigen::VectorXd::Zero(n);

  // The shape matrix depends on the head variables only, so its grid is over
  // the head group alone.
  for (int r = 0; r < shape.rows(); ++r)
    for (int c = 0; c < shape.cols(); ++c)
      for (const auto& [mono, coef] : shape(r, c).terms())
        for (int v = n1; v < n; ++v)
          if (mono[v] > 0)
            throw std::invalid_argument(
                "VerifyCertificate: shape must depend on head variables only");

  detail::ForEachGridPoint(
      std::max(n1, 1), n1 ? opt.points_per_dim : 1, opt.box_halfwidth,
      [&](const Eigen::VectorXd& xh) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
        if (n1) x.head(n1) = xh;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            shape.Eval(x), Eigen::EigenvaluesOnly);
        const double margin = es.eigenvalues().minCoeff() - w.shape_floor;
        if (margin < rep.min_shape_margin) {
          rep.min_shape_margin = margin;
          rep.worst_shape_point = x;
        }
      });
  rep.shape_bounded_below = rep.min_shape_margin >= -opt.shape_slack;

  detail::ForEachGridPoint(
      n, opt.points_per_dim, opt.box_halfwidth, [&](const Eigen::VectorXd& x) {
        const double num = w.rate_num.Eval(x);
        const double den = w.rate_den.Eval(x);
        const Eigen::MatrixXd pm = shape.Eval(x);
        const Eigen::MatrixXd dm = ctrl.decay.Eval(x);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
            dm - (num / den) * pm * pm, Eigen::EigenvaluesOnly);
        const double margin = es.eigenvalues().minCoeff();
        if (margin < rep.min_decay_margin) {
          rep.min_decay_margin = margin;
          rep.worst_decay_point = x;
        }
      });
  rep.decay_dominates = rep.min_decay_margin >= -opt.decay_slack;

  // Rate cross-check along the closed loop at random points: the closed-form
  // rate from the decay matrix must match a centered finite difference of V
  // along the vector field, and obey the certified decay bound.
  std::mt19937_64 rng(20240519);
  std::uniform_real_distribution<double> ub(-opt.box_halfwidth,
                                            opt.box_halfwidth);
  rep.worst_rate_error = 0.0;
  rep.worst_decay_slack = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < opt.rate_samples; ++k) {
    Eigen::VectorXd x(n);
    for (int v = 0; v < n; ++v) x[v] = ub(rng);
    const double rate = ctrl.LyapunovRateAt(x);
    const Eigen::VectorXd d = ClosedLoopDerivative(model, ctrl, x);
    const double h = 1e-6 / std::max(1.0, d.norm());
    const double fd =
        (ctrl.LyapunovAt(x + h * d) - ctrl.LyapunovAt(x - h * d)) / (2 * h);
    rep.worst_rate_error = std::max(
        rep.worst_rate_error, std::abs(fd - rate) / (1.0 + std::abs(rate)));
    const double zz = s.basis.Eval(x).col(0).squaredNorm();
    const double slack =
        rate + w.rate_num.Eval(x) / w.rate_den.Eval(x) * zz;
    rep.worst_decay_slack = std::max(rep.worst_decay_slack, slack);
  }
  rep.rate_consistent = rep.worst_rate_error <= opt.rate_tolerance &&
                        rep.worst_decay_slack <= opt.decay_slack;

  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(n);
  rep.origin_is_equilibrium =
      ctrl.ControlAt(origin).norm() <= 1e-9 &&
      ClosedLoopDerivative(model, ctrl, origin).norm() <= 1e-9;

  rep.note = "shape margin " + FormatDouble(rep.min_shape_margin) +
             ", decay margin " + FormatDouble(rep.min_decay_margin) +
             ", rate error " + FormatDouble(rep.worst_rate_error) +
             ", decay slack " + FormatDouble(rep.worst_decay_slack);
  return rep;
}

}  // namespace polystab
