#pragma once

// Controller synthesis directly from sampled trajectories of
//   xdot = [a1; a2] lift(x) + [0; b2] input_shape(x) u
// when the coefficient matrices a1, a2, b2 are unknown. A finite batch of
// (state, derivative, input) samples with a bound on the total disturbance
// energy pins the unknown coefficients to an ellipsoid, and the decay
// condition is required to hold for every plant in that ellipsoid. The
// robustified condition again compiles to one semidefinite program because
// the decay form is linear in the unknown coefficients: contracting its
// coefficient vector (DecayCoefficientVector) with the packed plant
// parameters reproduces y' decay(x) y exactly, so the full S-procedure
// against the data ellipsoid stays affine in the shape and gain decisions.
//
// Known coefficient entries (signs, zeros, measured values) can be supplied
// as PriorKnowledge; their contribution moves to the data side and only the
// remaining entries are robustified, which shrinks both the ellipsoid and
// the semidefinite block.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polystab/model.hpp"
#include "polystab/poly.hpp"
#include "polystab/sos.hpp"

namespace polystab {

// The structural part of a plant: everything except the coefficients.
struct PlantShape {
  SpacePtr space;
  PolynomialMatrix lift;         // f x 1
  PolynomialMatrix input_shape;  // g x m

  PlantShape(SpacePtr sp, PolynomialMatrix lift_in, PolynomialMatrix shape_in)
      : space(std::move(sp)),
        lift(std::move(lift_in)),
        input_shape(std::move(shape_in)) {
    if (!space) throw std::invalid_argument("PlantShape: missing space");
    if (space->group_size(VariableSpace::Group::kY) != 0 ||
        space->group_size(VariableSpace::Group::kZ) != 0)
      throw std::invalid_argument(
          "PlantShape: space must contain state variables only");
    if (!lift.space()->SameAs(*space) || !input_shape.space()->SameAs(*space))
      throw std::invalid_argument("PlantShape: mixed variable spaces");
    if (lift.cols() != 1)
      throw std::invalid_argument("PlantShape: lift must be a column");
    if (input_shape.cols() < 1)
      throw std::invalid_argument("PlantShape: need at least one input");
  }

  int head_dim() const { return space->group_size(VariableSpace::Group::kX1); }
  int tail_dim() const { return space->group_size(VariableSpace::Group::kX2); }
  int state_dim() const { return space->state_dim(); }
  int lift_dim() const { return lift.rows(); }
  int weight_dim() const { return input_shape.rows(); }
  int input_dim() const { return input_shape.cols(); }
};

inline PlantShape ShapeOf(const PlantModel& m) {
  return PlantShape(m.space, m.lift, m.input_shape);
}

inline void ValidateStructure(const PlantShape& plant,
                              const ControlStructure& s) {
  if (!s.basis.space()->SameAs(*plant.space) ||
      !s.lift_factor.space()->SameAs(*plant.space))
    throw std::invalid_argument("ValidateStructure: mixed variable spaces");
  if (s.basis.cols() != 1)
    throw std::invalid_argument("ValidateStructure: basis must be a column");
  if (s.lift_factor.rows() != plant.lift_dim() ||
      s.lift_factor.cols() != s.basis.rows())
    throw std::invalid_argument("ValidateStructure: factor shape mismatch");
  const PolynomialMatrix prod = s.lift_factor * s.basis;
  for (int i = 0; i < plant.lift_dim(); ++i)
    if (!prod(i, 0).EqualsWithin(plant.lift(i, 0), 1e-10))
      throw std::invalid_argument(
          "ValidateStructure: lift_factor * basis does not reproduce the "
          "lift (row " +
          std::to_string(i) + ")");
}

// Flat packing of the unknown coefficients, row major per matrix:
//   [a1 row 0, a1 row 1, ..., a2 rows, b2 rows].
struct ParameterLayout {
  int head_dim = 0;
  int tail_dim = 0;
  int lift_dim = 0;
  int weight_dim = 0;

  int size() const {
    return head_dim * lift_dim + tail_dim * (lift_dim + weight_dim);
  }
  int IndexA1(int row, int col) const {
    CheckRange(row, head_dim, col, lift_dim, "IndexA1");
    return row * lift_dim + col;
  }
  int IndexA2(int row, int col) const {
    CheckRange(row, tail_dim, col, lift_dim, "IndexA2");
    return head_dim * lift_dim + row * lift_dim + col;
  }
  int IndexB2(int row, int col) const {
    CheckRange(row, tail_dim, col, weight_dim, "IndexB2");
    return (head_dim + tail_dim) * lift_dim + row * weight_dim + col;
  }

 private:
  static void CheckRange(int row, int rows, int col, int cols,
                         const char* who) {
    if (row < 0 || row >= rows || col < 0 || col >= cols)
      throw std::out_of_range(std::string("ParameterLayout::") + who);
  }
};

inline ParameterLayout LayoutOf(const PlantShape& plant) {
  return ParameterLayout{plant.head_dim(), plant.tail_dim(), plant.lift_dim(),
                         plant.weight_dim()};
}

inline Eigen::VectorXd PackParameters(const Eigen::MatrixXd& a1,
                                      const Eigen::MatrixXd& a2,
                                      const Eigen::MatrixXd& b2) {
  const ParameterLayout lay{static_cast<int>(a1.rows()),
                            static_cast<int>(a2.rows()),
                            static_cast<int>(a1.cols()),
                            static_cast<int>(b2.cols())};
  if (a2.cols() != a1.cols() || b2.rows() != a2.rows())
    throw std::invalid_argument("PackParameters: inconsistent shapes");
  Eigen::VectorXd v(lay.size());
  for (int i = 0; i < a1.rows(); ++i)
    for (int j = 0; j < a1.cols(); ++j) v[lay.IndexA1(i, j)] = a1(i, j);
  for (int i = 0; i < a2.rows(); ++i)
    for (int j = 0; j < a2.cols(); ++j) v[lay.IndexA2(i, j)] = a2(i, j);
  for (int i = 0; i < b2.rows(); ++i)
    for (int j = 0; j < b2.cols(); ++j) v[lay.IndexB2(i, j)] = b2(i, j);
  return v;
}

inline void UnpackParameters(const ParameterLayout& lay,
                             const Eigen::VectorXd& v, Eigen::MatrixXd* a1,
                             Eigen::MatrixXd* a2, Eigen::MatrixXd* b2) {
  if (v.size() != lay.size())
    throw std::invalid_argument("UnpackParameters: size mismatch");
  a1->resize(lay.head_dim, lay.lift_dim);
  a2->resize(lay.tail_dim, lay.lift_dim);
  b2->resize(lay.tail_dim, lay.weight_dim);
  for (int i = 0; i < lay.head_dim; ++i)
    for (int j = 0; j < lay.lift_dim; ++j) (*a1)(i, j) = v[lay.IndexA1(i, j)];
  for (int i = 0; i < lay.tail_dim; ++i)
    for (int j = 0; j < lay.lift_dim; ++j) (*a2)(i, j) = v[lay.IndexA2(i, j)];
  for (int i = 0; i < lay.tail_dim; ++i)
    for (int j = 0; j < lay.weight_dim; ++j) (*b2)(i, j) = v[lay.IndexB2(i, j)];
}

// One experiment batch, column t holding the t-th sample.
struct Dataset {
  Eigen::MatrixXd states;       // n x T
  Eigen::MatrixXd derivatives;  // n x T, measured, possibly disturbed
  Eigen::MatrixXd inputs;       // m x T
  Eigen::VectorXd times;        // optional sample times, may stay empty

  int samples() const { return static_cast<int>(states.cols()); }
};

struct DataMatrices {
  Eigen::MatrixXd lift_samples;    // f x T, lift evaluated along the batch
  Eigen::MatrixXd forced_samples;  // g x T, input weighting times the input
  Eigen::MatrixXd dictionary;      // ell x nT, stacked regressors
  Eigen::VectorXd stacked_rates;   // nT, derivative samples grouped by row
};

// Regression form of the batch: if v packs the true coefficient matrices and
// the samples carry no disturbance, then stacked_rates = dictionary' v. The
// rows of the derivative matrix are stacked one state at a time, so state row
// i occupies entries [i T, (i + 1) T).
inline DataMatrices BuildDataMatrices(const PlantShape& plant,
                                      const Dataset& data) {
  const int n1 = plant.head_dim(), n2 = plant.tail_dim();
  const int n = n1 + n2;
  const int f = plant.lift_dim(), g = plant.weight_dim();
  const int t_count = data.samples();
  if (data.states.rows() != n || data.derivatives.rows() != n ||
      data.derivatives.cols() != t_count || data.inputs.cols() != t_count ||
      data.inputs.rows() != plant.input_dim())
    throw std::invalid_argument("BuildDataMatrices: sample shape mismatch");
  if (t_count < 1)
    throw std::invalid_argument("BuildDataMatrices: empty batch");

  const ParameterLayout lay = LayoutOf(plant);
  DataMatrices out;
  out.lift_samples.resize(f, t_count);
  out.forced_samples.resize(g, t_count);
  for (int t = 0; t < t_count; ++t) {
    const Eigen::VectorXd x = data.states.col(t);
    out.lift_samples.col(t) = plant.lift.Eval(x).col(0);
    out.forced_samples.col(t) = plant.input_shape.Eval(x) * data.inputs.col(t);
  }

  out.dictionary = Eigen::MatrixXd::Zero(lay.size(), n * t_count);
  out.stacked_rates.resize(n * t_count);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < t_count; ++t) {
      const int col = i * t_count + t;
      out.stacked_rates[col] = data.derivatives(i, t);
      if (i < n1) {
        for (int j = 0; j < f; ++j)
          out.dictionary(lay.IndexA1(i, j), col) = out.lift_samples(j, t);
      } else {
        for (int j = 0; j < f; ++j)
          out.dictionary(lay.IndexA2(i - n1, j), col) = out.lift_samples(j, t);
        for (int j = 0; j < g; ++j)
          out.dictionary(lay.IndexB2(i - n1, j), col) =
              out.forced_samples(j, t);
      }
    }
  return out;
}

// The set of coefficient vectors consistent with the batch under the energy
// bound |stacked_rates - dictionary' v|^2 <= energy. Membership is the
// quadratic form [1; v]' [[n11, n21'], [n21, n22]] [1; v] >= 0; the set is a
// bounded ellipsoid exactly when the dictionary has full row rank
// (excitation_ok), with the least squares estimate as its center and
// slack = energy - (minimal residual) as the squared size scale.
struct NoiseSet {
  Eigen::MatrixXd dictionary;
  Eigen::VectorXd data;
  double energy = 0.0;

  double n11 = 0.0;
  Eigen::VectorXd n21;
  Eigen::MatrixXd n22;

  Eigen::VectorXd center;
  double slack = 0.0;
  double min_excitation = 0.0;
  bool excitation_ok = false;
  bool consistent = false;

  int dim() const { return static_cast<int>(dictionary.rows()); }
};

inline NoiseSet BuildNoiseSet(Eigen::MatrixXd dictionary, Eigen::VectorXd data,
                              double energy) {
  if (energy < 0.0)
    throw std::invalid_argument("BuildNoiseSet: negative energy bound");
  NoiseSet s;
  s.dictionary = std::move(dictionary);
  s.data = std::move(data);
  s.energy = energy;
  s.n11 = energy - s.data.squaredNorm();
  const int gamma = s.dim();
  if (gamma > 0) {
    Eigen::MatrixXd gram = s.dictionary * s.dictionary.transpose();
    gram = 0.5 * (gram + gram.transpose()).eval();
    s.n22 = -gram;
    s.n21 = s.dictionary * s.data;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    s.min_excitation = es.eigenvalues().minCoeff();
    s.excitation_ok =
        s.min_excitation >
        1e-10 * std::max(1.0, std::abs(es.eigenvalues().maxCoeff()));
    s.center = gram.ldlt().solve(s.n21);
    s.slack =
        energy - (s.data - s.dictionary.transpose() * s.center).squaredNorm();
  } else {
    s.n22.resize(0, 0);
    s.n21.resize(0);
    s.center.resize(0);
    s.excitation_ok = true;
    s.slack = energy - s.data.squaredNorm();
  }
  if (s.slack < 0.0 && s.slack > -1e-9) s.slack = 0.0;
  s.consistent = s.slack >= 0.0;
  return s;
}

// energy - |data - dictionary' v|^2, nonnegative exactly on the set.
inline double MembershipSlack(const NoiseSet& s, const Eigen::VectorXd& v) {
  if (v.size() != s.dim())
    throw std::invalid_argument("MembershipSlack: size mismatch");
  return s.energy - (s.data - s.dictionary.transpose() * v).squaredNorm();
}

// Certifies lambda' v + offset >= 0 for every v in the set by checking the
// lossless S-procedure block. Returns the minimal eigenvalue through out if
// requested; nonnegative (up to tol) means certified.
inline bool SLemmaCertifies(const NoiseSet& s, const Eigen::VectorXd& lambda,
                            double offset, double tol = 1e-9,
                            double* min_eig_out = nullptr) {
  if (lambda.size() != s.dim())
    throw std::invalid_argument("SLemmaCertifies: size mismatch");
  if (!s.consistent)
    throw std::invalid_argument("SLemmaCertifies: empty set");
  const int gamma = s.dim();
  Eigen::MatrixXd block(1 + gamma, 1 + gamma);
  const double centered = gamma > 0 ? lambda.dot(s.center) : 0.0;
  block(0, 0) = centered + offset;
  if (gamma > 0) {
    const double root = std::sqrt(std::max(0.0, s.slack));
    block.block(0, 1, 1, gamma) = root * lambda.transpose();
    block.block(1, 0, gamma, 1) = root * lambda;
    block.block(1, 1, gamma, gamma) = -(centered + offset) * s.n22;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
  const double min_eig = es.eigenvalues().minCoeff();
  if (min_eig_out) *min_eig_out = min_eig;
  const double scale = std::max(1.0, block.cwiseAbs().maxCoeff());
  return min_eig >= -tol * scale;
}

// Coefficient vector of the decay form with respect to the packed plant
// parameters: with v = PackParameters(a1, a2, b2),
//   sum_k R_k(x, y) v_k = y' decay(x) y
// identically in (x, y), where decay is BuildDecayMatrix for that plant.
// Each entry is affine in the shape and gain decisions and quadratic in the
// auxiliary y block, which must already be part of shape.space().
inline AffinePolyMatrix DecayCoefficientVector(const PlantShape& plant,
                                               const ControlStructure& s,
                                               const AffinePolyMatrix& shape,
                                               const AffinePolyMatrix& gain) {
  const SpacePtr& sp = shape.space();
  const int p = s.dim();
  const int n1 = plant.head_dim(), n2 = plant.tail_dim();
  const int n = n1 + n2;
  const int f = plant.lift_dim(), g = plant.weight_dim();
  if (!sp->HasPrefix(*plant.space) ||
      sp->group_size(VariableSpace::Group::kY) != p)
    throw std::invalid_argument(
        "DecayCoefficientVector: shape must live on the plant space extended "
        "by one auxiliary variable per basis entry");
  if (!gain.space()->SameAs(*sp))
    throw std::invalid_argument("DecayCoefficientVector: mixed spaces");
  if (shape.rows() != p || shape.cols() != p)
    throw std::invalid_argument("DecayCoefficientVector: shape must be p x p");
  if (gain.rows() != plant.input_dim() || gain.cols() != p)
    throw std::invalid_argument("DecayCoefficientVector: gain must be m x p");

  const PolynomialMatrix basis = s.basis.Lifted(sp);
  const PolynomialMatrix factor = s.lift_factor.Lifted(sp);
  const PolynomialMatrix lift = plant.lift.Lifted(sp);
  const PolynomialMatrix weight = plant.input_shape.Lifted(sp);

  PolynomialMatrix yvec(sp, p, 1);
  const int y_begin = sp->group_begin(VariableSpace::Group::kY);
  for (int k = 0; k < p; ++k)
    yvec(k, 0) = Polynomial::Variable(sp, y_begin + k);
  const AffinePolyMatrix yaff = AffinePolyMatrix::FromPolynomialMatrix(yvec);

  // y' shape y, lift_factor shape y, input_shape gain y; all affine.
  const AffinePoly ypy = (yaff.Transpose() * shape * yaff)(0, 0);
  const AffinePolyMatrix hpy =
      AffinePolyMatrix::FromPolynomialMatrix(factor) * shape * yaff;
  const AffinePolyMatrix gly =
      AffinePolyMatrix::FromPolynomialMatrix(weight) * gain * yaff;

  // y' d(basis)/dx_k, one scalar polynomial per state variable.
  std::vector<int> state_vars(n);
  for (int v = 0; v < n; ++v) state_vars[v] = v;
  const PolynomialMatrix contracted =
      yvec.Transpose() * Jacobian(basis, state_vars);

  const ParameterLayout lay = LayoutOf(plant);
  const int head_begin = sp->group_begin(VariableSpace::Group::kX1);
  AffinePolyMatrix r(sp, lay.size(), 1);
  for (int i = 0; i < n1; ++i) {
    const AffinePoly shape_flow = ypy.Derivative(head_begin + i);
    for (int j = 0; j < f; ++j)
      r(lay.IndexA1(i, j), 0) =
          shape_flow * lift(j, 0) - 2.0 * (contracted(0, i) * hpy(j, 0));
  }
  for (int i = 0; i < n2; ++i) {
    const Polynomial& through = contracted(0, n1 + i);
    for (int j = 0; j < f; ++j)
      r(lay.IndexA2(i, j), 0) = -2.0 * (through * hpy(j, 0));
    for (int j = 0; j < g; ++j)
      r(lay.IndexB2(i, j), 0) = -2.0 * (through * gly(j, 0));
  }
  return r;
}

// Coefficient entries fixed in advance: values[k] is the known value of the
// packed parameter at position indices[k]. Everything else stays unknown.
struct PriorKnowledge {
  std::vector<int> indices;
  Eigen::VectorXd values;
};

// Data ellipsoid reduced to the packed parameters the prior leaves unknown.
struct ReducedNoiseSet {
  NoiseSet set;
  std::vector<int> unknown;  // packed indices not fixed by prior knowledge
};

// Folds prior knowledge into the batch: known parameters move into the rate
// side, the remaining rows form the reduced dictionary, and the ellipsoid is
// rebuilt over the unknown entries only. Throws when the batch does not
// excite all unknown entries or contradicts the energy bound.
inline ReducedNoiseSet ReduceNoiseSet(const PlantShape& plant,
                                      const Dataset& data, double noise_energy,
                                      const PriorKnowledge& prior = {}) {
  const ParameterLayout lay = LayoutOf(plant);
  const int ell = lay.size();
  if (static_cast<int>(prior.indices.size()) != prior.values.size())
    throw std::invalid_argument(
        "ReduceNoiseSet: prior index/value count mismatch");
  std::vector<char> is_known(ell, 0);
  for (const int idx : prior.indices) {
    if (idx < 0 || idx >= ell)
      throw std::invalid_argument("ReduceNoiseSet: prior index out of range");
    if (is_known[idx])
      throw std::invalid_argument("ReduceNoiseSet: duplicate prior index");
    is_known[idx] = 1;
  }
  ReducedNoiseSet out;
  out.unknown.reserve(ell - prior.indices.size());
  for (int k = 0; k < ell; ++k)
    if (!is_known[k]) out.unknown.push_back(k);
  const int gamma = static_cast<int>(out.unknown.size());

  const DataMatrices dm = BuildDataMatrices(plant, data);
  Eigen::VectorXd reduced_rates = dm.stacked_rates;
  for (std::size_t k = 0; k < prior.indices.size(); ++k)
    reduced_rates -=
        prior.values[static_cast<int>(k)] *
        dm.dictionary.row(prior.indices[k]).transpose();
  Eigen::MatrixXd reduced_dictionary(gamma, dm.dictionary.cols());
  for (int k = 0; k < gamma; ++k)
    reduced_dictionary.row(k) = dm.dictionary.row(out.unknown[k]);

  out.set = BuildNoiseSet(std::move(reduced_dictionary),
                          std::move(reduced_rates), noise_energy);
  if (!out.set.excitation_ok)
    throw std::invalid_argument(
        "ReduceNoiseSet: batch does not excite all unknown coefficients "
        "(dictionary rank deficient); collect richer data or add prior "
        "knowledge");
  if (!out.set.consistent)
    throw std::invalid_argument(
        "ReduceNoiseSet: batch contradicts the disturbance energy bound "
        "(least squares residual exceeds it)");
  return out;
}

// Robust decay block over the reduced ellipsoid: sum-of-squares membership
// of this (1 + gamma + p) matrix makes the decay condition hold for every
// parameter vector the batch leaves possible (the S-procedure step is
// lossless here). The block is assembled under a constant congruence
// diag(1, E, c I) with E the inverse square root of the excitation Gram. A
// congruence by a constant invertible matrix maps sum-of-squares
// certificates both ways, so feasibility is untouched; the payoff is that
// the unknown-slot corner collapses to worst * identity (its off-diagonal
// entries vanish exactly) and all slot scales stay comparable even when the
// disturbance couplings are orders of magnitude below the excitation Gram.
// Shape and gain may carry decisions (synthesis) or be fixed matrices lifted
// to the y-extended space (re-proving a recorded certificate).
inline AffinePolyMatrix AssembleDataDecayBlock(
    const PlantShape& plant, const ControlStructure& s, const DecayWeights& w,
    const NoiseSet& set, const std::vector<int>& unknown,
    const PriorKnowledge& prior, const AffinePolyMatrix& shape,
    const AffinePolyMatrix& gain) {
  const SpacePtr& yspace = shape.space();
  const int p = s.dim();
  const int gamma = static_cast<int>(unknown.size());

  const AffinePolyMatrix r = DecayCoefficientVector(plant, s, shape, gain);

  AffinePoly worst{Polynomial(yspace)};
  for (int k = 0; k < gamma; ++k) worst += set.center[k] * r(unknown[k], 0);
  for (std::size_t k = 0; k < prior.indices.size(); ++k)
    worst += prior.values[static_cast<int>(k)] * r(prior.indices[k], 0);

  Eigen::MatrixXd whiten(gamma, gamma);
  if (gamma > 0) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-set.n22);
    whiten = es.operatorInverseSqrt();
  }
  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(plant.space->dim());
  const double corner_origin =
      0.5 * w.rate_num.Eval(origin) * w.rate_den.Eval(origin);
  const double corner_scale =
      corner_origin > 1e-12 ? 1.0 / std::sqrt(corner_origin) : 1.0;

  const Polynomial rate_num = w.rate_num.Lifted(yspace);
  const Polynomial corner_half = (w.rate_num * w.rate_den).Lifted(yspace) *
                                 (0.5 * corner_scale * corner_scale);

  const int dim = 1 + gamma + p;
  AffinePolyMatrix block(yspace, dim, dim);
  block(0, 0) = worst;
  const double root = std::sqrt(std::max(0.0, set.slack));
  for (int a = 0; a < gamma; ++a) {
    AffinePoly edge{Polynomial(yspace)};
    for (int b = 0; b < gamma; ++b)
      if (whiten(a, b) != 0.0)
        edge += (root * whiten(a, b)) * r(unknown[b], 0);
    block(0, 1 + a) = edge;
    block(1 + a, 0) = edge;
    block(1 + a, 1 + a) = worst;
  }
  PolynomialMatrix yvec(yspace, p, 1);
  const int y_begin = yspace->group_begin(VariableSpace::Group::kY);
  for (int k = 0; k < p; ++k)
    yvec(k, 0) = Polynomial::Variable(yspace, y_begin + k);
  const AffinePolyMatrix coupled =
      AffinePolyMatrix::FromPolynomialMatrix(yvec.Transpose()) * shape;
  for (int j = 0; j < p; ++j) {
    const AffinePoly edge = coupled(0, j) * (rate_num * corner_scale);
    block(0, 1 + gamma + j) = edge;
    block(1 + gamma + j, 0) = edge;
    block(1 + gamma + j, 1 + gamma + j) = AffinePoly(corner_half);
  }
  return block;
}

struct DataProgram {
  SosProgram program;
  AffinePolyMatrix shape;     // decisions, on the y-extended space
  AffinePolyMatrix gain;      // decisions, on the y-extended space
  SpacePtr yspace;
  NoiseSet reduced;           // ellipsoid over the unknown entries only
  std::vector<int> unknown;   // packed indices not fixed by prior knowledge
};

// Robust synthesis program from one data batch: the decay block over the
// reduced ellipsoid plus the shape floor condition, with shape and gain as
// decision matrices on the y-extended space. Throws when the batch is not
// exciting enough (rank-deficient dictionary over the unknown entries) or
// contradicts the energy bound.
inline DataProgram AssembleDataDrivenProgram(const PlantShape& plant,
                                             const ControlStructure& s,
                                             const Dataset& data,
                                             double noise_energy,
                                             const DecayWeights& w,
                                             const PriorKnowledge& prior = {},
                                             const SynthesisOptions& opt = {}) {
  ValidateStructure(plant, s);
  const int p = s.dim();
  ReducedNoiseSet reduced = ReduceNoiseSet(plant, data, noise_energy, prior);

  std::vector<std::string> y_names(p);
  for (int k = 0; k < p; ++k) y_names[k] = "y" + std::to_string(k + 1);
  const SpacePtr yspace = plant.space->WithYBlock(std::move(y_names));

  SosProgram prog;
  AffinePolyMatrix shape = prog.NewSymmetricDecisionMatrix(
      yspace, "P", p, EnumerateMonomials(yspace, ShapeMonomialSpec(*yspace, opt)));
  AffinePolyMatrix gain = prog.NewDecisionMatrix(
      yspace, "L", plant.input_dim(), p,
      EnumerateMonomials(yspace, GainMonomialSpec(*yspace, opt)));

  prog.AddSosConstraint(
      AssembleDataDecayBlock(plant, s, w, reduced.set, reduced.unknown, prior,
                             shape, gain),
      "data_decay");

  const AffinePolyMatrix floor_block =
      shape + AffinePolyMatrix::Identity(
                  yspace, p,
                  AffinePoly(Polynomial::Constant(yspace, -w.shape_floor)));
  prog.AddSosConstraint(floor_block, "shape_floor");

  DataProgram dp{std::move(prog), std::move(shape), std::move(gain), yspace,
                 std::move(reduced.set), std::move(reduced.unknown)};
  return dp;
}

// Rebuilds a matrix on a prefix of its space; every term must avoid the
// dropped variables. Used to bring synthesized certificates back from the
// y-extended space to the plain state space.
inline PolynomialMatrix RestrictToPrefix(const PolynomialMatrix& m,
                                         const SpacePtr& smaller) {
  if (!m.space()->HasPrefix(*smaller))
    throw std::invalid_argument("RestrictToPrefix: not a prefix space");
  const int keep = smaller->dim();
  PolynomialMatrix out(smaller, m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      for (const auto& [mono, coef] : m(i, j).terms()) {
        for (int v = keep; v < static_cast<int>(mono.size()); ++v)
          if (mono[v] != 0)
            throw std::invalid_argument(
                "RestrictToPrefix: term uses a dropped variable");
        Monomial trimmed(mono.begin(), mono.begin() + keep);
        out(i, j) += Polynomial::FromMonomial(smaller, std::move(trimmed),
                                              coef);
      }
  return out;
}

// The robust decay block with a recorded certificate substituted, for
// re-proving a known (shape, gain) pair against a batch without solving a
// synthesis program. Both matrices live on the plain plant space; they are
// lifted to the y-extended space internally.
inline PolynomialMatrix DataDecayBlockFor(const PlantShape& plant,
                                          const ControlStructure& s,
                                          const Dataset& data,
                                          double noise_energy,
                                          const DecayWeights& w,
                                          const PolynomialMatrix& shape,
                                          const PolynomialMatrix& gain,
                                          const PriorKnowledge& prior = {}) {
  ValidateStructure(plant, s);
  const ReducedNoiseSet reduced =
      ReduceNoiseSet(plant, data, noise_energy, prior);
  const int p = s.dim();
  std::vector<std::string> y_names(p);
  for (int k = 0; k < p; ++k) y_names[k] = "y" + std::to_string(k + 1);
  const SpacePtr yspace = plant.space->WithYBlock(std::move(y_names));
  const AffinePolyMatrix block = AssembleDataDecayBlock(
      plant, s, w, reduced.set, reduced.unknown, prior,
      AffinePolyMatrix::FromPolynomialMatrix(shape.Lifted(yspace)),
      AffinePolyMatrix::FromPolynomialMatrix(gain.Lifted(yspace)));
  return block.FixDecisions({});
}

inline SynthesisResult SynthesizeFromData(const PlantShape& plant,
                                          const ControlStructure& s,
                                          const Dataset& data,
                                          double noise_energy,
                                          const DecayWeights& w,
                                          const PriorKnowledge& prior = {},
                                          const SynthesisOptions& opt = {}) {
  DataProgram dp =
      AssembleDataDrivenProgram(plant, s, data, noise_energy, w, prior, opt);
  const CompiledSos compiled = CompileSos(dp.program);
  SosSolution sol = SolveSos(dp.program, compiled, opt.conic);
  SynthesisResult r(plant.space);
  r.note = sol.note;
  if (sol.SosFeasible()) {
    r.check = CheckSosCertificate(dp.program, compiled, sol);
    if (r.check.Accept()) {
      r.feasible = true;
      r.shape = RestrictToPrefix(
          dp.shape.FixDecisions(sol.decisions).Cleaned(1e-12), plant.space);
      r.gain = RestrictToPrefix(
          dp.gain.FixDecisions(sol.decisions).Cleaned(1e-12), plant.space);
    } else {
      r.note += (r.note.empty() ? "" : "; ");
      r.note += "solver reported feasible but the certificate re-check failed";
    }
  }
  r.solution = std::move(sol);
  return r;
}

}  // namespace polystab
