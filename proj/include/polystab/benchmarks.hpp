#pragma once

// Built-in benchmark problems used by the command line tool and the
// regression tests. Each bundles a plant, a basis factorization, decay
// weights, and the synthesis settings known to work; the data-driven ones
// additionally carry a recorded noisy batch (fixed once so results are
// reproducible) together with the experiment recipe that produced it, and a
// previously computed solution with coefficients rounded to four decimals
// that serves as a regression reference.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "polystab/datadriven.hpp"
#include "polystab/model.hpp"
#include "polystab/ode.hpp"

namespace polystab {
namespace benchmarks {

struct ReferenceSolution {
  PolynomialMatrix shape;
  PolynomialMatrix gain;
  // Rational forms of the reference: storage function numerator, controller
  // numerator (single-input benchmarks), and the shape determinant.
  std::optional<Polynomial> lyapunov_numerator;
  std::optional<Polynomial> control_numerator;
  std::optional<Polynomial> shape_det;
};

struct Benchmark {
  std::string name;
  std::string title;
  Problem problem;
  SynthesisOptions synthesis;
  std::optional<ReferenceSolution> reference;

  // Data-driven benchmarks only.
  std::optional<Dataset> batch;
  double noise_energy = 0.0;
  PriorKnowledge prior;
  std::optional<ExperimentSpec> recipe;
  InputSignal recipe_signal;  // serializable form of recipe->input
};

namespace detail {

inline Dataset MakeBatch(std::initializer_list<double> times,
                         const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& rates,
                         const Eigen::MatrixXd& inputs) {
  Dataset d;
  d.states = states;
  d.derivatives = rates;
  d.inputs = inputs;
  d.times.resize(static_cast<Eigen::Index>(times.size()));
  Eigen::Index k = 0;
  for (double t : times) d.times[k++] = t;
  return d;
}

}  // namespace detail

// Two-state plant with a quadratic drift term, designed from the model:
//   xdot1 = x2 - x1^2, xdot2 = u.
// No constant shape works here, which is what the state-dependent shape
// machinery is for. The reference solution is exact, not rounded.
inline Benchmark TwoStateModel() {
  const SpacePtr s = VariableSpace::Make({"x1"}, {"x2"});
  PolynomialMatrix lift(s, 2, 1);
  lift(0, 0) = ParsePoly(s, "x1^2");
  lift(1, 0) = ParsePoly(s, "x2");
  PolynomialMatrix gshape(s, 1, 1);
  gshape(0, 0) = Polynomial::Constant(s, 1.0);
  Eigen::MatrixXd a1(1, 2), a2(1, 2), b2(1, 1);
  a1 << -1, 1;
  a2 << 0, 0;
  b2 << 1;

  PolynomialMatrix basis(s, 2, 1);
  basis(0, 0) = ParsePoly(s, "x1");
  basis(1, 0) = ParsePoly(s, "x2");
  PolynomialMatrix factor(s, 2, 2);
  factor(0, 0) = ParsePoly(s, "x1");
  factor(1, 1) = Polynomial::Constant(s, 1.0);

  Benchmark b{
      "ex1",
      "two-state plant, synthesis from the model",
      Problem{PlantModel(s, lift, gshape, a1, a2, b2),
              ControlStructure{basis, factor},
              DecayWeights{0.1, Polynomial::Constant(s, 0.01),
                           ParsePoly(s, "1 + x1^2")}},
      {},
      std::nullopt,
      std::nullopt,
      0.0,
      {},
      std::nullopt};
  b.synthesis.shape_degree = 2;
  b.synthesis.gain_degree = 3;

  PolynomialMatrix rshape(s, 2, 2);
  rshape(0, 0) = Polynomial::Constant(s, 1.0);
  rshape(0, 1) = ParsePoly(s, "x1 - 0.5");
  rshape(1, 0) = rshape(0, 1);
  rshape(1, 1) = ParsePoly(s, "2*(x1 - 0.5)^2 + 3");
  PolynomialMatrix rgain(s, 1, 2);
  rgain(0, 0) = ParsePoly(s, "-2 + 2*x1 + x2 - 2*x1^2");
  rgain(0, 1) = ParsePoly(s, "-2 - x2 + 2*x1*x2 - 2*x1^3");
  b.reference = ReferenceSolution{
      rshape, rgain,
      ParsePoly(s, "3.5*x1^2 + x1*x2 + x2^2 - 2*x1^3 - 2*x1^2*x2 + 2*x1^4"),
      ParsePoly(s,
                "-8*x1 - 3*x2 + 13*x1^2 + 6*x1*x2 - 0.5*x2^2 - 15*x1^3 "
                "- 3*x1^2*x2 + x1*x2^2 + 7*x1^4 - 2*x1^5"),
      ParsePoly(s, "3.25 - x1 + x1^2")};
  return b;
}

// The same two-state plant, but synthesized from four noisy samples with the
// richer lift (x1, x2, x1^2), so all seven lift and input coefficients are
// treated as unknown.
inline Benchmark TwoStateData() {
  const SpacePtr s = VariableSpace::Make({"x1"}, {"x2"});
  PolynomialMatrix lift(s, 3, 1);
  lift(0, 0) = ParsePoly(s, "x1");
  lift(1, 0) = ParsePoly(s, "x2");
  lift(2, 0) = ParsePoly(s, "x1^2");
  PolynomialMatrix gshape(s, 1, 1);
  gshape(0, 0) = Polynomial::Constant(s, 1.0);
  Eigen::MatrixXd a1(1, 3), a2(1, 3), b2(1, 1);
  a1 << 0, 1, -1;
  a2 << 0, 0, 0;
  b2 << 1;

  PolynomialMatrix basis(s, 2, 1);
  basis(0, 0) = ParsePoly(s, "x1");
  basis(1, 0) = ParsePoly(s, "x2");
  PolynomialMatrix factor(s, 3, 2);
  factor(0, 0) = Polynomial::Constant(s, 1.0);
  factor(1, 1) = Polynomial::Constant(s, 1.0);
  factor(2, 0) = ParsePoly(s, "x1");

  Benchmark b{
      "ex2",
      "two-state plant, synthesis from four noisy samples",
      Problem{PlantModel(s, lift, gshape, a1, a2, b2),
              ControlStructure{basis, factor},
              DecayWeights{0.1, Polynomial::Constant(s, 0.01),
                           ParsePoly(s, "2 + 2*x1^2")}},
      {},
      std::nullopt,
      std::nullopt,
      0.0,
      {},
      std::nullopt};
  b.synthesis.shape_degree = 4;
  b.synthesis.gain_degree = 6;

  Eigen::MatrixXd states(2, 4), rates(2, 4), inputs(1, 4);
  states << -0.4769, -0.3409, -0.2025, -0.0682,
             2.1206,  2.0930,  2.0048,  1.8637;
  rates <<  1.8948,  1.9749,  1.9618,  1.8536,
            0.0478, -0.8341, -1.6731, -2.3295;
  inputs << 0.0550, -0.8390, -1.6642, -2.3344;
  b.batch = detail::MakeBatch({0.60, 0.67, 0.74, 0.81}, states, rates, inputs);
  b.noise_energy = 0.01 * 0.01 * 4;

  const double half_pi = std::asin(1.0);
  b.recipe_signal = {{{2.0, 5.0, 0.0}, {1.0, 3.0, half_pi}}};
  ExperimentSpec recipe;
  recipe.initial_state = Eigen::Vector2d(-1.0, 1.0);
  recipe.input = MakeSignal(b.recipe_signal);
  recipe.start_time = 0.60;
  recipe.duration = 0.21;
  recipe.samples = 4;
  recipe.noise_radius = 0.01;
  b.recipe = std::move(recipe);

  PolynomialMatrix rshape(s, 2, 2);
  rshape(0, 0) = Polynomial::Constant(s, 0.3791);
  rshape(0, 1) = ParsePoly(s, "-0.4709 - 0.2067*x1^2");
  rshape(1, 0) = rshape(0, 1);
  rshape(1, 1) = ParsePoly(s, "2.9374 + 0.2580*x1^4");
  PolynomialMatrix rgain(s, 1, 2);
  rgain(0, 0) = Polynomial::Constant(s, -2.3092);
  rgain(0, 1) = ParsePoly(s, "-1.6748 - 1.2095*x2^2 - 1.5350*x1^6");
  b.reference = ReferenceSolution{
      rshape, rgain,
      ParsePoly(s,
                "2.9374*x1^2 + 0.9418*x1*x2 + 0.3791*x2^2 + 0.4134*x1^3*x2 "
                "+ 0.2580*x1^6"),
      ParsePoly(s,
                "-7.5717*x1 - 1.7223*x2 - 0.3462*x1^3 - 0.4773*x1^2*x2 "
                "- 0.5696*x1*x2^2 - 0.4585*x2^3 - 0.5958*x1^5 "
                "- 0.2500*x1^3*x2^2 - 0.7228*x1^7 - 0.5819*x1^6*x2 "
                "- 0.3173*x1^9"),
      ParsePoly(s, "0.8918 - 0.1947*x1^2 + 0.0551*x1^4")};
  return b;
}

// Two-state plant with a cubic restoring term, from data:
//   xdot1 = x2, xdot2 = -x1 + x2 - x1^3 + u.
// A constant shape provably cannot work across every plant consistent with
// the data (run the synthesis with shape degree 0 to see it fail), while a
// state-dependent shape succeeds.
inline Benchmark CubicSpringData() {
  const SpacePtr s = VariableSpace::Make({"x1"}, {"x2"});
  PolynomialMatrix lift(s, 3, 1);
  lift(0, 0) = ParsePoly(s, "x1");
  lift(1, 0) = ParsePoly(s, "x2");
  lift(2, 0) = ParsePoly(s, "x1^3");
  PolynomialMatrix gshape(s, 1, 1);
  gshape(0, 0) = Polynomial::Constant(s, 1.0);
  Eigen::MatrixXd a1(1, 3), a2(1, 3), b2(1, 1);
  a1 << 0, 1, 0;
  a2 << -1, 1, -1;
  b2 << 1;

  PolynomialMatrix basis(s, 2, 1);
  basis(0, 0) = ParsePoly(s, "x1");
  basis(1, 0) = ParsePoly(s, "x2");
  PolynomialMatrix factor(s, 3, 2);
  factor(0, 0) = Polynomial::Constant(s, 1.0);
  factor(1, 1) = Polynomial::Constant(s, 1.0);
  factor(2, 0) = ParsePoly(s, "x1^2");

  Benchmark b{
      "ex3",
      "cubic spring plant, synthesis from four noisy samples",
      Problem{PlantModel(s, lift, gshape, a1, a2, b2),
              ControlStructure{basis, factor},
              DecayWeights{0.1, Polynomial::Constant(s, 0.01),
                           ParsePoly(s, "2 + 2*x1^2")}},
      {},
      std::nullopt,
      std::nullopt,
      0.0,
      {},
      std::nullopt};
  b.synthesis.shape_degree = 4;
  b.synthesis.gain_degree = 6;

  Eigen::MatrixXd states(2, 4), rates(2, 4), inputs(1, 4);
  states <<  2.3862,   2.0483,  1.6453,  1.2050,
            -3.6915,  -4.6933, -5.3216, -5.6447;
  rates  << -3.6951,  -4.6837, -5.3252, -5.6333,
           -14.9236, -10.1249, -5.7669, -2.5443;
  inputs <<  4.7464,   5.2265,  5.6688,  6.0614;
  b.batch = detail::MakeBatch({3.10, 3.18, 3.26, 3.34}, states, rates, inputs);
  b.noise_energy = 0.02 * 0.02 * 4;

  const double half_pi = std::asin(1.0);
  b.recipe_signal = {{{3.0, 2.0, 0.0}, {-5.0, 1.0, half_pi}}};
  ExperimentSpec recipe;
  recipe.initial_state = Eigen::Vector2d(-0.5, 0.5);
  recipe.input = MakeSignal(b.recipe_signal);
  recipe.start_time = 3.10;
  recipe.duration = 0.24;
  recipe.samples = 4;
  recipe.noise_radius = 0.02;
  b.recipe = std::move(recipe);

  PolynomialMatrix rshape(s, 2, 2);
  rshape(0, 0) = Polynomial::Constant(s, 0.6067);
  rshape(0, 1) = ParsePoly(s, "-0.2700 - 0.1455*x1^2");
  rshape(1, 0) = rshape(0, 1);
  rshape(1, 1) = ParsePoly(s, "2.1736 + 0.1614*x1^4");
  PolynomialMatrix rgain(s, 1, 2);
  rgain(0, 0) = Polynomial::Constant(s, -0.9228);
  rgain(0, 1) = ParsePoly(s, "-4.0530 - 0.8888*x2^2 - 1.5962*x1^6");
  b.reference = ReferenceSolution{
      rshape, rgain,
      ParsePoly(s,
                "2.1736*x1^2 + 0.5400*x1*x2 + 0.6067*x2^2 + 0.2910*x1^3*x2 "
                "+ 0.1614*x1^6"),
      ParsePoly(s,
                "-3.1001*x1 - 2.7081*x2 - 0.5897*x1^3 - 0.1343*x1^2*x2 "
                "- 0.2400*x1*x2^2 - 0.5392*x2^3 - 0.1489*x1^5 "
                "- 0.1293*x1^3*x2^2 - 0.4310*x1^7 - 0.9684*x1^6*x2 "
                "- 0.2322*x1^9"),
      ParsePoly(s, "1.2458 - 0.0788*x1^2 + 0.0768*x1^4")};
  return b;
}

// Two masses coupled by a hardening spring, input force on the second mass.
// States are the first mass position, the spring stretch, and the two
// velocities; only the stretch and the velocities drive the dynamics:
//   z1dot = z3, z2dot = z3 - z4,
//   z3dot = -0.5 z2 - 0.05 z3 - 0.5 z2^3,
//   z4dot = z2 - 0.1 z4 + z2^3 + u.
// The structural zeros and the known integrator rows enter as prior
// knowledge; the seven remaining coefficients are learned from five noisy
// samples. The decision monomials are restricted to even exponents (the
// reference solution lies in that set) and the gain is capped to quadratic
// appearances of the velocities to keep the program small.
inline Benchmark MassSpringPrior() {
  const SpacePtr s = VariableSpace::Make({"z1", "z2", "z3"}, {"z4"});
  PolynomialMatrix lift(s, 4, 1);
  lift(0, 0) = ParsePoly(s, "z2");
  lift(1, 0) = ParsePoly(s, "z3");
  lift(2, 0) = ParsePoly(s, "z4");
  lift(3, 0) = ParsePoly(s, "z2^3");
  PolynomialMatrix gshape(s, 1, 1);
  gshape(0, 0) = Polynomial::Constant(s, 1.0);
  Eigen::MatrixXd a1(3, 4), a2(1, 4), b2(1, 1);
  a1 << 0, 1, 0, 0,
        0, 1, -1, 0,
        -0.5, -0.05, 0, -0.5;
  a2 << 1, 0, -0.1, 1;
  b2 << 1;

  PolynomialMatrix basis(s, 4, 1);
  basis(0, 0) = ParsePoly(s, "z1");
  basis(1, 0) = ParsePoly(s, "z2");
  basis(2, 0) = ParsePoly(s, "z3");
  basis(3, 0) = ParsePoly(s, "z4");
  PolynomialMatrix factor(s, 4, 4);
  factor(0, 1) = Polynomial::Constant(s, 1.0);
  factor(1, 2) = Polynomial::Constant(s, 1.0);
  factor(2, 3) = Polynomial::Constant(s, 1.0);
  factor(3, 1) = ParsePoly(s, "z2^2");

  Benchmark b{
      "ex4",
      "mass-spring plant, five noisy samples plus prior knowledge",
      Problem{PlantModel(s, lift, gshape, a1, a2, b2),
              ControlStructure{basis, factor},
              DecayWeights{0.1, Polynomial::Constant(s, 0.01),
                           ParsePoly(s, "2 + 2*z1^2 + 2*z2^2 + 2*z3^2")}},
      {},
      std::nullopt,
      std::nullopt,
      0.0,
      {},
      std::nullopt};
  b.synthesis.shape_degree = 4;
  b.synthesis.shape_variables = {1};  // shape depends on the stretch only
  b.synthesis.gain_degree = 6;
  b.synthesis.gain_variable_caps = {{0, 0}, {2, 2}, {3, 2}};
  b.synthesis.even_monomials = true;

  Eigen::MatrixXd states(4, 5), rates(4, 5), inputs(1, 5);
  states <<  0.7683,  0.9862,  1.2006,  1.4083,  1.6032,
             0.3046,  0.6949,  1.0923,  1.4880,  1.8657,
             3.1269,  3.0936,  3.0254,  2.8928,  2.6564,
            -2.3780, -2.5465, -2.6684, -2.6809, -2.5014;
  rates  <<  3.1283,  3.0981,  3.0274,  2.8962,  2.6564,
             5.5033,  5.6383,  5.6946,  5.5679,  5.1572,
            -0.3174, -0.6682, -1.3468, -2.5376, -4.3088,
            -2.5351, -2.1930, -1.1381,  0.9877,  4.3452;
  inputs << -3.1027, -3.4793, -3.8018, -4.0658, -4.2677;
  b.batch =
      detail::MakeBatch({2.00, 2.07, 2.14, 2.21, 2.28}, states, rates, inputs);
  b.noise_energy = 0.01 * 0.01 * 5;

  // Known entries of the packed coefficient vector: the first two lift rows
  // (pure integrator structure), plus the structural zeros in the remaining
  // rows. The seven learned entries are the spring and friction parameters
  // and the input coefficient.
  b.prior.indices = {0, 1, 2, 3, 4, 5, 6, 7, 10, 13};
  b.prior.values = Eigen::VectorXd(10);
  b.prior.values << 0, 1, 0, 0, 0, 1, -1, 0, 0, 0;

  const double half_pi = std::asin(1.0);
  b.recipe_signal = {{{3.0, 2.0, 0.0}, {2.0, 1.0, half_pi}}};
  ExperimentSpec recipe;
  recipe.initial_state = Eigen::Vector4d(-1.0, 1.0, 0.0, 0.0);
  recipe.input = MakeSignal(b.recipe_signal);
  recipe.start_time = 2.00;
  recipe.duration = 0.28;
  recipe.samples = 5;
  recipe.noise_radius = 0.01;
  b.recipe = std::move(recipe);

  PolynomialMatrix rshape(s, 4, 4);
  rshape(0, 0) = Polynomial::Constant(s, 6.8942);
  rshape(0, 2) = Polynomial::Constant(s, -0.9845);
  rshape(0, 3) = Polynomial::Constant(s, -0.7844);
  rshape(1, 1) = Polynomial::Constant(s, 0.4613);
  rshape(1, 2) = Polynomial::Constant(s, 0.2756);
  rshape(1, 3) = ParsePoly(s, "0.4522 + 0.1062*z2^2");
  rshape(2, 2) = Polynomial::Constant(s, 0.6371);
  rshape(2, 3) = ParsePoly(s, "0.4036 - 0.0540*z2^2");
  rshape(3, 3) = ParsePoly(s, "1.3096 + 0.2286*z2^4");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < r; ++c) rshape(r, c) = rshape(c, r);
  PolynomialMatrix rgain(s, 1, 4);
  rgain(0, 0) = Polynomial::Constant(s, -0.1888);
  rgain(0, 1) = Polynomial::Constant(s, 0.1709);
  rgain(0, 2) = Polynomial::Constant(s, -0.0788);
  rgain(0, 3) = ParsePoly(
      s, "-3.2414 - 1.1473*z2^2*z3^2 - 1.1505*z2^2*z4^2 - 1.7049*z2^6");
  b.reference = ReferenceSolution{rshape, rgain, std::nullopt, std::nullopt,
                                  std::nullopt};
  return b;
}

inline std::vector<std::string> BenchmarkNames() {
  return {"ex1", "ex2", "ex3", "ex4"};
}

inline Benchmark GetBenchmark(const std::string& name) {
  if (name == "ex1") return TwoStateModel();
  if (name == "ex2") return TwoStateData();
  if (name == "ex3") return CubicSpringData();
  if (name == "ex4") return MassSpringPrior();
  throw std::invalid_argument("unknown benchmark \"" + name +
                              "\"; available: ex1 ex2 ex3 ex4");
}

}  // namespace benchmarks
}  // namespace polystab
