#include "polystab/ode.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

namespace polystab {
namespace {

// Same two-state benchmark as in the model and data tests: xdot1 = x2 - x1^2,
// xdot2 = u, lift (x1^2, x2), basis (x1, x2).
struct TwoStateFixture {
  SpacePtr s = VariableSpace::Make({"x1"}, {"x2"});
  PlantModel model = MakeModel();
  ControlStructure structure = MakeStructure();
  DecayWeights weights = MakeWeights();

  PlantModel MakeModel() const {
    PolynomialMatrix lift(s, 2, 1);
    lift(0, 0) = ParsePoly(s, "x1^2");
    lift(1, 0) = ParsePoly(s, "x2");
    PolynomialMatrix gshape(s, 1, 1);
    gshape(0, 0) = Polynomial::Constant(s, 1.0);
    Eigen::MatrixXd a1(1, 2), a2(1, 2), b2(1, 1);
    a1 << -1, 1;
    a2 << 0, 0;
    b2 << 1;
    return PlantModel(s, lift, gshape, a1, a2, b2);
  }
  ControlStructure MakeStructure() const {
    PolynomialMatrix basis(s, 2, 1);
    basis(0, 0) = ParsePoly(s, "x1");
    basis(1, 0) = ParsePoly(s, "x2");
    PolynomialMatrix factor(s, 2, 2);
    factor(0, 0) = ParsePoly(s, "x1");
    factor(1, 1) = Polynomial::Constant(s, 1.0);
    return ControlStructure{basis, factor};
  }
  DecayWeights MakeWeights() const {
    return DecayWeights{0.1, Polynomial::Constant(s, 0.01),
                        ParsePoly(s, "1 + x1^2")};
  }
};

TEST(Integrator, MatchesExponentialDecay) {
  const auto field = [](double, const Eigen::VectorXd& x) {
    return Eigen::VectorXd(-x);
  };
  Eigen::VectorXd x0(1);
  x0 << 1.0;
  const OdeResult sol = IntegrateOde(field, x0, 0.0, 5.0);
  ASSERT_TRUE(sol.success) << sol.note;
  EXPECT_NEAR(sol.final_state()[0], std::exp(-5.0), 1e-7);
  EXPECT_DOUBLE_EQ(sol.final_time(), 5.0);
  ASSERT_GE(sol.times.size(), 3u);
  for (std::size_t k = 0; k + 1 < sol.times.size(); ++k)
    EXPECT_LT(sol.times[k], sol.times[k + 1]);
  // Recorded derivatives are the field values at the nodes.
  for (std::size_t k = 0; k < sol.states.size(); ++k)
    EXPECT_NEAR(sol.derivatives[k][0], -sol.states[k][0], 1e-14);
  EXPECT_GT(sol.steps_accepted, 0);
}

TEST(Integrator, DenseOutputInterpolatesBetweenNodes) {
  const auto field = [](double, const Eigen::VectorXd& x) {
    return Eigen::VectorXd(-x);
  };
  Eigen::VectorXd x0(1);
  x0 << 1.0;
  OdeOptions opt;
  opt.max_step = 0.1;  // keeps the cubic interpolation error below 1e-6
  const OdeResult sol = IntegrateOde(field, x0, 0.0, 3.0, opt);
  ASSERT_TRUE(sol.success) << sol.note;
  for (double t : {0.0, 0.123, 0.5, 1.7318, 2.9999, 3.0})
    EXPECT_NEAR(sol.Sample(t)[0], std::exp(-t), 1e-6) << "t = " << t;
  EXPECT_THROW(sol.Sample(-0.5), std::out_of_range);
  EXPECT_THROW(sol.Sample(3.5), std::out_of_range);
}

TEST(Integrator, ConservesOscillatorEnergyOnLongHorizon) {
  const auto field = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(2);
    d << x[1], -x[0];
    return d;
  };
  Eigen::VectorXd x0(2);
  x0 << 1.0, 0.0;
  const OdeResult sol = IntegrateOde(field, x0, 0.0, 100.0);
  ASSERT_TRUE(sol.success) << sol.note;
  EXPECT_NEAR(sol.final_state().squaredNorm(), 1.0, 1e-5);
  EXPECT_NEAR(sol.final_state()[0], std::cos(100.0), 1e-4);
}

TEST(Integrator, StepDoublingShowsFifthOrder) {
  // On a linear field the per-step error has a single leading term, so the
  // end-point error scales cleanly with the fifth power of the step.
  const auto field = [](double, const Eigen::VectorXd& x) {
    return Eigen::VectorXd(-x);
  };
  const double x0v = 1.0, horizon = 5.0;
  const double exact = std::exp(-horizon);
  const auto error_at = [&](double h) {
    OdeOptions opt;
    // Huge tolerances force every step to be accepted; the step cap then
    // pins the integrator to a constant step h.
    opt.rel_tol = 1.0;
    opt.abs_tol = 1.0;
    opt.initial_step = h;
    opt.max_step = h;
    Eigen::VectorXd x0(1);
    x0 << x0v;
    const OdeResult sol = IntegrateOde(field, x0, 0.0, horizon, opt);
    EXPECT_TRUE(sol.success) << sol.note;
    return std::abs(sol.final_state()[0] - exact);
  };
  const double coarse = error_at(0.25);
  const double fine = error_at(0.125);
  ASSERT_GT(coarse, 1e-13);
  ASSERT_GT(fine, 1e-15);
  const double ratio = coarse / fine;
  EXPECT_GT(ratio, 20.0) << "coarse " << coarse << " fine " << fine;
  EXPECT_LT(ratio, 50.0) << "coarse " << coarse << " fine " << fine;
}

TEST(Integrator, ReportsEscapeInFiniteTime) {
  const auto field = [](double, const Eigen::VectorXd& x) {
    return Eigen::VectorXd(x.array().square());
  };
  Eigen::VectorXd x0(1);
  x0 << 1.0;  // xdot = x^2 escapes at t = 1
  const OdeResult sol = IntegrateOde(field, x0, 0.0, 2.0);
  EXPECT_FALSE(sol.success);
  EXPECT_FALSE(sol.note.empty());
  EXPECT_GE(sol.final_state().norm(), 1e6);
  EXPECT_LT(sol.final_time(), 1.05);
}

TEST(Integrator, RecoversFromOverflowingTrialStep) {
  // xdot = -x (1 + x^2)^6 decays monotonically, but the default trial step
  // from x = 3 throws the intermediate stages past the overflow threshold
  // (the first stage lands near -3000, and raising that to the 13th power is
  // Inf). The error estimate of such a step is NaN, and the controller must
  // reject it and shrink instead of letting NaN infect the step size.
  const auto field = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(1);
    const double w = 1.0 + x[0] * x[0];
    d << -x[0] * w * w * w * w * w * w;
    return d;
  };
  Eigen::VectorXd x0(1);
  x0 << 3.0;
  const OdeResult sol = IntegrateOde(field, x0, 0.0, 1.0);
  ASSERT_TRUE(sol.success) << sol.note;
  EXPECT_GT(sol.steps_rejected, 0);
  EXPECT_LT(std::abs(sol.final_state()[0]), 3.0);
  EXPECT_GT(sol.final_state()[0], 0.0);  // decay never crosses zero
}

TEST(Integrator, SettlesGlobalAttractorWithNonquadraticStorage) {
  // This autonomous system is globally attractive although no constant
  // quadratic storage function certifies it; the cubic-over-quadratic growth
  // mismatch makes it a useful stress case for the step controller.
  const auto field = [](double, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(2);
    const double w = 1.0 + x[0] * x[0];
    d << (-x[0] - x[1]) * w * w, x[0] - x[1];
    return d;
  };
  for (double angle : {0.3, 2.0, 4.1}) {
    Eigen::VectorXd x0(2);
    x0 << 2.0 * std::cos(angle), 2.0 * std::sin(angle);
    const OdeResult sol = IntegrateOde(field, x0, 0.0, 50.0);
    ASSERT_TRUE(sol.success) << sol.note;
    EXPECT_LT(sol.final_state().norm(), 1e-4) << "angle " << angle;
  }
}

TEST(Experiment, NoiselessBatchMatchesRegressionIdentity) {
  const TwoStateFixture fx;
  ExperimentSpec spec;
  spec.initial_state = Eigen::Vector2d(-1.0, 1.0);
  spec.input = [](double t) {
    Eigen::VectorXd u(1);
    u << 2.0 * std::sin(5.0 * t) + std::cos(3.0 * t);
    return u;
  };
  spec.start_time = 0.60;
  spec.duration = 0.21;
  spec.samples = 22;
  const Dataset batch = RunExperiment(fx.model, spec);

  ASSERT_EQ(batch.samples(), 22);
  EXPECT_NEAR(batch.times[0], 0.60, 1e-12);
  EXPECT_NEAR(batch.times[21], 0.81, 1e-12);
  EXPECT_NEAR(batch.times[1] - batch.times[0], 0.01, 1e-12);

  // Derivative samples are exact field values, so the regression identity
  // holds to rounding.
  const DataMatrices dm = BuildDataMatrices(ShapeOf(fx.model), batch);
  const Eigen::VectorXd v = PackParameters(fx.model.a1, fx.model.a2,
                                           fx.model.b2);
  EXPECT_LE(
      (dm.stacked_rates - dm.dictionary.transpose() * v).norm(), 1e-12);

  // The sampled states agree with an independent single-shot integration.
  const auto field = [&](double t, const Eigen::VectorXd& x) {
    return fx.model.Derivative(x, spec.input(t));
  };
  const OdeResult full =
      IntegrateOde(field, spec.initial_state, 0.0, 0.81);
  ASSERT_TRUE(full.success) << full.note;
  EXPECT_LE((full.final_state() - batch.states.col(21)).norm(), 1e-8);
}

TEST(Experiment, SeedReproducesDrawsAndNoiseStaysInBall) {
  const TwoStateFixture fx;
  ExperimentSpec spec;
  spec.initial_state = Eigen::Vector2d(0.5, -0.5);
  spec.input = [](double t) {
    Eigen::VectorXd u(1);
    u << std::sin(2.0 * t);
    return u;
  };
  spec.duration = 1.0;
  spec.samples = 25;
  const Dataset clean = RunExperiment(fx.model, spec);

  spec.noise_radius = 0.01;
  spec.seed = 42;
  const Dataset noisy = RunExperiment(fx.model, spec);
  const Dataset replay = RunExperiment(fx.model, spec);
  EXPECT_EQ((noisy.derivatives - replay.derivatives).norm(), 0.0);
  EXPECT_EQ((noisy.states - replay.states).norm(), 0.0);

  spec.seed = 43;
  const Dataset other = RunExperiment(fx.model, spec);
  EXPECT_GT((noisy.derivatives - other.derivatives).norm(), 0.0);

  // States and inputs are untouched; only derivative samples carry noise.
  EXPECT_EQ((noisy.states - clean.states).norm(), 0.0);
  EXPECT_EQ((noisy.inputs - clean.inputs).norm(), 0.0);
  double energy = 0.0, largest = 0.0;
  for (int t = 0; t < spec.samples; ++t) {
    const double r =
        (noisy.derivatives.col(t) - clean.derivatives.col(t)).norm();
    EXPECT_LE(r, spec.noise_radius + 1e-15);
    energy += r * r;
    largest = std::max(largest, r);
  }
  EXPECT_GT(largest, 0.1 * spec.noise_radius);
  const double budget =
      spec.noise_radius * spec.noise_radius * spec.samples;
  EXPECT_LE(energy, budget);

  // The true parameters therefore stay inside the consistency set built
  // from the noisy batch with that energy budget.
  const DataMatrices dm = BuildDataMatrices(ShapeOf(fx.model), noisy);
  const NoiseSet set = BuildNoiseSet(dm.dictionary, dm.stacked_rates, budget);
  const Eigen::VectorXd v = PackParameters(fx.model.a1, fx.model.a2,
                                           fx.model.b2);
  EXPECT_GE(MembershipSlack(set, v), 0.0);
}

TEST(Lyapunov, TraceFlagsGrowthAndConfirmsDecay) {
  const SpacePtr s = VariableSpace::Make({"x1"}, {"x2"});
  PolynomialMatrix shape(s, 2, 2);
  shape(0, 0) = Polynomial::Constant(s, 1.0);
  shape(1, 1) = Polynomial::Constant(s, 1.0);
  PolynomialMatrix basis(s, 2, 1);
  basis(0, 0) = ParsePoly(s, "x1");
  basis(1, 0) = ParsePoly(s, "x2");
  // Identity shape and linear basis give the plain squared norm as storage
  // function; gain and decay are unused by the trace.
  const Controller ctrl{s, shape, PolynomialMatrix(s, 1, 2), basis,
                        PolynomialMatrix(s, 2, 2)};

  Eigen::VectorXd x0(2);
  x0 << 1.0, -2.0;
  const auto contracting = [](double, const Eigen::VectorXd& x) {
    return Eigen::VectorXd(-x);
  };
  const LyapunovTrace good =
      VerifyLyapunovAlong(ctrl, IntegrateOde(contracting, x0, 0.0, 10.0));
  EXPECT_TRUE(good.nonincreasing);
  EXPECT_NEAR(good.initial_value, 5.0, 1e-12);
  EXPECT_LT(good.final_value, 1e-6);

  const auto expanding = [](double, const Eigen::VectorXd& x) {
    return Eigen::VectorXd(x);
  };
  const LyapunovTrace bad =
      VerifyLyapunovAlong(ctrl, IntegrateOde(expanding, x0, 0.0, 1.0));
  EXPECT_FALSE(bad.nonincreasing);
  EXPECT_GT(bad.max_increase, 0.1);
}

TEST(Lyapunov, SynthesizedControllerDecaysAlongClosedLoop) {
  const TwoStateFixture fx;
  SynthesisOptions opt;
  opt.shape_degree = 2;
  opt.gain_degree = 3;
  const SynthesisResult r =
      SynthesizeController(fx.model, fx.structure, fx.weights, opt);
  ASSERT_TRUE(r.feasible) << r.note;
  const Controller ctrl =
      MakeController(fx.model, fx.structure, r.shape, r.gain);

  for (double angle : {0.7, 1.9, 3.6, 5.4}) {
    Eigen::VectorXd x0(2);
    x0 << 2.0 * std::cos(angle), 2.0 * std::sin(angle);
    const OdeResult sol = SimulateClosedLoop(fx.model, ctrl, x0, 20.0);
    ASSERT_TRUE(sol.success) << sol.note;
    EXPECT_LT(sol.final_state().norm(), 1e-3) << "angle " << angle;
    const LyapunovTrace trace = VerifyLyapunovAlong(ctrl, sol, 1e-7);
    EXPECT_TRUE(trace.nonincreasing)
        << "angle " << angle << ", max increase " << trace.max_increase;
  }
}

TEST(LevelSets, TracesTheUnitCircle) {
  const auto value = [](double a, double b) { return a * a + b * b; };
  const auto segments = LevelSetSegments(value, -2.0, 2.0, 201, 1.0);
  ASSERT_FALSE(segments.empty());
  double length = 0.0;
  for (const auto& seg : segments) {
    for (int e = 0; e < 2; ++e) {
      const double r = std::hypot(seg[2 * e], seg[2 * e + 1]);
      EXPECT_NEAR(r, 1.0, 5e-3);
    }
    length += std::hypot(seg[2] - seg[0], seg[3] - seg[1]);
  }
  EXPECT_NEAR(length, 2.0 * M_PI, 0.05);

  // A level below the minimum yields no curve.
  EXPECT_TRUE(LevelSetSegments(value, -2.0, 2.0, 51, -1.0).empty());
}

TEST(LevelSets, ResolvesSaddleCellsByCenterValue) {
  // One 2x2 cell of the saddle a b with the level cutting both diagonal
  // corners; the two hyperbola branches must not be cross-connected. Since
  // the function is linear along every cell edge the crossings are exact.
  const auto value = [](double a, double b) { return a * b; };

  // Center value 0 < 0.5: the high corners stay separate, so each segment
  // midpoint stays on the high side of its own corner.
  const auto high = LevelSetSegments(value, -1.0, 1.0, 2, 0.5);
  ASSERT_EQ(high.size(), 2u);
  for (const auto& seg : high) {
    EXPECT_NEAR(seg[0] * seg[1], 0.5, 1e-12);
    EXPECT_NEAR(seg[2] * seg[3], 0.5, 1e-12);
    const double ma = 0.5 * (seg[0] + seg[2]), mb = 0.5 * (seg[1] + seg[3]);
    EXPECT_GT(ma * mb, 0.5);
  }

  // Center value 0 >= -0.5: the high region is connected and the segments
  // cut off the two low corners instead.
  const auto low = LevelSetSegments(value, -1.0, 1.0, 2, -0.5);
  ASSERT_EQ(low.size(), 2u);
  for (const auto& seg : low) {
    EXPECT_NEAR(seg[0] * seg[1], -0.5, 1e-12);
    EXPECT_NEAR(seg[2] * seg[3], -0.5, 1e-12);
    const double ma = 0.5 * (seg[0] + seg[2]), mb = 0.5 * (seg[1] + seg[3]);
    EXPECT_LT(ma * mb, -0.5);
  }
}

}  // namespace
}  // namespace polystab
