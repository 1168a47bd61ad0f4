#include "polystab/sdp.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

namespace polystab {
namespace {

ConicProgram::PsdEntry E(int block, int i, int j, double v) {
  return {block, i, j, v};
}

TEST(SolveConic, MinimizeTraceWithPinnedCorner) {
  // min tr(X), X psd 2x2, X11 = 1. Optimum: X = diag(1, 0).
  ConicProgram p;
  p.AddBlock("x", 2);
  p.objective_psd = {E(0, 0, 0, 1.0), E(0, 1, 1, 1.0)};
  p.rows.push_back({{E(0, 0, 0, 1.0)}, {}, 1.0});
  const ConicSolution sol = SolveConic(p);
  ASSERT_EQ(sol.status, ConicStatus::kOptimal) << sol.note;
  EXPECT_NEAR(sol.primal_objective, 1.0, 1e-6);
  EXPECT_NEAR(sol.psd[0](0, 0), 1.0, 1e-6);
  EXPECT_NEAR(sol.psd[0](1, 1), 0.0, 1e-6);
  EXPECT_NEAR(sol.primal_objective, sol.dual_objective, 1e-6);
}

TEST(SolveConic, SmallestEigenvalueAsSdp) {
  // min <C, X> s.t. tr(X) = 1 equals the smallest eigenvalue of C.
  ConicProgram p;
  p.AddBlock("x", 2);
  p.objective_psd = {E(0, 0, 0, 2.0), E(0, 0, 1, 1.0), E(0, 1, 1, 2.0)};
  p.rows.push_back({{E(0, 0, 0, 1.0), E(0, 1, 1, 1.0)}, {}, 1.0});
  const ConicSolution sol = SolveConic(p);
  ASSERT_EQ(sol.status, ConicStatus::kOptimal) << sol.note;
  EXPECT_NEAR(sol.primal_objective, 1.0, 1e-6);  // eigs of [[2,1],[1,2]]: 1, 3
  const FeasibilityReport rep = CheckFeasibility(p, sol);
  EXPECT_GT(rep.min_psd_eigenvalue, -1e-8);
  EXPECT_LT(rep.max_equality_violation, 1e-7);
}

TEST(SolveConic, FreeVariablesEnterRowsAndObjective) {
  // min X11 + X22 + 0*f over X psd, with X11 + f = 2 and f = 1.
  ConicProgram p;
  p.AddBlock("x", 2);
  p.free_count = 1;
  p.objective_psd = {E(0, 0, 0, 1.0), E(0, 1, 1, 1.0)};
  p.rows.push_back({{E(0, 0, 0, 1.0)}, {{0, 1.0}}, 2.0});
  p.rows.push_back({{}, {{0, 1.0}}, 1.0});
  const ConicSolution sol = SolveConic(p);
  ASSERT_EQ(sol.status, ConicStatus::kOptimal) << sol.note;
  EXPECT_NEAR(sol.free_values[0], 1.0, 1e-6);
  EXPECT_NEAR(sol.psd[0](0, 0), 1.0, 1e-6);
  EXPECT_NEAR(sol.primal_objective, 1.0, 1e-6);
}

TEST(SolveConic, DetectsPrimalInfeasible) {
  // X11 = -1 for a 1x1 psd block cannot hold.
  ConicProgram p;
  p.AddBlock("x", 1);
  p.rows.push_back({{E(0, 0, 0, 1.0)}, {}, -1.0});
  const ConicSolution sol = SolveConic(p);
  EXPECT_EQ(sol.status, ConicStatus::kPrimalInfeasible) << sol.note;
}

TEST(SolveConic, DetectsUnboundedPrimal) {
  // min -X11 with only X22 pinned: X11 can grow without bound.
  ConicProgram p;
  p.AddBlock("x", 2);
  p.objective_psd = {E(0, 0, 0, -1.0)};
  p.rows.push_back({{E(0, 1, 1, 1.0)}, {}, 1.0});
  const ConicSolution sol = SolveConic(p);
  EXPECT_EQ(sol.status, ConicStatus::kDualInfeasible) << sol.note;
}

TEST(SolveConic, RandomFeasibleProgramsSolveCleanly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 4, m = 6;
    ConicProgram p;
    p.AddBlock("x", n);
    p.objective_psd = {E(0, 0, 0, 1), E(0, 1, 1, 1), E(0, 2, 2, 1),
                       E(0, 3, 3, 1)};
    // Build b from a random interior point so the program is feasible.
    Eigen::MatrixXd g(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) = u(rng);
    Eigen::MatrixXd xstar = g * g.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    for (int r = 0; r < m; ++r) {
      ConicProgram::Row row;
      double rhs = 0.0;
      for (int k = 0; k < 3; ++k) {
        const int i = static_cast<int>(rng() % n);
        const int j = static_cast<int>(rng() % n);
        const auto [a, b2] = std::minmax(i, j);
        const double v = u(rng);
        row.psd.push_back(E(0, a, b2, v));
        rhs += (a == b2) ? v * xstar(a, a) : 2 * v * xstar(a, b2);
      }
      row.rhs = rhs;
      p.rows.push_back(row);
    }
    const ConicSolution sol = SolveConic(p);
    ASSERT_EQ(sol.status, ConicStatus::kOptimal) << "trial " << trial;
    const FeasibilityReport rep = CheckFeasibility(p, sol);
    EXPECT_GT(rep.min_psd_eigenvalue, -1e-7);
    EXPECT_LT(rep.max_equality_violation, 1e-6 * (1 + std::abs(sol.primal_objective)));
  }
}

TEST(SolveConic, RowScalingInvariance) {
  ConicProgram p;
  p.AddBlock("x", 2);
  p.objective_psd = {E(0, 0, 0, 2.0), E(0, 0, 1, 1.0), E(0, 1, 1, 2.0)};
  p.rows.push_back({{E(0, 0, 0, 1e6), E(0, 1, 1, 1e6)}, {}, 1e6});
  const ConicSolution sol = SolveConic(p);
  ASSERT_EQ(sol.status, ConicStatus::kOptimal) << sol.note;
  EXPECT_NEAR(sol.primal_objective, 1.0, 1e-5);
}

// Stabilizing state feedback for the double integrator through the standard
// change-of-variables LMI: find W, Y with A W + W A' + B Y + Y' B' <= -I and
// W >= I, all entries carried as free scalars linked to psd slack blocks.
TEST(SolveConic, ControllerSynthesisLmi) {
  ConicProgram p;
  const int g1 = p.AddBlock("decay", 2);
  const int g2 = p.AddBlock("gram", 2);
  p.free_count = 5;  // w11 w12 w22 y1 y2
  enum { w11, w12, w22, y1, y2 };
  p.objective_free = {{w11, 1.0}, {w22, 1.0}};
  // G1 = -(A W + W A' + B Y + Y' B') - I, entrywise. Off-diagonal pins use
  // coefficient 1/2 because the symmetric inner product doubles them.
  p.rows.push_back({{E(g1, 0, 0, 1.0)}, {{w12, 2.0}}, -1.0});
  p.rows.push_back({{E(g1, 0, 1, 0.5)}, {{w22, 1.0}, {y1, 1.0}}, 0.0});
  p.rows.push_back({{E(g1, 1, 1, 1.0)}, {{y2, 2.0}}, -1.0});
  // G2 = W - I.
  p.rows.push_back({{E(g2, 0, 0, 1.0)}, {{w11, -1.0}}, -1.0});
  p.rows.push_back({{E(g2, 0, 1, 0.5)}, {{w12, -1.0}}, 0.0});
  p.rows.push_back({{E(g2, 1, 1, 1.0)}, {{w22, -1.0}}, -1.0});
  const ConicSolution sol = SolveConic(p);
  ASSERT_EQ(sol.status, ConicStatus::kOptimal) << sol.note;

  Eigen::Matrix2d w;
  w << sol.free_values[w11], sol.free_values[w12], sol.free_values[w12],
      sol.free_values[w22];
  Eigen::RowVector2d yv(sol.free_values[y1], sol.free_values[y2]);
  Eigen::Matrix2d a;
  a << 0, 1, 0, 0;
  Eigen::Vector2d b(0, 1);
  const Eigen::Matrix2d decay =
      a * w + w * a.transpose() + b * yv + yv.transpose() * b.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es_decay(decay);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es_w(w);
  EXPECT_LT(es_decay.eigenvalues().maxCoeff(), -1.0 + 1e-6);
  EXPECT_GT(es_w.eigenvalues().minCoeff(), 1.0 - 1e-6);
  // The closed-loop matrix A + B Y W^-1 must be Hurwitz.
  const Eigen::Matrix2d acl = a + b * (yv * w.inverse());
  EXPECT_LT(acl.eigenvalues().real().maxCoeff(), 0.0);
}

TEST(SdpaExport, GoldenBytesAndDeterminism) {
  ConicProgram p;
  p.AddBlock("g", 2);
  p.free_count = 1;
  p.metadata["label"] = "demo";
  p.objective_psd = {E(0, 0, 0, 1.0)};
  p.objective_free = {{0, 0.5}};
  p.rows.push_back({{E(0, 0, 1, 2.0)}, {{0, 1.0}}, 1.5});
  p.rows.push_back({{E(0, 1, 1, 1.0)}, {}, -2.0});
  const std::string expect =
      "\"conic export: demo\n"
      "2\n"
      "2\n"
      "2 -2\n"
      "1.5 -2\n"
      "0 1 1 1 -1\n"
      "0 2 1 1 -0.5\n"
      "0 2 2 2 0.5\n"
      "1 1 1 2 2\n"
      "1 2 1 1 1\n"
      "1 2 2 2 -1\n"
      "2 1 2 2 1\n";
  EXPECT_EQ(SdpaSparseString(p), expect);
  EXPECT_EQ(SdpaSparseString(p), SdpaSparseString(p));
}

// Minimal independent reader for the exported format, used to confirm the
// export round-trips: parse the bytes back and re-solve.
ConicProgram ParseSdpaSparse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next_data_line = [&]() {
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '"' || line[0] == '*') continue;
      return true;
    }
    return false;
  };
  ConicProgram p;
  EXPECT_TRUE(next_data_line());
  const int m = std::stoi(line);
  EXPECT_TRUE(next_data_line());
  const int nblocks = std::stoi(line);
  EXPECT_TRUE(next_data_line());
  std::istringstream bs(line);
  int free_dim = 0;
  for (int b = 0; b < nblocks; ++b) {
    int sz;
    bs >> sz;
    if (sz > 0)
      p.AddBlock("b" + std::to_string(b), sz);
    else
      free_dim = -sz;
  }
  EXPECT_EQ(free_dim % 2, 0);
  p.free_count = free_dim / 2;
  p.rows.resize(m);
  EXPECT_TRUE(next_data_line());
  std::istringstream rs(line);
  for (int r = 0; r < m; ++r) rs >> p.rows[r].rhs;
  const int free_block = static_cast<int>(p.blocks.size()) + 1;
  int mat, blk, i, j;
  double v;
  while (is >> mat >> blk >> i >> j >> v) {
    if (blk == free_block) {
      EXPECT_EQ(i, j);
      if (i % 2 == 0) continue;  // the mirrored negative half
      const int idx = (i - 1) / 2;
      if (mat == 0)
        p.objective_free.push_back({idx, -v});
      else
        p.rows[mat - 1].free_terms.push_back({idx, v});
    } else {
      const ConicProgram::PsdEntry e{blk - 1, i - 1, j - 1,
                                     mat == 0 ? -v : v};
      if (mat == 0)
        p.objective_psd.push_back(e);
      else
        p.rows[mat - 1].psd.push_back(e);
    }
  }
  return p;
}

TEST(SdpaExport, RoundTripPreservesOptimum) {
  ConicProgram p;
  p.AddBlock("x", 2);
  p.free_count = 1;
  p.objective_psd = {E(0, 0, 0, 1.0), E(0, 1, 1, 1.0)};
  p.rows.push_back({{E(0, 0, 0, 1.0)}, {{0, 1.0}}, 2.0});
  p.rows.push_back({{}, {{0, 1.0}}, 1.0});
  const ConicProgram q = ParseSdpaSparse(SdpaSparseString(p));
  const ConicSolution a = SolveConic(p);
  const ConicSolution b = SolveConic(q);
  ASSERT_EQ(a.status, ConicStatus::kOptimal);
  ASSERT_EQ(b.status, ConicStatus::kOptimal);
  EXPECT_NEAR(a.primal_objective, b.primal_objective, 1e-7);
}

}  // namespace
}  // namespace polystab
