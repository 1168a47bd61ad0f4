#include "polystab/poly.hpp"

#include <gtest/gtest.h>

#include <random>

#include <Eigen/Core>

namespace polystab {
namespace {

SpacePtr PlaneSpace() { return VariableSpace::Make({"x1"}, {"x2"}); }

Polynomial RandomPoly(const SpacePtr& space, std::mt19937_64& rng,
                      int max_degree = 3, int terms = 6) {
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_int_distribution<int> deg(0, max_degree);
  Polynomial p(space);
  for (int t = 0; t < terms; ++t) {
    Monomial m(space->dim(), 0);
    int budget = deg(rng);
    for (int v = 0; v < space->dim() && budget > 0; ++v) {
      std::uniform_int_distribution<int> take(0, budget);
      const int e = take(rng);
      m[v] = static_cast<std::uint8_t>(e);
      budget -= e;
    }
    p.AddTerm(m, coef(rng));
  }
  return p;
}

Eigen::VectorXd RandomPoint(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  Eigen::VectorXd x(dim);
  for (int i = 0; i < dim; ++i) x[i] = u(rng);
  return x;
}

TEST(VariableSpace, GroupsAndLookup) {
  auto s = VariableSpace::Make({"a", "b"}, {"c"});
  EXPECT_EQ(s->dim(), 3);
  EXPECT_EQ(s->state_dim(), 3);
  EXPECT_EQ(s->group_size(VariableSpace::Group::kX1), 2);
  EXPECT_EQ(s->group_size(VariableSpace::Group::kX2), 1);
  EXPECT_EQ(s->Find("c").value(), 2);
  EXPECT_FALSE(s->Find("d").has_value());
  EXPECT_EQ(s->group_of(2), VariableSpace::Group::kX2);

  auto sy = s->WithYBlock({"y1", "y2"});
  EXPECT_EQ(sy->dim(), 5);
  EXPECT_EQ(sy->group_begin(VariableSpace::Group::kY), 3);
  EXPECT_TRUE(sy->HasPrefix(*s));
  EXPECT_FALSE(s->HasPrefix(*sy));

  EXPECT_THROW(VariableSpace::Make({"a", "a"}, {}), std::invalid_argument);
  EXPECT_THROW(VariableSpace::Make({}, {}), std::invalid_argument);
}

TEST(Parser, QuadraticExpansion) {
  auto s = PlaneSpace();
  const Polynomial p = ParsePoly(s, "2*(x1-0.5)^2+3");
  EXPECT_DOUBLE_EQ(p.CoefficientOf({2, 0}), 2.0);
  EXPECT_DOUBLE_EQ(p.CoefficientOf({1, 0}), -2.0);
  EXPECT_DOUBLE_EQ(p.CoefficientOf({0, 0}), 3.5);
  EXPECT_EQ(p.TermCount(), 3);
}

TEST(Parser, ErrorsCarryPosition) {
  auto s = PlaneSpace();
  EXPECT_THROW(ParsePoly(s, "x9 + 1"), std::invalid_argument);
  EXPECT_THROW(ParsePoly(s, "(x1"), std::invalid_argument);
  EXPECT_THROW(ParsePoly(s, "x1 + + x2"), std::invalid_argument);
  EXPECT_THROW(ParsePoly(s, "2 x1"), std::invalid_argument);  // no implicit *
  EXPECT_THROW(ParsePoly(s, "x1^300"), std::invalid_argument);
  try {
    ParsePoly(s, "x1 * foo");
    FAIL() << "expected parse failure";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("position"), std::string::npos);
  }
}

TEST(Parser, RoundTripThroughToString) {
  auto s = VariableSpace::Make({"x1", "x2"}, {"x3"});
  std::mt19937_64 rng(7);
  for (int k = 0; k < 25; ++k) {
    const Polynomial p = RandomPoly(s, rng, 4, 8);
    const Polynomial q = ParsePoly(s, p.ToString());
    ASSERT_EQ(p.terms().size(), q.terms().size()) << p.ToString();
    for (const auto& [mono, coef] : p.terms()) {
      ASSERT_DOUBLE_EQ(coef, q.CoefficientOf(mono)) << p.ToString();
    }
  }
  EXPECT_EQ(Polynomial(s).ToString(), "0");
  EXPECT_EQ(ParsePoly(s, "-x1 + 2").ToString(), "-x1 + 2");
}

TEST(Polynomial, GradedLexOrdering) {
  auto s = PlaneSpace();
  GradedLexLess less;
  const Monomial one{0, 0}, x1{1, 0}, x2{0, 1}, x1x2{1, 1}, x1sq{2, 0};
  EXPECT_TRUE(less(one, x1));
  EXPECT_TRUE(less(x2, x1));      // same degree, lex on exponents
  EXPECT_TRUE(less(x1x2, x1sq));  // x1^2 dominates x1*x2
  EXPECT_FALSE(less(x1sq, x1x2));
  // ToString lists terms in descending order.
  const Polynomial p = ParsePoly(s, "x1*x2 + x1^2 + 1");
  EXPECT_EQ(p.ToString(), "x1^2 + x1*x2 + 1");
}

TEST(Polynomial, RingLawsAtRandomPoints) {
  auto s = VariableSpace::Make({"x1"}, {"x2", "x3"});
  std::mt19937_64 rng(11);
  for (int k = 0; k < 20; ++k) {
    const Polynomial p = RandomPoly(s, rng);
    const Polynomial q = RandomPoly(s, rng);
    const Polynomial r = RandomPoly(s, rng);
    const Eigen::VectorXd x = RandomPoint(3, rng);
    const double pv = p.Eval(x), qv = q.Eval(x), rv = r.Eval(x);
    EXPECT_NEAR((p + q).Eval(x), pv + qv, 1e-10 * (1 + std::abs(pv + qv)));
    EXPECT_NEAR((p - q).Eval(x), pv - qv, 1e-10 * (1 + std::abs(pv - qv)));
    EXPECT_NEAR((p * q).Eval(x), pv * qv, 1e-10 * (1 + std::abs(pv * qv)));
    EXPECT_TRUE(((p * q) * r).EqualsWithin(p * (q * r), 1e-9));
    EXPECT_TRUE((p * q).EqualsWithin(q * p, 1e-12));
    EXPECT_TRUE((p * (q + r)).EqualsWithin(p * q + p * r, 1e-9));
  }
}

TEST(Polynomial, PowMatchesRepeatedProduct) {
  auto s = PlaneSpace();
  const Polynomial base = ParsePoly(s, "x1 + x2 - 0.25");
  Polynomial expect = Polynomial::Constant(s, 1.0);
  for (int e = 0; e <= 5; ++e) {
    EXPECT_TRUE(base.Pow(e).EqualsWithin(expect, 1e-9));
    expect = expect * base;
  }
  EXPECT_THROW(base.Pow(-1), std::invalid_argument);
}

TEST(Polynomial, DerivativeProductRule) {
  auto s = VariableSpace::Make({"x1", "x2"}, {"x3"});
  std::mt19937_64 rng(13);
  for (int k = 0; k < 10; ++k) {
    const Polynomial p = RandomPoly(s, rng);
    const Polynomial q = RandomPoly(s, rng);
    for (int v = 0; v < 3; ++v) {
      const Polynomial lhs = (p * q).Derivative(v);
      const Polynomial rhs = p.Derivative(v) * q + p * q.Derivative(v);
      EXPECT_TRUE(lhs.EqualsWithin(rhs, 1e-9));
    }
  }
}

TEST(Polynomial, DerivativeMatchesCentralDifference) {
  auto s = PlaneSpace();
  std::mt19937_64 rng(17);
  const Polynomial p = RandomPoly(s, rng, 4, 8);
  const Polynomial dp = p.Derivative(0);
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd x = RandomPoint(2, rng);
    Eigen::VectorXd xp = x, xm = x;
    const double h = 1e-6;
    xp[0] += h;
    xm[0] -= h;
    const double fd = (p.Eval(xp) - p.Eval(xm)) / (2 * h);
    EXPECT_NEAR(dp.Eval(x), fd, 1e-5 * (1 + std::abs(fd)));
  }
}

TEST(Polynomial, DegreesAndCleaning) {
  auto s = VariableSpace::Make({"x1"}, {"x2"});
  auto sy = s->WithYBlock({"y1"});
  const Polynomial p = ParsePoly(sy, "x1^3*y1 + x2^2 + 1");
  EXPECT_EQ(p.TotalDegree(), 4);
  EXPECT_EQ(p.DegreeIn(0), 3);
  EXPECT_EQ(p.DegreeIn(2), 1);
  EXPECT_EQ(p.DegreeInGroup(VariableSpace::Group::kX1), 3);
  EXPECT_EQ(p.DegreeInGroup(VariableSpace::Group::kY), 1);

  const Polynomial q = ParsePoly(s, "x1 + x2");
  EXPECT_TRUE((q - q).IsZero());
  Polynomial noisy = q;
  noisy.AddTerm({3, 3}, 1e-15);
  EXPECT_TRUE(noisy.Cleaned(1e-14).EqualsWithin(q, 0.0));
}

TEST(Polynomial, LiftedPreservesValues) {
  auto s = PlaneSpace();
  auto sy = s->WithYBlock({"y1", "y2"});
  std::mt19937_64 rng(19);
  const Polynomial p = RandomPoly(s, rng);
  const Polynomial lifted = p.Lifted(sy);
  for (int k = 0; k < 5; ++k) {
    Eigen::VectorXd xy = RandomPoint(4, rng);
    Eigen::VectorXd x = xy.head(2);
    EXPECT_NEAR(lifted.Eval(xy), p.Eval(x), 1e-12);
  }
  EXPECT_THROW(ParsePoly(sy, "y1").Lifted(s), std::invalid_argument);
}

TEST(PolynomialMatrix, FixtureDeterminantAndQuadraticForm) {
  // P = [1, x1 - 1/2; x1 - 1/2, 2 (x1 - 1/2)^2 + 3] over the plane.
  auto s = PlaneSpace();
  PolynomialMatrix p(s, 2, 2);
  p(0, 0) = Polynomial::Constant(s, 1.0);
  p(0, 1) = ParsePoly(s, "x1 - 0.5");
  p(1, 0) = p(0, 1);
  p(1, 1) = ParsePoly(s, "2*(x1-0.5)^2 + 3");
  EXPECT_TRUE(p.IsSymmetricWithin(0.0));

  const Polynomial det = Determinant(p);
  EXPECT_TRUE(det.EqualsWithin(ParsePoly(s, "x1^2 - x1 + 3.25"), 1e-12));
  EXPECT_NEAR(det.Eval(Eigen::Vector2d(0, 0)), 3.25, 1e-12);

  // z' adj(P) z for z = (x1, x2).
  const PolynomialMatrix adj = Adjugate(p);
  PolynomialMatrix z(s, 2, 1);
  z(0, 0) = Polynomial::Variable(s, 0);
  z(1, 0) = Polynomial::Variable(s, 1);
  const Polynomial eta = (z.Transpose() * adj * z)(0, 0);
  const Polynomial expect = ParsePoly(
      s, "3.5*x1^2 + x1*x2 + x2^2 - 2*x1^3 - 2*x1^2*x2 + 2*x1^4");
  EXPECT_TRUE(eta.EqualsWithin(expect, 1e-12));
}

TEST(PolynomialMatrix, AdjugateTimesSelfIsDeterminant) {
  auto s = VariableSpace::Make({"x1", "x2"}, {"x3"});
  std::mt19937_64 rng(23);
  for (int n = 1; n <= 3; ++n) {
    PolynomialMatrix m(s, n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = RandomPoly(s, rng, 1, 3);
    const Polynomial det = Determinant(m);
    const PolynomialMatrix prod = m * Adjugate(m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Polynomial want = (i == j) ? det : Polynomial(s);
        EXPECT_TRUE(prod(i, j).EqualsWithin(want, 1e-9))
            << "n=" << n << " (" << i << "," << j << ")";
      }
  }
  PolynomialMatrix big(s, 6, 6);
  EXPECT_THROW(Determinant(big), std::invalid_argument);
}

TEST(PolynomialMatrix, JacobianAndKron) {
  auto s = PlaneSpace();
  PolynomialMatrix v(s, 2, 1);
  v(0, 0) = ParsePoly(s, "x1^2");
  v(1, 0) = ParsePoly(s, "x1*x2");
  const PolynomialMatrix j = Jacobian(v, {0, 1});
  EXPECT_TRUE(j(0, 0).EqualsWithin(ParsePoly(s, "2*x1"), 0.0));
  EXPECT_TRUE(j(0, 1).IsZero());
  EXPECT_TRUE(j(1, 0).EqualsWithin(ParsePoly(s, "x2"), 0.0));
  EXPECT_TRUE(j(1, 1).EqualsWithin(ParsePoly(s, "x1"), 0.0));

  PolynomialMatrix a(s, 1, 2), b(s, 2, 1);
  a(0, 0) = ParsePoly(s, "x1");
  a(0, 1) = Polynomial::Constant(s, 2.0);
  b(0, 0) = ParsePoly(s, "x2");
  b(1, 0) = Polynomial::Constant(s, 1.0);
  const PolynomialMatrix k = Kron(a, b);
  ASSERT_EQ(k.rows(), 2);
  ASSERT_EQ(k.cols(), 2);
  EXPECT_TRUE(k(0, 0).EqualsWithin(ParsePoly(s, "x1*x2"), 0.0));
  EXPECT_TRUE(k(1, 1).EqualsWithin(ParsePoly(s, "2"), 0.0));

  std::mt19937_64 rng(29);
  const Eigen::VectorXd x = RandomPoint(2, rng);
  const Eigen::MatrixXd av = a.Eval(x), bv = b.Eval(x);
  Eigen::MatrixXd kv(av.rows() * bv.rows(), av.cols() * bv.cols());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j)
      kv.block(i * bv.rows(), j * bv.cols(), bv.rows(), bv.cols()) =
          av(i, j) * bv;
  EXPECT_TRUE((k.Eval(x) - kv).isZero(1e-12));
}

TEST(PolynomialMatrix, EvalMatchesEntrywise) {
  auto s = PlaneSpace();
  std::mt19937_64 rng(31);
  PolynomialMatrix m(s, 2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = RandomPoly(s, rng);
  const Eigen::VectorXd x = RandomPoint(2, rng);
  const Eigen::MatrixXd val = m.Eval(x);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(val(i, j), m(i, j).Eval(x), 1e-12);
}

}  // namespace
}  // namespace polystab
