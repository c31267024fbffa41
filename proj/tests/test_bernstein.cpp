#include <gtest/gtest.h>

#include <limits>

#include <cmath>
#include <random>
#include <vector>

#include "bernnet/bernstein.hpp"

using namespace bernnet;

namespace {

// x^3 + x^2 - x + 1
const std::vector<double> kCubic{1.0, -1.0, 1.0, 1.0};

double cubic(double x) { return x * x * x + x * x - x + 1.0; }

BernsteinPoly random_poly(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> order(1, 8);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> lo(-5.0, 5.0), width(0.01, 10.0);
  std::vector<double> c(static_cast<std::size_t>(order(rng) + 1));
  for (auto& v : c) v = normal(rng);
  const double l = lo(rng);
  return BernsteinPoly(c, {l, l + width(rng)});
}

double uniform_in(std::mt19937_64& rng, Interval d) {
  return std::uniform_real_distribution<double>(d.lo, d.hi)(rng);
}

}  // namespace

TEST(BasisEval, LeftEndpointOnlyFirstBasis) {
  EXPECT_DOUBLE_EQ(basis_eval(3, 0, {0, 1}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(basis_eval(3, 1, {0, 1}, 0.0), 0.0);
}

TEST(BasisEval, FrozenMidpointValue) { EXPECT_NEAR(basis_eval(3, 1, {0, 1}, 0.5), 0.375, 1e-15); }

TEST(BasisEval, RejectsBadIndexAndPoint) {
  EXPECT_THROW(basis_eval(3, 4, {0, 1}, 0.5), std::domain_error);
  EXPECT_THROW(basis_eval(3, -1, {0, 1}, 0.5), std::domain_error);
  EXPECT_THROW(basis_eval(3, 1, {0, 1}, 1.5), std::domain_error);
}

TEST(BasisEval, PartitionOfUnityAndPositivity) {
  for (int n = 0; n <= 10; ++n)
    for (Interval d : {Interval{0, 1}, Interval{-3, 2}, Interval{0.6, 0.8}})
      for (int i = 0; i <= 100; ++i) {
        const double x = std::min(d.hi, d.lo + d.width() * i / 100.0);
        double sum = 0.0;
        for (int k = 0; k <= n; ++k) {
          const double b = basis_eval(n, k, d, x);
          EXPECT_GE(b, -1e-15);
          EXPECT_LE(b, 1.0 + 1e-15);
          sum += b;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12) << "n=" << n << " x=" << x;
      }
}

TEST(FromPowerBasis, WorkedExampleCoefficients) {
  const auto p = from_power_basis(kCubic, {0, 1});
  ASSERT_EQ(p.degree(), 3);
  EXPECT_NEAR(p.coeff(0), 1.0, 1e-12);
  EXPECT_NEAR(p.coeff(1), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p.coeff(2), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p.coeff(3), 2.0, 1e-12);
}

TEST(FromPowerBasis, ShiftedDomainFrozen) {
  const auto p = from_power_basis(kCubic, {-1, 2});
  const double expected[] = {2.0, 2.0, -4.0, 11.0};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(p.coeff(k), expected[k], 1e-12);
}

TEST(FromPowerBasis, ConstantAndIdentity) {
  const std::vector<double> constant{4.5}, identity{0.0, 1.0};
  EXPECT_EQ(from_power_basis(constant, {0, 1}).coeff(0), 4.5);
  const auto id = from_power_basis(identity, {0, 1});
  EXPECT_NEAR(id.coeff(0), 0.0, 1e-15);
  EXPECT_NEAR(id.coeff(1), 1.0, 1e-15);
}

TEST(FromPowerBasis, MatchesPowerSeriesOnRandomDomains) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(static_cast<std::size_t>(trial % 7 + 1));
    for (auto& v : a) v = normal(rng);
    const double l = normal(rng);
    const Interval d{l, l + 0.5 + std::abs(normal(rng))};
    const auto p = from_power_basis(a, d);
    for (int i = 0; i <= 20; ++i) {
      const double x = std::min(d.hi, d.lo + d.width() * i / 20.0);
      double ref = 0.0;
      for (std::size_t j = a.size(); j-- > 0;) ref = ref * x + a[j];
      EXPECT_NEAR(eval(p, x), ref, 1e-9 * (1.0 + std::abs(ref)));
    }
  }
}

TEST(Eval, FrozenCubicMidpoint) {
  EXPECT_NEAR(eval(from_power_basis(kCubic, {0, 1}), 0.5), 0.875, 1e-15);
}

TEST(Eval, ConstantPolynomial) {
  const BernsteinPoly p({5, 5, 5, 5, 5}, {-2, 7});
  for (double x : {-2.0, 0.0, 3.3, 7.0}) EXPECT_DOUBLE_EQ(eval(p, x), 5.0);
}

TEST(Eval, EndpointInterpolation) {
  const BernsteinPoly p({1, 2.0 / 3, 2.0 / 3, 2}, {0, 1});
  EXPECT_EQ(eval(p, 0.0), 1.0);
  EXPECT_EQ(eval(p, 1.0), 2.0);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const auto q = random_poly(rng);
    EXPECT_NEAR(eval(q, q.domain().lo), q.coeff(0), 1e-12);
    EXPECT_NEAR(eval(q, q.domain().hi), q.coeff(q.degree()), 1e-12);
  }
}

TEST(Eval, RejectsOutsideDomain) {
  EXPECT_THROW(eval(BernsteinPoly({1, 2}, {0, 1}), 1.01), std::domain_error);
}

TEST(Eval, StableAtHighOrder) {
  // Identity function on [0, 1] at order 60: c_k = k / n.
  std::vector<double> c(61);
  for (int k = 0; k <= 60; ++k) c[static_cast<std::size_t>(k)] = k / 60.0;
  const BernsteinPoly p(c, {0, 1});
  for (double x : {0.0, 0.123, 0.5, 0.999}) EXPECT_NEAR(eval(p, x), x, 1e-13);
}

TEST(Enclosure, WorkedExamples) {
  const auto e = enclosure(BernsteinPoly({1, 2.0 / 3, 2.0 / 3, 2}, {0, 1}));
  EXPECT_NEAR(e.lo, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(e.hi, 2.0);
  const auto r = enclosure(BernsteinPoly({1.352, 1.184, 1.0613, 0.976}, {0.6, 0.8}));
  EXPECT_EQ(r.lo, 0.976);
  EXPECT_EQ(r.hi, 1.352);
  const auto c = enclosure(BernsteinPoly({-0.25, -0.25}, {0, 1}));
  EXPECT_EQ(c.lo, -0.25);
  EXPECT_EQ(c.hi, -0.25);
}

TEST(Enclosure, SoundOnRandomPolynomials) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const auto p = random_poly(rng);
    const auto e = enclosure(p);
    for (int i = 0; i < 1000; ++i) {
      const double v = eval(p, uniform_in(rng, p.domain()));
      ASSERT_GE(v, e.lo - 1e-9);
      ASSERT_LE(v, e.hi + 1e-9);
    }
  }
}

TEST(Subdivide, EndpointConventions) {
  const BernsteinPoly p({1, -2, 3, 0.5}, {0, 2});
  const auto [l0, r0] = subdivide(p, 0.0);
  for (int k = 0; k <= 3; ++k) {
    EXPECT_DOUBLE_EQ(l0.coeff(k), 1.0);
    EXPECT_DOUBLE_EQ(r0.coeff(k), p.coeff(k));
  }
  const auto [l1, r1] = subdivide(p, 2.0);
  for (int k = 0; k <= 3; ++k) {
    EXPECT_DOUBLE_EQ(r1.coeff(k), 0.5);
    EXPECT_DOUBLE_EQ(l1.coeff(k), p.coeff(k));
  }
  EXPECT_THROW(subdivide(p, 2.5), std::domain_error);
}

TEST(Subdivide, TriangleEdges) {
  const BernsteinPoly p({1, 2.0 / 3, 2.0 / 3, 2}, {0, 1});
  const auto [left, right] = subdivide(p, 0.5);
  // Frozen from the rational triangle at tau = 1/2.
  const double l_ref[] = {1.0, 5.0 / 6, 3.0 / 4, 7.0 / 8};
  const double r_ref[] = {7.0 / 8, 1.0, 4.0 / 3, 2.0};
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(left.coeff(k), l_ref[k], 1e-15);
    EXPECT_NEAR(right.coeff(k), r_ref[k], 1e-15);
  }
  EXPECT_EQ(left.domain().hi, 0.5);
  EXPECT_EQ(right.domain().lo, 0.5);
}

TEST(Restrict, WorkedExampleOnSubinterval) {
  const auto p = from_power_basis(kCubic, {0, 1});
  const auto r = restrict_to(p, {0.6, 0.8});
  // Listed value order (1.352, 1.184, 1.0613, 0.976) runs from c_3 down to c_0.
  const double listed[] = {1.352, 1.184, 1.0613, 0.976};
  for (int i = 0; i <= 3; ++i) EXPECT_NEAR(r.coeff(i), listed[3 - i], 1e-3);
  // Exact rationals 122/125, 398/375, 148/125, 169/125.
  EXPECT_NEAR(r.coeff(0), 122.0 / 125, 1e-14);
  EXPECT_NEAR(r.coeff(1), 398.0 / 375, 1e-14);
  EXPECT_NEAR(r.coeff(2), 148.0 / 125, 1e-14);
  EXPECT_NEAR(r.coeff(3), 169.0 / 125, 1e-14);
  EXPECT_NEAR(r.coeff(0), cubic(0.6), 1e-14);
  EXPECT_NEAR(r.coeff(3), cubic(0.8), 1e-14);
  const auto e = enclosure(r);
  EXPECT_NEAR(e.lo, 0.976, 1e-3);
  EXPECT_NEAR(e.hi, 1.352, 1e-3);
}

TEST(Restrict, FullDomainIsIdentity) {
  const BernsteinPoly p({0.3, -1, 2, 4, -0.5}, {-1, 3});
  const auto r = restrict_to(p, p.domain());
  for (int k = 0; k <= 4; ++k) EXPECT_NEAR(r.coeff(k), p.coeff(k), 1e-14);
}

TEST(Restrict, PointIntervalCollapsesToValue) {
  const BernsteinPoly p({0.3, -1, 2, 4, -0.5}, {-1, 3});
  for (double a : {-1.0, 0.25, 1.7, 3.0}) {
    const auto r = restrict_to(p, {a, a});
    EXPECT_GE(r.domain().width(), kMinDomainWidth * 0.5);
    for (int k = 0; k <= 4; ++k) EXPECT_NEAR(r.coeff(k), eval(p, std::clamp(a, -1.0, 3.0)), 1e-9);
  }
}

TEST(Restrict, RejectsEscapingInterval) {
  EXPECT_THROW(restrict_to(BernsteinPoly({1, 2}, {0, 1}), {0.5, 1.5}), std::domain_error);
}

TEST(Restrict, ConsistentWithOriginalAndRefinesEnclosure) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 500; ++t) {
    const auto p = random_poly(rng);
    double a = uniform_in(rng, p.domain()), b = uniform_in(rng, p.domain());
    if (a > b) std::swap(a, b);
    const auto r = restrict_to(p, {a, b});
    for (int i = 0; i < 100; ++i) {
      const double x = uniform_in(rng, r.domain());
      if (!p.domain().contains(x)) continue;
      ASSERT_NEAR(eval(r, x), eval(p, x), 1e-9 * (1 + std::abs(eval(p, x))));
    }
    const auto inner = enclosure(r), outer = enclosure(p);
    EXPECT_GE(inner.lo, outer.lo - 1e-12);
    EXPECT_LE(inner.hi, outer.hi + 1e-12);
  }
}

TEST(Derivative, ConstantGivesZero) {
  const auto d = derivative(BernsteinPoly({2, 2, 2}, {0, 1}));
  for (double c : d.coeffs()) EXPECT_EQ(c, 0.0);
  const auto d0 = derivative(BernsteinPoly({7}, {0, 1}));
  EXPECT_EQ(d0.degree(), 0);
  EXPECT_EQ(d0.coeff(0), 0.0);
}

TEST(Derivative, FrozenValues) {
  EXPECT_NEAR(eval(derivative(from_power_basis(kCubic, {0, 1})), 0.5), 0.75, 1e-14);
  const auto lin = derivative(BernsteinPoly({0, 1}, {0, 1}));
  EXPECT_EQ(lin.degree(), 0);
  EXPECT_NEAR(lin.coeff(0), 1.0, 1e-15);
  // Same cubic represented on [-1, 2]: 3x^2 + 2x - 1 at 1.5 is 8.75.
  EXPECT_NEAR(eval(derivative(from_power_basis(kCubic, {-1, 2})), 1.5), 8.75, 1e-12);
}

TEST(Derivative, MatchesCentralDifferences) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    const auto p = random_poly(rng);
    const auto d = derivative(p);
    const double w = p.domain().width(), h = 1e-6 * w;
    for (int i = 0; i < 20; ++i) {
      const double x = std::uniform_real_distribution<double>(p.domain().lo + 2 * h, p.domain().hi - 2 * h)(rng);
      const double fd = (eval(p, x + h) - eval(p, x - h)) / (2 * h);
      const double an = eval(d, x);
      const double scale = std::max(std::abs(an), derivative_sup_bound(p) * 1e-3);
      EXPECT_LT(std::abs(fd - an) / scale, 1e-5) << "x=" << x << " an=" << an << " fd=" << fd;
    }
  }
}

TEST(DerivativeSupBound, Values) {
  EXPECT_DOUBLE_EQ(derivative_sup_bound(BernsteinPoly({1, 2.0 / 3, 2.0 / 3, 2}, {0, 1})), 12.0);
  EXPECT_EQ(derivative_sup_bound(BernsteinPoly({0, 0, 0}, {0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(derivative_sup_bound(BernsteinPoly({3, 3}, {0, 1})), 6.0);
  EXPECT_EQ(derivative_sup_bound(BernsteinPoly({3}, {0, 1})), 0.0);
}

TEST(DerivativeSupBound, BoundsDerivativeOnDenseGrid) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 300; ++t) {
    const auto p = random_poly(rng);
    const auto d = derivative(p);
    const double bound = derivative_sup_bound(p);
    double cmax = 0.0;
    for (double c : p.coeffs()) cmax = std::max(cmax, std::abs(c));
    for (int i = 0; i <= 1000; ++i) {
      const double x = std::min(p.domain().hi, p.domain().lo + p.domain().width() * i / 1000.0);
      const double dx = eval(d, x);
      EXPECT_LE(std::abs(dx), bound + 1e-9);
      // Normalized coordinate: |dP/dtau| <= 2 n max|c|.
      EXPECT_LE(std::abs(dx) * p.domain().width(), 2.0 * p.degree() * cmax + 1e-9);
    }
  }
}

TEST(BernsteinPoly, DegenerateDomainIsWidened) {
  const BernsteinPoly p({1, 2}, {0.5, 0.5});
  EXPECT_NEAR(p.domain().width(), kMinDomainWidth, 4.0 * std::numeric_limits<double>::epsilon());
  EXPECT_NEAR(p.domain().lo + p.domain().hi, 1.0, 1e-15);
}

TEST(BernsteinPoly, RejectsInvalidInput) {
  EXPECT_THROW(BernsteinPoly({}, {0, 1}), std::invalid_argument);
  EXPECT_THROW(BernsteinPoly({1, NAN}, {0, 1}), std::invalid_argument);
  EXPECT_THROW(BernsteinPoly({1}, {2, 1}), std::invalid_argument);
}

TEST(Binomial, SmallAndLarge) {
  EXPECT_EQ(binomial(5, 2), 10.0);
  EXPECT_EQ(binomial(10, 0), 1.0);
  EXPECT_NEAR(binomial(64, 32) / 1832624140942590534.0, 1.0, 1e-12);
}
