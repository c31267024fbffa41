#include <gtest/gtest.h>

#include <random>

#include "bernnet/network.hpp"
#include "test_util.hpp"

using namespace bernnet;

TEST(AffineIbp, IdentityKeepsBox) {
  const BoxBounds box{Vector::Constant(3, -1.0), Vector::Constant(3, 2.0)};
  const auto out = affine_ibp(Matrix::Identity(3, 3), Vector::Zero(3), box);
  EXPECT_EQ(out.lo, box.lo);
  EXPECT_EQ(out.hi, box.hi);
}

TEST(AffineIbp, FrozenExamples) {
  Matrix w(1, 2);
  w << 1, -1;
  const auto out = affine_ibp(w, Vector::Zero(1), BoxBounds{Vector::Zero(2), Vector::Ones(2)});
  EXPECT_EQ(out.lo[0], -1.0);
  EXPECT_EQ(out.hi[0], 1.0);
  const auto s = affine_ibp(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 3.0),
                            BoxBounds{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)});
  EXPECT_EQ(s.lo[0], 1.0);
  EXPECT_EQ(s.hi[0], 5.0);
}

TEST(AffineIbp, RejectsMismatch) {
  EXPECT_THROW(affine_ibp(Matrix::Ones(2, 3), Vector::Zero(2), BoxBounds{Vector::Zero(2), Vector::Ones(2)}),
               std::invalid_argument);
  EXPECT_THROW(affine_ibp(Matrix::Ones(2, 2), Vector::Zero(3), BoxBounds{Vector::Zero(2), Vector::Ones(2)}),
               std::invalid_argument);
}

TEST(AffineIbp, ExactAgainstCornerEnumeration) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int dims = 1; dims <= 10; ++dims) {
    const Matrix w = Matrix::NullaryExpr(4, dims, [&] { return normal(rng); });
    const Vector b = Vector::NullaryExpr(4, [&] { return normal(rng); });
    Vector lo = Vector::NullaryExpr(dims, [&] { return normal(rng); });
    const Vector hi = lo + Vector::NullaryExpr(dims, [&] { return std::abs(normal(rng)); });
    const auto out = affine_ibp(w, b, {lo, hi});
    Vector ref_lo = Vector::Constant(4, INFINITY), ref_hi = Vector::Constant(4, -INFINITY);
    for (long mask = 0; mask < (1L << dims); ++mask) {
      Vector x(dims);
      for (int j = 0; j < dims; ++j) x[j] = (mask >> j) & 1 ? hi[j] : lo[j];
      const Vector y = w * x + b;
      ref_lo = ref_lo.cwiseMin(y);
      ref_hi = ref_hi.cwiseMax(y);
    }
    EXPECT_LT((out.lo - ref_lo).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((out.hi - ref_hi).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ConvIbp, ZeroKernelGivesBias) {
  Conv2dLayer conv{{1, 4, 4}, 2, 3, 1, 1, Matrix::Zero(2, 9), Vector(2)};
  conv.bias << 0.5, -1.5;
  const auto out = conv_ibp(conv, BoxBounds{Vector::Zero(16), Vector::Ones(16)});
  for (int i = 0; i < 16; ++i) {
    EXPECT_EQ(out.lo[i], 0.5);
    EXPECT_EQ(out.hi[i], 0.5);
    EXPECT_EQ(out.lo[16 + i], -1.5);
  }
}

TEST(ConvIbp, UnitKernelKeepsBox) {
  Conv2dLayer conv{{1, 3, 3}, 1, 1, 1, 0, Matrix::Ones(1, 1), Vector::Zero(1)};
  const BoxBounds box{Vector::LinSpaced(9, -1, 1), Vector::LinSpaced(9, 0, 3)};
  const auto out = conv_ibp(conv, box);
  EXPECT_EQ(out.lo, box.lo);
  EXPECT_EQ(out.hi, box.hi);
}

TEST(ConvIbp, MatchesUnrolledAffine) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  for (auto [stride, pad, channels] : {std::tuple{1, 0, 1}, std::tuple{2, 1, 2}, std::tuple{1, 1, 3}}) {
    Conv2dLayer conv{{channels, 5, 5}, 2, 3, stride, pad, Matrix(2, channels * 9), Vector(2)};
    conv.weight = Matrix::NullaryExpr(2, channels * 9, [&] { return normal(rng); });
    conv.bias = Vector::NullaryExpr(2, [&] { return normal(rng); });
    const Matrix unrolled = testutil::unroll(conv);
    Vector lo = Vector::NullaryExpr(conv.in_size(), [&] { return normal(rng); });
    const Vector hi = lo + Vector::NullaryExpr(conv.in_size(), [&] { return std::abs(normal(rng)); });
    Vector bias(conv.out_size());
    const int per = conv.output().height * conv.output().width;
    for (int oc = 0; oc < 2; ++oc) bias.segment(oc * per, per).setConstant(conv.bias[oc]);
    const auto a = conv_ibp(conv, {lo, hi});
    const auto b = affine_ibp(unrolled, bias, {lo, hi});
    EXPECT_LT((a.lo - b.lo).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.hi - b.hi).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BernGlobalEnclosure, WorkedExampleAndConstants) {
  BernLayer layer;
  layer.order = 3;
  layer.coeffs.resize(2, 4);
  layer.coeffs << 1, 2.0 / 3, 2.0 / 3, 2, 0.4, 0.4, 0.4, 0.4;
  layer.stored_lo = Vector::Zero(2);
  layer.stored_hi = Vector::Ones(2);
  const auto out = bern_global_enclosure(layer);
  EXPECT_NEAR(out.lo[0], 2.0 / 3, 1e-15);
  EXPECT_EQ(out.hi[0], 2.0);
  EXPECT_EQ(out.lo[1], out.hi[1]);
}

TEST(BernGlobalEnclosure, RandomNeuronsMinMax) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::vector<BernsteinPoly> polys;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> c(5);
    for (auto& v : c) v = normal(rng);
    polys.emplace_back(c, Interval{-1, 1});
  }
  const auto out = bern_global_enclosure(polys);
  for (int i = 0; i < 3; ++i) {
    const auto c = polys[static_cast<std::size_t>(i)].coeffs();
    EXPECT_EQ(out.lo[i], *std::min_element(c.begin(), c.end()));
    EXPECT_EQ(out.hi[i], *std::max_element(c.begin(), c.end()));
  }
}

TEST(BernRefinedEnclosure, WorkedExample) {
  const std::vector<double> cubic{1, -1, 1, 1};
  const std::vector<BernsteinPoly> polys{from_power_basis(cubic, {0, 1})};
  const auto out = bern_refined_enclosure(polys, BoxBounds{Vector::Constant(1, 0.6), Vector::Constant(1, 0.8)});
  EXPECT_NEAR(out.lo[0], 0.976, 1e-3);
  EXPECT_NEAR(out.hi[0], 1.352, 1e-3);
  const auto full = bern_refined_enclosure(polys, BoxBounds{Vector::Zero(1), Vector::Ones(1)});
  const auto global = bern_global_enclosure(polys);
  EXPECT_NEAR(full.lo[0], global.lo[0], 1e-15);
  EXPECT_NEAR(full.hi[0], global.hi[0], 1e-15);
}

TEST(BernRefinedEnclosure, SoundAndInsideGlobal) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> c(static_cast<std::size_t>(2 + t % 7));
    for (auto& v : c) v = normal(rng);
    const BernsteinPoly p(c, {-2, 3});
    double a = -2 + 5 * unit(rng), b = -2 + 5 * unit(rng);
    if (a > b) std::swap(a, b);
    const std::vector<BernsteinPoly> polys{p};
    const auto out = bern_refined_enclosure(polys, BoxBounds{Vector::Constant(1, a), Vector::Constant(1, b)});
    const auto g = enclosure(p);
    EXPECT_GE(out.lo[0], g.lo - 1e-12);
    EXPECT_LE(out.hi[0], g.hi + 1e-12);
    for (int i = 0; i < 10000; ++i) {
      const double v = eval(p, a + (b - a) * unit(rng));
      ASSERT_GE(v, out.lo[0] - 1e-9);
      ASSERT_LE(v, out.hi[0] + 1e-9);
    }
  }
}

TEST(BernRefinedEnclosure, ClipsAndReportsOutOfDomainQueries) {
  BernLayer layer;
  layer.order = 2;
  layer.coeffs.resize(1, 3);
  layer.coeffs << 0, 1, 4;
  layer.stored_lo = Vector::Zero(1);
  layer.stored_hi = Vector::Ones(1);
  PropagationReport report;
  const auto out = bern_refined_enclosure(layer, BoxBounds{Vector::Constant(1, -5.0), Vector::Constant(1, 0.5)}, &report);
  EXPECT_EQ(report.clipped_neurons, 1u);
  EXPECT_NEAR(out.lo[0], 0.0, 1e-15);
  EXPECT_TRUE(out.finite());
  bern_refined_enclosure(layer, BoxBounds{Vector::Constant(1, 0.0), Vector::Constant(1, 1.0 + 1e-13)}, &report);
  EXPECT_EQ(report.clipped_neurons, 1u);
}

TEST(BernNaiveInterval, ContainsRefinedRange) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (int t = 0; t < 2000; ++t) {
    BernLayer layer;
    layer.order = 1 + t % 10;
    layer.coeffs = RowMatrix::NullaryExpr(1, layer.order + 1, [&] { return normal(rng); });
    layer.stored_lo = Vector::Constant(1, -1.0);
    layer.stored_hi = Vector::Constant(1, 2.0);
    double a = -1 + 3 * unit(rng), b = -1 + 3 * unit(rng);
    if (a > b) std::swap(a, b);
    const BoxBounds in{Vector::Constant(1, a), Vector::Constant(1, b)};
    const auto refined = bern_refined_enclosure(layer, in);
    const auto naive = bern_naive_interval(layer, in);
    EXPECT_LE(naive.lo[0], refined.lo[0] + 1e-12);
    EXPECT_GE(naive.hi[0], refined.hi[0] - 1e-12);
  }
}

TEST(Propagate, SoundOnRandomNetworksBothRegimes) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 30; ++t) {
    const Network net = testutil::random_network(rng, 3);
    const BoxBounds box = testutil::random_subbox(rng, net.input_domain);
    for (auto method : {BoundMethod::bern_ibp, BoundMethod::naive_ibp}) {
      const auto boxes = propagate(net, box, method);
      const auto v = testutil::count_violations(net, boxes, testutil::sample_box(rng, box, 2000));
      EXPECT_EQ(v, 0u) << "network " << t << " " << to_string(method);
    }
  }
}

TEST(Propagate, BernBoxesNestInsideNaive) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const Network net = testutil::random_network(rng, 3);
    const BoxBounds box = testutil::random_subbox(rng, net.input_domain);
    const auto bern = propagate(net, box, BoundMethod::bern_ibp);
    const auto naive = propagate(net, box, BoundMethod::naive_ibp);
    for (std::size_t k = 0; k < bern.size(); ++k) {
      const double slack = 1e-9 * (1.0 + bern[k].hi.cwiseAbs().maxCoeff());
      EXPECT_TRUE(naive[k].contains(bern[k], slack)) << "layer " << k;
    }
  }
}
