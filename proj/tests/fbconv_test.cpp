#include <gtest/gtest.h>

#include <cmath>

#include "ipr/fbconv.hpp"
#include "ipr/init.hpp"

using namespace ipr;

namespace {

FilterBasis standard_basis(std::size_t k) {
  FilterBasis b;
  for (std::size_t n = 0; n < k * k; ++n) {
    Tensor e({k, k});
    e[n] = 1.0;
    b.elements.push_back(std::move(e));
  }
  return b;
}

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST(Conv2d, HandComputedExample) {
  // 1x1 output: plain dot product of kernel and input patch
  Tensor h = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor x = Tensor::from_data({1, 2, 2}, {5, 6, 7, 8});
  const Tensor y = conv2d(h, x, {1, 0});
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y[0], 1 * 5 + 2 * 6 + 3 * 7 + 4 * 8);
}

TEST(Conv2d, CrossCorrelationOrientation) {
  // kernel [[0,1],[0,0]] picks the input value one column right
  Tensor h = Tensor::from_data({1, 1, 2, 2}, {0, 1, 0, 0});
  Tensor x = Tensor::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor y = conv2d(h, x, {1, 0});
  ASSERT_EQ(y.extent(1), 1u);
  ASSERT_EQ(y.extent(2), 2u);
  EXPECT_DOUBLE_EQ(y(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(y(0, 0, 1), 3.0);
}

TEST(Conv2d, ZeroPaddingBorders) {
  Tensor h = Tensor::from_data({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = conv2d(h, x, {1, 1});
  ASSERT_EQ(y.extent(1), 2u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_DOUBLE_EQ(y(0, i, j), x(0, i, j));
}

TEST(Conv2d, NonIntegralOutputRejected) {
  Tensor h({1, 1, 2, 2});
  Tensor x({1, 5, 5});
  EXPECT_THROW(conv2d(h, x, {2, 0}), std::invalid_argument);
}

TEST(FbForward, MatchesEffectiveFilterConv) {
  Rng rng(11);
  InitResult init = init_onb(rng, 3, 2, 3);
  Tensor x = random_tensor(rng, {3, 5, 5});
  PruningMask mask = PruningMask::ones(init.coeffs.values.shape());
  mask.bits(0, 1, 4) = 0.0;
  mask.bits(1, 2, 0) = 0.0;
  FBCoefficients masked = init.coeffs;
  for (std::size_t i = 0; i < masked.values.size(); ++i)
    if (mask.bits[i] == 0.0) masked.values[i] = 0.0;

  const FBForwardResult r = fb_forward(init.basis, init.coeffs, mask, x, {1, 1});
  const Tensor heff = to_spatial(init.basis, masked);
  const Tensor y = conv2d(heff, x, {1, 1});
  ASSERT_TRUE(r.y.same_shape(y));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(r.y[i], y[i], 1e-12);
}

TEST(FbForward, RejectsIncongruentMask) {
  Rng rng(1);
  InitResult init = init_standard(rng, 3, 1, 1);
  Tensor x({1, 4, 4});
  PruningMask bad = PruningMask::ones({1, 1, 8});
  EXPECT_THROW(fb_forward(init.basis, init.coeffs, bad, x, {1, 0}),
               std::invalid_argument);
}

TEST(FbBackward, RequiresZCache) {
  Rng rng(1);
  InitResult init = init_standard(rng, 3, 1, 1);
  Tensor x({1, 4, 4});
  PruningMask mask = PruningMask::ones(init.coeffs.values.shape());
  Tensor dy({1, 2, 2});
  EXPECT_THROW(fb_backward(init.basis, init.coeffs, mask, x, Tensor(), dy, {1, 0}),
               std::logic_error);
}

TEST(FbBackward, FiniteDifferenceLambdaAndBasis) {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t co = 1 + rng.uniform_index(2);
    const std::size_t ci = 1 + rng.uniform_index(2);
    const std::size_t k = 2 + rng.uniform_index(2);
    InitResult init = init_random_fd(rng, k * k, k, co, ci);
    Tensor x = random_tensor(rng, {ci, k + 2, k + 2});
    PruningMask mask = PruningMask::ones(init.coeffs.values.shape());
    if (mask.bits.size() > 1) mask.bits[rng.uniform_index(mask.bits.size())] = 0.0;
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
      if (mask.bits[i] == 0.0) init.coeffs.values[i] = 0.0;
    const ConvArgs args{1, 1};
    Tensor dy = random_tensor(
        rng, {co, conv_out_extent(x.extent(1), k, args),
              conv_out_extent(x.extent(2), k, args)});

    auto loss = [&](const FilterBasis& basis, const FBCoefficients& coeffs,
                    const Tensor& input) {
      const FBForwardResult r = fb_forward(basis, coeffs, mask, input, args);
      double s = 0.0;
      for (std::size_t i = 0; i < r.y.size(); ++i) s += r.y[i] * dy[i];
      return s;
    };

    const FBForwardResult fwd = fb_forward(init.basis, init.coeffs, mask, x, args);
    const FBGrads g = fb_backward(init.basis, init.coeffs, mask, x, fwd.z_cache,
                                  dy, args);
    const double eps = 1e-6;

    for (std::size_t i = 0; i < init.coeffs.values.size(); ++i) {
      FBCoefficients cp = init.coeffs, cm = init.coeffs;
      cp.values[i] += eps;
      cm.values[i] -= eps;
      const double fd = (loss(init.basis, cp, x) - loss(init.basis, cm, x)) /
                        (2 * eps);
      if (mask.bits[i] == 0.0)
        EXPECT_EQ(g.dlambda[i], 0.0);
      else
        EXPECT_NEAR(g.dlambda[i], fd, 1e-5 * (1.0 + std::abs(fd)));
    }
    for (std::size_t n = 0; n < init.basis.count(); ++n)
      for (std::size_t i = 0; i < init.basis.elements[n].size(); ++i) {
        FilterBasis bp = init.basis, bm = init.basis;
        bp.elements[n][i] += eps;
        bm.elements[n][i] -= eps;
        const double fd = (loss(bp, init.coeffs, x) - loss(bm, init.coeffs, x)) /
                          (2 * eps);
        EXPECT_NEAR(g.dg[n][i], fd, 1e-5 * (1.0 + std::abs(fd)));
      }
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor xp = x, xm = x;
      xp[i] += eps;
      xm[i] -= eps;
      const double fd = (loss(init.basis, init.coeffs, xp) -
                         loss(init.basis, init.coeffs, xm)) /
                        (2 * eps);
      EXPECT_NEAR(g.dx[i], fd, 1e-5 * (1.0 + std::abs(fd)));
    }
  }
}

TEST(Transforms, StandardBasisIsIdentity) {
  const FilterBasis b = standard_basis(3);
  const BasisTransform t = basis_transform(b);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_DOUBLE_EQ(t.psi(i, j), i == j ? 1.0 : 0.0);
      EXPECT_DOUBLE_EQ(t.psi_inv(i, j), i == j ? 1.0 : 0.0);
    }
  EXPECT_NEAR(t.cond, 1.0, 1e-9);
}

TEST(Transforms, RoundTripSpatialInterspace) {
  Rng rng(31);
  InitResult init = init_onb(rng, 3, 2, 2);
  const Tensor h = to_spatial(init.basis, init.coeffs);
  const FBCoefficients back = to_interspace(init.basis, h);
  for (std::size_t i = 0; i < back.values.size(); ++i)
    EXPECT_NEAR(back.values[i], init.coeffs.values[i], 1e-10);
}

TEST(Transforms, GradientRule) {
  // dL/dlambda = Psi^T dL/dphi, validated against the chain rule numerically
  Rng rng(37);
  InitResult init = init_onb(rng, 2, 1, 1);
  const BasisTransform t = basis_transform(init.basis);
  Tensor dphi({4});
  for (std::size_t i = 0; i < 4; ++i) dphi[i] = rng.normal();
  const Tensor dlam = transform_gradient(t.psi, dphi);
  // pick lambda direction e_m: d phi / d lambda_m = psi column m
  for (std::size_t m = 0; m < 4; ++m) {
    double expect = 0.0;
    for (std::size_t q = 0; q < 4; ++q) expect += t.psi(q, m) * dphi[q];
    EXPECT_NEAR(dlam[m], expect, 1e-12);
  }
}

TEST(Transforms, HessianRule) {
  Rng rng(41);
  InitResult init = init_onb(rng, 2, 1, 1);
  const BasisTransform t = basis_transform(init.basis);
  Tensor hf({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i; j < 4; ++j) hf(i, j) = hf(j, i) = rng.normal();
  const Tensor hb = transform_hessian(t.psi_inv, hf);
  // quadratic form invariance: with H^B = Psi^-T H^F Psi^-1 and phi = Psi
  // lambda, phi^T H^B phi = lambda^T H^F lambda
  Tensor lam({4});
  for (std::size_t i = 0; i < 4; ++i) lam[i] = rng.normal();
  const Tensor phi = mat_vec(t.psi, lam.values());
  double qb = 0.0, qf = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      qb += phi[i] * hb(i, j) * phi[j];
      qf += lam[i] * hf(i, j) * lam[j];
    }
  EXPECT_NEAR(qb, qf, 1e-9 * (1.0 + std::abs(qf)));
}

TEST(Transforms, DegenerateBasisRejected) {
  FilterBasis b = standard_basis(2);
  b.elements[3] = b.elements[2];  // linearly dependent
  EXPECT_THROW(basis_transform(b), std::runtime_error);
}

TEST(GradientBounds, CauchySchwarzHolds) {
  Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    InitResult init = init_random_fd(rng, 9, 3, 2, 2);
    Tensor dh({2, 2, 3, 3});
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = rng.normal();
    const GradientBounds gb = gradient_bound_check(init.basis, init.coeffs, dh);
    EXPECT_LE(gb.lambda_grad_norm, gb.lambda_grad_bound * (1 + 1e-12));
    EXPECT_LE(gb.basis_grad_norm, gb.basis_grad_bound * (1 + 1e-12));
  }
}

TEST(PruningMask, SparsityAndPopcount) {
  PruningMask m = PruningMask::ones({2, 2});
  EXPECT_EQ(m.popcount(), 4u);
  EXPECT_DOUBLE_EQ(m.sparsity(), 0.0);
  m.bits[0] = 0.0;
  m.bits[3] = 0.0;
  EXPECT_EQ(m.popcount(), 2u);
  EXPECT_DOUBLE_EQ(m.sparsity(), 0.5);
}
