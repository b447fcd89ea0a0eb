#include <gtest/gtest.h>

#include <cmath>

#include "ipr/costs.hpp"
#include "ipr/init.hpp"
#include "ipr/scores.hpp"

using namespace ipr;

TEST(FlopsForward, FormulaValues) {
  // SP: 2*co*ci*K^2*d1*d2*(1-p)
  EXPECT_DOUBLE_EQ(flops_forward(4, 2, 3, 6, 6, 0.0, ReprMode::SP),
                   2.0 * 4 * 2 * 9 * 36);
  EXPECT_DOUBLE_EQ(flops_forward(4, 2, 3, 6, 6, 0.5, ReprMode::SP),
                   2.0 * 4 * 2 * 9 * 36 * 0.5);
  // IP adds 2*ci*K^4*d1*d2 independent of p
  const double overhead = 2.0 * 2 * 81 * 36;
  EXPECT_DOUBLE_EQ(flops_forward(4, 2, 3, 6, 6, 0.5, ReprMode::IP),
                   2.0 * 4 * 2 * 9 * 36 * 0.5 + overhead);
  for (double p : {0.0, 0.25, 0.5, 0.9, 1.0})
    EXPECT_DOUBLE_EQ(flops_forward(4, 2, 3, 6, 6, p, ReprMode::IP) -
                         flops_forward(4, 2, 3, 6, 6, p, ReprMode::SP),
                     overhead);
}

TEST(FlopsBackward, ComponentFormulas) {
  const BackwardFlops sp = flops_backward(4, 2, 3, 6, 6, 8, 8, 0.5, ReprMode::SP);
  EXPECT_DOUBLE_EQ(sp.input_grad, 2.0 * 4 * 2 * 9 * 64 * 0.5);
  EXPECT_DOUBLE_EQ(sp.coeff_grad, 2.0 * 4 * 2 * 9 * 36 * 0.5);
  EXPECT_DOUBLE_EQ(sp.basis_grad, 0.0);
  const BackwardFlops ip = flops_backward(4, 2, 3, 6, 6, 8, 8, 0.5, ReprMode::IP);
  EXPECT_DOUBLE_EQ(ip.input_grad, 2.0 * 4 * 2 * 9 * 64 * 0.5 + 2.0 * 4 * 81 * 64);
  EXPECT_DOUBLE_EQ(ip.basis_grad, 2.0 * 4 * 2 * 9 * (36.0 + 0.5 * 9));
}

TEST(FlopsInstrumentation, MatchesFormulaOnRandomConfigs) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t co = 1 + rng.uniform_index(3);
    const std::size_t ci = 1 + rng.uniform_index(3);
    const std::size_t k = 2 + rng.uniform_index(2);
    const std::size_t in = k + 1 + rng.uniform_index(3);
    InitResult init = init_onb(rng, k, co, ci);
    Tensor x({ci, in, in});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    PruningMask mask = PruningMask::ones(init.coeffs.values.shape());
    // random mask; formula uses the exact popcount sparsity
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
      if (rng.uniform() < 0.4) mask.bits[i] = 0.0;
    // keep masked coefficients consistent for the SP path
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
      if (mask.bits[i] == 0.0) init.coeffs.values[i] = 0.0;
    for (ReprMode mode : {ReprMode::SP, ReprMode::IP}) {
      if (mode == ReprMode::SP) {
        // the SP path counts zero-skipped spatial weights; build a directly
        // masked spatial tensor with the standard basis
        Tensor h({co, ci, k, k});
        PruningMask hmask = PruningMask::ones(h.shape());
        for (std::size_t i = 0; i < h.size(); ++i) {
          h[i] = rng.normal();
          if (rng.uniform() < 0.4) {
            h[i] = 0.0;
            hmask.bits[i] = 0.0;
          }
        }
        FilterBasis sb;
        for (std::size_t n = 0; n < k * k; ++n) {
          Tensor e({k, k});
          e[n] = 1.0;
          sb.elements.push_back(std::move(e));
        }
        FBCoefficients c{Tensor::from_data({co, ci, k * k}, h.values())};
        const FlopCheck chk = verify_flops_by_instrumentation(sb, c, hmask, x, mode);
        EXPECT_EQ(std::llround(chk.model_count), static_cast<long long>(chk.measured_count));
      } else {
        const FlopCheck chk =
            verify_flops_by_instrumentation(init.basis, init.coeffs, mask, x, mode);
        EXPECT_EQ(std::llround(chk.model_count), static_cast<long long>(chk.measured_count));
      }
    }
  }
}

TEST(PruningRateEq7, SpAndIpNumerators) {
  ModelState sp = build(minivgg_spec(), Mode::SP, Sharing::Fine, Rng(2));
  mask_global(sp, score_magnitude(sp), 0.9);
  const PruningRates rs = pruning_rate(sp);
  const std::size_t d = prunable_param_count(sp);
  std::size_t kept = 0;
  for (std::size_t li : prunable_layers(sp)) kept += sp.layers[li].mask.popcount();
  EXPECT_NEAR(rs.sp, 1.0 - static_cast<double>(kept) / d, 1e-15);

  ModelState ip = build(minivgg_spec(), Mode::IP, Sharing::Fine, Rng(2));
  mask_global(ip, score_magnitude(ip), 0.9);
  const PruningRates ri = pruning_rate(ip);
  std::size_t basis_params = 0;
  for (const auto& [id, basis] : ip.bases)
    basis_params += basis.count() * basis.elements.front().size();
  std::size_t kept_ip = 0;
  for (std::size_t li : prunable_layers(ip)) kept_ip += ip.layers[li].mask.popcount();
  EXPECT_NEAR(ri.ip, 1.0 - static_cast<double>(kept_ip + basis_params) / d, 1e-15);
  EXPECT_LT(ri.ip, ri.sp);  // bases count against IP
}

TEST(PruningRateEq7, WithinOneOverDOfTarget) {
  ModelState m = build(minivgg_spec(), Mode::SP, Sharing::Fine, Rng(3));
  const std::size_t d = prunable_param_count(m);
  for (double p : {0.5, 0.9, 0.95}) {
    mask_global(m, score_magnitude(m), p);
    EXPECT_NEAR(pruning_rate(m).sp, p, 1.0 / d + 1e-12);
  }
}

TEST(ModelForwardFlops, DenseMiniVgg) {
  ModelState m = build(minivgg_spec(), Mode::SP, Sharing::Fine, Rng(4));
  // conv1: 2*8*1*9*64, conv2: 2*16*8*9*16, linear: 2*4*64
  const double expect = 2.0 * 8 * 1 * 9 * 64 + 2.0 * 16 * 8 * 9 * 16 + 2.0 * 4 * 64;
  EXPECT_DOUBLE_EQ(model_forward_flops(m), expect);
}

TEST(MemReport, EntropyValues) {
  EXPECT_DOUBLE_EQ(mask_entropy_bits(0.5), 1.0);
  EXPECT_DOUBLE_EQ(mask_entropy_bits(0.0), 0.0);
  EXPECT_DOUBLE_EQ(mask_entropy_bits(1.0), 0.0);
  const MemoryReport half = mem_report(1000, 0.5);
  EXPECT_DOUBLE_EQ(half.entropy_ratio, 1.0 / 32.0 + 0.5);  // 0.53125
  EXPECT_DOUBLE_EQ(half.entropy_ratio, 0.53125);
  const MemoryReport r9 = mem_report(1000, 0.9);
  EXPECT_NEAR(r9.entropy_ratio, 0.11466, 1e-5);
}

TEST(MemReport, CsrBytes) {
  const MemoryReport r = mem_report(100, 0.9, 10);
  EXPECT_DOUBLE_EQ(r.raw_bytes, 400.0);
  EXPECT_DOUBLE_EQ(r.csr_bytes, 10.0 * 8.0 + 40.0);
  EXPECT_THROW(mem_report(10, 1.5), std::invalid_argument);
}
