#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ipr/fbconv.hpp"
#include "ipr/model.hpp"

namespace ipr {

enum class ReprMode { SP, IP };

// FLOP formulas for a single convolutional layer (one multiply or one add
// counts as one FLOP).

// SP: 2*co*ci*K^2*d1*d2*(1-p); IP adds the dense basis-application stage
// 2*ci*K^4*d1*d2.
inline double flops_forward(std::size_t co, std::size_t ci, std::size_t k,
                            std::size_t d1, std::size_t d2, double p,
                            ReprMode mode) {
  const double dense = 2.0 * co * ci * k * k * d1 * d2;
  double f = dense * (1.0 - p);
  if (mode == ReprMode::IP) f += 2.0 * ci * k * k * k * k * d1 * d2;
  return f;
}

struct BackwardFlops {
  double input_grad = 0.0;   // dL/dX
  double coeff_grad = 0.0;   // dL/dh or dL/dlambda
  double basis_grad = 0.0;   // dL/dg, IP only
  double total() const { return input_grad + coeff_grad + basis_grad; }
};

inline BackwardFlops flops_backward(std::size_t co, std::size_t ci, std::size_t k,
                                    std::size_t d1, std::size_t d2, std::size_t h,
                                    std::size_t w, double p, ReprMode mode) {
  BackwardFlops f;
  f.input_grad = 2.0 * co * ci * k * k * h * w * (1.0 - p);
  if (mode == ReprMode::IP) f.input_grad += 2.0 * co * k * k * k * k * h * w;
  f.coeff_grad = 2.0 * co * ci * k * k * d1 * d2 * (1.0 - p);
  if (mode == ReprMode::IP)
    f.basis_grad = 2.0 * co * ci * k * k *
                   (static_cast<double>(d1 * d2) + (1.0 - p) * k * k);
  return f;
}

// Runs the convolution kernels with a multiply-add counter and returns
// (formula count, measured count). Stride 1, no padding; p is taken from the
// mask popcount so the formula is exact.
struct FlopCheck {
  double model_count = 0.0;
  std::uint64_t measured_count = 0;
};

inline FlopCheck verify_flops_by_instrumentation(const FilterBasis& basis,
                                                 const FBCoefficients& coeffs,
                                                 const PruningMask& mask,
                                                 const Tensor& x, ReprMode mode) {
  const std::size_t co = coeffs.co(), ci = coeffs.ci();
  const std::size_t k = basis.kernel_size();
  const ConvArgs args{1, 0};
  const std::size_t d1 = conv_out_extent(x.extent(1), k, args);
  const std::size_t d2 = conv_out_extent(x.extent(2), k, args);
  const double p = mask.sparsity();

  FlopCheck out;
  out.model_count = flops_forward(co, ci, k, d1, d2, p, mode);
  if (mode == ReprMode::IP) {
    fb_forward(basis, coeffs, mask, x, args, &out.measured_count);
  } else {
    Tensor h = to_spatial(basis, coeffs);
    for (std::size_t i = 0; i < h.size(); ++i)
      if (mask.bits[i] == 0.0) h[i] = 0.0;
    conv2d(h, x, args, &out.measured_count);
  }
  return out;
}

// Eq.-(7)-style pruning rates for a whole model. D is the dense count of
// prunable coefficients (conv + linear weights, without bases); the IP
// numerator additionally counts the basis parameters as non-zero.
struct PruningRates {
  double sp = 0.0;
  double ip = 0.0;
};

inline PruningRates pruning_rate(const ModelState& m) {
  std::size_t dense = 0, nonzero = 0;
  for (const Layer& layer : m.layers) {
    if (!layer.has_params() || !layer.spec.prunable) continue;
    const Tensor& p = layer.param();
    dense += p.size();
    if (layer.mask.bits.size())
      nonzero += layer.mask.popcount();
    else
      nonzero += p.size();
  }
  std::size_t basis_params = 0;
  for (const auto& [id, basis] : m.bases)
    basis_params += basis.count() * basis.elements.front().size();
  PruningRates r;
  if (dense == 0) return r;
  r.sp = 1.0 - static_cast<double>(nonzero) / static_cast<double>(dense);
  r.ip = 1.0 - static_cast<double>(nonzero + basis_params) /
                   static_cast<double>(dense);
  return r;
}

// Forward FLOPs of the whole model at its current masks (conv and linear
// layers; elementwise layers are not counted).
inline double model_forward_flops(const ModelState& m) {
  double total = 0.0;
  std::size_t c = m.spec.input_channels, h = m.spec.input_h, w = m.spec.input_w;
  std::size_t features = 0;
  for (const Layer& layer : m.layers) {
    const LayerSpec& ls = layer.spec;
    switch (ls.kind) {
      case LayerKind::Conv: {
        const ConvArgs args{ls.stride, ls.padding};
        const std::size_t d1 = conv_out_extent(h, ls.kernel, args);
        const std::size_t d2 = conv_out_extent(w, ls.kernel, args);
        const double p = layer.mask.bits.size() ? layer.mask.sparsity() : 0.0;
        total += flops_forward(ls.out_channels, ls.in_channels, ls.kernel, d1, d2,
                               p, layer.interspace ? ReprMode::IP : ReprMode::SP);
        c = ls.out_channels;
        h = d1;
        w = d2;
        break;
      }
      case LayerKind::MaxPool:
        h /= ls.pool;
        w /= ls.pool;
        break;
      case LayerKind::Flatten:
        features = c * h * w;
        break;
      case LayerKind::Linear: {
        const double p = layer.mask.bits.size() ? layer.mask.sparsity() : 0.0;
        total += 2.0 * ls.out_features * ls.in_features * (1.0 - p);
        features = ls.out_features;
        break;
      }
      case LayerKind::Relu:
        break;
    }
  }
  (void)features;
  return total;
}

// Ideal memory model. S is the entropy of the mask in bits per entry
// (0 log 0 = 0); values are 32-bit floats as in the measured tables.
struct MemoryReport {
  double raw_bytes = 0.0;
  double csr_bytes = 0.0;
  double entropy_mask_bytes = 0.0;
  double mask_entropy_bits = 0.0;  // S
  double entropy_ratio = 0.0;      // S/32 + (1-p)
};

inline double mask_entropy_bits(double p) {
  auto term = [](double q) { return q > 0.0 ? -q * std::log2(q) : 0.0; };
  return term(p) + term(1.0 - p);
}

inline MemoryReport mem_report(std::size_t d, double p, std::size_t rows = 1) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mem_report: p outside [0,1]");
  MemoryReport r;
  const double nnz = (1.0 - p) * static_cast<double>(d);
  r.raw_bytes = 4.0 * static_cast<double>(d);
  // 32-bit values, 32-bit column indices per nonzero, 32-bit per-row counters
  r.csr_bytes = nnz * 8.0 + 4.0 * static_cast<double>(rows);
  r.mask_entropy_bits = mask_entropy_bits(p);
  r.entropy_ratio = r.mask_entropy_bits / 32.0 + (1.0 - p);
  r.entropy_mask_bytes =
      static_cast<double>(d) * (r.mask_entropy_bits + (1.0 - p) * 32.0) / 8.0;
  return r;
}

}  // namespace ipr
