#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipr/core.hpp"
#include "ipr/linalg.hpp"

namespace ipr {

struct ConvArgs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Filter basis: N elements of shape KxK shared across a declared layer group.
// N == K*K for a proper basis, N != K*K for a filter dictionary.
struct FilterBasis {
  int id = 0;
  std::vector<Tensor> elements;  // each KxK
  bool trainable = true;

  std::size_t kernel_size() const {
    return elements.empty() ? 0 : elements.front().extent(0);
  }
  std::size_t count() const { return elements.size(); }
};

// Per-layer interspace coefficients, shape co x ci x N.
struct FBCoefficients {
  Tensor values;

  std::size_t co() const { return values.extent(0); }
  std::size_t ci() const { return values.extent(1); }
  std::size_t n() const { return values.extent(2); }
};

// Binary mask congruent to the tensor it masks.
struct PruningMask {
  Tensor bits;

  static PruningMask ones(std::vector<std::size_t> shape) {
    return {Tensor(std::move(shape), 1.0)};
  }
  std::size_t popcount() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) c += bits[i] != 0.0;
    return c;
  }
  double sparsity() const {
    return bits.size() == 0 ? 0.0
                            : 1.0 - static_cast<double>(popcount()) / bits.size();
  }
};

struct BasisTransform {
  Tensor psi;      // K^2 x K^2, column m is the flattened basis element g^(m)
  Tensor psi_inv;
  double cond = 1.0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvArgs& a) {
  const std::size_t padded = in + 2 * a.padding;
  if (k > padded) throw std::invalid_argument("conv: kernel exceeds padded input");
  if ((padded - k) % a.stride != 0)
    throw std::invalid_argument("conv: output extent is not integral");
  return (padded - k) / a.stride + 1;
}

namespace detail {

inline double padded_at(const Tensor& x, std::size_t ch, long r, long c,
                        std::size_t pad) {
  const long h = static_cast<long>(x.extent(1));
  const long w = static_cast<long>(x.extent(2));
  const long rr = r - static_cast<long>(pad);
  const long cc = c - static_cast<long>(pad);
  if (rr < 0 || cc < 0 || rr >= h || cc >= w) return 0.0;
  return x(ch, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
}

}  // namespace detail

// Standard 2D cross-correlation, zero padding. Zero weights are skipped and
// contribute no counted FLOPs; `flops` counts one multiply and one add per
// executed weight-pixel pair.
inline Tensor conv2d(const Tensor& h, const Tensor& x, const ConvArgs& args,
                     std::uint64_t* flops = nullptr) {
  if (h.rank() != 4 || x.rank() != 3 || h.extent(1) != x.extent(0))
    throw std::invalid_argument("conv2d: shape mismatch");
  const std::size_t co = h.extent(0), ci = h.extent(1), k = h.extent(2);
  if (h.extent(3) != k) throw std::invalid_argument("conv2d: non-square kernel");
  const std::size_t d1 = conv_out_extent(x.extent(1), k, args);
  const std::size_t d2 = conv_out_extent(x.extent(2), k, args);
  Tensor y({co, d1, d2});
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t m = 0; m < k; ++m)
        for (std::size_t n = 0; n < k; ++n) {
          const double w = h(a, b, m, n);
          if (w == 0.0) continue;
          if (flops) *flops += 2 * d1 * d2;
          for (std::size_t i = 0; i < d1; ++i)
            for (std::size_t j = 0; j < d2; ++j)
              y(a, i, j) += w * detail::padded_at(x, b,
                                                  static_cast<long>(m + i * args.stride),
                                                  static_cast<long>(n + j * args.stride),
                                                  args.padding);
        }
  return y;
}

// Gradients of a standard convolution: dL/dh and dL/dx given dL/dy.
struct ConvGrads {
  Tensor dh;  // co x ci x K x K
  Tensor dx;  // ci x H x W
};

inline ConvGrads conv2d_backward(const Tensor& h, const Tensor& x,
                                 const Tensor& dy, const ConvArgs& args) {
  const std::size_t co = h.extent(0), ci = h.extent(1), k = h.extent(2);
  const std::size_t d1 = dy.extent(1), d2 = dy.extent(2);
  ConvGrads g{Tensor({co, ci, k, k}), Tensor(x.shape())};
  const long hh = static_cast<long>(x.extent(1));
  const long ww = static_cast<long>(x.extent(2));
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t j = 0; j < d2; ++j) {
          const double gy = dy(a, i, j);
          if (gy == 0.0) continue;
          for (std::size_t m = 0; m < k; ++m)
            for (std::size_t n = 0; n < k; ++n) {
              const long r = static_cast<long>(m + i * args.stride) -
                             static_cast<long>(args.padding);
              const long c = static_cast<long>(n + j * args.stride) -
                             static_cast<long>(args.padding);
              if (r < 0 || c < 0 || r >= hh || c >= ww) continue;
              g.dh(a, b, m, n) += gy * x(b, static_cast<std::size_t>(r),
                                         static_cast<std::size_t>(c));
              g.dx(b, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
                  gy * h(a, b, m, n);
            }
        }
  return g;
}

struct FBForwardResult {
  Tensor y;        // co x d1 x d2
  Tensor z_cache;  // ci x N x d1 x d2, g^(n) * X^(b), reused in backward
};

// FB convolution: Z computed once per (channel, basis element), then the
// masked coefficient combination. Stage-1 FLOPs are counted dense (the basis
// is never pruned); stage-2 counts one mul and one add per kept coefficient
// and output pixel.
inline FBForwardResult fb_forward(const FilterBasis& basis,
                                  const FBCoefficients& coeffs,
                                  const PruningMask& mask, const Tensor& x,
                                  const ConvArgs& args,
                                  std::uint64_t* flops = nullptr) {
  const std::size_t k = basis.kernel_size();
  const std::size_t nb = basis.count();
  const std::size_t co = coeffs.co(), ci = coeffs.ci();
  if (x.extent(0) != ci || coeffs.n() != nb)
    throw std::invalid_argument("fb_forward: shape mismatch");
  if (!mask.bits.same_shape(coeffs.values))
    throw std::invalid_argument("fb_forward: mask not congruent to coefficients");
  for (const Tensor& g : basis.elements)
    if (g.extent(0) != k || g.extent(1) != k)
      throw std::runtime_error("fb_forward: basis element shape mismatch");
  const std::size_t d1 = conv_out_extent(x.extent(1), k, args);
  const std::size_t d2 = conv_out_extent(x.extent(2), k, args);

  FBForwardResult out{Tensor({co, d1, d2}), Tensor({ci, nb, d1, d2})};
  for (std::size_t b = 0; b < ci; ++b)
    for (std::size_t n = 0; n < nb; ++n) {
      const Tensor& g = basis.elements[n];
      if (flops) *flops += 2 * k * k * d1 * d2;
      for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t j = 0; j < d2; ++j) {
          double s = 0.0;
          for (std::size_t m = 0; m < k; ++m)
            for (std::size_t nn = 0; nn < k; ++nn)
              s += g(m, nn) * detail::padded_at(x, b,
                                                static_cast<long>(m + i * args.stride),
                                                static_cast<long>(nn + j * args.stride),
                                                args.padding);
          out.z_cache(b, n, i, j) = s;
        }
    }
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t n = 0; n < nb; ++n) {
        if (mask.bits(a, b, n) == 0.0) continue;
        const double lam = coeffs.values(a, b, n);
        if (flops) *flops += 2 * d1 * d2;
        for (std::size_t i = 0; i < d1; ++i)
          for (std::size_t j = 0; j < d2; ++j)
            out.y(a, i, j) += lam * out.z_cache(b, n, i, j);
      }
  return out;
}

struct FBGrads {
  Tensor dlambda;           // co x ci x N, masked entries forced to 0
  std::vector<Tensor> dg;   // N tensors KxK
  Tensor dx;                // ci x H x W
};

inline FBGrads fb_backward(const FilterBasis& basis, const FBCoefficients& coeffs,
                           const PruningMask& mask, const Tensor& x,
                           const Tensor& z_cache, const Tensor& dy,
                           const ConvArgs& args) {
  const std::size_t k = basis.kernel_size();
  const std::size_t nb = basis.count();
  const std::size_t co = coeffs.co(), ci = coeffs.ci();
  if (z_cache.size() == 0)
    throw std::logic_error("fb_backward: missing z_cache from forward pass");
  const std::size_t d1 = dy.extent(1), d2 = dy.extent(2);

  FBGrads g{Tensor({co, ci, nb}), {}, Tensor(x.shape())};
  g.dg.assign(nb, Tensor({k, k}));

  // dL/dlambda from the cached Z maps
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t n = 0; n < nb; ++n) {
        if (mask.bits(a, b, n) == 0.0) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < d1; ++i)
          for (std::size_t j = 0; j < d2; ++j)
            s += dy(a, i, j) * z_cache(b, n, i, j);
        g.dlambda(a, b, n) = s;
      }

  // dL/dh^(a,b) = dL/dY^(a) * X^(b), then dL/dg^(n) accumulates over kept
  // (a,b,n)
  const long hh = static_cast<long>(x.extent(1));
  const long ww = static_cast<long>(x.extent(2));
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b) {
      Tensor dh({k, k});
      for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t j = 0; j < d2; ++j) {
          const double gy = dy(a, i, j);
          if (gy == 0.0) continue;
          for (std::size_t m = 0; m < k; ++m)
            for (std::size_t n = 0; n < k; ++n) {
              const long r = static_cast<long>(m + i * args.stride) -
                             static_cast<long>(args.padding);
              const long c = static_cast<long>(n + j * args.stride) -
                             static_cast<long>(args.padding);
              if (r < 0 || c < 0 || r >= hh || c >= ww) continue;
              dh(m, n) += gy * x(b, static_cast<std::size_t>(r),
                                 static_cast<std::size_t>(c));
            }
        }
      for (std::size_t n = 0; n < nb; ++n) {
        if (mask.bits(a, b, n) == 0.0) continue;
        const double lam = coeffs.values(a, b, n);
        if (lam == 0.0) continue;
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t nn = 0; nn < k; ++nn)
            g.dg[n](m, nn) += lam * dh(m, nn);
      }
    }

  // dL/dx through the effective spatial filter
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b) {
      Tensor heff({k, k});
      for (std::size_t n = 0; n < nb; ++n) {
        if (mask.bits(a, b, n) == 0.0) continue;
        const double lam = coeffs.values(a, b, n);
        if (lam == 0.0) continue;
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t nn = 0; nn < k; ++nn)
            heff(m, nn) += lam * basis.elements[n](m, nn);
      }
      for (std::size_t i = 0; i < d1; ++i)
        for (std::size_t j = 0; j < d2; ++j) {
          const double gy = dy(a, i, j);
          if (gy == 0.0) continue;
          for (std::size_t m = 0; m < k; ++m)
            for (std::size_t nn = 0; nn < k; ++nn) {
              const long r = static_cast<long>(m + i * args.stride) -
                             static_cast<long>(args.padding);
              const long c = static_cast<long>(nn + j * args.stride) -
                             static_cast<long>(args.padding);
              if (r < 0 || c < 0 || r >= hh || c >= ww) continue;
              g.dx(b, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
                  gy * heff(m, nn);
            }
        }
    }
  return g;
}

// Psi with Psi_{n,m} = <g^(m), e^(n)>: column m is the flattened element m.
inline Tensor basis_matrix(const FilterBasis& basis) {
  const std::size_t k = basis.kernel_size();
  const std::size_t nb = basis.count();
  Tensor psi({k * k, nb});
  for (std::size_t m = 0; m < nb; ++m)
    for (std::size_t n = 0; n < k * k; ++n)
      psi(n, m) = basis.elements[m][n];
  return psi;
}

inline BasisTransform basis_transform(const FilterBasis& basis,
                                      double max_cond = 1e8) {
  const std::size_t k = basis.kernel_size();
  if (basis.count() != k * k)
    throw std::invalid_argument("basis_transform: requires N = K^2");
  BasisTransform t;
  t.psi = basis_matrix(basis);
  t.cond = condition_number(t.psi);
  if (!(t.cond < max_cond))
    throw std::runtime_error("basis_transform: ill-conditioned Psi, cond = " +
                             std::to_string(t.cond));
  t.psi_inv = mat_inverse(t.psi);
  return t;
}

// phi = Psi * lambda, per filter. Valid for any dictionary size N.
inline Tensor to_spatial(const FilterBasis& basis, const FBCoefficients& coeffs) {
  const std::size_t k = basis.kernel_size();
  const std::size_t nb = basis.count();
  const std::size_t co = coeffs.co(), ci = coeffs.ci();
  Tensor h({co, ci, k, k});
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t n = 0; n < nb; ++n) {
        const double lam = coeffs.values(a, b, n);
        if (lam == 0.0) continue;
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t nn = 0; nn < k; ++nn)
            h(a, b, m, nn) += lam * basis.elements[n](m, nn);
      }
  return h;
}

// lambda = Psi^{-1} * phi. Diagnostic path; rejects near-degenerate bases.
inline FBCoefficients to_interspace(const FilterBasis& basis, const Tensor& h) {
  const BasisTransform t = basis_transform(basis);
  const std::size_t k = basis.kernel_size();
  const std::size_t co = h.extent(0), ci = h.extent(1);
  FBCoefficients out{Tensor({co, ci, k * k})};
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t n = 0; n < k * k; ++n) {
        double s = 0.0;
        for (std::size_t m = 0; m < k * k; ++m)
          s += t.psi_inv(n, m) * h(a, b, m / k, m % k);
        out.values(a, b, n) = s;
      }
  return out;
}

// dL/dlambda = Psi^T dL/dphi
inline Tensor transform_gradient(const Tensor& psi, const Tensor& dphi) {
  return mat_vec(mat_transpose(psi), dphi.values());
}

// H^B = (Psi^{-1})^T H^F Psi^{-1}
inline Tensor transform_hessian(const Tensor& psi_inv, const Tensor& h_fb) {
  return mat_mul(mat_transpose(psi_inv), mat_mul(h_fb, psi_inv));
}

struct GradientBounds {
  double lambda_grad_norm = 0.0;
  double lambda_grad_bound = 0.0;
  double basis_grad_norm = 0.0;
  double basis_grad_bound = 0.0;
};

// Cauchy-Schwarz bounds relating interspace gradients to the spatial gradient.
inline GradientBounds gradient_bound_check(const FilterBasis& basis,
                                           const FBCoefficients& coeffs,
                                           const Tensor& dl_dh) {
  const std::size_t k = basis.kernel_size();
  const std::size_t nb = basis.count();
  const std::size_t co = coeffs.co(), ci = coeffs.ci();
  GradientBounds out;

  double dh_sq = 0.0;
  for (std::size_t i = 0; i < dl_dh.size(); ++i) dh_sq += dl_dh[i] * dl_dh[i];

  double f_sq = 0.0;
  for (const Tensor& g : basis.elements)
    for (std::size_t i = 0; i < g.size(); ++i) f_sq += g[i] * g[i];

  double dl_sq = 0.0, dg_sq = 0.0;
  std::vector<Tensor> dg(nb, Tensor({k, k}));
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t n = 0; n < nb; ++n) {
        double s = 0.0;
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t nn = 0; nn < k; ++nn)
            s += basis.elements[n](m, nn) * dl_dh(a, b, m, nn);
        dl_sq += s * s;
        const double lam = coeffs.values(a, b, n);
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t nn = 0; nn < k; ++nn)
            dg[n](m, nn) += lam * dl_dh(a, b, m, nn);
      }
  for (const Tensor& t : dg)
    for (std::size_t i = 0; i < t.size(); ++i) dg_sq += t[i] * t[i];

  out.lambda_grad_norm = std::sqrt(dl_sq);
  out.lambda_grad_bound = std::sqrt(f_sq) * std::sqrt(dh_sq);
  out.basis_grad_norm = std::sqrt(dg_sq);
  out.basis_grad_bound = frobenius_norm(coeffs.values) * std::sqrt(dh_sq);
  return out;
}

}  // namespace ipr
