#pragma once

#include <cmath>
#include <stdexcept>

#include "ipr/core.hpp"
#include "ipr/fbconv.hpp"

namespace ipr {

inline double kaiming_std(std::size_t ci, std::size_t k) {
  return std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
}

struct InitResult {
  FilterBasis basis;
  FBCoefficients coeffs;
};

// Standard basis B, coefficients ~ N(0, sigma_h^2). Equivalent in
// distribution to kaiming-normal spatial init.
inline InitResult init_standard(Rng& rng, std::size_t k, std::size_t co,
                                std::size_t ci) {
  InitResult r;
  r.basis.elements.reserve(k * k);
  for (std::size_t n = 0; n < k * k; ++n) {
    Tensor e({k, k});
    e[n] = 1.0;
    r.basis.elements.push_back(std::move(e));
  }
  r.coeffs.values = normal_sample(rng, 0.0, kaiming_std(ci, k), {co, ci, k * k});
  return r;
}

// Random ONB via modified Gram-Schmidt; spatial coefficients drawn first,
// then carried into the interspace with lambda = Psi^T phi.
inline InitResult init_onb(Rng& rng, std::size_t k, std::size_t co,
                           std::size_t ci) {
  const std::size_t n = k * k;
  InitResult r;
  r.basis.elements.reserve(n);
  for (std::size_t e = 0; e < n; ++e) {
    Tensor g({k, k});
    for (int attempt = 0;; ++attempt) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.normal();
      for (std::size_t prev = 0; prev < e; ++prev) {
        const Tensor& q = r.basis.elements[prev];
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * q[i];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dot * q[i];
      }
      const double norm = frobenius_norm(g);
      if (norm >= 1e-12) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= norm;
        break;
      }
      if (attempt > 64)
        throw std::runtime_error("init_onb: Gram-Schmidt failed to converge");
    }
    r.basis.elements.push_back(std::move(g));
  }
  const Tensor psi = basis_matrix(r.basis);
  const double sigma = kaiming_std(ci, k);
  r.coeffs.values = Tensor({co, ci, n});
  for (std::size_t a = 0; a < co; ++a)
    for (std::size_t b = 0; b < ci; ++b) {
      Tensor phi({n});
      for (std::size_t m = 0; m < n; ++m) phi[m] = sigma * rng.normal();
      for (std::size_t m = 0; m < n; ++m) {
        double s = 0.0;
        for (std::size_t q = 0; q < n; ++q) s += psi(q, m) * phi[q];
        r.coeffs.values(a, b, m) = s;
      }
    }
  return r;
}

// Random filter dictionary with N elements, rescaled pixelwise to sample
// mean 1/N and population sample variance 1/N - 1/N^2, which reproduces the
// kaiming-normal moments in the spatial representation.
inline InitResult init_random_fd(Rng& rng, std::size_t n, std::size_t k,
                                 std::size_t co, std::size_t ci) {
  if (n == 0) throw std::invalid_argument("init_random_fd: N must be positive");
  InitResult r;
  if (n == 1) {
    // target variance 0 forces the all-ones element
    r.basis.elements.push_back(Tensor({k, k}, 1.0));
  } else {
    std::vector<Tensor> proto(n, Tensor({k, k}));
    for (Tensor& g : proto)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.normal();
    const double target_std =
        std::sqrt(1.0 / n - 1.0 / (static_cast<double>(n) * n));
    for (std::size_t px = 0; px < k * k; ++px) {
      double mean, var;
      for (;;) {
        mean = 0.0;
        for (const Tensor& g : proto) mean += g[px];
        mean /= n;
        var = 0.0;
        for (const Tensor& g : proto) var += (g[px] - mean) * (g[px] - mean);
        var /= n;
        if (var > 0.0) break;
        for (Tensor& g : proto) g[px] = rng.normal();  // probability-zero event
      }
      const double std_px = std::sqrt(var);
      for (Tensor& g : proto)
        g[px] = target_std * (g[px] - mean) / std_px + 1.0 / n;
    }
    r.basis.elements = std::move(proto);
  }
  r.coeffs.values = normal_sample(rng, 0.0, kaiming_std(ci, k), {co, ci, n});
  return r;
}

}  // namespace ipr
