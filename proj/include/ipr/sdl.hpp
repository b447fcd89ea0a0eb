#pragma once

#include <algorithm>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ipr/core.hpp"
#include "ipr/linalg.hpp"

namespace ipr {

// Sparse dictionary learning on a target matrix U (m x n): approximate U by
// F*R with F an m x m dictionary and R holding at most s non-zeros in total.

struct StandardSolution {
  Tensor phi;         // m x n, top-s magnitudes of U kept
  double eps2 = 0.0;  // ||U - phi||_F
};

inline StandardSolution solve_standard(const Tensor& u, std::size_t s) {
  const std::size_t total = u.size();
  if (s > total) throw std::invalid_argument("solve_standard: s exceeds entries");
  std::vector<double> mag(total);
  for (std::size_t i = 0; i < total; ++i) mag[i] = std::abs(u[i]);
  const std::vector<std::size_t> keep = top_k_indices(mag, s);
  StandardSolution out;
  out.phi = Tensor(u.shape());
  for (std::size_t i : keep) out.phi[i] = u[i];
  double err2 = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    const double d = u[i] - out.phi[i];
    err2 += d * d;
  }
  out.eps2 = std::sqrt(err2);
  return out;
}

enum class Support { Fixed, Free };

struct InterspaceSolution {
  Tensor f;           // m x m dictionary
  Tensor r;           // m x n sparse coefficients
  double eps1 = 0.0;  // ||U - F*R||_F
  bool converged = true;
};

namespace detail {

inline double sdl_objective(const Tensor& u, const Tensor& f, const Tensor& r) {
  const Tensor fr = mat_mul(f, r);
  double err2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - fr[i];
    err2 += d * d;
  }
  return std::sqrt(err2);
}

// min_F ||U - F*R||_F  =>  F = U R^T (R R^T + ridge I)^(-1)
inline Tensor solve_dictionary(const Tensor& u, const Tensor& r, double ridge) {
  const std::size_t m = u.extent(0);
  const Tensor rt = mat_transpose(r);
  Tensor gram = mat_mul(r, rt);  // m x m
  for (std::size_t i = 0; i < m; ++i) gram(i, i) += ridge;
  return mat_mul(mat_mul(u, rt), mat_inverse(gram));
}

// Least squares per column restricted to the support rows.
inline Tensor solve_coefficients(const Tensor& u, const Tensor& f,
                                 const std::vector<std::vector<std::size_t>>& support,
                                 double ridge) {
  const std::size_t m = u.extent(0), n = u.extent(1);
  Tensor r({m, n});
  for (std::size_t j = 0; j < n; ++j) {
    const auto& rows = support[j];
    if (rows.empty()) continue;
    const std::size_t k = rows.size();
    Tensor fs({m, k});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t q = 0; q < k; ++q) fs(i, q) = f(i, rows[q]);
    const Tensor fst = mat_transpose(fs);
    std::vector<double> rhs(k, 0.0);
    for (std::size_t q = 0; q < k; ++q)
      for (std::size_t i = 0; i < m; ++i) rhs[q] += fs(i, q) * u(i, j);
    const std::vector<double> x = solve_spd(mat_mul(fst, fs), rhs, ridge);
    for (std::size_t q = 0; q < k; ++q) r(rows[q], j) = x[q];
  }
  return r;
}

// Support re-selection: dense per-column least squares against F, then the
// top-s coefficients by magnitude globally.
inline std::vector<std::vector<std::size_t>> select_support(const Tensor& u,
                                                            const Tensor& f,
                                                            std::size_t s,
                                                            double ridge) {
  const std::size_t m = u.extent(0), n = u.extent(1);
  const Tensor ft = mat_transpose(f);
  const Tensor gram = mat_mul(ft, f);
  std::vector<double> mag(m * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> rhs(m, 0.0);
    for (std::size_t q = 0; q < m; ++q)
      for (std::size_t i = 0; i < m; ++i) rhs[q] += f(i, q) * u(i, j);
    const std::vector<double> x = solve_spd(gram, rhs, ridge);
    for (std::size_t q = 0; q < m; ++q) mag[q * n + j] = std::abs(x[q]);
  }
  std::vector<std::vector<std::size_t>> support(n);
  for (std::size_t flat : top_k_indices(mag, s))
    support[flat % n].push_back(flat / n);
  for (auto& rows : support) std::sort(rows.begin(), rows.end());
  return support;
}

// Coverage-aware alternative: give every column its best single atom first
// (best columns when the budget is short), then spend the remaining budget by
// the same single-atom score globally. Keeps columns from being starved when
// the global ranking concentrates on a few high-energy columns.
inline std::vector<std::vector<std::size_t>> cover_support(const Tensor& u,
                                                           const Tensor& f,
                                                           std::size_t s) {
  const std::size_t m = u.extent(0), n = u.extent(1);
  std::vector<double> score(m * n, 0.0);  // squared single-atom LS gain
  for (std::size_t q = 0; q < m; ++q) {
    double nrm = 0.0;
    for (std::size_t i = 0; i < m; ++i) nrm += f(i, q) * f(i, q);
    if (nrm <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += f(i, q) * u(i, j);
      score[q * n + j] = dot * dot / nrm;
    }
  }
  std::vector<std::vector<std::size_t>> support(n);
  std::vector<char> used(m * n, 0);
  std::size_t budget = s;
  std::vector<std::size_t> order(n);
  std::vector<std::size_t> best_row(n, 0);
  std::vector<double> best_score(n, -1.0);
  for (std::size_t j = 0; j < n; ++j) {
    order[j] = j;
    for (std::size_t q = 0; q < m; ++q)
      if (score[q * n + j] > best_score[j]) {
        best_score[j] = score[q * n + j];
        best_row[j] = q;
      }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return best_score[a] > best_score[b];
  });
  for (std::size_t j : order) {
    if (budget == 0) break;
    support[j].push_back(best_row[j]);
    used[best_row[j] * n + j] = 1;
    --budget;
  }
  if (budget > 0) {
    std::vector<std::size_t> flat(m * n);
    for (std::size_t i = 0; i < m * n; ++i) flat[i] = i;
    std::stable_sort(flat.begin(), flat.end(), [&](std::size_t a, std::size_t b) {
      return score[a] > score[b];
    });
    for (std::size_t i : flat) {
      if (budget == 0) break;
      if (used[i]) continue;
      support[i % n].push_back(i / n);
      --budget;
    }
  }
  for (auto& rows : support) std::sort(rows.begin(), rows.end());
  return support;
}

}  // namespace detail

// Block coordinate descent on ||U - F*R||_F with |supp R| <= s. Fixed support
// starts from the standard solution's support (F = identity, R = Phi*), so
// zero iterations already matches eps2; every accepted step is monotone.
inline InterspaceSolution solve_interspace(const Tensor& u, std::size_t s,
                                           Support support_mode,
                                           std::size_t iters,
                                           double ridge = 1e-10) {
  const std::size_t m = u.extent(0), n = u.extent(1);
  const StandardSolution std_sol = solve_standard(u, s);

  std::vector<std::vector<std::size_t>> support(n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (std_sol.phi(i, j) != 0.0) support[j].push_back(i);

  InterspaceSolution sol;
  sol.f = Tensor({m, m});
  for (std::size_t i = 0; i < m; ++i) sol.f(i, i) = 1.0;
  sol.r = std_sol.phi;
  sol.eps1 = std_sol.eps2;

  double prev = sol.eps1;
  for (std::size_t it = 0; it < iters; ++it) {
    const Tensor f_new = detail::solve_dictionary(u, sol.r, ridge);
    const double after_f = detail::sdl_objective(u, f_new, sol.r);
    if (after_f <= sol.eps1 + 1e-12) {
      sol.f = f_new;
      sol.eps1 = std::min(sol.eps1, after_f);
    }

    auto trial_support = support;
    Tensor r_new = detail::solve_coefficients(u, sol.f, trial_support, ridge);
    double after_r = detail::sdl_objective(u, sol.f, r_new);
    if (support_mode == Support::Free) {
      // two candidate supports; keep whichever restricted solve fits better
      for (auto& cand : {detail::select_support(u, sol.f, s, ridge),
                         detail::cover_support(u, sol.f, s)}) {
        Tensor r_cand = detail::solve_coefficients(u, sol.f, cand, ridge);
        const double obj = detail::sdl_objective(u, sol.f, r_cand);
        if (obj < after_r) {
          after_r = obj;
          r_new = std::move(r_cand);
          trial_support = cand;
        }
      }
    }
    if (after_r <= sol.eps1 + 1e-12) {
      sol.r = r_new;
      support = std::move(trial_support);
      sol.eps1 = std::min(sol.eps1, after_r);
    }

    if (std::abs(prev - sol.eps1) < 1e-14) break;
    prev = sol.eps1;
  }
  sol.converged = sol.eps1 <= std_sol.eps2 + 1e-9;
  return sol;
}

// delta = C(n, s/m) / C(m*n, s) when m divides s, else 0; exact big-integer
// binomials so values like C(900, 450) do not overflow.
inline double theorem1_delta(std::size_t m, std::size_t n, std::size_t s) {
  if (m < 2) throw std::invalid_argument("theorem1_delta: requires m > 1");
  if (s == 0 || s >= m * n)
    throw std::invalid_argument("theorem1_delta: requires 0 < s < m*n");
  if (s % m != 0) return 0.0;
  namespace mp = boost::multiprecision;
  auto binom = [](std::size_t a, std::size_t b) {
    if (b > a) return mp::cpp_int(0);
    mp::cpp_int r = 1;
    for (std::size_t i = 0; i < b; ++i) {
      r *= static_cast<unsigned long>(a - i);
      r /= static_cast<unsigned long>(i + 1);
    }
    return r;
  };
  const mp::cpp_int num = binom(n, s / m);
  const mp::cpp_int den = binom(m * n, s);
  using dec = mp::cpp_dec_float_50;
  return static_cast<double>(dec(num) / dec(den));
}

struct MonteCarloStats {
  std::size_t trials = 0;
  double frac_strict_fixed = 0.0;
  double frac_strict_free = 0.0;
  double mean_gap_fixed = 0.0;
  double mean_gap_free = 0.0;
  double delta = 0.0;
};

// Gaussian targets; checks eps1 <= eps2 on every trial and records how often
// the inequality is strict.
inline MonteCarloStats montecarlo_verify(std::size_t m, std::size_t n,
                                         std::size_t s, std::size_t trials,
                                         Rng& rng, std::size_t iters = 12) {
  if (m < 2) throw std::invalid_argument("montecarlo_verify: requires m > 1");
  if (s == 0 || s >= m * n)
    throw std::invalid_argument("montecarlo_verify: requires 0 < s < m*n");
  MonteCarloStats stats;
  stats.trials = trials;
  stats.delta = theorem1_delta(m, n, s);
  for (std::size_t t = 0; t < trials; ++t) {
    Tensor u({m, n});
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.normal();
    const StandardSolution sp = solve_standard(u, s);
    const InterspaceSolution fixed = solve_interspace(u, s, Support::Fixed, iters);
    const InterspaceSolution free_s = solve_interspace(u, s, Support::Free, iters);
    if (fixed.eps1 > sp.eps2 + 1e-9 || free_s.eps1 > sp.eps2 + 1e-9)
      throw std::runtime_error("montecarlo_verify: eps1 > eps2");
    stats.frac_strict_fixed += fixed.eps1 < sp.eps2 - 1e-9 ? 1.0 : 0.0;
    stats.frac_strict_free += free_s.eps1 < sp.eps2 - 1e-9 ? 1.0 : 0.0;
    stats.mean_gap_fixed += sp.eps2 - fixed.eps1;
    stats.mean_gap_free += sp.eps2 - free_s.eps1;
  }
  if (trials) {
    stats.frac_strict_fixed /= static_cast<double>(trials);
    stats.frac_strict_free /= static_cast<double>(trials);
    stats.mean_gap_fixed /= static_cast<double>(trials);
    stats.mean_gap_free /= static_cast<double>(trials);
  }
  return stats;
}

}  // namespace ipr
