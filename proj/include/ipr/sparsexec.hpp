#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipr/core.hpp"
#include "ipr/fbconv.hpp"

namespace ipr {

struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets;  // length rows+1
  std::vector<std::size_t> col_indices;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  void check() const {
    if (row_offsets.size() != rows + 1 || row_offsets.front() != 0 ||
        row_offsets.back() != nnz())
      throw std::logic_error("CsrMatrix: bad row offsets");
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_offsets[r] > row_offsets[r + 1])
        throw std::logic_error("CsrMatrix: decreasing row offsets");
      for (std::size_t i = row_offsets[r] + 1; i < row_offsets[r + 1]; ++i)
        if (col_indices[i - 1] >= col_indices[i])
          throw std::logic_error("CsrMatrix: column indices not increasing");
    }
  }
};

inline CsrMatrix csr_from_dense(const Tensor& m, double tol = 0.0) {
  CsrMatrix a;
  a.rows = m.extent(0);
  a.cols = m.extent(1);
  a.row_offsets.reserve(a.rows + 1);
  a.row_offsets.push_back(0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (std::size_t c = 0; c < a.cols; ++c) {
      const double v = m(r, c);
      if (std::abs(v) > tol || (tol == 0.0 && v != 0.0)) {
        a.col_indices.push_back(c);
        a.values.push_back(v);
      }
    }
    a.row_offsets.push_back(a.values.size());
  }
  return a;
}

inline Tensor csr_to_dense(const CsrMatrix& a) {
  Tensor m({a.rows, a.cols});
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t i = a.row_offsets[r]; i < a.row_offsets[r + 1]; ++i)
      m(r, a.col_indices[i]) = a.values[i];
  return m;
}

inline std::vector<double> csr_matvec(const CsrMatrix& a,
                                      const std::vector<double>& x) {
  if (x.size() != a.cols) throw std::invalid_argument("csr_matvec: shape mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    double s = 0.0;
    for (std::size_t i = a.row_offsets[r]; i < a.row_offsets[r + 1]; ++i)
      s += a.values[i] * x[a.col_indices[i]];
    y[r] = s;
  }
  return y;
}

inline std::vector<double> dense_matvec(const Tensor& m,
                                        const std::vector<double>& x) {
  std::vector<double> y(m.extent(0), 0.0);
  for (std::size_t r = 0; r < m.extent(0); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.extent(1); ++c) s += m(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

// ---------------------------------------------------------------------------
// conv lowering

// Weight matrix of shape co x (ci*K*K); one matvec per output position
// against the im2col patch vector reproduces the convolution.
inline Tensor lower_conv_weights(const Tensor& h) {
  const std::size_t co = h.extent(0), ci = h.extent(1), k = h.extent(2);
  Tensor w({co, ci * k * k});
  for (std::size_t a = 0; a < co; ++a) {
    std::size_t col = 0;
    for (std::size_t b = 0; b < ci; ++b)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c) w(a, col++) = h(a, b, r, c);
  }
  return w;
}

// Patch vector (im2col column) for output position (i, j).
inline std::vector<double> im2col_patch(const Tensor& x, std::size_t k,
                                        const ConvArgs& args, std::size_t i,
                                        std::size_t j) {
  const std::size_t ci = x.extent(0), h = x.extent(1), w = x.extent(2);
  std::vector<double> patch;
  patch.reserve(ci * k * k);
  for (std::size_t b = 0; b < ci; ++b)
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        const std::ptrdiff_t ir = static_cast<std::ptrdiff_t>(i * args.stride + r) -
                                  static_cast<std::ptrdiff_t>(args.padding);
        const std::ptrdiff_t jc = static_cast<std::ptrdiff_t>(j * args.stride + c) -
                                  static_cast<std::ptrdiff_t>(args.padding);
        const bool in = ir >= 0 && jc >= 0 && ir < static_cast<std::ptrdiff_t>(h) &&
                        jc < static_cast<std::ptrdiff_t>(w);
        patch.push_back(in ? x(b, static_cast<std::size_t>(ir),
                               static_cast<std::size_t>(jc))
                           : 0.0);
      }
  return patch;
}

// Full lowered convolution (correctness oracle for the benchmark path).
inline Tensor lowered_conv(const Tensor& h, const Tensor& x, const ConvArgs& args) {
  const std::size_t co = h.extent(0), k = h.extent(2);
  const std::size_t d1 = conv_out_extent(x.extent(1), k, args);
  const std::size_t d2 = conv_out_extent(x.extent(2), k, args);
  const Tensor w = lower_conv_weights(h);
  const CsrMatrix ws = csr_from_dense(w);
  Tensor y({co, d1, d2});
  for (std::size_t i = 0; i < d1; ++i)
    for (std::size_t j = 0; j < d2; ++j) {
      const std::vector<double> out = csr_matvec(ws, im2col_patch(x, k, args, i, j));
      for (std::size_t a = 0; a < co; ++a) y(a, i, j) = out[a];
    }
  return y;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchRow {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double p = 0.0;
  double t_dense_mean = 0.0;
  double t_dense_median = 0.0;
  double t_csr_mean = 0.0;
  double t_csr_median = 0.0;
  double speedup = 0.0;  // dense mean / csr mean
  double max_abs_err = 0.0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class Fn>
std::vector<double> time_reps(Fn&& fn, std::size_t reps) {
  using clock = std::chrono::steady_clock;
  std::vector<double> samples;
  samples.reserve(reps);
  fn();  // warm the cache
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return samples;
}

}  // namespace detail

// Times dense vs. CSR matvec on a rows x cols matrix with a fraction p of
// entries zeroed at random. Single-threaded. If the measured interval is
// within 100x of the steady-clock tick, the repetition count is doubled
// until it is not.
inline BenchRow bench_speedup(std::size_t rows, std::size_t cols, double p,
                              Rng& rng, std::size_t reps = 25) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("bench_speedup: p outside [0,1]");
  Tensor m({rows, cols});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  const std::size_t zeros =
      static_cast<std::size_t>(std::floor(p * static_cast<double>(m.size())));
  // zero a random subset of exactly `zeros` entries
  std::vector<std::size_t> idx(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) idx[i] = i;
  for (std::size_t z = 0; z < zeros; ++z) {
    const std::size_t pick = z + rng.uniform_index(idx.size() - z);
    std::swap(idx[z], idx[pick]);
    m[idx[z]] = 0.0;
  }
  const CsrMatrix a = csr_from_dense(m);
  std::vector<double> x(cols);
  for (double& v : x) v = rng.normal();

  volatile double sink = 0.0;
  std::vector<double> td, tc;
  const double tick = 1e-8;  // conservative steady_clock resolution bound
  for (;;) {
    td = detail::time_reps([&] { sink = sink + dense_matvec(m, x)[0]; }, reps);
    tc = detail::time_reps([&] { sink = sink + csr_matvec(a, x)[0]; }, reps);
    const double smallest = std::min(detail::median(td), detail::median(tc));
    if (smallest > 100.0 * tick || reps >= 1600) break;
    reps *= 2;
  }

  BenchRow row;
  row.rows = rows;
  row.cols = cols;
  row.p = p;
  for (double t : td) row.t_dense_mean += t;
  for (double t : tc) row.t_csr_mean += t;
  row.t_dense_mean /= static_cast<double>(td.size());
  row.t_csr_mean /= static_cast<double>(tc.size());
  row.t_dense_median = detail::median(td);
  row.t_csr_median = detail::median(tc);
  row.speedup = row.t_dense_mean / row.t_csr_mean;

  const std::vector<double> yd = dense_matvec(m, x);
  const std::vector<double> yc = csr_matvec(a, x);
  for (std::size_t i = 0; i < yd.size(); ++i)
    row.max_abs_err = std::max(row.max_abs_err, std::abs(yd[i] - yc[i]));
  return row;
}

inline std::string bench_csv_header() {
  return "rows,cols,p,t_dense_mean,t_dense_median,t_csr_mean,t_csr_median,speedup";
}

}  // namespace ipr
