#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipr/core.hpp"
#include "ipr/fbconv.hpp"
#include "ipr/init.hpp"

namespace ipr {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Linear };
enum class Mode { SP, IP };
enum class Sharing { Coarse, Medium, Fine };
enum class InitScheme { Standard, Onb, RandomFd };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t out_channels = 0;  // conv
  std::size_t in_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool = 2;          // maxpool window and stride
  std::size_t in_features = 0;   // linear
  std::size_t out_features = 0;
  bool prunable = true;
  int basis_group = -1;          // medium sharing: user-declared group id
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::size_t input_channels = 1;
  std::size_t input_h = 8;
  std::size_t input_w = 8;
  std::size_t classes = 4;
};

inline LayerSpec conv_spec(std::size_t co, std::size_t ci, std::size_t k,
                           std::size_t pad = 1) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.out_channels = co;
  s.in_channels = ci;
  s.kernel = k;
  s.padding = pad;
  return s;
}

// conv(1->8,K3)-relu-pool-conv(8->16,K3)-relu-pool-flatten-linear
inline ModelSpec minivgg_spec(std::size_t in_ch = 1, std::size_t h = 8,
                              std::size_t w = 8, std::size_t classes = 4) {
  ModelSpec m;
  m.input_channels = in_ch;
  m.input_h = h;
  m.input_w = w;
  m.classes = classes;
  m.layers.push_back(conv_spec(8, in_ch, 3));
  m.layers.push_back({.kind = LayerKind::Relu});
  m.layers.push_back({.kind = LayerKind::MaxPool});
  m.layers.push_back(conv_spec(16, 8, 3));
  m.layers.push_back({.kind = LayerKind::Relu});
  m.layers.push_back({.kind = LayerKind::MaxPool});
  m.layers.push_back({.kind = LayerKind::Flatten});
  LayerSpec lin;
  lin.kind = LayerKind::Linear;
  lin.in_features = 16 * (h / 4) * (w / 4);
  lin.out_features = classes;
  m.layers.push_back(lin);
  return m;
}

struct Layer {
  LayerSpec spec;
  bool interspace = false;   // true: FB coefficients, false: spatial weights
  int basis_id = -1;
  Tensor weights;            // conv co x ci x K x K | linear out x in
  FBCoefficients coeffs;     // interspace conv: co x ci x N
  Tensor bias;
  PruningMask mask;          // congruent to weights / coeffs when prunable
  // momentum slots
  Tensor v_weights;
  Tensor v_bias;

  bool has_params() const {
    return spec.kind == LayerKind::Conv || spec.kind == LayerKind::Linear;
  }
  Tensor& param() { return interspace ? coeffs.values : weights; }
  const Tensor& param() const { return interspace ? coeffs.values : weights; }
};

struct ModelState {
  ModelSpec spec;
  Mode mode = Mode::SP;
  Sharing sharing = Sharing::Fine;
  std::vector<Layer> layers;
  std::map<int, FilterBasis> bases;
  std::map<int, std::vector<Tensor>> v_bases;  // momentum for basis elements
  Rng rng{0};
  std::size_t step = 0;
};

struct LayerGrads {
  Tensor dparam;  // dweights or dlambda
  Tensor dbias;
};

struct Gradients {
  std::vector<LayerGrads> layers;
  std::map<int, std::vector<Tensor>> dbases;
  double loss = 0.0;
};

struct Dataset {
  std::vector<Tensor> images;  // each ci x H x W
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

// ---------------------------------------------------------------------------
// construction

struct BuildOptions {
  InitScheme init = InitScheme::Standard;
  std::size_t dictionary_size = 0;  // random_fd only; 0 means K^2
};

inline ModelState build(const ModelSpec& spec, Mode mode, Sharing sharing,
                        Rng rng, const BuildOptions& opt = {}) {
  ModelState m;
  m.spec = spec;
  m.mode = mode;
  m.sharing = sharing;

  // assign basis ids per sharing scheme; K=1 convs stay spatial
  int next_fine_id = 0;
  std::vector<int> ids(spec.layers.size(), -1);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    if (ls.kind != LayerKind::Conv || ls.kernel <= 1 || mode != Mode::IP)
      continue;
    switch (sharing) {
      case Sharing::Coarse: ids[i] = 0; break;
      case Sharing::Fine: ids[i] = next_fine_id++; break;
      case Sharing::Medium:
        if (ls.basis_group < 0)
          throw std::invalid_argument(
              "build: medium sharing requires basis_group on every conv layer");
        ids[i] = ls.basis_group;
        break;
    }
  }

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Layer layer;
    layer.spec = spec.layers[i];
    const LayerSpec& ls = layer.spec;
    if (ls.kind == LayerKind::Conv) {
      if (ids[i] >= 0) {
        layer.interspace = true;
        layer.basis_id = ids[i];
        const std::size_t n_elems =
            (opt.init == InitScheme::RandomFd && opt.dictionary_size > 0)
                ? opt.dictionary_size
                : ls.kernel * ls.kernel;
        if (!m.bases.count(layer.basis_id)) {
          InitResult init;
          switch (opt.init) {
            case InitScheme::Standard:
              init = init_standard(rng, ls.kernel, ls.out_channels, ls.in_channels);
              break;
            case InitScheme::Onb:
              init = init_onb(rng, ls.kernel, ls.out_channels, ls.in_channels);
              break;
            case InitScheme::RandomFd:
              init = init_random_fd(rng, n_elems, ls.kernel, ls.out_channels,
                                    ls.in_channels);
              break;
          }
          init.basis.id = layer.basis_id;
          m.bases[layer.basis_id] = std::move(init.basis);
          layer.coeffs = std::move(init.coeffs);
        } else {
          // basis shared with an earlier layer: draw fresh coefficients
          const FilterBasis& basis = m.bases[layer.basis_id];
          const double sigma = kaiming_std(ls.in_channels, ls.kernel);
          if (opt.init == InitScheme::Onb) {
            const Tensor psi = basis_matrix(basis);
            const std::size_t nn = basis.count();
            layer.coeffs.values = Tensor({ls.out_channels, ls.in_channels, nn});
            for (std::size_t a = 0; a < ls.out_channels; ++a)
              for (std::size_t b = 0; b < ls.in_channels; ++b) {
                std::vector<double> phi(nn);
                for (double& v : phi) v = sigma * rng.normal();
                for (std::size_t q = 0; q < nn; ++q) {
                  double s = 0.0;
                  for (std::size_t r = 0; r < nn; ++r) s += psi(r, q) * phi[r];
                  layer.coeffs.values(a, b, q) = s;
                }
              }
          } else {
            layer.coeffs.values = normal_sample(
                rng, 0.0, sigma, {ls.out_channels, ls.in_channels, basis.count()});
          }
        }
        layer.mask = PruningMask::ones(layer.coeffs.values.shape());
      } else {
        layer.weights = normal_sample(rng, 0.0, kaiming_std(ls.in_channels, ls.kernel),
                                      {ls.out_channels, ls.in_channels, ls.kernel,
                                       ls.kernel});
        layer.mask = PruningMask::ones(layer.weights.shape());
      }
      layer.bias = Tensor({ls.out_channels});
    } else if (ls.kind == LayerKind::Linear) {
      layer.weights = normal_sample(rng, 0.0,
                                    std::sqrt(2.0 / static_cast<double>(ls.in_features)),
                                    {ls.out_features, ls.in_features});
      layer.bias = Tensor({ls.out_features});
      layer.mask = PruningMask::ones(layer.weights.shape());
    }
    if (layer.has_params()) {
      layer.v_weights = Tensor(layer.param().shape());
      layer.v_bias = Tensor(layer.bias.shape());
    }
    m.layers.push_back(std::move(layer));
  }
  for (auto& [id, basis] : m.bases)
    m.v_bases[id] = std::vector<Tensor>(basis.count(),
                                        Tensor(basis.elements.front().shape()));
  m.rng = rng;
  return m;
}

// ---------------------------------------------------------------------------
// forward / backward

struct LayerCache {
  Tensor input;
  Tensor output;
  Tensor z_cache;                    // interspace conv only
  std::vector<std::size_t> argmax;   // maxpool only
};

struct SampleCache {
  std::vector<LayerCache> layers;
  Tensor logits;
};

inline SampleCache forward_sample(const ModelState& m, const Tensor& x) {
  SampleCache cache;
  Tensor cur = x;
  for (const Layer& layer : m.layers) {
    LayerCache lc;
    lc.input = cur;
    const LayerSpec& ls = layer.spec;
    switch (ls.kind) {
      case LayerKind::Conv: {
        ConvArgs args{ls.stride, ls.padding};
        Tensor y;
        if (layer.interspace) {
          FBForwardResult r = fb_forward(m.bases.at(layer.basis_id), layer.coeffs,
                                         layer.mask, cur, args);
          lc.z_cache = std::move(r.z_cache);
          y = std::move(r.y);
        } else {
          y = conv2d(layer.weights, cur, args);
        }
        for (std::size_t a = 0; a < y.extent(0); ++a)
          for (std::size_t i = 0; i < y.extent(1); ++i)
            for (std::size_t j = 0; j < y.extent(2); ++j)
              y(a, i, j) += layer.bias[a];
        cur = std::move(y);
        break;
      }
      case LayerKind::Relu: {
        Tensor y = cur;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i], 0.0);
        cur = std::move(y);
        break;
      }
      case LayerKind::MaxPool: {
        const std::size_t c = cur.extent(0), h = cur.extent(1), w = cur.extent(2);
        const std::size_t p = ls.pool;
        const std::size_t oh = h / p, ow = w / p;
        Tensor y({c, oh, ow});
        lc.argmax.resize(c * oh * ow);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              double best = -HUGE_VAL;
              std::size_t best_idx = 0;
              for (std::size_t di = 0; di < p; ++di)
                for (std::size_t dj = 0; dj < p; ++dj) {
                  const std::size_t r = i * p + di, cc = j * p + dj;
                  const double v = cur(ch, r, cc);
                  if (v > best) {
                    best = v;
                    best_idx = (ch * h + r) * w + cc;
                  }
                }
              y(ch, i, j) = best;
              lc.argmax[(ch * oh + i) * ow + j] = best_idx;
            }
        cur = std::move(y);
        break;
      }
      case LayerKind::Flatten: {
        cur = Tensor::from_data({cur.size()}, cur.values());
        break;
      }
      case LayerKind::Linear: {
        Tensor y({ls.out_features});
        for (std::size_t o = 0; o < ls.out_features; ++o) {
          double s = layer.bias[o];
          for (std::size_t i = 0; i < ls.in_features; ++i)
            s += layer.weights(o, i) * cur[i];
          y[o] = s;
        }
        cur = std::move(y);
        break;
      }
    }
    lc.output = cur;
    cache.layers.push_back(std::move(lc));
  }
  cache.logits = cur;
  return cache;
}

inline std::vector<double> softmax(const Tensor& logits) {
  double mx = -HUGE_VAL;
  for (std::size_t i = 0; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= z;
  return p;
}

inline double cross_entropy(const Tensor& logits, int label) {
  const auto p = softmax(logits);
  return -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300));
}

inline Gradients make_gradients(const ModelState& m) {
  Gradients g;
  g.layers.resize(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!m.layers[i].has_params()) continue;
    g.layers[i].dparam = Tensor(m.layers[i].param().shape());
    g.layers[i].dbias = Tensor(m.layers[i].bias.shape());
  }
  for (const auto& [id, basis] : m.bases)
    g.dbases[id] = std::vector<Tensor>(basis.count(),
                                       Tensor(basis.elements.front().shape()));
  return g;
}

// Accumulates scaled gradients for one sample. When mask_grads is false,
// gradients of masked coefficients are kept (needed for RigL regrowth and
// score computations); parameter values themselves stay masked either way.
inline void backward_from_delta(const ModelState& m, const SampleCache& cache,
                                Tensor delta, Gradients& acc, double scale,
                                bool mask_grads = true) {
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const Layer& layer = m.layers[li];
    const LayerCache& lc = cache.layers[li];
    const LayerSpec& ls = layer.spec;
    switch (ls.kind) {
      case LayerKind::Linear: {
        Tensor dx({ls.in_features});
        for (std::size_t o = 0; o < ls.out_features; ++o) {
          const double d = delta[o];
          acc.layers[li].dbias[o] += scale * d;
          for (std::size_t i = 0; i < ls.in_features; ++i) {
            const bool kept = layer.mask.bits.size() == 0 ||
                              layer.mask.bits(o, i) != 0.0;
            if (!mask_grads || kept)
              acc.layers[li].dparam(o, i) += scale * d * lc.input[i];
            dx[i] += d * layer.weights(o, i);
          }
        }
        delta = std::move(dx);
        break;
      }
      case LayerKind::Flatten: {
        delta = Tensor::from_data(lc.input.shape(), delta.values());
        break;
      }
      case LayerKind::MaxPool: {
        Tensor dx(lc.input.shape());
        for (std::size_t o = 0; o < delta.size(); ++o)
          dx.values()[lc.argmax[o]] += delta[o];
        delta = std::move(dx);
        break;
      }
      case LayerKind::Relu: {
        Tensor dx = delta;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (lc.input[i] <= 0.0) dx[i] = 0.0;
        delta = std::move(dx);
        break;
      }
      case LayerKind::Conv: {
        ConvArgs args{ls.stride, ls.padding};
        for (std::size_t a = 0; a < delta.extent(0); ++a) {
          double s = 0.0;
          for (std::size_t i = 0; i < delta.extent(1); ++i)
            for (std::size_t j = 0; j < delta.extent(2); ++j)
              s += delta(a, i, j);
          acc.layers[li].dbias[a] += scale * s;
        }
        if (layer.interspace) {
          const PruningMask dense = PruningMask::ones(layer.mask.bits.shape());
          FBGrads g = fb_backward(m.bases.at(layer.basis_id), layer.coeffs,
                                  mask_grads ? layer.mask : dense, lc.input,
                                  lc.z_cache, delta, args);
          for (std::size_t i = 0; i < g.dlambda.size(); ++i)
            acc.layers[li].dparam[i] += scale * g.dlambda[i];
          auto& db = acc.dbases[layer.basis_id];
          for (std::size_t n = 0; n < db.size(); ++n)
            for (std::size_t i = 0; i < db[n].size(); ++i)
              db[n][i] += scale * g.dg[n][i];
          delta = std::move(g.dx);
        } else {
          ConvGrads g = conv2d_backward(layer.weights, lc.input, delta, args);
          for (std::size_t i = 0; i < g.dh.size(); ++i) {
            const bool kept = layer.mask.bits.size() == 0 ||
                              layer.mask.bits[i] != 0.0;
            if (!mask_grads || kept)
              acc.layers[li].dparam[i] += scale * g.dh[i];
          }
          delta = std::move(g.dx);
        }
        break;
      }
    }
  }
}

inline void backward_sample(const ModelState& m, const SampleCache& cache,
                            int label, Gradients& acc, double scale,
                            bool mask_grads = true) {
  const auto p = softmax(cache.logits);
  Tensor delta({cache.logits.size()});
  for (std::size_t i = 0; i < delta.size(); ++i)
    delta[i] = p[i] - (static_cast<int>(i) == label ? 1.0 : 0.0);
  backward_from_delta(m, cache, std::move(delta), acc, scale, mask_grads);
}

inline Gradients compute_gradients(const ModelState& m, const Dataset& data,
                                   const std::vector<std::size_t>& idx,
                                   bool mask_grads = true) {
  Gradients g = make_gradients(m);
  const double scale = 1.0 / static_cast<double>(idx.size());
  for (std::size_t s : idx) {
    SampleCache cache = forward_sample(m, data.images[s]);
    g.loss += scale * cross_entropy(cache.logits, data.labels[s]);
    backward_sample(m, cache, data.labels[s], g, scale, mask_grads);
  }
  return g;
}

// ---------------------------------------------------------------------------
// optimizer

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool wd_on_fb = false;      // weight decay applied on coefficients, not FBs
  bool wd_on_coeffs = true;
};

inline void sgd_step(ModelState& m, const Gradients& grads, const SgdOptions& opt) {
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    Layer& layer = m.layers[li];
    if (!layer.has_params()) continue;
    Tensor& theta = layer.param();
    const Tensor& g = grads.layers[li].dparam;
    const double wd = opt.wd_on_coeffs ? opt.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (layer.mask.bits.size() && layer.mask.bits[i] == 0.0) {
        layer.v_weights[i] = 0.0;
        theta[i] = 0.0;
        continue;
      }
      layer.v_weights[i] = opt.momentum * layer.v_weights[i] + g[i] + wd * theta[i];
      theta[i] -= opt.lr * layer.v_weights[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      layer.v_bias[i] = opt.momentum * layer.v_bias[i] + grads.layers[li].dbias[i];
      layer.bias[i] -= opt.lr * layer.v_bias[i];
    }
  }
  for (auto& [id, basis] : m.bases) {
    if (!basis.trainable) continue;
    const auto it = grads.dbases.find(id);
    if (it == grads.dbases.end()) continue;
    auto& vb = m.v_bases[id];
    const double wd = opt.wd_on_fb ? opt.weight_decay : 0.0;
    for (std::size_t n = 0; n < basis.count(); ++n)
      for (std::size_t i = 0; i < basis.elements[n].size(); ++i) {
        vb[n][i] = opt.momentum * vb[n][i] + it->second[n][i] +
                   wd * basis.elements[n][i];
        basis.elements[n][i] -= opt.lr * vb[n][i];
      }
  }
  ++m.step;
}

// ---------------------------------------------------------------------------
// evaluation and metrics

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline EvalResult evaluate(const ModelState& m, const Dataset& data) {
  EvalResult r;
  if (data.size() == 0) return r;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    SampleCache cache = forward_sample(m, data.images[s]);
    r.loss += cross_entropy(cache.logits, data.labels[s]);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < cache.logits.size(); ++i)
      if (cache.logits[i] > cache.logits[arg]) arg = i;
    correct += static_cast<int>(arg) == data.labels[s];
  }
  r.loss /= static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

// Mean absolute pairwise cosine similarity of the basis elements.
inline double fb_cosine_similarity(const FilterBasis& basis) {
  const std::size_t n = basis.count();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < basis.elements[j].size(); ++i)
        dot += basis.elements[j][i] * basis.elements[k][i];
      total += std::abs(dot) /
               (frobenius_norm(basis.elements[j]) * frobenius_norm(basis.elements[k]));
    }
  return 2.0 * total / (static_cast<double>(n) * (n - 1));
}

inline double mean_fb_cosine_similarity(const ModelState& m) {
  if (m.bases.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [id, basis] : m.bases) s += fb_cosine_similarity(basis);
  return s / static_cast<double>(m.bases.size());
}

// ---------------------------------------------------------------------------
// snapshots

struct Snapshot {
  std::size_t step = 0;
  ModelState state;
};

inline Snapshot snapshot(const ModelState& m) { return {m.step, m}; }

inline void restore(ModelState& m, const Snapshot& snap) { m = snap.state; }

// Re-apply masks after a restore: zero every masked parameter and slot.
inline void apply_masks(ModelState& m) {
  for (Layer& layer : m.layers) {
    if (!layer.has_params() || layer.mask.bits.size() == 0) continue;
    Tensor& theta = layer.param();
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (layer.mask.bits[i] == 0.0) {
        theta[i] = 0.0;
        layer.v_weights[i] = 0.0;
      }
  }
}

}  // namespace ipr
