#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ipr/core.hpp"
#include "ipr/model.hpp"

namespace ipr {

// Per-coefficient scores congruent to each prunable parameter tensor,
// indexed by layer.
struct ScoreSet {
  std::vector<Tensor> per_layer;
};

inline std::vector<std::size_t> prunable_layers(const ModelState& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].has_params() && m.layers[i].spec.prunable) out.push_back(i);
  return out;
}

inline std::size_t prunable_param_count(const ModelState& m) {
  std::size_t d = 0;
  for (std::size_t li : prunable_layers(m)) d += m.layers[li].param().size();
  return d;
}

inline ScoreSet make_scores(const ModelState& m) {
  ScoreSet s;
  s.per_layer.resize(m.layers.size());
  for (std::size_t li : prunable_layers(m))
    s.per_layer[li] = Tensor(m.layers[li].param().shape());
  return s;
}

// Flat view over the prunable parameters, layer-major.
inline std::vector<double> get_prunable_vector(const ModelState& m) {
  std::vector<double> v;
  v.reserve(prunable_param_count(m));
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& t = m.layers[li].param();
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return v;
}

inline void set_prunable_vector(ModelState& m, const std::vector<double>& v) {
  std::size_t off = 0;
  for (std::size_t li : prunable_layers(m)) {
    Tensor& t = m.layers[li].param();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = v[off + i];
    off += t.size();
  }
  if (off != v.size())
    throw std::invalid_argument("set_prunable_vector: length mismatch");
}

inline std::vector<double> flatten_scores(const ModelState& m, const ScoreSet& s) {
  std::vector<double> v;
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& t = s.per_layer[li];
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return v;
}

// ---------------------------------------------------------------------------
// scores

inline ScoreSet score_random(Rng& rng, const ModelState& m) {
  ScoreSet s = make_scores(m);
  for (std::size_t li : prunable_layers(m)) {
    Tensor& t = s.per_layer[li];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  }
  return s;
}

inline ScoreSet score_magnitude(const ModelState& m) {
  ScoreSet s = make_scores(m);
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& p = m.layers[li].param();
    Tensor& t = s.per_layer[li];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::abs(p[i]);
  }
  return s;
}

using BatchList = std::vector<std::vector<std::size_t>>;

inline Gradients averaged_gradient(const ModelState& m, const Dataset& data,
                                   const BatchList& batches) {
  if (batches.empty())
    throw std::invalid_argument("averaged_gradient: empty batch stream");
  Gradients acc = make_gradients(m);
  const double w = 1.0 / static_cast<double>(batches.size());
  for (const auto& idx : batches) {
    Gradients g = compute_gradients(m, data, idx, /*mask_grads=*/false);
    acc.loss += w * g.loss;
    for (std::size_t li = 0; li < acc.layers.size(); ++li) {
      if (g.layers[li].dparam.size() == 0) continue;
      for (std::size_t i = 0; i < g.layers[li].dparam.size(); ++i)
        acc.layers[li].dparam[i] += w * g.layers[li].dparam[i];
      for (std::size_t i = 0; i < g.layers[li].dbias.size(); ++i)
        acc.layers[li].dbias[i] += w * g.layers[li].dbias[i];
    }
    for (auto& [id, db] : g.dbases)
      for (std::size_t n = 0; n < db.size(); ++n)
        for (std::size_t i = 0; i < db[n].size(); ++i)
          acc.dbases[id][n][i] += w * db[n][i];
  }
  return acc;
}

// |dL/dtheta * theta|, gradient averaged over the batch stream
inline ScoreSet score_snip(const ModelState& m, const Dataset& data,
                           const BatchList& batches) {
  const Gradients g = averaged_gradient(m, data, batches);
  ScoreSet s = make_scores(m);
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& p = m.layers[li].param();
    for (std::size_t i = 0; i < p.size(); ++i)
      s.per_layer[li][i] = std::abs(g.layers[li].dparam[i] * p[i]);
  }
  return s;
}

// Central-difference Hessian-vector product over an arbitrary gradient
// oracle; eps scales with the parameter magnitude.
inline std::vector<double> hvp_central(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
    const std::vector<double>& theta, const std::vector<double>& v) {
  double inf_norm = 0.0;
  for (double t : theta) inf_norm = std::max(inf_norm, std::abs(t));
  const double eps = 1e-4 * (1.0 + inf_norm);
  std::vector<double> plus(theta), minus(theta);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    plus[i] += eps * v[i];
    minus[i] -= eps * v[i];
  }
  const std::vector<double> gp = grad_fn(plus);
  const std::vector<double> gm = grad_fn(minus);
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    out[i] = (gp[i] - gm[i]) / (2.0 * eps);
  return out;
}

inline std::vector<double> prunable_gradient_vector(const ModelState& m,
                                                    const Gradients& g) {
  std::vector<double> v;
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& t = g.layers[li].dparam;
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return v;
}

// H*v for the network loss on the given batches, by central differences over
// the prunable parameters.
inline std::vector<double> hvp_fd(const ModelState& m, const Dataset& data,
                                  const BatchList& batches,
                                  const std::vector<double>& v) {
  ModelState work = m;
  auto grad_fn = [&](const std::vector<double>& theta) {
    set_prunable_vector(work, theta);
    return prunable_gradient_vector(work, averaged_gradient(work, data, batches));
  };
  return hvp_central(grad_fn, get_prunable_vector(m), v);
}

// S = -(H*g) (.) theta; the highest scores are kept.
inline ScoreSet score_grasp(const ModelState& m, const Dataset& data,
                            const BatchList& batches) {
  const Gradients g = averaged_gradient(m, data, batches);
  const std::vector<double> gv = prunable_gradient_vector(m, g);
  const std::vector<double> hg = hvp_fd(m, data, batches, gv);
  ScoreSet s = make_scores(m);
  std::size_t off = 0;
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& p = m.layers[li].param();
    for (std::size_t i = 0; i < p.size(); ++i)
      s.per_layer[li][i] = -hg[off + i] * p[i];
    off += p.size();
  }
  return s;
}

// Path-norm score: all-ones input through the absolute-value network,
// R = sum of outputs, score = |dR/d|theta|| * |theta|.
inline ScoreSet score_synflow(const ModelState& m) {
  ModelState abs_model = m;
  for (Layer& layer : abs_model.layers) {
    if (!layer.has_params()) continue;
    Tensor& p = layer.param();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::abs(p[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.0;
  }
  for (auto& [id, basis] : abs_model.bases)
    for (Tensor& g : basis.elements)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::abs(g[i]);

  const Tensor ones({m.spec.input_channels, m.spec.input_h, m.spec.input_w}, 1.0);
  SampleCache cache = forward_sample(abs_model, ones);
  Gradients acc = make_gradients(abs_model);
  Tensor delta({cache.logits.size()}, 1.0);  // R = sum of logits
  backward_from_delta(abs_model, cache, std::move(delta), acc, 1.0,
                      /*mask_grads=*/false);

  ScoreSet s = make_scores(m);
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& p = abs_model.layers[li].param();
    for (std::size_t i = 0; i < p.size(); ++i)
      s.per_layer[li][i] = std::abs(acc.layers[li].dparam[i]) * p[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// mask construction

// Keep the top floor((1-p)*d) scores over all prunable parameters.
inline void mask_global(ModelState& m, const ScoreSet& scores, double p) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mask_global: p outside [0,1]");
  const std::vector<double> flat = flatten_scores(m, scores);
  const std::size_t d = flat.size();
  const std::size_t k =
      static_cast<std::size_t>(std::floor((1.0 - p) * static_cast<double>(d)));
  const std::vector<std::size_t> keep = top_k_indices(flat, k);
  std::vector<char> kept(d, 0);
  for (std::size_t i : keep) kept[i] = 1;
  std::size_t off = 0;
  for (std::size_t li : prunable_layers(m)) {
    Tensor& bits = m.layers[li].mask.bits;
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = kept[off + i] ? 1.0 : 0.0;
    off += bits.size();
  }
  apply_masks(m);
}

// Per-layer rates; p_per_layer indexed like prunable_layers(m).
inline void mask_layerwise(ModelState& m, const ScoreSet& scores,
                           const std::vector<double>& p_per_layer) {
  const auto layers = prunable_layers(m);
  if (p_per_layer.size() != layers.size())
    throw std::invalid_argument("mask_layerwise: rate count mismatch");
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const std::size_t li = layers[j];
    const double p = p_per_layer[j];
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("mask_layerwise: p outside [0,1]");
    const Tensor& sc = scores.per_layer[li];
    const std::size_t k = static_cast<std::size_t>(
        std::floor((1.0 - p) * static_cast<double>(sc.size())));
    const std::vector<std::size_t> keep = top_k_indices(sc.values(), k);
    Tensor& bits = m.layers[li].mask.bits;
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = 0.0;
    for (std::size_t i : keep) bits[i] = 1.0;
  }
  apply_masks(m);
}

}  // namespace ipr
