#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ipr/scores.hpp"
#include "ipr/train.hpp"

namespace ipr {

enum class ScoreKind { Random, Magnitude, Snip, Grasp, SynFlow };
enum class DstMode { SET, RigL };

struct ScheduleConfig {
  double p = 0.0;               // target pruning rate
  std::size_t t0 = 0;           // GMP start / LT rewind step
  std::size_t t1 = 0;           // GMP end step
  std::size_t interval = 0;     // GMP update cadence N, DST cadence dT
  double p_init = 0.5;          // DST cosine start
  double p_min = 0.005;         // DST cosine end
  std::size_t total_steps = 0;  // DST cosine horizon T
  std::size_t synflow_iters = 100;
};

// ---------------------------------------------------------------------------
// pruning at initialization

// Global one-shot mask; SynFlow prunes iteratively with an exponential
// schedule p_k = 1 - (1-p)^(k/iters), re-scoring the masked model each round.
inline void pai_prune(ModelState& m, ScoreKind kind, double p, const Dataset& data,
                      const BatchList& batches, std::size_t synflow_iters = 100) {
  switch (kind) {
    case ScoreKind::Random:
      mask_global(m, score_random(m.rng, m), p);
      break;
    case ScoreKind::Magnitude:
      mask_global(m, score_magnitude(m), p);
      break;
    case ScoreKind::Snip:
      mask_global(m, score_snip(m, data, batches), p);
      break;
    case ScoreKind::Grasp:
      mask_global(m, score_grasp(m, data, batches), p);
      break;
    case ScoreKind::SynFlow: {
      for (std::size_t k = 1; k <= synflow_iters; ++k) {
        const double pk =
            1.0 - std::pow(1.0 - p, static_cast<double>(k) /
                                        static_cast<double>(synflow_iters));
        ScoreSet s = score_synflow(m);
        // keep rounds nested: already-pruned entries can never win a tie
        for (std::size_t li : prunable_layers(m)) {
          const Tensor& bits = m.layers[li].mask.bits;
          for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i] == 0.0) s.per_layer[li][i] = -HUGE_VAL;
        }
        mask_global(m, s, pk);
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// gradual magnitude pruning

// Cubic ramp; 0 before t0, p after t1 (the end-of-ramp value is held).
inline double gmp_rate(std::size_t t, double p, std::size_t t0, std::size_t t1) {
  if (t0 >= t1) throw std::invalid_argument("gmp_rate: requires t0 < t1");
  if (t <= t0) return 0.0;
  if (t >= t1) return p;
  const double u = 1.0 - static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
  return p * (1.0 - u * u * u);
}

// Magnitude-prunes to the current rate every cfg.interval steps; pruned
// coefficients never regrow.
inline void gmp_step(ModelState& m, std::size_t step, const ScheduleConfig& cfg) {
  if (cfg.interval == 0 || step % cfg.interval != 0) return;
  const double rate = gmp_rate(step, cfg.p, cfg.t0, cfg.t1);
  if (rate <= 0.0) return;
  ScoreSet s = score_magnitude(m);
  for (std::size_t li : prunable_layers(m)) {
    const Tensor& bits = m.layers[li].mask.bits;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i] == 0.0) s.per_layer[li][i] = -HUGE_VAL;
  }
  mask_global(m, s, rate);
}

// ---------------------------------------------------------------------------
// Erdos-Renyi-kernel layer sparsities

struct ErkLayer {
  std::size_t co = 0;
  std::size_t ci = 0;
  std::size_t k = 1;  // 1 for linear layers
  std::size_t size() const { return co * ci * k * k; }
};

// Layer sparsity 1 - eps*(co+ci+2K)/(co*ci*K^2), eps solved by bisection so
// the total kept count hits floor((1-p)*d); rounding remainder goes to the
// largest layer.
inline std::vector<double> erk_sparsities(const std::vector<ErkLayer>& layers,
                                          double p_global) {
  if (layers.empty()) throw std::invalid_argument("erk_sparsities: no layers");
  if (p_global < 0.0 || p_global > 1.0)
    throw std::invalid_argument("erk_sparsities: p outside [0,1]");
  std::size_t d = 0;
  for (const ErkLayer& l : layers) d += l.size();
  const std::size_t target =
      static_cast<std::size_t>(std::floor((1.0 - p_global) * static_cast<double>(d)));

  auto density = [&](const ErkLayer& l, double eps) {
    const double raw = eps * static_cast<double>(l.co + l.ci + 2 * l.k) /
                       static_cast<double>(l.co * l.ci * l.k * l.k);
    return std::clamp(raw, 0.0, 1.0);
  };
  auto kept_at = [&](double eps) {
    std::vector<std::size_t> kept(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i)
      kept[i] = static_cast<std::size_t>(
          std::floor(density(layers[i], eps) * static_cast<double>(layers[i].size())));
    return kept;
  };
  auto total = [](const std::vector<std::size_t>& kept) {
    std::size_t s = 0;
    for (std::size_t k : kept) s += k;
    return s;
  };

  double lo = 0.0, hi = 1.0;
  while (total(kept_at(hi)) < target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (total(kept_at(mid)) >= target)
      hi = mid;
    else
      lo = mid;
  }
  std::vector<std::size_t> kept = kept_at(hi);

  // fix residual rounding error on the largest layer
  std::size_t largest = 0;
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i].size() > layers[largest].size()) largest = i;
  std::size_t have = total(kept);
  while (have > target && kept[largest] > 0) {
    --kept[largest];
    --have;
  }
  while (have < target && kept[largest] < layers[largest].size()) {
    ++kept[largest];
    ++have;
  }

  std::vector<double> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i)
    out[i] = 1.0 - static_cast<double>(kept[i]) /
                       static_cast<double>(layers[i].size());
  return out;
}

inline std::vector<double> erk_sparsities(const ModelState& m, double p_global) {
  std::vector<ErkLayer> layers;
  for (std::size_t li : prunable_layers(m)) {
    const LayerSpec& ls = m.layers[li].spec;
    if (ls.kind == LayerKind::Conv)
      layers.push_back({ls.out_channels, ls.in_channels, ls.kernel});
    else
      layers.push_back({ls.out_features, ls.in_features, 1});
  }
  return erk_sparsities(layers, p_global);
}

// ---------------------------------------------------------------------------
// dynamic sparse training (SET / RigL)

// Cosine-decayed update fraction.
inline double dst_rate(std::size_t t, std::size_t total, double p_init = 0.5,
                       double p_min = 0.005) {
  if (total == 0) throw std::invalid_argument("dst_rate: T must be positive");
  const double x = static_cast<double>(std::min(t, total)) /
                   static_cast<double>(total);
  return p_min + 0.5 * (p_init - p_min) * (1.0 + std::cos(x * M_PI));
}

// One prune/regrow cycle. Per layer: drop the smallest-magnitude fraction p_t
// of kept coefficients, regrow the same count among the previously masked
// positions (SET: uniform, RigL: largest dense-gradient magnitude), values 0.
// grads may be empty for SET.
inline void dst_update(ModelState& m, DstMode mode, double p_t,
                       const Gradients& grads) {
  if (p_t < 0.0 || p_t > 1.0)
    throw std::invalid_argument("dst_update: p_t outside [0,1]");
  // per-layer update counts; floor, remainder to the layer with most kept
  const auto lis = prunable_layers(m);
  std::vector<std::size_t> kept_count(lis.size()), cnt(lis.size());
  std::size_t kept_total = 0;
  for (std::size_t j = 0; j < lis.size(); ++j) {
    kept_count[j] = m.layers[lis[j]].mask.popcount();
    kept_total += kept_count[j];
  }
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < lis.size(); ++j) {
    cnt[j] = static_cast<std::size_t>(
        std::floor(p_t * static_cast<double>(kept_count[j])));
    assigned += cnt[j];
  }
  const std::size_t want =
      static_cast<std::size_t>(std::floor(p_t * static_cast<double>(kept_total)));
  if (want > assigned) {
    std::size_t largest = 0;
    for (std::size_t j = 1; j < lis.size(); ++j)
      if (kept_count[j] > kept_count[largest]) largest = j;
    cnt[largest] += std::min(want - assigned, kept_count[largest] - cnt[largest]);
  }

  for (std::size_t j = 0; j < lis.size(); ++j) {
    Layer& layer = m.layers[lis[j]];
    Tensor& bits = layer.mask.bits;
    if (cnt[j] == 0) continue;

    // candidates for regrowth: positions masked before this update
    std::vector<std::size_t> free_pos;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i] == 0.0) free_pos.push_back(i);

    // prune the cnt smallest kept magnitudes
    std::vector<double> score(bits.size(), -HUGE_VAL);
    const Tensor& theta = layer.param();
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i] != 0.0) score[i] = std::abs(theta[i]);
    const std::vector<std::size_t> keep =
        top_k_indices(score, kept_count[j] - cnt[j]);
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = 0.0;
    for (std::size_t i : keep) bits[i] = 1.0;

    // regrow
    const std::size_t grow = std::min(cnt[j], free_pos.size());
    std::vector<std::size_t> grown;
    if (mode == DstMode::SET) {
      for (std::size_t g = 0; g < grow; ++g) {
        const std::size_t pick =
            g + m.rng.uniform_index(free_pos.size() - g);
        std::swap(free_pos[g], free_pos[pick]);
        grown.push_back(free_pos[g]);
      }
    } else {
      if (grads.layers.size() != m.layers.size())
        throw std::invalid_argument("dst_update: RigL needs dense gradients");
      std::vector<double> gscore(free_pos.size());
      const Tensor& g = grads.layers[lis[j]].dparam;
      for (std::size_t q = 0; q < free_pos.size(); ++q)
        gscore[q] = std::abs(g[free_pos[q]]);
      for (std::size_t q : top_k_indices(gscore, grow))
        grown.push_back(free_pos[q]);
    }
    Tensor& param = layer.param();
    for (std::size_t i : grown) {
      bits[i] = 1.0;
      param[i] = 0.0;
      layer.v_weights[i] = 0.0;
    }
  }
  apply_masks(m);
}

// Hook wiring DST into the training loop.
inline StepHook dst_hook(DstMode mode, const ScheduleConfig& cfg) {
  return [mode, cfg](ModelState& m, const Dataset& data,
                     const std::vector<std::size_t>& batch) {
    if (cfg.interval == 0 || m.step % cfg.interval != 0) return;
    if (cfg.total_steps && m.step >= cfg.total_steps) return;
    const double p_t = dst_rate(m.step, cfg.total_steps ? cfg.total_steps : 1,
                                cfg.p_init, cfg.p_min);
    Gradients g;
    if (mode == DstMode::RigL)
      g = compute_gradients(m, data, batch, /*mask_grads=*/false);
    dst_update(m, mode, p_t, g);
  };
}

inline StepHook gmp_hook(const ScheduleConfig& cfg) {
  return [cfg](ModelState& m, const Dataset&, const std::vector<std::size_t>&) {
    gmp_step(m, m.step, cfg);
  };
}

// ---------------------------------------------------------------------------
// lottery tickets

struct LtResult {
  ModelState model;
  std::vector<EpochMetrics> history;
  std::size_t rounds = 0;
};

// Global magnitude prune over conv layers only (FC stays dense), keeping
// exactly `keep` coefficients; already-masked entries never return.
inline void lt_prune_conv(ModelState& m, std::size_t keep) {
  ScoreSet s = score_magnitude(m);
  std::vector<std::size_t> conv_lis;
  for (std::size_t li : prunable_layers(m))
    if (m.layers[li].spec.kind == LayerKind::Conv) conv_lis.push_back(li);
  std::vector<double> flat;
  for (std::size_t li : conv_lis) {
    const Tensor& bits = m.layers[li].mask.bits;
    for (std::size_t i = 0; i < bits.size(); ++i) {
      const double v = bits[i] != 0.0 ? s.per_layer[li][i] : -HUGE_VAL;
      flat.push_back(v);
    }
  }
  const std::vector<std::size_t> keep_idx = top_k_indices(flat, keep);
  std::vector<char> kept(flat.size(), 0);
  for (std::size_t i : keep_idx) kept[i] = 1;
  std::size_t off = 0;
  for (std::size_t li : conv_lis) {
    Tensor& bits = m.layers[li].mask.bits;
    for (std::size_t i = 0; i < bits.size(); ++i)
      bits[i] = kept[off + i] ? 1.0 : 0.0;
    off += bits.size();
  }
  apply_masks(m);
}

// Iterative magnitude pruning with rewinding: pre-train t0 steps, snapshot,
// then rounds of (train epoch budget, prune 20% of conv survivors, rewind
// parameters/bases/optimizer/PRNG to the snapshot). The last round trims to
// the exact target.
inline LtResult lt_run(ModelState m, const Dataset& train_data,
                       const Dataset& test_data, const TrainConfig& cfg,
                       double p_target, std::size_t t0) {
  if (p_target < 0.0 || p_target >= 1.0)
    throw std::invalid_argument("lt_run: p_target outside [0,1)");
  std::size_t conv_dense = 0;
  for (std::size_t li : prunable_layers(m))
    if (m.layers[li].spec.kind == LayerKind::Conv)
      conv_dense += m.layers[li].param().size();

  train_steps(m, train_data, cfg, t0);
  const Snapshot snap = snapshot(m);

  LtResult out;
  std::size_t rounds = 0;
  if (p_target > 0.0)
    rounds = static_cast<std::size_t>(
        std::ceil(std::log(1.0 - p_target) / std::log(0.8) - 1e-12));
  for (std::size_t r = 1; r <= rounds; ++r) {
    train(m, train_data, test_data, cfg);
    const double p_r = std::min(1.0 - std::pow(0.8, static_cast<double>(r)),
                                p_target);
    const std::size_t keep = static_cast<std::size_t>(
        std::floor((1.0 - p_r) * static_cast<double>(conv_dense)));
    // carry the new masks through the rewind
    std::vector<Tensor> masks;
    lt_prune_conv(m, keep);
    for (const Layer& layer : m.layers) masks.push_back(layer.mask.bits);
    restore(m, snap);
    for (std::size_t li = 0; li < m.layers.size(); ++li)
      m.layers[li].mask.bits = masks[li];
    apply_masks(m);
  }
  out.history = train(m, train_data, test_data, cfg);
  out.model = std::move(m);
  out.rounds = rounds;
  return out;
}

// ---------------------------------------------------------------------------
// prune after training

// One-shot global magnitude prune of a converged dense model; for IP the
// coefficients are pruned and the trained bases kept as-is.
inline void ft_prune(ModelState& m, double p) {
  mask_global(m, score_magnitude(m), p);
}

}  // namespace ipr
