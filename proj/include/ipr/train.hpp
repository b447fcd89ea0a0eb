#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ipr/costs.hpp"
#include "ipr/model.hpp"

namespace ipr {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  SgdOptions sgd;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double pruning_rate = 0.0;
  double forward_flops = 0.0;
  double fb_cosine_similarity = 0.0;
};

// Called after every optimizer step with the batch that produced it.
using StepHook = std::function<void(ModelState&, const Dataset&,
                                    const std::vector<std::size_t>& batch)>;

inline std::vector<std::size_t> shuffled_indices(Rng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline EpochMetrics epoch_row(const ModelState& m, const Dataset& data,
                              std::size_t epoch, const std::string& split) {
  EpochMetrics row;
  row.epoch = epoch;
  row.split = split;
  const EvalResult ev = evaluate(m, data);
  row.loss = ev.loss;
  row.accuracy = ev.accuracy;
  row.pruning_rate = m.mode == Mode::IP ? pruning_rate(m).ip : pruning_rate(m).sp;
  row.forward_flops = model_forward_flops(m);
  row.fb_cosine_similarity = mean_fb_cosine_similarity(m);
  return row;
}

inline std::vector<EpochMetrics> train(ModelState& m, const Dataset& train_data,
                                       const Dataset& test_data,
                                       const TrainConfig& cfg,
                                       const StepHook& hook = nullptr) {
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order =
        shuffled_indices(m.rng, train_data.size());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + start,
                                           order.begin() + end);
      const Gradients g = compute_gradients(m, train_data, batch);
      sgd_step(m, g, cfg.sgd);
      if (hook) hook(m, train_data, batch);
    }
    history.push_back(epoch_row(m, train_data, epoch, "train"));
    if (test_data.size())
      history.push_back(epoch_row(m, test_data, epoch, "test"));
  }
  return history;
}

// Runs a fixed number of optimizer steps (used for LT pre-training).
inline void train_steps(ModelState& m, const Dataset& train_data,
                        const TrainConfig& cfg, std::size_t steps,
                        const StepHook& hook = nullptr) {
  std::size_t done = 0;
  while (done < steps) {
    const std::vector<std::size_t> order =
        shuffled_indices(m.rng, train_data.size());
    for (std::size_t start = 0; start < order.size() && done < steps;
         start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + start,
                                           order.begin() + end);
      const Gradients g = compute_gradients(m, train_data, batch);
      sgd_step(m, g, cfg.sgd);
      if (hook) hook(m, train_data, batch);
      ++done;
    }
  }
}

inline std::string metrics_csv_header() {
  return "epoch,split,loss,accuracy,pruning_rate,forward_flops,fb_cosine_similarity";
}

}  // namespace ipr
