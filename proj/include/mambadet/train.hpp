// Minibatch Adam training of a detector with cosine learning-rate decay and
// best-validation model selection.
#pragma once

#include "mambadet/dataset.hpp"
#include "mambadet/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mambadet::train {

struct TrainHyper {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;  // drives the per-epoch shuffles
  // Pause after this many total steps (0 = run to completion); used to checkpoint a run.
  std::size_t stop_after = 0;

  void validate() const;
};

struct TrainState {
  std::uint64_t step = 0;
  std::uint64_t total_steps = 0;
  std::uint64_t shuffle_seed = 0;
  std::vector<std::vector<double>> m;  // Adam first moments, one per parameter
  std::vector<std::vector<double>> v;  // Adam second moments
  double best_val = -1.0;
  std::uint64_t best_step = 0;
  std::vector<std::vector<double>> best_params;
  std::vector<double> loss_history;  // one entry per step
  std::vector<double> val_history;   // one entry per epoch

  bool finished() const { return total_steps != 0 && step >= total_steps; }
  std::string serialize() const;
  static TrainState deserialize(const std::string& bytes);
};

// Learning rate at `step` of `total`: lr * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double lr, std::uint64_t step, std::uint64_t total);

// One Adam update of every parameter from its accumulated gradient; clears gradients.
void adam_step(vision::ParamList& params, TrainState& state, const TrainHyper& hyper, double lr);

// Predicted class per image, evaluated in fixed-size batches without a tape.
std::vector<int> predict(const model::Model& m, std::span<const vision::Image> images);
double accuracy(const model::Model& m, const data::Flat& set);

using ProgressFn = std::function<void(const TrainState&, std::size_t epoch)>;

// Trains `m` in place. Starts fresh unless `resume` holds a state from an
// earlier call with the same data and hyperparameters. On completion the
// parameters with the best validation accuracy are restored into `m`.
// Throws ad::NumericError naming the step if the loss becomes non-finite.
TrainState train(model::Model& m, const data::Flat& train_set, const data::Flat& val_set,
                 const TrainHyper& hyper, std::optional<TrainState> resume = std::nullopt,
                 const ProgressFn& progress = nullptr);

}  // namespace mambadet::train
