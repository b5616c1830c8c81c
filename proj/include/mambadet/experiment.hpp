// Cross-generator protocol: train each family on one generator's fakes,
// test on real images and every generator, aggregate over seeds.
#pragma once

#include "mambadet/dataset.hpp"
#include "mambadet/evaluate.hpp"
#include "mambadet/model.hpp"
#include "mambadet/train.hpp"

#include "json.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mambadet::experiment {

struct ExperimentConfig {
  std::vector<model::ModelConfig> models;  // one per family
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  data::DatasetConfig data;  // its seed is replaced by each run's seed
  train::TrainHyper hyper;   // likewise
  double in_dist_threshold = 0.95;

  void validate() const;
};

struct RunRecord {
  std::string family;
  std::uint64_t seed = 0;
  eval::EvalReport report;
  double in_dist = 0.0;  // mean of the real and training-generator subsets
  double ood = 0.0;      // mean of the remaining generator subsets
  double best_val = 0.0;
  double seconds = 0.0;
};

struct Stat {
  double mean = 0.0;
  double sd = 0.0;
};

struct FamilySummary {
  std::string family;
  Stat in_dist;
  Stat ood;
  std::map<std::string, Stat> per_subset;
  bool passes = false;  // in_dist.mean >= threshold
};

struct ExperimentReport {
  std::string train_generator;
  double threshold = 0.0;
  std::vector<RunRecord> runs;
  std::vector<FamilySummary> families;

  bool all_pass() const;
  nlohmann::json to_json() const;
  // One row per (family, seed, subset), plus summary rows with seed = "mean"/"sd".
  std::string to_csv() const;
};

using RunLogFn = std::function<void(const RunRecord&)>;

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunLogFn& log = nullptr);

}  // namespace mambadet::experiment
