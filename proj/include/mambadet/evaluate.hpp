// Per-subset accuracy reports and penultimate-feature export.
#pragma once

#include "mambadet/dataset.hpp"
#include "mambadet/model.hpp"

#include "json.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mambadet::eval {

using vision::Image;

// Anything that labels images real (0) or fake (1).
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<int> predict(std::span<const Image> images) const = 0;
  virtual std::string name() const = 0;
};

class ModelDetector : public Detector {
 public:
  explicit ModelDetector(const model::Model& m) : model_(m) {}
  std::vector<int> predict(std::span<const Image> images) const override;
  std::string name() const override;

 private:
  const model::Model& model_;
};

// Hand-built G1 detector: projects the image onto the period-2 checkerboard
// and calls it fake when the coefficient magnitude exceeds `threshold`.
class CheckerboardOracle : public Detector {
 public:
  explicit CheckerboardOracle(double threshold = 0.025) : threshold_(threshold) {}
  static double coefficient(const Image& img);
  std::vector<int> predict(std::span<const Image> images) const override;
  std::string name() const override { return "checkerboard-oracle"; }

 private:
  double threshold_;
};

class ConstantDetector : public Detector {
 public:
  explicit ConstantDetector(int label) : label_(label) {}
  std::vector<int> predict(std::span<const Image> images) const override {
    return std::vector<int>(images.size(), label_);
  }
  std::string name() const override { return "constant-" + std::to_string(label_); }

 private:
  int label_;
};

struct SubsetResult {
  std::string tag;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::string detector;
  std::vector<SubsetResult> per_subset;  // in subset order
  double mean_accuracy = 0.0;            // unweighted mean over subsets
  std::vector<std::uint64_t> seeds;
  nlohmann::json model_config;

  double accuracy_of(const std::string& tag) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

EvalReport evaluate(const Detector& det, std::span<const data::Subset> subsets,
                    std::vector<std::uint64_t> seeds = {},
                    nlohmann::json model_config = nlohmann::json::object());

double mean_of(std::span<const double> v);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev_of(std::span<const double> v);

// CSV with header subset_tag,label,f_0..f_{D-1}; one row per image, in subset order.
std::string export_features(const model::Model& m, std::span<const data::Subset> subsets);

}  // namespace mambadet::eval
