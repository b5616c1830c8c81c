#include "mambadet/evaluate.hpp"

#include "mambadet/text.hpp"
#include "mambadet/train.hpp"

#include <cmath>
#include <stdexcept>

namespace mambadet::eval {

using nlohmann::json;

std::vector<int> ModelDetector::predict(std::span<const Image> images) const {
  return train::predict(model_, images);
}

std::string ModelDetector::name() const { return model::family_name(model_.cfg.family); }

double CheckerboardOracle::coefficient(const Image& img) {
  double acc = 0.0;
  for (std::size_t r = 0; r < img.h; ++r) {
    for (std::size_t c = 0; c < img.w; ++c) {
      acc += ((r + c) % 2 == 0 ? 1.0 : -1.0) * img.at(r, c);
    }
  }
  return acc / static_cast<double>(img.h * img.w);
}

std::vector<int> CheckerboardOracle::predict(std::span<const Image> images) const {
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    out.push_back(std::abs(coefficient(img)) > threshold_ ? data::kLabelFake : data::kLabelReal);
  }
  return out;
}

double EvalReport::accuracy_of(const std::string& tag) const {
  for (const auto& s : per_subset) {
    if (s.tag == tag) return s.accuracy;
  }
  throw std::out_of_range("no subset '" + tag + "' in report");
}

json EvalReport::to_json() const {
  json subsets = json::array();
  for (const auto& s : per_subset) {
    subsets.push_back(
        {{"tag", s.tag}, {"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy}});
  }
  return json{{"schema", "mambadet.eval.v1"},
              {"detector", detector},
              {"per_subset", subsets},
              {"mean_accuracy", mean_accuracy},
              {"seeds", seeds},
              {"model_config", model_config}};
}

std::string EvalReport::to_csv() const {
  std::string out = "schema,detector,subset,correct,total,accuracy\n";
  for (const auto& s : per_subset) {
    out += "mambadet.eval.v1," + detector + "," + s.tag + "," + std::to_string(s.correct) + "," +
           std::to_string(s.total) + "," + format_double(s.accuracy) + "\n";
  }
  out += "mambadet.eval.v1," + detector + ",mean,,," + format_double(mean_accuracy) + "\n";
  return out;
}

EvalReport evaluate(const Detector& det, std::span<const data::Subset> subsets,
                    std::vector<std::uint64_t> seeds, json model_config) {
  if (subsets.empty()) throw std::invalid_argument("evaluate: no test subsets");
  EvalReport report;
  report.detector = det.name();
  report.seeds = std::move(seeds);
  report.model_config = std::move(model_config);
  double sum = 0.0;
  for (const auto& s : subsets) {
    if (s.images.empty()) throw std::invalid_argument("evaluate: subset '" + s.tag + "' is empty");
    const auto pred = det.predict(s.images);
    SubsetResult r;
    r.tag = s.tag;
    r.total = s.images.size();
    for (int p : pred) r.correct += p == s.label ? 1 : 0;
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    sum += r.accuracy;
    report.per_subset.push_back(r);
  }
  report.mean_accuracy = sum / static_cast<double>(subsets.size());
  return report;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string export_features(const model::Model& m, std::span<const data::Subset> subsets) {
  constexpr std::size_t kBatch = 64;
  const std::size_t dim = m.cfg.embed_dim;
  std::string out = "subset_tag,label";
  for (std::size_t k = 0; k < dim; ++k) out += ",f_" + std::to_string(k);
  out += '\n';
  for (const auto& s : subsets) {
    const std::span<const Image> images(s.images);
    for (std::size_t begin = 0; begin < images.size(); begin += kBatch) {
      const std::size_t n = std::min(kBatch, images.size() - begin);
      const ad::Tensor feats = model::penultimate(m, images.subspan(begin, n));
      const auto v = feats.data();
      for (std::size_t i = 0; i < n; ++i) {
        out += s.tag;
        out += s.label == data::kLabelFake ? ",fake" : ",real";
        for (std::size_t k = 0; k < dim; ++k) {
          out += ',';
          out += format_double(v[i * dim + k]);
        }
        out += '\n';
      }
    }
  }
  return out;
}

}  // namespace mambadet::eval
