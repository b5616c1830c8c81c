// Train/val/test collections of synthetic images for the cross-generator protocol.
//
// Train and val mix real images with fakes from one training generator. The
// test split holds one pure subset per generator plus a real subset. Every
// image is a pure function of its seed, and seed ranges never overlap across
// (split, subset) pairs, so a manifest fully determines the data.
#pragma once

#include "mambadet/synth.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mambadet::data {

inline constexpr int kLabelReal = 0;
inline constexpr int kLabelFake = 1;

struct Subset {
  std::string tag;  // "real" or a generator tag
  int label = kLabelReal;
  std::vector<std::uint64_t> seeds;
  std::vector<Image> images;

  std::size_t size() const { return images.size(); }
};

struct Split {
  std::string name;
  std::vector<Subset> subsets;

  std::size_t size() const;
};

// Images and labels of a split in subset order.
struct Flat {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> tags;
};
Flat flatten(const Split& split);

struct DatasetConfig {
  std::size_t n_train = 1000;  // split evenly between real and fake
  std::size_t n_val = 200;
  std::size_t n_test = 500;  // per test subset
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::vector<SynthGenSpec> generators = {{Generator::kCheckerboard, 0.5},
                                          {Generator::kRinging, 0.5},
                                          {Generator::kGridNoise, 0.5}};
  Generator train_generator = Generator::kCheckerboard;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct Dataset {
  DatasetConfig cfg;
  Split train;
  Split val;
  Split test;

  // Subsets, counts, seed ranges and generator parameters.
  nlohmann::json manifest() const;
};

// Largest subset a split may hold; also the spacing of seed ranges.
inline constexpr std::uint64_t kSubsetSeedSpan = 1ULL << 20;

Dataset make_dataset(const DatasetConfig& cfg);
// Rebuilds the dataset a manifest describes.
Dataset dataset_from_manifest(const nlohmann::json& manifest);

}  // namespace mambadet::data
