#include "mambadet/dataset.hpp"

#include <stdexcept>

namespace mambadet::data {

using nlohmann::json;

std::size_t Split::size() const {
  std::size_t n = 0;
  for (const auto& s : subsets) n += s.size();
  return n;
}

Flat flatten(const Split& split) {
  Flat f;
  for (const auto& s : split.subsets) {
    for (const auto& img : s.images) {
      f.images.push_back(img);
      f.labels.push_back(s.label);
      f.tags.push_back(s.tag);
    }
  }
  return f;
}

void DatasetConfig::validate() const {
  if (n_train < 2 || n_val < 2 || n_test < 1) {
    throw std::invalid_argument("dataset: need n_train >= 2, n_val >= 2 and n_test >= 1");
  }
  if (n_train > kSubsetSeedSpan || n_val > kSubsetSeedSpan || n_test > kSubsetSeedSpan) {
    throw std::invalid_argument("dataset: subsets are limited to " +
                                std::to_string(kSubsetSeedSpan) + " images");
  }
  if (seed > (~0ULL >> 32)) throw std::invalid_argument("dataset: seed must fit in 32 bits");
  if (generators.empty()) throw std::invalid_argument("dataset: empty generator list");
  bool has_train = false;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    generators[i].validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (generators[j].id == generators[i].id) {
        throw std::invalid_argument("dataset: generator " + generator_tag(generators[i].id) +
                                    " listed twice");
      }
    }
    has_train = has_train || generators[i].id == train_generator;
  }
  if (!has_train) {
    throw std::invalid_argument("dataset: training generator " + generator_tag(train_generator) +
                                " is not in the generator list");
  }
}

json DatasetConfig::to_json() const {
  json gens = json::array();
  for (const auto& g : generators) {
    gens.push_back({{"id", generator_tag(g.id)}, {"strength", g.strength}});
  }
  return json{{"n_train", n_train},   {"n_val", n_val},
              {"n_test", n_test},     {"image_h", image_h},
              {"image_w", image_w},   {"generators", gens},
              {"train_generator", generator_tag(train_generator)},
              {"seed", seed}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  try {
    c.n_train = j.at("n_train").get<std::size_t>();
    c.n_val = j.at("n_val").get<std::size_t>();
    c.n_test = j.at("n_test").get<std::size_t>();
    c.image_h = j.at("image_h").get<std::size_t>();
    c.image_w = j.at("image_w").get<std::size_t>();
    c.generators.clear();
    for (const auto& g : j.at("generators")) {
      c.generators.push_back({parse_generator(g.at("id").get<std::string>()),
                              g.at("strength").get<double>()});
    }
    c.train_generator = parse_generator(j.at("train_generator").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("dataset config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

// Seed layout: dataset seed in the high 32 bits, then split and subset slots.
std::uint64_t range_begin(const DatasetConfig& cfg, std::uint64_t split, std::uint64_t slot) {
  return (cfg.seed << 32) + (split * 8 + slot) * kSubsetSeedSpan;
}

Subset make_subset(const DatasetConfig& cfg, std::uint64_t split, std::uint64_t slot,
                   std::size_t count, const std::string& tag, const SynthGenSpec* spec) {
  Subset s;
  s.tag = tag;
  s.label = spec ? kLabelFake : kLabelReal;
  const std::uint64_t begin = range_begin(cfg, split, slot);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = begin + i;
    s.seeds.push_back(seed);
    s.images.push_back(spec ? synth_fake(seed, cfg.image_h, cfg.image_w, *spec)
                            : synth_real(seed, cfg.image_h, cfg.image_w));
  }
  return s;
}

const SynthGenSpec& find_spec(const DatasetConfig& cfg, Generator id) {
  for (const auto& g : cfg.generators) {
    if (g.id == id) return g;
  }
  throw std::invalid_argument("dataset: generator " + generator_tag(id) + " not configured");
}

Split mixed_split(const DatasetConfig& cfg, const std::string& name, std::uint64_t index,
                  std::size_t count) {
  const SynthGenSpec& spec = find_spec(cfg, cfg.train_generator);
  Split split;
  split.name = name;
  split.subsets.push_back(make_subset(cfg, index, 0, count / 2, "real", nullptr));
  split.subsets.push_back(
      make_subset(cfg, index, 1, count - count / 2, generator_tag(spec.id), &spec));
  return split;
}

}  // namespace

Dataset make_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.cfg = cfg;
  ds.train = mixed_split(cfg, "train", 0, cfg.n_train);
  ds.val = mixed_split(cfg, "val", 1, cfg.n_val);
  ds.test.name = "test";
  ds.test.subsets.push_back(make_subset(cfg, 2, 0, cfg.n_test, "real", nullptr));
  for (std::size_t g = 0; g < cfg.generators.size(); ++g) {
    ds.test.subsets.push_back(make_subset(cfg, 2, g + 1, cfg.n_test,
                                          generator_tag(cfg.generators[g].id),
                                          &cfg.generators[g]));
  }
  return ds;
}

json Dataset::manifest() const {
  json splits = json::array();
  for (const Split* split : {&train, &val, &test}) {
    json subsets = json::array();
    for (const auto& s : split->subsets) {
      subsets.push_back({{"tag", s.tag},
                         {"label", s.label == kLabelFake ? "fake" : "real"},
                         {"count", s.size()},
                         {"seed_begin", s.seeds.empty() ? 0 : s.seeds.front()},
                         {"seed_end", s.seeds.empty() ? 0 : s.seeds.back() + 1}});
    }
    splits.push_back({{"name", split->name}, {"count", split->size()}, {"subsets", subsets}});
  }
  return json{{"schema", "mambadet.dataset.v1"}, {"config", cfg.to_json()}, {"splits", splits}};
}

Dataset dataset_from_manifest(const json& manifest) {
  if (manifest.value("schema", std::string{}) != "mambadet.dataset.v1") {
    throw std::invalid_argument("not a dataset manifest (schema mambadet.dataset.v1 expected)");
  }
  return make_dataset(DatasetConfig::from_json(manifest.at("config")));
}

}  // namespace mambadet::data
