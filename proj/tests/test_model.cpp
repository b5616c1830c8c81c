#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mambadet/binary_io.hpp"
#include "mambadet/checkpoint.hpp"
#include "mambadet/model.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

using namespace mambadet;
using namespace mambadet::model;
using mambadet::ad::Tensor;
using vision::Image;

namespace {

// Trainable scalars counted by hand from the layer shapes.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, n = c.state_dim, k = c.conv_width, cls = c.classes;
  const std::size_t r = (d + 15) / 16;
  const std::size_t win = c.patch + (c.overlap ? 2 : 0);
  const std::size_t tokens = (c.image_h / c.patch) * (c.image_w / c.patch);
  const auto branch = [&](std::size_t e) {
    return e * k + e + 2 * e * n + e * r + r * e + e + e * n + e;
  };
  const auto projection = [&](std::size_t e) { return 2 * e * n + e * r + r * e + e; };
  std::size_t total = win * win * c.channels * d + d;
  std::size_t block = 0;
  switch (c.family) {
    case Family::kVim: {
      const std::size_t e = c.expand * d;
      total += (tokens + 1) * d + d;
      const std::size_t dirs = c.tie_directions ? 1 : (c.scan == "bidirectional" ? 2 : 1);
      block = d + 2 * d * e + e * d + dirs * branch(e);
      break;
    }
    case Family::kMambaVision: {
      const std::size_t h = d / 2;
      total += (tokens + 1) * d + d;
      block = d + 2 * d * d + branch(h) + h * k + h;
      break;
    }
    case Family::kVssd: {
      const std::size_t e = c.expand * d, hid = c.ffn_ratio * d;
      total += tokens * d;
      block = (c.lpu ? 10 * d : 0) + d + 2 * d * e + projection(e) + e + e * d + d +
              d * hid + hid + hid * d + d;
      break;
    }
  }
  return total + c.depth * block + d + d * cls + cls;
}

std::vector<Image> images(std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i) {
    Image img{h, w, 1, std::vector<double>(h * w)};
    for (double& p : img.px) p = rng.uniform();
    out.push_back(std::move(img));
  }
  return out;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "mambadet_test_model";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  for (auto family : {Family::kVim, Family::kMambaVision, Family::kVssd}) {
    CAPTURE(family_name(family));
    for (std::size_t depth : {1u, 2u}) {
      ModelConfig c = desk_preset(family);
      c.depth = depth;
      CHECK(param_count(c) == expected_count(c));
    }
    ModelConfig one = desk_preset(family), two = desk_preset(family);
    one.depth = 1;
    two.depth = 2;
    ModelConfig three = one;
    three.depth = 3;
    // Each block adds the same number of scalars.
    CHECK(param_count(two) - param_count(one) == param_count(three) - param_count(two));
  }
  ModelConfig tied = desk_preset(Family::kVim);
  tied.tie_directions = true;
  CHECK(param_count(tied) == expected_count(tied));
  ModelConfig nolpu = desk_preset(Family::kVssd);
  nolpu.lpu = false;
  CHECK(param_count(nolpu) == expected_count(nolpu));
}

TEST_CASE("vim-tiny preset size") {
  const auto c = preset("vim-tiny");
  const std::size_t count = param_count(c);
  CHECK(count == expected_count(c));
  CHECK(count == 6955394);
  CHECK(std::abs(static_cast<double>(count) - 6.96e6) / 6.96e6 < 0.15);
}

TEST_CASE("presets and config validation") {
  for (const auto& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
  CHECK_THROWS_AS(preset("vim-huge"), ConfigError);
  CHECK_THROWS_AS(parse_family("transformer"), ConfigError);
  ModelConfig bad = desk_preset(Family::kVim);
  bad.patch = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk_preset(Family::kMambaVision);
  bad.embed_dim = 15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk_preset(Family::kVim);
  bad.scan = "local";
  bad.scan_param = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  ModelConfig c = desk_preset(Family::kVssd);
  c.merge = scan::Merge::kMean;
  c.scan = "cross";
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("parameter count and names do not depend on the seed") {
  const auto c = desk_preset(Family::kVim);
  const auto a = build_model(c, 1), b = build_model(c, 2);
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor.shape() == pb[i].tensor.shape());
    names.insert(pa[i].name);
  }
  CHECK(names.size() == pa.size());
  CHECK(testutil::max_abs_diff(pa[0].tensor.data(), pb[0].tensor.data()) > 0.0);
}

TEST_CASE("initialization ranges") {
  const auto m = build_model(desk_preset(Family::kVim), 5);
  for (const auto& p : m.parameters()) {
    CAPTURE(p.name);
    for (double v : p.tensor.data()) CHECK(std::isfinite(v));
  }
  for (double v : m.final_norm.data()) CHECK(v == 1.0);
  const auto& a_log = m.vim[0].directions[0].a_log;
  const std::size_t n = a_log.dim(1);
  for (std::size_t j = 0; j < n; ++j) {
    CHECK(a_log.data()[j] == doctest::Approx(std::log(static_cast<double>(j + 1))));
  }
  for (double b : m.vim[0].directions[0].proj.dt_bias.data()) {
    const double dt = std::log1p(std::exp(b));
    CHECK(dt >= 1e-3 * (1 - 1e-12));
    CHECK(dt <= 1e-1 * (1 + 1e-12));
  }
}

TEST_CASE("forward is deterministic and well-formed") {
  for (auto family : {Family::kVim, Family::kMambaVision, Family::kVssd}) {
    CAPTURE(family_name(family));
    const auto c = desk_preset(family);
    const auto imgs = images(3, 32, 32, 9);
    const Tensor l1 = forward(build_model(c, 7), imgs);
    const Tensor l2 = forward(build_model(c, 7), imgs);
    CHECK(l1.shape() == ad::Shape{3, 2});
    CHECK(testutil::max_abs_diff(l1.data(), l2.data()) == 0.0);
    for (std::size_t b = 0; b < 3; ++b) {
      const auto p = ad::softmax_row(l1.data().subspan(b * 2, 2));
      CHECK(std::abs(p[0] + p[1] - 1.0) < 1e-12);
    }
    const Tensor feat = penultimate(build_model(c, 7), imgs);
    CHECK(feat.shape() == ad::Shape{3, c.embed_dim});
    const auto wrong = images(1, 16, 16, 1);
    CHECK_THROWS_AS(forward(build_model(c, 7), wrong), ad::ShapeError);
  }
}

TEST_CASE("batch composition does not change per-image logits") {
  const auto m = build_model(desk_preset(Family::kVim), 3);
  const auto imgs = images(4, 32, 32, 10);
  const Tensor all = forward(m, imgs);
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor one = forward(m, std::span<const Image>(&imgs[i], 1));
    CHECK(testutil::max_abs_diff(one.data(), all.data().subspan(i * 2, 2)) == 0.0);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (auto family : {Family::kVim, Family::kMambaVision, Family::kVssd}) {
    const auto m = build_model(desk_preset(family), 11);
    const std::string bytes = checkpoint::serialize(m);
    CHECK(std::memcmp(bytes.data(), checkpoint::kMagic, 8) == 0);
    const auto back = checkpoint::deserialize(bytes);
    CHECK(checkpoint::serialize(back) == bytes);
    const auto pa = m.parameters(), pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(),
                        pa[i].tensor.numel() * sizeof(double)) == 0);
    }
  }

  const auto m = build_model(desk_preset(Family::kVssd), 12);
  const auto path = (temp_dir() / "m.ckpt").string();
  checkpoint::save(m, path);
  CHECK(std::filesystem::exists(checkpoint::sidecar_path(path)));
  const auto side = nlohmann::json::parse(io::read_file(checkpoint::sidecar_path(path)));
  CHECK(side["param_count"] == param_count(m.cfg));
  CHECK(side["schema"] == "mambadet.checkpoint.v1");
  const auto loaded = checkpoint::load(path);
  CHECK(checkpoint::serialize(loaded) == checkpoint::serialize(m));
  const auto imgs = images(2, 32, 32, 13);
  CHECK(testutil::max_abs_diff(forward(loaded, imgs).data(), forward(m, imgs).data()) == 0.0);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto m = build_model(desk_preset(Family::kVim), 14);
  const std::string good = checkpoint::serialize(m);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(checkpoint::deserialize(bad_magic), io::FormatError);

  std::string bad_version = good;
  bad_version[8] = 9;
  CHECK_THROWS_AS(checkpoint::deserialize(bad_version), io::FormatError);

  CHECK_THROWS_AS(checkpoint::deserialize(good.substr(0, good.size() - 5)), io::FormatError);
  CHECK_THROWS_AS(checkpoint::deserialize(good.substr(0, 10)), io::FormatError);
  CHECK_THROWS_AS(checkpoint::deserialize(good + "x"), io::FormatError);
  CHECK_THROWS_AS(checkpoint::deserialize(""), io::FormatError);

  // Same layout but a different config: tensor shapes disagree.
  auto other = desk_preset(Family::kVim);
  other.embed_dim = 24;
  const std::string other_bytes = checkpoint::serialize(build_model(other, 1));
  const std::string cfg_a = m.cfg.to_json().dump(), cfg_b = other.to_json().dump();
  std::string spliced = other_bytes;
  const auto pos = spliced.find(cfg_b);
  REQUIRE(pos != std::string::npos);
  if (cfg_a.size() == cfg_b.size()) {
    spliced.replace(pos, cfg_b.size(), cfg_a);
    CHECK_THROWS_AS(checkpoint::deserialize(spliced), io::FormatError);
  }

  CHECK_THROWS(checkpoint::load((temp_dir() / "missing.ckpt").string()));
}
