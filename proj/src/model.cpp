#include "mambadet/model.hpp"

#include "mambadet/rng.hpp"

#include <cmath>

namespace mambadet::model {

using nlohmann::json;
using vision::ParamList;

std::string family_name(Family f) {
  switch (f) {
    case Family::kVim: return "vim";
    case Family::kMambaVision: return "mambavision";
    case Family::kVssd: return "vssd";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  if (name == "vim") return Family::kVim;
  if (name == "mambavision") return Family::kMambaVision;
  if (name == "vssd") return Family::kVssd;
  throw ConfigError("unknown model family '" + name + "' (expected vim, mambavision or vssd)");
}

std::size_t ModelConfig::inner_dim() const {
  return family == Family::kMambaVision ? embed_dim / 2 : expand * embed_dim;
}

std::size_t ModelConfig::resolved_dt_rank() const {
  return dt_rank != 0 ? dt_rank : (embed_dim + 15) / 16;
}

vision::PatchEmbedConfig ModelConfig::embed_config() const {
  vision::PatchEmbedConfig pc;
  pc.image_h = image_h;
  pc.image_w = image_w;
  pc.channels = channels;
  pc.patch = patch;
  pc.embed_dim = embed_dim;
  pc.use_cls = use_cls();
  pc.overlap = overlap;
  return pc;
}

void ModelConfig::validate() const {
  try {
    embed_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (depth == 0 || state_dim == 0 || expand == 0 || conv_width == 0 || classes < 2) {
    throw ConfigError("model config: depth, state_dim, expand and conv_width must be >= 1 and classes >= 2");
  }
  if (family == Family::kMambaVision && embed_dim % 2 != 0) {
    throw ConfigError("model config: mambavision needs an even embed_dim, got " +
                      std::to_string(embed_dim));
  }
  if (family == Family::kVssd && ffn_ratio == 0) {
    throw ConfigError("model config: ffn_ratio must be >= 1");
  }
  try {
    scan::make_scan(scan, image_h / patch, image_w / patch, scan_param, merge).validate();
  } catch (const scan::ScanError& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

json ModelConfig::to_json() const {
  return json{{"preset", preset},
              {"family", family_name(family)},
              {"image_h", image_h},
              {"image_w", image_w},
              {"channels", channels},
              {"patch", patch},
              {"overlap", overlap},
              {"embed_dim", embed_dim},
              {"depth", depth},
              {"state_dim", state_dim},
              {"expand", expand},
              {"dt_rank", resolved_dt_rank()},
              {"conv_width", conv_width},
              {"scan", scan},
              {"scan_param", scan_param},
              {"merge", merge == scan::Merge::kSum ? "sum" : "mean"},
              {"tie_directions", tie_directions},
              {"lpu", lpu},
              {"ffn_ratio", ffn_ratio},
              {"classes", classes}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.preset = j.value("preset", std::string{});
    c.family = parse_family(j.at("family").get<std::string>());
    c.image_h = j.value("image_h", c.image_h);
    c.image_w = j.value("image_w", c.image_w);
    c.channels = j.value("channels", c.channels);
    c.patch = j.value("patch", c.patch);
    c.overlap = j.value("overlap", c.overlap);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.depth = j.value("depth", c.depth);
    c.state_dim = j.value("state_dim", c.state_dim);
    c.expand = j.value("expand", c.expand);
    c.dt_rank = j.value("dt_rank", c.dt_rank);
    c.conv_width = j.value("conv_width", c.conv_width);
    c.scan = j.value("scan", c.scan);
    c.scan_param = j.value("scan_param", c.scan_param);
    const std::string merge = j.value("merge", std::string("sum"));
    if (merge != "sum" && merge != "mean") throw ConfigError("merge must be sum or mean");
    c.merge = merge == "sum" ? scan::Merge::kSum : scan::Merge::kMean;
    c.tie_directions = j.value("tie_directions", c.tie_directions);
    c.lpu = j.value("lpu", c.lpu);
    c.ffn_ratio = j.value("ffn_ratio", c.ffn_ratio);
    c.classes = j.value("classes", c.classes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig desk_preset(Family family) {
  ModelConfig c;
  c.family = family;
  c.image_h = c.image_w = 32;
  c.channels = 1;
  c.patch = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.state_dim = 8;
  c.expand = 2;
  switch (family) {
    case Family::kVim:
      c.preset = "desk-vim";
      c.scan = "bidirectional";
      break;
    case Family::kMambaVision:
      c.preset = "desk-mambavision";
      c.scan = "raster";
      break;
    case Family::kVssd:
      c.preset = "desk-vssd";
      c.scan = "raster";
      c.expand = 1;
      break;
  }
  return c;
}

ModelConfig preset(const std::string& name) {
  if (name == "vim-tiny") {
    ModelConfig c;
    c.preset = name;
    c.family = Family::kVim;
    c.image_h = c.image_w = 224;
    c.channels = 3;
    c.patch = 16;
    c.embed_dim = 192;
    c.depth = 24;
    c.state_dim = 16;
    c.expand = 2;
    c.scan = "bidirectional";
    return c;
  }
  if (name == "desk-vim") return desk_preset(Family::kVim);
  if (name == "desk-mambavision") return desk_preset(Family::kMambaVision);
  if (name == "desk-vssd") return desk_preset(Family::kVssd);
  throw ConfigError("unknown preset '" + name +
                    "' (expected vim-tiny, desk-vim, desk-mambavision or desk-vssd)");
}

std::vector<std::string> preset_names() {
  return {"vim-tiny", "desk-vim", "desk-mambavision", "desk-vssd"};
}

ParamList Model::parameters() const {
  ParamList out;
  embed.collect(out, "embed", cfg.use_cls());
  for (std::size_t i = 0; i < vim.size(); ++i) vim[i].collect(out, "block" + std::to_string(i));
  for (std::size_t i = 0; i < mixer.size(); ++i) mixer[i].collect(out, "block" + std::to_string(i));
  for (std::size_t i = 0; i < vssd.size(); ++i) vssd[i].collect(out, "block" + std::to_string(i));
  out.push_back({"final_norm", final_norm});
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

Model zero_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.embed = vision::zero_patch_embed(cfg.embed_config());
  const std::size_t d = cfg.embed_dim;
  const std::size_t e = cfg.inner_dim();
  const std::size_t rank = cfg.resolved_dt_rank();
  const auto grid_scan = scan::make_scan(cfg.scan, cfg.image_h / cfg.patch,
                                         cfg.image_w / cfg.patch, cfg.scan_param, cfg.merge);
  m.routes = vision::routes_from_scan(grid_scan, cfg.use_cls());
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    switch (cfg.family) {
      case Family::kVim:
        m.vim.push_back(vision::zero_vim_block(d, e, cfg.state_dim, rank, cfg.conv_width,
                                               cfg.tie_directions ? 1 : m.routes.routes.size()));
        break;
      case Family::kMambaVision:
        m.mixer.push_back(vision::zero_mixer(d, cfg.state_dim, rank, cfg.conv_width));
        break;
      case Family::kVssd: {
        auto p = vision::zero_vssd_block(d, e, cfg.state_dim, rank, cfg.ffn_ratio * d);
        p.lpu_enabled = cfg.lpu;
        m.vssd.push_back(std::move(p));
        break;
      }
    }
  }
  m.final_norm = Tensor::zeros({d});
  m.head_w = Tensor::zeros({d, cfg.classes});
  m.head_b = Tensor::zeros({cfg.classes});
  return m;
}

namespace {

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
}

// Uniform in +-1/sqrt(fan_in) where fan_in is the leading dimension.
void fan_in_uniform(Tensor& t, Rng& rng, std::size_t fan_in = 0) {
  if (fan_in == 0) fan_in = t.dim(0);
  fill_uniform(t, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void fill(Tensor& t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

void init_projection(selective::SelectiveProjection& p, Rng& rng) {
  fan_in_uniform(p.w_b, rng);
  fan_in_uniform(p.w_c, rng);
  fan_in_uniform(p.w_dt_down, rng);
  fan_in_uniform(p.w_dt_up, rng);
  // Step sizes log-uniform in [1e-3, 1e-1], stored through the inverse softplus.
  for (double& v : p.dt_bias.mutable_data()) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = dt + std::log(-std::expm1(-dt));
  }
}

void init_a_log(Tensor& a_log) {
  const std::size_t n = a_log.dim(1);
  auto v = a_log.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(static_cast<double>(i % n + 1));
}

void init_branch(vision::SsmBranch& b, Rng& rng) {
  fan_in_uniform(b.conv_w, rng, b.conv_w.dim(1));
  init_projection(b.proj, rng);
  init_a_log(b.a_log);
  fill(b.d, 1.0);
}

}  // namespace

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = zero_model(cfg);
  Rng rng(seed, 0x6d6f64656cULL);
  fan_in_uniform(m.embed.proj, rng);
  for (double& v : m.embed.pos.mutable_data()) v = 0.02 * rng.normal();
  if (cfg.use_cls()) {
    for (double& v : m.embed.cls.mutable_data()) v = 0.02 * rng.normal();
  }
  for (auto& b : m.vim) {
    fill(b.norm, 1.0);
    fan_in_uniform(b.w_in, rng);
    for (auto& dir : b.directions) init_branch(dir, rng);
    fan_in_uniform(b.w_out, rng);
  }
  for (auto& b : m.mixer) {
    fill(b.norm, 1.0);
    fan_in_uniform(b.w_in, rng);
    init_branch(b.ssm, rng);
    fan_in_uniform(b.conv2_w, rng, b.conv2_w.dim(1));
    fan_in_uniform(b.w_out, rng);
  }
  for (auto& b : m.vssd) {
    fan_in_uniform(b.lpu_w, rng, 9);
    fill(b.norm1, 1.0);
    fan_in_uniform(b.w_in, rng);
    init_projection(b.proj, rng);
    fill(b.d, 1.0);
    fan_in_uniform(b.w_out, rng);
    fill(b.norm2, 1.0);
    fan_in_uniform(b.ffn_w1, rng);
    fan_in_uniform(b.ffn_w2, rng);
  }
  fill(m.final_norm, 1.0);
  fan_in_uniform(m.head_w, rng);
  for (const auto& p : m.parameters()) p.tensor.impl()->requires_grad = true;
  return m;
}

std::size_t param_count(const ModelConfig& cfg) {
  const Model m = zero_model(cfg);
  std::size_t total = 0;
  for (const auto& p : m.parameters()) total += p.tensor.numel();
  return total;
}

Tensor penultimate(const Model& model, std::span<const Image> images) {
  const auto& cfg = model.cfg;
  vision::TokenSequence seq = vision::patch_embed(images, cfg.embed_config(), model.embed);
  Tensor x = seq.tokens;
  for (const auto& b : model.vim) x = vision::vim_block(x, b, model.routes);
  for (const auto& b : model.mixer) x = vision::mamba_vision_mixer(x, b, model.routes);
  for (const auto& b : model.vssd) {
    x = vision::vssd_block(x, b, model.routes, seq.grid_h, seq.grid_w);
  }
  x = ad::rms_norm(x, model.final_norm);
  if (seq.has_cls) {
    return ad::reshape(ad::slice_tokens(x, 0, 1), {images.size(), cfg.embed_dim});
  }
  return ad::mean_tokens(x);
}

Tensor forward(const Model& model, std::span<const Image> images) {
  return ad::linear(penultimate(model, images), model.head_w, &model.head_b);
}

}  // namespace mambadet::model
