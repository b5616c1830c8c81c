#include "mambadet/vision_blocks.hpp"

#include <numeric>
#include <string>

namespace mambadet::vision {

using ad::ShapeError;

namespace {

bool is_identity_route(const std::vector<std::size_t>& route, std::size_t length) {
  if (route.size() != length) return false;
  for (std::size_t i = 0; i < length; ++i) {
    if (route[i] != i) return false;
  }
  return true;
}

Tensor route_gather(const Tensor& x, const std::vector<std::size_t>& route) {
  if (is_identity_route(route, x.dim(1))) return x;
  return ad::gather_tokens(x, route);
}

Tensor route_scatter(const Tensor& y, const std::vector<std::size_t>& route,
                     std::size_t length) {
  if (is_identity_route(route, length)) return y;
  return ad::scatter_tokens(y, route, length);
}

Tensor apply_merge(const Tensor& acc, const TokenRoutes& routes) {
  if (routes.merge == scan::Merge::kSum) return acc;
  const Tensor weights = Tensor::from({routes.length(), 1}, routes.inv_coverage);
  return ad::mul(acc, weights);
}

void check_routes(const Tensor& tokens, const TokenRoutes& routes, const char* block) {
  if (tokens.rank() != 3) {
    throw ShapeError(std::string(block) + ": tokens must be (B, L, D), got " +
                     ad::shape_str(tokens.shape()));
  }
  if (routes.routes.empty() || routes.length() != tokens.dim(1)) {
    throw ShapeError(std::string(block) + ": routes cover " +
                     std::to_string(routes.length()) + " tokens, sequence has " +
                     std::to_string(tokens.dim(1)));
  }
}

void collect_projection(ParamList& out, const std::string& prefix,
                        const selective::SelectiveProjection& p) {
  out.push_back({prefix + ".w_b", p.w_b});
  out.push_back({prefix + ".w_c", p.w_c});
  out.push_back({prefix + ".w_dt_down", p.w_dt_down});
  out.push_back({prefix + ".w_dt_up", p.w_dt_up});
  out.push_back({prefix + ".dt_bias", p.dt_bias});
  if (p.b_bias) out.push_back({prefix + ".b_bias", *p.b_bias});
  if (p.c_bias) out.push_back({prefix + ".c_bias", *p.c_bias});
}

}  // namespace

void PatchEmbedConfig::validate() const {
  if (image_h == 0 || image_w == 0 || channels == 0 || patch == 0 || embed_dim == 0) {
    throw std::invalid_argument("PatchEmbedConfig: extents, channels, patch and embed_dim must be >= 1");
  }
  if (image_h % patch != 0 || image_w % patch != 0) {
    throw std::invalid_argument("PatchEmbedConfig: patch " + std::to_string(patch) +
                                " does not divide the " + std::to_string(image_h) + "x" +
                                std::to_string(image_w) + " image");
  }
}

void PatchEmbedWeights::collect(ParamList& out, const std::string& prefix,
                                bool use_cls) const {
  out.push_back({prefix + ".proj", proj});
  out.push_back({prefix + ".bias", bias});
  if (use_cls) out.push_back({prefix + ".cls", cls});
  out.push_back({prefix + ".pos", pos});
}

PatchEmbedWeights zero_patch_embed(const PatchEmbedConfig& cfg) {
  cfg.validate();
  PatchEmbedWeights w;
  w.proj = Tensor::zeros({cfg.patch_dim(), cfg.embed_dim});
  w.bias = Tensor::zeros({cfg.embed_dim});
  w.pos = Tensor::zeros({cfg.sequence_length(), cfg.embed_dim});
  w.cls = Tensor::zeros({1, cfg.embed_dim});
  return w;
}

Tensor extract_patches(std::span<const Image> images, const PatchEmbedConfig& cfg) {
  cfg.validate();
  const std::size_t tokens = cfg.patch_tokens();
  const std::size_t dim = cfg.patch_dim();
  const std::size_t win = cfg.window();
  const std::ptrdiff_t halo = cfg.overlap ? 1 : 0;
  std::vector<double> out(images.size() * tokens * dim, 0.0);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = images[b];
    if (img.h != cfg.image_h || img.w != cfg.image_w || img.channels != cfg.channels ||
        img.px.size() != img.h * img.w * img.channels) {
      throw ShapeError("patch_embed: image " + std::to_string(img.h) + "x" +
                       std::to_string(img.w) + "x" + std::to_string(img.channels) +
                       " does not match configured " + std::to_string(cfg.image_h) + "x" +
                       std::to_string(cfg.image_w) + "x" + std::to_string(cfg.channels));
    }
    for (std::size_t gr = 0; gr < cfg.grid_h(); ++gr) {
      for (std::size_t gc = 0; gc < cfg.grid_w(); ++gc) {
        double* dst = out.data() + (b * tokens + gr * cfg.grid_w() + gc) * dim;
        for (std::size_t wr = 0; wr < win; ++wr) {
          for (std::size_t wc = 0; wc < win; ++wc) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(gr * cfg.patch + wr) - halo;
            const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(gc * cfg.patch + wc) - halo;
            if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(img.h) ||
                c >= static_cast<std::ptrdiff_t>(img.w)) {
              continue;
            }
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
              dst[(wr * win + wc) * img.channels + ch] =
                  img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
            }
          }
        }
      }
    }
  }
  return Tensor::from({images.size(), tokens, dim}, std::move(out));
}

TokenSequence patch_embed(std::span<const Image> images, const PatchEmbedConfig& cfg,
                          const PatchEmbedWeights& weights) {
  const Tensor patches = extract_patches(images, cfg);
  Tensor x = ad::linear(patches, weights.proj, &weights.bias);
  if (cfg.use_cls) {
    x = ad::concat_tokens(ad::expand_batch(weights.cls, images.size()), x);
  }
  TokenSequence seq;
  seq.tokens = ad::add(x, weights.pos);
  seq.grid_h = cfg.grid_h();
  seq.grid_w = cfg.grid_w();
  seq.has_cls = cfg.use_cls;
  return seq;
}

TokenRoutes routes_from_scan(const scan::MultiScan& scan, bool has_cls) {
  scan.validate();
  TokenRoutes out;
  out.merge = scan.merge;
  const std::size_t offset = has_cls ? 1 : 0;
  for (const auto& dir : scan.directions) {
    std::vector<std::size_t> route;
    route.reserve(dir.size() + offset);
    for (std::size_t cell : dir.order()) route.push_back(cell + offset);
    if (has_cls) route.push_back(0);
    out.routes.push_back(std::move(route));
  }
  const auto coverage = scan.coverage();
  if (has_cls) out.inv_coverage.push_back(1.0 / static_cast<double>(scan.directions.size()));
  for (std::size_t c : coverage) out.inv_coverage.push_back(1.0 / static_cast<double>(c));
  return out;
}

TokenRoutes forward_backward_routes(std::size_t length) {
  TokenRoutes out;
  std::vector<std::size_t> fwd(length);
  std::iota(fwd.begin(), fwd.end(), std::size_t{0});
  out.routes.push_back(fwd);
  out.routes.emplace_back(fwd.rbegin(), fwd.rend());
  out.inv_coverage.assign(length, 0.5);
  return out;
}

TokenRoutes identity_route(std::size_t length) {
  TokenRoutes out;
  std::vector<std::size_t> fwd(length);
  std::iota(fwd.begin(), fwd.end(), std::size_t{0});
  out.routes.push_back(std::move(fwd));
  out.inv_coverage.assign(length, 1.0);
  return out;
}

void SsmBranch::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".conv_w", conv_w});
  out.push_back({prefix + ".conv_b", conv_b});
  collect_projection(out, prefix + ".proj", proj);
  out.push_back({prefix + ".a_log", a_log});
  out.push_back({prefix + ".d", d});
}

SsmBranch zero_branch(std::size_t channels, std::size_t state_dim, std::size_t dt_rank,
                      std::size_t conv_width) {
  SsmBranch b;
  b.conv_w = Tensor::zeros({channels, conv_width});
  b.conv_b = Tensor::zeros({channels});
  b.proj = selective::zero_projection(channels, state_dim, dt_rank);
  b.a_log = Tensor::zeros({channels, state_dim});
  b.d = Tensor::zeros({channels});
  return b;
}

Tensor run_branch(const Tensor& x, const SsmBranch& branch, bool causal_conv) {
  const std::size_t width = branch.conv_w.dim(1);
  const std::size_t left = causal_conv ? width - 1 : (width - 1) / 2;
  const Tensor u = ad::silu(ad::depthwise_conv1d(x, branch.conv_w, branch.conv_b, left));
  const Tensor a = selective::decay_rates(branch.a_log);
  return selective::selective_scan_sequential(u, branch.proj, a, branch.d);
}

void VimBlockParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".norm", norm});
  out.push_back({prefix + ".w_in", w_in});
  for (std::size_t i = 0; i < directions.size(); ++i) {
    directions[i].collect(out, prefix + ".dir" + std::to_string(i));
  }
  out.push_back({prefix + ".w_out", w_out});
}

VimBlockParams zero_vim_block(std::size_t dim, std::size_t inner, std::size_t state_dim,
                              std::size_t dt_rank, std::size_t conv_width,
                              std::size_t directions) {
  VimBlockParams p;
  p.norm = Tensor::zeros({dim});
  p.w_in = Tensor::zeros({dim, 2 * inner});
  p.w_out = Tensor::zeros({inner, dim});
  for (std::size_t i = 0; i < directions; ++i) {
    p.directions.push_back(zero_branch(inner, state_dim, dt_rank, conv_width));
  }
  return p;
}

Tensor vim_block(const Tensor& tokens, const VimBlockParams& params,
                 const TokenRoutes& routes) {
  check_routes(tokens, routes, "vim_block");
  const std::size_t inner = params.inner_dim();
  const std::size_t length = tokens.dim(1);
  if (params.directions.size() != 1 && params.directions.size() != routes.routes.size()) {
    throw ShapeError("vim_block: " + std::to_string(params.directions.size()) +
                     " parameter sets for " + std::to_string(routes.routes.size()) +
                     " scan directions");
  }
  const Tensor xn = ad::rms_norm(tokens, params.norm);
  const Tensor xz = ad::linear(xn, params.w_in);
  const Tensor xs = ad::slice_last(xz, 0, inner);
  const Tensor gate = ad::silu(ad::slice_last(xz, inner, 2 * inner));
  Tensor acc;
  for (std::size_t d = 0; d < routes.routes.size(); ++d) {
    const auto& route = routes.routes[d];
    const SsmBranch& branch = params.directions.size() == 1 ? params.directions[0]
                                                            : params.directions[d];
    const Tensor y = route_scatter(run_branch(route_gather(xs, route), branch, true), route,
                                   length);
    const Tensor gated = ad::mul(y, gate);
    acc = d == 0 ? gated : ad::add(acc, gated);
  }
  return ad::add(tokens, ad::linear(apply_merge(acc, routes), params.w_out));
}

void MixerParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".norm", norm});
  out.push_back({prefix + ".w_in", w_in});
  ssm.collect(out, prefix + ".ssm");
  out.push_back({prefix + ".conv2_w", conv2_w});
  out.push_back({prefix + ".conv2_b", conv2_b});
  out.push_back({prefix + ".w_out", w_out});
}

MixerParams zero_mixer(std::size_t dim, std::size_t state_dim, std::size_t dt_rank,
                       std::size_t conv_width) {
  if (dim % 2 != 0) {
    throw std::invalid_argument("mamba_vision_mixer: embed_dim must be even, got " +
                                std::to_string(dim));
  }
  MixerParams p;
  p.norm = Tensor::zeros({dim});
  p.w_in = Tensor::zeros({dim, dim});
  p.w_out = Tensor::zeros({dim, dim});
  p.ssm = zero_branch(dim / 2, state_dim, dt_rank, conv_width);
  p.conv2_w = Tensor::zeros({dim / 2, conv_width});
  p.conv2_b = Tensor::zeros({dim / 2});
  return p;
}

Tensor mamba_vision_mixer(const Tensor& tokens, const MixerParams& params,
                          const TokenRoutes& routes) {
  check_routes(tokens, routes, "mamba_vision_mixer");
  const std::size_t dim = tokens.dim(2);
  if (dim % 2 != 0) {
    throw ShapeError("mamba_vision_mixer: embed_dim must be even, got " + std::to_string(dim));
  }
  const std::size_t half = dim / 2;
  const std::size_t length = tokens.dim(1);
  const Tensor xn = ad::rms_norm(tokens, params.norm);
  const Tensor xz = ad::linear(xn, params.w_in);
  const Tensor x1 = ad::slice_last(xz, 0, half);
  const Tensor x2 = ad::slice_last(xz, half, dim);
  Tensor branch1;
  for (std::size_t d = 0; d < routes.routes.size(); ++d) {
    const auto& route = routes.routes[d];
    const Tensor y =
        route_scatter(run_branch(route_gather(x1, route), params.ssm, false), route, length);
    branch1 = d == 0 ? y : ad::add(branch1, y);
  }
  branch1 = apply_merge(branch1, routes);
  const std::size_t width = params.conv2_w.dim(1);
  const Tensor branch2 =
      ad::silu(ad::depthwise_conv1d(x2, params.conv2_w, params.conv2_b, (width - 1) / 2));
  return ad::add(tokens, ad::linear(ad::concat_last(branch1, branch2), params.w_out));
}

void VssdBlockParams::collect(ParamList& out, const std::string& prefix) const {
  if (lpu_enabled) {
    out.push_back({prefix + ".lpu_w", lpu_w});
    out.push_back({prefix + ".lpu_b", lpu_b});
  }
  out.push_back({prefix + ".norm1", norm1});
  out.push_back({prefix + ".w_in", w_in});
  collect_projection(out, prefix + ".proj", proj);
  out.push_back({prefix + ".d", d});
  out.push_back({prefix + ".w_out", w_out});
  out.push_back({prefix + ".norm2", norm2});
  out.push_back({prefix + ".ffn_w1", ffn_w1});
  out.push_back({prefix + ".ffn_b1", ffn_b1});
  out.push_back({prefix + ".ffn_w2", ffn_w2});
  out.push_back({prefix + ".ffn_b2", ffn_b2});
}

VssdBlockParams zero_vssd_block(std::size_t dim, std::size_t inner, std::size_t state_dim,
                                std::size_t dt_rank, std::size_t ffn_hidden) {
  VssdBlockParams p;
  p.lpu_w = Tensor::zeros({dim, 9});
  p.lpu_b = Tensor::zeros({dim});
  p.norm1 = Tensor::zeros({dim});
  p.w_in = Tensor::zeros({dim, 2 * inner});
  p.proj = selective::zero_projection(inner, state_dim, dt_rank);
  p.d = Tensor::zeros({inner});
  p.w_out = Tensor::zeros({inner, dim});
  p.norm2 = Tensor::zeros({dim});
  p.ffn_w1 = Tensor::zeros({dim, ffn_hidden});
  p.ffn_b1 = Tensor::zeros({ffn_hidden});
  p.ffn_w2 = Tensor::zeros({ffn_hidden, dim});
  p.ffn_b2 = Tensor::zeros({dim});
  return p;
}

Tensor vssd_block(const Tensor& tokens, const VssdBlockParams& params,
                  const TokenRoutes& routes, std::size_t grid_h, std::size_t grid_w) {
  check_routes(tokens, routes, "vssd_block");
  const std::size_t length = tokens.dim(1);
  if (length != grid_h * grid_w) {
    throw ShapeError("vssd_block: needs a CLS-free " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " token grid, got " + std::to_string(length) +
                     " tokens");
  }
  const std::size_t inner = params.w_out.dim(0);
  Tensor x = tokens;
  if (params.lpu_enabled) {
    x = ad::add(x, ad::depthwise_conv2d_grid(x, params.lpu_w, params.lpu_b, grid_h, grid_w));
  }
  const Tensor uz = ad::linear(ad::rms_norm(x, params.norm1), params.w_in);
  const Tensor u = ad::silu(ad::slice_last(uz, 0, inner));
  const Tensor gate = ad::silu(ad::slice_last(uz, inner, 2 * inner));
  Tensor acc;
  for (std::size_t d = 0; d < routes.routes.size(); ++d) {
    const auto& route = routes.routes[d];
    const Tensor y = route_scatter(
        selective::nc_ssd(route_gather(u, route), params.proj, params.d), route, length);
    acc = d == 0 ? y : ad::add(acc, y);
  }
  const Tensor mixed = ad::mul(apply_merge(acc, routes), gate);
  x = ad::add(x, ad::linear(mixed, params.w_out));
  const Tensor hidden =
      ad::silu(ad::linear(ad::rms_norm(x, params.norm2), params.ffn_w1, &params.ffn_b1));
  return ad::add(x, ad::linear(hidden, params.ffn_w2, &params.ffn_b2));
}

}  // namespace mambadet::vision
