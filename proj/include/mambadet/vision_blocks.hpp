// Patch embedding and the three vision state-space block families.
//
// All blocks map (B, L, D) token tensors to (B, L, D) and are residual: with
// every non-residual parameter at zero a block is the identity.
#pragma once

#include "mambadet/scan2d.hpp"
#include "mambadet/selective_ssm.hpp"
#include "mambadet/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mambadet::vision {

using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Pixels in [0, 1], stored (row, col, channel) interleaved.
struct Image {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 1;
  std::vector<double> px;

  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return px[(r * w + c) * channels + ch];
  }
};

struct PatchEmbedConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t embed_dim = 32;
  bool use_cls = true;
  // Overlapping stem: each token sees its patch plus a one-pixel halo.
  bool overlap = false;

  std::size_t grid_h() const { return image_h / patch; }
  std::size_t grid_w() const { return image_w / patch; }
  std::size_t patch_tokens() const { return grid_h() * grid_w(); }
  std::size_t sequence_length() const { return patch_tokens() + (use_cls ? 1 : 0); }
  std::size_t window() const { return overlap ? patch + 2 : patch; }
  std::size_t patch_dim() const { return window() * window() * channels; }
  void validate() const;
};

struct PatchEmbedWeights {
  Tensor proj;  // (patch_dim, D)
  Tensor bias;  // (D)
  Tensor pos;   // (sequence_length, D)
  Tensor cls;   // (1, D), unused without CLS

  void collect(ParamList& out, const std::string& prefix, bool use_cls) const;
};

PatchEmbedWeights zero_patch_embed(const PatchEmbedConfig& cfg);

struct TokenSequence {
  Tensor tokens;  // (B, L, D)
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  bool has_cls = false;
};

// (B, patch_tokens, patch_dim) constant tensor of raster-ordered patches.
Tensor extract_patches(std::span<const Image> images, const PatchEmbedConfig& cfg);

TokenSequence patch_embed(std::span<const Image> images, const PatchEmbedConfig& cfg,
                          const PatchEmbedWeights& weights);

// Token index routes, one per scan direction, over a block's sequence.
struct TokenRoutes {
  std::vector<std::vector<std::size_t>> routes;
  scan::Merge merge = scan::Merge::kSum;
  std::vector<double> inv_coverage;  // per token, used by the mean merge

  std::size_t length() const { return inv_coverage.size(); }
};

// Grid scan directions lifted to the token sequence. The CLS token lives in
// slot 0, takes no part in the grid orders, and is visited last in every
// direction so that causal cores can summarize the patches into it.
TokenRoutes routes_from_scan(const scan::MultiScan& scan, bool has_cls);
// The order 0..L-1 and its reversal.
TokenRoutes forward_backward_routes(std::size_t length);
TokenRoutes identity_route(std::size_t length);

// Short depthwise conv + SiLU feeding a selective scan.
struct SsmBranch {
  Tensor conv_w;  // (E, K)
  Tensor conv_b;  // (E)
  selective::SelectiveProjection proj;
  Tensor a_log;   // (E, N)
  Tensor d;       // (E)

  void collect(ParamList& out, const std::string& prefix) const;
};

SsmBranch zero_branch(std::size_t channels, std::size_t state_dim, std::size_t dt_rank,
                      std::size_t conv_width);

// conv (causal or symmetric) -> SiLU -> selective scan over one route.
Tensor run_branch(const Tensor& x, const SsmBranch& branch, bool causal_conv);

struct VimBlockParams {
  Tensor norm;   // (D)
  Tensor w_in;   // (D, 2E): x and gate z
  Tensor w_out;  // (E, D)
  // One branch per route, or a single branch tied across all routes.
  std::vector<SsmBranch> directions;

  std::size_t inner_dim() const { return w_out.dim(0); }
  void collect(ParamList& out, const std::string& prefix) const;
};

VimBlockParams zero_vim_block(std::size_t dim, std::size_t inner, std::size_t state_dim,
                              std::size_t dt_rank, std::size_t conv_width,
                              std::size_t directions);

Tensor vim_block(const Tensor& tokens, const VimBlockParams& params,
                 const TokenRoutes& routes);

struct MixerParams {
  Tensor norm;    // (D)
  Tensor w_in;    // (D, D), split into two D/2 halves
  Tensor w_out;   // (D, D)
  SsmBranch ssm;  // width D/2, symmetric conv
  Tensor conv2_w; // (D/2, K)
  Tensor conv2_b; // (D/2)

  void collect(ParamList& out, const std::string& prefix) const;
};

MixerParams zero_mixer(std::size_t dim, std::size_t state_dim, std::size_t dt_rank,
                       std::size_t conv_width);

Tensor mamba_vision_mixer(const Tensor& tokens, const MixerParams& params,
                          const TokenRoutes& routes);

struct VssdBlockParams {
  bool lpu_enabled = true;
  Tensor lpu_w;   // (D, 9)
  Tensor lpu_b;   // (D)
  Tensor norm1;   // (D)
  Tensor w_in;    // (D, 2E): values and gate
  selective::SelectiveProjection proj;  // over E
  Tensor d;       // (E)
  Tensor w_out;   // (E, D)
  Tensor norm2;   // (D)
  Tensor ffn_w1;  // (D, H)
  Tensor ffn_b1;  // (H)
  Tensor ffn_w2;  // (H, D)
  Tensor ffn_b2;  // (D)

  void collect(ParamList& out, const std::string& prefix) const;
};

VssdBlockParams zero_vssd_block(std::size_t dim, std::size_t inner, std::size_t state_dim,
                                std::size_t dt_rank, std::size_t ffn_hidden);

// Requires a CLS-free sequence laid out as the (grid_h, grid_w) raster.
Tensor vssd_block(const Tensor& tokens, const VssdBlockParams& params,
                  const TokenRoutes& routes, std::size_t grid_h, std::size_t grid_w);

}  // namespace mambadet::vision
