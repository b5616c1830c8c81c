// Small image classifiers built from one block family, plus the named presets.
#pragma once

#include "mambadet/scan2d.hpp"
#include "mambadet/vision_blocks.hpp"

#include "json.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mambadet::model {

using ad::Tensor;
using vision::Image;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Family { kVim, kMambaVision, kVssd };

std::string family_name(Family f);
Family parse_family(const std::string& name);

struct ModelConfig {
  std::string preset;
  Family family = Family::kVim;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 1;
  std::size_t patch = 4;
  bool overlap = false;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t state_dim = 8;
  std::size_t expand = 2;
  std::size_t dt_rank = 0;  // 0 selects ceil(embed_dim / 16)
  std::size_t conv_width = 4;
  std::string scan = "bidirectional";
  std::size_t scan_param = 2;
  scan::Merge merge = scan::Merge::kSum;
  // Vim only: one set of branch weights shared by every scan direction.
  bool tie_directions = false;
  // VSSD only.
  bool lpu = true;
  std::size_t ffn_ratio = 2;
  std::size_t classes = 2;

  bool use_cls() const { return family != Family::kVssd; }
  std::size_t inner_dim() const;
  std::size_t resolved_dt_rank() const;
  vision::PatchEmbedConfig embed_config() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// "vim-tiny" (224x224x3 reference size), "desk-vim", "desk-mambavision", "desk-vssd".
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();
// Desk-scale preset for a family.
ModelConfig desk_preset(Family family);

struct Model {
  ModelConfig cfg;
  vision::PatchEmbedWeights embed;
  std::vector<vision::VimBlockParams> vim;
  std::vector<vision::MixerParams> mixer;
  std::vector<vision::VssdBlockParams> vssd;
  Tensor final_norm;  // (D)
  Tensor head_w;      // (D, classes)
  Tensor head_b;      // (classes)
  vision::TokenRoutes routes;

  // Every trainable tensor under a stable, unique name.
  vision::ParamList parameters() const;
};

// All-zero parameters of the right shapes.
Model zero_model(const ModelConfig& cfg);
Model build_model(const ModelConfig& cfg, std::uint64_t seed);
std::size_t param_count(const ModelConfig& cfg);

// Head input (B, D): final-normed CLS token, or the token mean without CLS.
Tensor penultimate(const Model& model, std::span<const Image> images);
// (B, classes)
Tensor forward(const Model& model, std::span<const Image> images);

}  // namespace mambadet::model
