#pragma once

// Appearance generation H_A = G_A ∘ (E_A, E'_S) with deformable skips, the
// image and face discriminators, and the appearance losses.

#include <torch/torch.h>

#include <array>
#include <vector>

#include "parsegen/layers.hpp"
#include "parsegen/losses.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/representation.hpp"

namespace parsegen {

struct AppearanceNetConfig {
  int base_channels = 16;
  int depth = 3;
  double lambda_pose = 700.0;
  double lambda_cont = 0.03;
  double lambda_sty = 1.0;
  bool use_face_loss = true;
  // false: pose-only inputs and body-part masks in place of semantic maps.
  bool semantic_input = true;
  ImageSize input_resolution{64, 48};
  FaceLossOptions face;

  void validate() const;
};

// ---- deformable skips ----

// Pixel-space affine re-expressed on a feature grid of stride `factor`
// (pixel centre x <-> feature centre (x + 0.5) / factor - 0.5).
PartAffine to_feature_scale(const PartAffine& affine, int factor);

// Nearest-neighbour gather plan for one sample at one feature level. Row p
// (< 10) gathers part p through its inverse affine; the last row passes
// through cells that lie in no source part and receive no warped part.
struct SkipPlan {
  torch::Tensor index;  // [11, h * w] int64 source cell
  torch::Tensor valid;  // [11, h * w] bool
  int64_t height = 0, width = 0;
};

// part_masks: source masks at feature scale [10, h, w]; affines map source
// to target feature coordinates.
SkipPlan make_skip_plan(const std::array<PartAffine, kNumParts>& affines, const torch::Tensor& part_masks);

// Each part's masked features warped into target position; overlaps take the
// element-wise max; cells reached by nothing are zero. feature: [C, h, w].
torch::Tensor apply_skip_plan(const torch::Tensor& feature, const SkipPlan& plan);
torch::Tensor deformable_skip(const torch::Tensor& feature, const std::array<PartAffine, kNumParts>& affines,
                              const torch::Tensor& part_masks);

// Plans for every level of an encoder from pixel-space part decompositions.
std::vector<SkipPlan> skip_plans(const BodyPartMasks& source, const BodyPartMasks& target, int depth);

// ---- networks ----

struct AppearanceInputs {
  torch::Tensor ref_image;    // [N, 3, H, W]
  torch::Tensor ref_parse;    // [N, 10, H, W]; ignored without semantic input
  torch::Tensor ref_heatmap;  // [N, 18, H, W]
  torch::Tensor tgt_parse;    // [N, 10, H, W], soft or hard
  torch::Tensor tgt_heatmap;  // [N, 18, H, W]
  std::vector<std::vector<SkipPlan>> plans;  // [N][depth + 1]
};

struct AppearanceGeneratorImpl : torch::nn::Module {
  explicit AppearanceGeneratorImpl(const AppearanceNetConfig& config);
  torch::Tensor forward(const AppearanceInputs& in);

  AppearanceNetConfig config;
  Encoder enc_a{nullptr}, enc_s{nullptr};
  torch::nn::ModuleList ups;
  torch::nn::Conv2d out{nullptr};
};
TORCH_MODULE(AppearanceGenerator);

// Part decompositions used for the skips: semantic maps with the pose, or
// pose rectangles alone for the baseline.
BodyPartMasks skip_parts(const AppearanceNetConfig& config, const torch::Tensor& parse, const PoseSpec& pose);

// Unbatched convenience wrapper: builds the skip plans from the inputs.
torch::Tensor ha_forward(AppearanceGenerator& net, const torch::Tensor& ref_image, const SemanticMap& ref_parse,
                         const PoseSpec& ref_pose, const PoseHeatmap& ref_heatmap, const SemanticMap& tgt_parse,
                         const PoseSpec& tgt_pose, const PoseHeatmap& tgt_heatmap);

struct AppearanceDiscriminators {
  PatchDiscriminator image{nullptr};
  PatchDiscriminator face{nullptr};
};

AppearanceDiscriminators make_appearance_discriminators(const AppearanceNetConfig& config);

AdversarialLoss appearance_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fwd,
                                    const torch::Tensor& d_back);

struct AppearanceTerms {
  torch::Tensor adv, pose, cont, sty, face;
};

// adv + λpose pose + λcont cont + λsty sty + face
LossReport ha_total_loss(const AppearanceTerms& terms, const AppearanceNetConfig& config);

}  // namespace parsegen
