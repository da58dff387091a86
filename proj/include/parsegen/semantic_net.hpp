#pragma once

// Semantic parsing transformation H_S = G_S ∘ (E_S, E_P) and its
// conditional patch discriminator D_S.

#include <torch/torch.h>

#include "parsegen/layers.hpp"
#include "parsegen/losses.hpp"
#include "parsegen/representation.hpp"

namespace parsegen {

struct SemanticNetConfig {
  int base_channels = 16;
  int depth = 3;
  double lambda_ce = 10.0;
  ImageSize input_resolution{64, 48};

  void validate() const;
};

// E_S sees (S_ps, p_s, M_ps); E_P sees (p_t, M_pt). Bottlenecks are
// concatenated; G_S takes skips from E_P only. Softmax output.
struct SemanticGeneratorImpl : torch::nn::Module {
  explicit SemanticGeneratorImpl(const SemanticNetConfig& config);

  // All inputs batched: [N, 10 | 18 | 1, H, W]. Returns probabilities [N, 10, H, W].
  torch::Tensor forward(const torch::Tensor& src_parse, const torch::Tensor& src_heatmap,
                        const torch::Tensor& src_mask, const torch::Tensor& tgt_heatmap,
                        const torch::Tensor& tgt_mask);

  SemanticNetConfig config;
  Encoder enc_s{nullptr}, enc_p{nullptr};
  torch::nn::ModuleList ups;
  torch::nn::Conv2d out{nullptr};
};
TORCH_MODULE(SemanticGenerator);

// D_S on (semantic map, target heatmap).
struct SemanticDiscriminatorImpl : torch::nn::Module {
  explicit SemanticDiscriminatorImpl(const SemanticNetConfig& config);
  torch::Tensor forward(const torch::Tensor& parse, const torch::Tensor& heatmap);

  PatchDiscriminator net{nullptr};
};
TORCH_MODULE(SemanticDiscriminator);

struct SemanticPrediction {
  SemanticMap map;  // soft
};

// Unbatched convenience wrapper around the generator.
SemanticPrediction hs_forward(SemanticGenerator& net, const SemanticMap& src_parse, const PoseEncoding& src_pose,
                              const PoseEncoding& tgt_pose);

AdversarialLoss semantic_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);

// adv + lambda_ce * ce
LossReport hs_total_loss(const torch::Tensor& adv, const torch::Tensor& ce, const SemanticNetConfig& config);

}  // namespace parsegen
