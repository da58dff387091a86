#pragma once

// Loss terms for both generative networks. Batched tensors throughout:
// semantic maps [N, L, H, W], images [N, 3, H, W], heatmaps [N, 18, H, W].

#include <torch/torch.h>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "parsegen/perception.hpp"
#include "parsegen/representation.hpp"

namespace parsegen {

inline constexpr double kLogEpsilon = 1e-8;

// Named scalar terms of one step plus the differentiable weighted total.
struct LossReport {
  std::vector<std::pair<std::string, double>> terms;
  torch::Tensor total;

  double value(const std::string& name) const;
  double total_value() const;
};

struct WeightedTerm {
  std::string name;
  torch::Tensor value;
  double weight = 1.0;
};

// total = sum of weight * value; each term is reported unweighted.
LossReport weighted_total(const std::vector<WeightedTerm>& terms);

// Mean over pixels of -sum_l gt * log(max(pred, eps)) * (1 + M).
torch::Tensor ce_loss(const torch::Tensor& pred, const torch::Tensor& pseudo_gt, const torch::Tensor& tgt_mask);

struct AdversarialLoss {
  torch::Tensor d;  // discriminator objective, to minimise
  torch::Tensor g;  // non-saturating generator objective
};

// d = -(E log D(real) + E log(1 - D(fake))), g = -E log D(fake).
AdversarialLoss adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);
// Sum of two adversarial terms sharing the real batch.
AdversarialLoss paired_adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake_fwd,
                                        const torch::Tensor& d_fake_back);

using HeatmapRegressor = std::function<torch::Tensor(const torch::Tensor&)>;

// mean((P(fwd) - tgt)^2) + mean((P(back) - src)^2)
torch::Tensor pose_loss(const torch::Tensor& gen_fwd, const torch::Tensor& gen_back, const torch::Tensor& tgt_heatmap,
                        const torch::Tensor& src_heatmap, const HeatmapRegressor& detector);

// mean((Λ(a) - Λ(b))^2)
torch::Tensor content_loss(const torch::Tensor& back_image, const torch::Tensor& ref_image,
                           const FeatureExtractor& extractor);

// Gram matrix of [N, C, h, w] features, normalised by C * h * w.
torch::Tensor gram(const torch::Tensor& features);

// Region maps [N, R, H, W] -> binary [N, R, h, w]: average pool, then > 0.
// Soft maps are hardened by argmax first.
torch::Tensor downsample_regions(const torch::Tensor& regions, int64_t h, int64_t w, bool soft);

// sum_r ||G(Λ(a) ⊗ Ψ_r(Sa)) - G(Λ(b) ⊗ Ψ_r(Sb))||^2, averaged over the batch.
// Regions are semantic maps (one region per label) or body-part masks.
torch::Tensor semantic_style_loss(const torch::Tensor& img_a, const torch::Tensor& img_b,
                                  const torch::Tensor& regions_a, const torch::Tensor& regions_b,
                                  const FeatureExtractor& extractor);

// Face crops of a batch with per-sample validity.
struct FaceBatch {
  torch::Tensor crops;  // [N, 3, h, w]
  torch::Tensor valid;  // [N] bool
};

FaceBatch extract_faces(const torch::Tensor& images, const std::vector<PoseSpec>& poses, CropSize crop,
                        double min_source_area);

// Adversarial face term over the valid samples of each batch; a batch with
// no valid sample contributes nothing.
AdversarialLoss face_adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& real_valid,
                                      const torch::Tensor& d_fwd, const torch::Tensor& fwd_valid,
                                      const torch::Tensor& d_back, const torch::Tensor& back_valid);

using Discriminator = std::function<torch::Tensor(const torch::Tensor&)>;

struct FaceLossOptions {
  CropSize crop{16, 16};
  double min_source_area = 64.0;
};

AdversarialLoss face_loss(const torch::Tensor& ref_image, const torch::Tensor& gen_fwd, const torch::Tensor& gen_back,
                          const std::vector<PoseSpec>& ref_poses, const std::vector<PoseSpec>& tgt_poses,
                          const Discriminator& face_discriminator, const FaceLossOptions& options = {});

}  // namespace parsegen
