#pragma once

// Frozen networks used by the appearance losses: the perceptual feature
// extractor and the differentiable pose detector.

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "parsegen/representation.hpp"

namespace parsegen {

struct Corpus;

// Images [N, 3, H, W] in [-1, 1] -> features [N, C, h, w]. Implementations
// hold no trainable state; gradients flow to the input only.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual torch::Tensor operator()(const torch::Tensor& images) const = 0;
  virtual std::string name() const = 0;
};

class IdentityExtractor final : public FeatureExtractor {
 public:
  torch::Tensor operator()(const torch::Tensor& images) const override { return images; }
  std::string name() const override { return "identity"; }
};

// conv3x3 -> ReLU -> avgpool2 -> conv3x3 -> ReLU with fixed random weights.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 2024, int64_t channels = 32);
  torch::Tensor operator()(const torch::Tensor& images) const override;
  std::string name() const override { return "random_conv"; }

 private:
  torch::Tensor w1_, w2_;
};

// TorchScript module taking [N, 3, H, W] and returning a feature map. Inputs
// are rescaled from [-1, 1] to ImageNet normalisation first.
class TorchScriptExtractor final : public FeatureExtractor {
 public:
  explicit TorchScriptExtractor(const std::filesystem::path& path);
  torch::Tensor operator()(const torch::Tensor& images) const override;
  std::string name() const override { return "torchscript:" + path_; }

 private:
  std::string path_;
  std::shared_ptr<void> module_;
};

// "identity", "random_conv" or "torchscript:<path>".
std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& spec, std::uint64_t seed = 2024);

// Small heatmap regressor: image [N, 3, H, W] -> [N, 18, H, W] in (0, 1).
struct PoseDetectorImpl : torch::nn::Module {
  explicit PoseDetectorImpl(int64_t base_channels = 16);
  torch::Tensor forward(const torch::Tensor& images);

  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr}, c5{nullptr}, out{nullptr};
};
TORCH_MODULE(PoseDetector);

struct DetectorTraining {
  int steps = 400;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 11;
};

// Fits the detector to the corpus heatmaps, then freezes it. Returns the
// final mean-squared heatmap error on the training split.
double pretrain_pose_detector(PoseDetector& detector, const Corpus& corpus, const DetectorTraining& opts);

}  // namespace parsegen
