#pragma once

// Image-quality metrics: SSIM, Inception Score and their pose-masked variants.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace parsegen {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 2.0;  // images in [-1, 1]
};

// Per-position SSIM averaged over channels; "valid" filtering, so the map is
// (H - window + 1) x (W - window + 1). Inputs are [C, H, W].
torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});

namespace serial {
torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});
}

// Background ([1, H, W] mask == 0) is zeroed in both images, and the map is
// averaged over windows whose centre pixel is foreground.
double masked_ssim(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask,
                   const SsimOptions& options = {});

// Images [N, 3, H, W] -> class probabilities [N, C].
using Classifier = std::function<torch::Tensor(const torch::Tensor&)>;

struct ScoreStats {
  double mean = 0.0;
  double std = 0.0;
};

ScoreStats inception_score(const torch::Tensor& images, const Classifier& classifier, int splits = 10);
// Inception score of the class-probability rows directly.
ScoreStats inception_score_from_probs(const torch::Tensor& probs, int splits);

// Images multiplied by their masks before scoring.
ScoreStats masked_inception_score(const torch::Tensor& images, const torch::Tensor& masks,
                                  const Classifier& classifier, int splits = 10);

// Fixed random convolutional classifier for desk runs where no pretrained
// model is supplied. Scores are only comparable between runs using the same
// seed.
Classifier random_conv_classifier(int classes = 10, std::uint64_t seed = 1234);
// TorchScript module returning logits; resized bilinearly to `input_size`.
Classifier torchscript_classifier(const std::filesystem::path& path, int input_size = 299);

struct MetricReport {
  double is_mean = 0.0;
  double is_std = 0.0;
  double ssim = 0.0;
  std::optional<double> mask_is;
  std::optional<double> mask_ssim;
  int n_images = 0;

  std::string to_json() const;
};

struct EvalOptions {
  int splits = 10;
  SsimOptions ssim;
};

MetricReport evaluate(const torch::Tensor& generated, const torch::Tensor& reference,
                      const std::optional<torch::Tensor>& masks, const Classifier& classifier,
                      const EvalOptions& options = {});

// Generated and reference PNGs are paired by file name; masks are
// single-channel PNGs (non-zero = foreground) with the same names.
MetricReport evaluate_directories(const std::filesystem::path& generated, const std::filesystem::path& reference,
                                  const std::optional<std::filesystem::path>& masks, const Classifier& classifier,
                                  const EvalOptions& options = {});

}  // namespace parsegen
