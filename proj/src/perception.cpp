#include "parsegen/perception.hpp"

#include <torch/script.h>

#include "parsegen/corpus.hpp"
#include "parsegen/errors.hpp"
#include "parsegen/layers.hpp"

namespace parsegen {

namespace F = torch::nn::functional;

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int64_t channels) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  w1_ = at::normal(0.0, std::sqrt(2.0 / 27.0), {channels, 3, 3, 3}, gen);
  w2_ = at::normal(0.0, std::sqrt(2.0 / (9.0 * channels)), {channels, channels, 3, 3}, gen);
}

torch::Tensor RandomConvExtractor::operator()(const torch::Tensor& images) const {
  auto x = torch::relu(torch::conv2d(images, w1_.to(images.dtype()), {}, 1, 1));
  x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
  return torch::relu(torch::conv2d(x, w2_.to(images.dtype()), {}, 1, 1));
}

TorchScriptExtractor::TorchScriptExtractor(const std::filesystem::path& path) : path_(path.string()) {
  auto m = std::make_shared<torch::jit::script::Module>(torch::jit::load(path_));
  m->eval();
  for (auto p : m->parameters()) p.set_requires_grad(false);
  module_ = m;
}

torch::Tensor TorchScriptExtractor::operator()(const torch::Tensor& images) const {
  auto* m = static_cast<torch::jit::script::Module*>(module_.get());
  const auto mean = torch::tensor({0.485, 0.456, 0.406}, images.options()).view({1, 3, 1, 1});
  const auto std = torch::tensor({0.229, 0.224, 0.225}, images.options()).view({1, 3, 1, 1});
  auto x = ((images + 1) / 2 - mean) / std;
  return m->forward({x}).toTensor();
}

std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& spec, std::uint64_t seed) {
  if (spec == "identity") return std::make_shared<IdentityExtractor>();
  if (spec == "random_conv") return std::make_shared<RandomConvExtractor>(seed);
  if (spec.starts_with("torchscript:")) return std::make_shared<TorchScriptExtractor>(spec.substr(12));
  throw InputError("unknown extractor '" + spec + "'");
}

PoseDetectorImpl::PoseDetectorImpl(int64_t b) {
  using torch::nn::Conv2dOptions;
  c1 = register_module("c1", torch::nn::Conv2d(Conv2dOptions(3, b, 3).padding(1)));
  c2 = register_module("c2", torch::nn::Conv2d(Conv2dOptions(b, 2 * b, 4).stride(2).padding(1)));
  c3 = register_module("c3", torch::nn::Conv2d(Conv2dOptions(2 * b, 2 * b, 3).padding(1)));
  c4 = register_module("c4", torch::nn::Conv2d(Conv2dOptions(2 * b, 4 * b, 4).stride(2).padding(1)));
  c5 = register_module("c5", torch::nn::Conv2d(Conv2dOptions(4 * b, 4 * b, 3).padding(2).dilation(2)));
  out = register_module("out", torch::nn::Conv2d(Conv2dOptions(4 * b + b, kNumJoints, 3).padding(1)));
}

torch::Tensor PoseDetectorImpl::forward(const torch::Tensor& images) {
  auto f1 = torch::relu(c1(images));
  auto f = torch::relu(c3(torch::relu(c2(f1))));
  f = torch::relu(c5(torch::relu(c4(f))));
  f = F::interpolate(f, F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{images.size(2), images.size(3)})
                            .mode(torch::kBilinear)
                            .align_corners(false));
  return torch::sigmoid(out(torch::cat({f, f1}, 1)));
}

double pretrain_pose_detector(PoseDetector& detector, const Corpus& corpus, const DetectorTraining& opts) {
  const auto pool = corpus.indices(Split::Train);
  if (pool.empty()) throw InputError("pose detector pretraining needs training records");
  {
    torch::NoGradGuard guard;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(opts.seed + 1);
    for (auto& item : detector->named_parameters())
      if (item.key().ends_with("bias")) {
        item.value().zero_();
      } else {
        auto& w = item.value();
        const double fan_in = static_cast<double>(w.numel() / w.size(0));
        w.copy_(at::normal(0.0, std::sqrt(2.0 / fan_in), w.sizes(), gen));
      }
  }
  set_requires_grad(*detector, true);
  detector->train();
  torch::optim::Adam optim(detector->parameters(), torch::optim::AdamOptions(opts.learning_rate));
  std::mt19937_64 rng(opts.seed);
  const std::size_t batch = std::min<std::size_t>(opts.batch_size, pool.size());
  double last = 0.0;
  for (int step = 0; step < opts.steps; ++step) {
    std::vector<torch::Tensor> xs, ys;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& item = corpus.items[pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]];
      xs.push_back(item.image);
      ys.push_back(item.pose.heatmap.data);
    }
    auto x = torch::stack(xs), y = torch::stack(ys);
    auto pred = detector->forward(x);
    // Peak-weighted squared error.
    auto loss = ((pred - y).pow(2) * (1 + 20 * y)).mean();
    optim.zero_grad();
    loss.backward();
    optim.step();
    last = torch::mse_loss(pred.detach(), y).item<double>();
  }
  set_requires_grad(*detector, false);
  detector->eval();
  return last;
}

}  // namespace parsegen
