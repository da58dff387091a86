#include "parsegen/evalsuite.hpp"

#include <torch/script.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "parsegen/errors.hpp"
#include "parsegen/image_io.hpp"

namespace parsegen {
namespace {

std::vector<double> gaussian_window(const SsimOptions& o) {
  std::vector<double> w(static_cast<std::size_t>(o.window) * o.window);
  const double c = (o.window - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < o.window; ++i)
    for (int j = 0; j < o.window; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * o.sigma * o.sigma));
      w[i * o.window + j] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

struct Planes {
  int64_t c, h, w;
  std::vector<double> a, b;
};

Planes prepare(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& o) {
  if (a.sizes() != b.sizes()) throw InputError("ssim: image shapes differ");
  if (a.dim() != 3) throw InputError("ssim expects [C, H, W] images");
  if (o.window < 1 || o.window > a.size(1) || o.window > a.size(2))
    throw InputError("ssim window larger than the image");
  auto ca = a.detach().to(torch::kCPU, torch::kDouble).contiguous();
  auto cb = b.detach().to(torch::kCPU, torch::kDouble).contiguous();
  Planes p{a.size(0), a.size(1), a.size(2), {}, {}};
  p.a.assign(ca.data_ptr<double>(), ca.data_ptr<double>() + ca.numel());
  p.b.assign(cb.data_ptr<double>(), cb.data_ptr<double>() + cb.numel());
  return p;
}

// SSIM of the window whose top-left corner is (y, x), averaged over channels.
double window_ssim(const Planes& p, const std::vector<double>& g, const SsimOptions& o, int64_t y, int64_t x) {
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  double total = 0;
  for (int64_t c = 0; c < p.c; ++c) {
    const double* pa = p.a.data() + c * p.h * p.w;
    const double* pb = p.b.data() + c * p.h * p.w;
    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < o.window; ++i)
      for (int j = 0; j < o.window; ++j) {
        const double wt = g[i * o.window + j];
        const double va = pa[(y + i) * p.w + x + j], vb = pb[(y + i) * p.w + x + j];
        ma += wt * va;
        mb += wt * vb;
        saa += wt * va * va;
        sbb += wt * vb * vb;
        sab += wt * va * vb;
      }
    const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(p.c);
}

}  // namespace

namespace serial {

torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& o) {
  const Planes p = prepare(a, b, o);
  const auto g = gaussian_window(o);
  const int64_t oh = p.h - o.window + 1, ow = p.w - o.window + 1;
  auto out = torch::empty({oh, ow}, torch::kDouble);
  auto acc = out.accessor<double, 2>();
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) acc[y][x] = window_ssim(p, g, o, y, x);
  return out;
}

}  // namespace serial

torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& o) {
  const Planes p = prepare(a, b, o);
  const auto g = gaussian_window(o);
  const int64_t oh = p.h - o.window + 1, ow = p.w - o.window + 1;
  auto out = torch::empty({oh, ow}, torch::kDouble);
  double* dst = out.data_ptr<double>();
#pragma omp parallel for schedule(static)
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) dst[y * ow + x] = window_ssim(p, g, o, y, x);
  return out;
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options) {
  return ssim_map(a, b, options).mean().item<double>();
}

double masked_ssim(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask,
                   const SsimOptions& options) {
  if (mask.dim() != 3 || mask.size(0) != 1 || mask.size(1) != a.size(1) || mask.size(2) != a.size(2))
    throw InputError("mask must be [1, H, W] aligned with the images");
  auto m = (mask.detach().to(torch::kDouble) > 0.5).to(torch::kDouble);
  if (m.sum().item<double>() == 0) throw InputError("masked metric needs a non-empty mask");
  const auto map = ssim_map(a.to(torch::kDouble) * m, b.to(torch::kDouble) * m, options);
  const int64_t half = (options.window - 1) / 2;
  auto centres = m[0].slice(0, half, half + map.size(0)).slice(1, half, half + map.size(1));
  const double n = centres.sum().item<double>();
  if (n == 0) throw InputError("mask has no foreground at any window centre");
  return (map * centres).sum().item<double>() / n;
}

ScoreStats inception_score_from_probs(const torch::Tensor& probs, int splits) {
  if (probs.dim() != 2) throw InputError("class probabilities must be [N, C]");
  const int64_t n = probs.size(0);
  if (splits < 1 || n < splits) throw InputError("inception score needs at least as many images as splits");
  auto p = probs.detach().to(torch::kDouble);
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const int64_t lo = s * n / splits, hi = (s + 1) * n / splits;
    auto part = p.slice(0, lo, hi);
    auto marginal = part.mean(0, true);
    // 0 log 0 = 0.
    auto kl = torch::where(part > 0, part * (torch::log(part) - torch::log(marginal)), torch::zeros_like(part));
    scores.push_back(std::exp(kl.sum(1).mean().item<double>()));
  }
  double mean = 0;
  for (double v : scores) mean += v;
  mean /= scores.size();
  double var = 0;
  for (double v : scores) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / scores.size())};
}

ScoreStats inception_score(const torch::Tensor& images, const Classifier& classifier, int splits) {
  if (images.size(0) < splits) throw InputError("inception score needs at least as many images as splits");
  torch::NoGradGuard guard;
  return inception_score_from_probs(classifier(images), splits);
}

ScoreStats masked_inception_score(const torch::Tensor& images, const torch::Tensor& masks,
                                  const Classifier& classifier, int splits) {
  if (masks.dim() != 4 || masks.size(0) != images.size(0)) throw InputError("one [1, H, W] mask per image");
  for (int64_t i = 0; i < masks.size(0); ++i)
    if (masks[i].sum().item<double>() == 0) throw InputError("masked metric needs non-empty masks");
  return inception_score(images * (masks > 0.5).to(images.scalar_type()), classifier, splits);
}

Classifier random_conv_classifier(int classes, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto w1 = at::normal(0.0, 0.2, {16, 3, 5, 5}, gen);
  auto w2 = at::normal(0.0, 0.2, {classes, 16}, gen);
  return [w1, w2](const torch::Tensor& images) {
    auto x = torch::conv2d(images.to(torch::kFloat), w1, {}, 2, 2).relu();
    x = x.mean({2, 3});
    return torch::softmax(torch::matmul(x, w2.t()) * 4.0, 1);
  };
}

Classifier torchscript_classifier(const std::filesystem::path& path, int input_size) {
  auto module = std::make_shared<torch::jit::script::Module>(torch::jit::load(path.string()));
  module->eval();
  return [module, input_size](const torch::Tensor& images) {
    namespace F = torch::nn::functional;
    auto x = F::interpolate(images.to(torch::kFloat), F::InterpolateFuncOptions()
                                                          .size(std::vector<int64_t>{input_size, input_size})
                                                          .mode(torch::kBilinear)
                                                          .align_corners(false));
    return torch::softmax(module->forward({x}).toTensor(), 1);
  };
}

std::string MetricReport::to_json() const {
  nlohmann::json j = {{"is_mean", is_mean}, {"is_std", is_std}, {"ssim", ssim}, {"n_images", n_images}};
  j["mask_is"] = mask_is ? nlohmann::json(*mask_is) : nlohmann::json(nullptr);
  j["mask_ssim"] = mask_ssim ? nlohmann::json(*mask_ssim) : nlohmann::json(nullptr);
  return j.dump(2);
}

MetricReport evaluate(const torch::Tensor& generated, const torch::Tensor& reference,
                      const std::optional<torch::Tensor>& masks, const Classifier& classifier,
                      const EvalOptions& options) {
  if (generated.sizes() != reference.sizes()) throw InputError("generated and reference sets differ in shape");
  MetricReport r;
  r.n_images = static_cast<int>(generated.size(0));
  const int splits = std::min<int>(options.splits, r.n_images);
  const auto is = inception_score(generated, classifier, splits);
  r.is_mean = is.mean;
  r.is_std = is.std;
  double s = 0, ms = 0;
  for (int i = 0; i < r.n_images; ++i) {
    s += ssim(generated[i], reference[i], options.ssim);
    if (masks) ms += masked_ssim(generated[i], reference[i], (*masks)[i], options.ssim);
  }
  r.ssim = s / r.n_images;
  if (masks) {
    r.mask_ssim = ms / r.n_images;
    r.mask_is = masked_inception_score(generated, *masks, classifier, splits).mean;
  }
  return r;
}

MetricReport evaluate_directories(const std::filesystem::path& generated, const std::filesystem::path& reference,
                                  const std::optional<std::filesystem::path>& masks, const Classifier& classifier,
                                  const EvalOptions& options) {
  namespace fs = std::filesystem;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(generated))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw InputError("no PNG images in " + generated.string());
  std::vector<torch::Tensor> gen, ref, msk;
  for (const auto& name : names) {
    if (!fs::exists(reference / name)) throw InputError("reference image missing for " + name);
    gen.push_back(image_to_tensor(read_png_rgb(generated / name)));
    ref.push_back(image_to_tensor(read_png_rgb(reference / name)));
    if (masks) {
      const LabelImage m = read_png_indexed(*masks / name);
      auto t = torch::zeros({1, m.height, m.width});
      for (std::size_t i = 0; i < m.pixels.size(); ++i) t.view(-1)[i] = m.pixels[i] ? 1.0f : 0.0f;
      msk.push_back(t);
    }
  }
  std::optional<torch::Tensor> mask_batch;
  if (masks) mask_batch = torch::stack(msk);
  return evaluate(torch::stack(gen), torch::stack(ref), mask_batch, classifier, options);
}

}  // namespace parsegen
