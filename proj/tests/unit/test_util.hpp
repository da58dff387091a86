#pragma once

#include <torch/torch.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <functional>
#include <initializer_list>
#include <random>
#include <utility>

#include "parsegen/representation.hpp"

namespace parsegen::testing {

inline PoseSpec make_pose(int h, int w, std::initializer_list<std::pair<Joint, Point2>> joints) {
  PoseSpec pose;
  pose.size = {h, w};
  for (const auto& [j, p] : joints) pose[j] = {p.x, p.y, true};
  return pose;
}

inline PoseSpec random_pose(std::mt19937_64& rng, int h, int w, double visible_prob = 0.8) {
  std::uniform_real_distribution<double> ux(0.0, w - 1.0), uy(0.0, h - 1.0), coin(0.0, 1.0);
  PoseSpec pose;
  pose.size = {h, w};
  for (auto& k : pose.keypoints) k = {ux(rng), uy(rng), coin(rng) < visible_prob};
  return pose;
}

// Relative error of an analytic gradient against central finite differences
// of `f` at `x`: ||g - g_fd|| / max(||g||, ||g_fd||, floor).
inline double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                             double eps = 1e-6, double floor = 1e-12) {
  auto x = x0.detach().clone().to(torch::kDouble).set_requires_grad(true);
  auto y = f(x);
  auto g = torch::autograd::grad({y}, {x}, {}, false, false, true)[0];
  if (!g.defined()) g = torch::zeros_like(x);
  auto flat = x.detach().clone().view(-1);
  auto fd = torch::zeros_like(flat);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    auto xp = flat.clone();
    xp[i] = orig + eps;
    auto xm = flat.clone();
    xm[i] = orig - eps;
    const double fp = f(xp.view(x.sizes())).item<double>();
    const double fm = f(xm.view(x.sizes())).item<double>();
    fd[i] = (fp - fm) / (2 * eps);
  }
  const auto ga = g.detach().view(-1);
  const double num = (ga - fd).norm().item<double>();
  const double den = std::max({ga.norm().item<double>(), fd.norm().item<double>(), floor});
  return num / den;
}

}  // namespace parsegen::testing

namespace parsegen::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("parsegen_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace parsegen::testing
