#include "parsegen/losses.hpp"

#include "parsegen/errors.hpp"

namespace parsegen {

namespace F = torch::nn::functional;

namespace {

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t.detach()).all().item<bool>()) throw InputError(std::string(what) + " contains non-finite values");
}

torch::Tensor safe_log(const torch::Tensor& t) { return torch::log(t.clamp_min(kLogEpsilon)); }

// Mean of per-sample means over the samples flagged valid; zero when none are.
torch::Tensor masked_sample_mean(const torch::Tensor& per_pixel, const torch::Tensor& valid) {
  auto per_sample = per_pixel.flatten(1).mean(1);
  auto w = valid.to(per_sample.dtype());
  const auto n = w.sum();
  if (n.item<double>() == 0) return per_sample.sum() * 0;
  return (per_sample * w).sum() / n;
}

}  // namespace

double LossReport::value(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return v;
  if (name == "total" && total.defined()) return total_value();
  throw InputError("no loss term named " + name);
}

double LossReport::total_value() const {
  if (total.defined()) return total.item<double>();
  for (const auto& [k, v] : terms)
    if (k == "total") return v;
  return 0.0;
}

LossReport weighted_total(const std::vector<WeightedTerm>& terms) {
  LossReport r;
  for (const auto& t : terms) {
    if (!t.value.defined()) {
      r.terms.emplace_back(t.name, 0.0);
      continue;
    }
    require_finite(t.value, t.name.c_str());
    r.terms.emplace_back(t.name, t.value.item<double>());
    auto w = t.value * t.weight;
    r.total = r.total.defined() ? r.total + w : w;
  }
  if (!r.total.defined()) r.total = torch::zeros({});
  r.terms.emplace_back("total", r.total.item<double>());
  return r;
}

torch::Tensor ce_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  if (pred.sizes() != gt.sizes()) throw InputError("ce_loss: prediction and target shapes differ");
  if (pred.dim() != 4 || mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != pred.size(0) ||
      mask.size(2) != pred.size(2) || mask.size(3) != pred.size(3))
    throw InputError("ce_loss: mask must be [N, 1, H, W] aligned with the prediction");
  auto per_pixel = -(gt * safe_log(pred)).sum(1, /*keepdim=*/true);
  return (per_pixel * (1 + mask)).mean();
}

AdversarialLoss adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  require_finite(d_real, "discriminator output (real)");
  require_finite(d_fake, "discriminator output (fake)");
  return {-(safe_log(d_real).mean() + safe_log(1 - d_fake).mean()), -safe_log(d_fake).mean()};
}

AdversarialLoss paired_adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fwd,
                                        const torch::Tensor& d_back) {
  auto a = adversarial_loss(d_real, d_fwd);
  auto b = adversarial_loss(d_real, d_back);
  return {a.d + b.d, a.g + b.g};
}

torch::Tensor pose_loss(const torch::Tensor& gen_fwd, const torch::Tensor& gen_back, const torch::Tensor& tgt,
                        const torch::Tensor& src, const HeatmapRegressor& detector) {
  auto pf = detector(gen_fwd);
  auto pb = detector(gen_back);
  if (pf.sizes() != tgt.sizes() || pb.sizes() != src.sizes())
    throw InputError("pose_loss: detector output does not match the heatmap shape");
  return (pf - tgt).pow(2).mean() + (pb - src).pow(2).mean();
}

torch::Tensor content_loss(const torch::Tensor& back_image, const torch::Tensor& ref_image,
                           const FeatureExtractor& extractor) {
  if (back_image.sizes() != ref_image.sizes()) throw InputError("content_loss: image shapes differ");
  return (extractor(back_image) - extractor(ref_image)).pow(2).mean();
}

torch::Tensor gram(const torch::Tensor& f) {
  const auto n = f.size(0), c = f.size(1), positions = f.size(2) * f.size(3);
  auto flat = f.reshape({n, c, positions});
  return torch::bmm(flat, flat.transpose(1, 2)) / static_cast<double>(c * positions);
}

torch::Tensor downsample_regions(const torch::Tensor& regions, int64_t h, int64_t w, bool soft) {
  torch::NoGradGuard guard;
  auto r = soft ? harden(regions) : regions.detach();
  auto pooled = F::adaptive_avg_pool2d(r.to(torch::kFloat), F::AdaptiveAvgPool2dFuncOptions({h, w}));
  return (pooled > 0).to(torch::kFloat);
}

torch::Tensor semantic_style_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, const torch::Tensor& ra,
                                  const torch::Tensor& rb, const FeatureExtractor& extractor) {
  if (img_a.sizes() != img_b.sizes()) throw InputError("style loss: image shapes differ");
  if (ra.sizes() != rb.sizes() || ra.size(0) != img_a.size(0)) throw InputError("style loss: region shapes differ");
  auto fa = extractor(img_a), fb = extractor(img_b);
  const auto h = fa.size(2), w = fa.size(3);
  auto is_soft = [](const torch::Tensor& r) {
    auto d = r.detach();
    return !((d == 0) | (d == 1)).all().item<bool>();
  };
  auto pa = downsample_regions(ra, h, w, is_soft(ra)).to(fa.dtype());
  auto pb = downsample_regions(rb, h, w, is_soft(rb)).to(fb.dtype());
  torch::Tensor total;
  for (int64_t r = 0; r < ra.size(1); ++r) {
    auto ga = gram(fa * pa.slice(1, r, r + 1));
    auto gb = gram(fb * pb.slice(1, r, r + 1));
    auto term = (ga - gb).pow(2).sum({1, 2});
    total = total.defined() ? total + term : term;
  }
  return total.mean();
}

FaceBatch extract_faces(const torch::Tensor& images, const std::vector<PoseSpec>& poses, CropSize crop,
                        double min_area) {
  if (static_cast<int64_t>(poses.size()) != images.size(0)) throw InputError("one pose per image required");
  std::vector<torch::Tensor> crops;
  std::vector<bool> valid;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    auto f = extract_face(images[static_cast<int64_t>(i)], poses[i], crop);
    crops.push_back(f.data);
    valid.push_back(f.valid && f.source_area >= min_area);
  }
  auto v = torch::zeros({static_cast<int64_t>(valid.size())}, torch::kBool);
  for (std::size_t i = 0; i < valid.size(); ++i) v[static_cast<int64_t>(i)] = static_cast<bool>(valid[i]);
  return {torch::stack(crops), v};
}

AdversarialLoss face_adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& real_valid,
                                      const torch::Tensor& d_fwd, const torch::Tensor& fwd_valid,
                                      const torch::Tensor& d_back, const torch::Tensor& back_valid) {
  require_finite(d_real, "face discriminator output (real)");
  require_finite(d_fwd, "face discriminator output (fake)");
  require_finite(d_back, "face discriminator output (fake)");
  auto real = masked_sample_mean(safe_log(d_real), real_valid);
  auto d = -(real + masked_sample_mean(safe_log(1 - d_fwd), fwd_valid)) -
           (real + masked_sample_mean(safe_log(1 - d_back), back_valid));
  auto g = -masked_sample_mean(safe_log(d_fwd), fwd_valid) - masked_sample_mean(safe_log(d_back), back_valid);
  return {d, g};
}

AdversarialLoss face_loss(const torch::Tensor& ref_image, const torch::Tensor& gen_fwd, const torch::Tensor& gen_back,
                          const std::vector<PoseSpec>& ref_poses, const std::vector<PoseSpec>& tgt_poses,
                          const Discriminator& D, const FaceLossOptions& o) {
  auto real = extract_faces(ref_image, ref_poses, o.crop, o.min_source_area);
  auto fwd = extract_faces(gen_fwd, tgt_poses, o.crop, o.min_source_area);
  auto back = extract_faces(gen_back, ref_poses, o.crop, o.min_source_area);
  const bool any = real.valid.any().item<bool>() || fwd.valid.any().item<bool>() || back.valid.any().item<bool>();
  if (!any) {
    auto zero = ref_image.sum() * 0;
    return {zero, zero};
  }
  return face_adversarial_loss(D(real.crops), real.valid, D(fwd.crops), fwd.valid, D(back.crops), back.valid);
}

}  // namespace parsegen
