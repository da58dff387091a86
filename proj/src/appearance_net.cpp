#include "parsegen/appearance_net.hpp"

#include <cmath>
#include <limits>

#include "parsegen/errors.hpp"

namespace parsegen {

namespace F = torch::nn::functional;

void AppearanceNetConfig::validate() const {
  if (depth < 2) throw InputError("appearance net depth must be at least 2");
  if (base_channels < 1) throw InputError("base_channels must be positive");
  if (lambda_pose < 0 || lambda_cont < 0 || lambda_sty < 0) throw InputError("loss weights must be non-negative");
  const int f = 1 << depth;
  if (input_resolution.height % f || input_resolution.width % f)
    throw InputError("input resolution must be divisible by 2^depth");
}

PartAffine to_feature_scale(const PartAffine& a, int factor) {
  if (!a.valid) return a;
  const double f = factor;
  const double c1 = 0.5 * f - 0.5, c2 = 0.5 / f - 0.5;
  const auto& m = a.matrix;
  PartAffine out = a;
  out.matrix[2] = (m[0] * c1 + m[1] * c1 + m[2]) / f + c2;
  out.matrix[5] = (m[3] * c1 + m[4] * c1 + m[5]) / f + c2;
  return out;
}

SkipPlan make_skip_plan(const std::array<PartAffine, kNumParts>& affines, const torch::Tensor& part_masks) {
  if (part_masks.dim() != 3 || part_masks.size(0) != kNumParts) throw InputError("part masks must be [10, h, w]");
  const int64_t h = part_masks.size(1), w = part_masks.size(2), n = h * w;
  auto masks = (part_masks.detach().to(torch::kCPU) > 0).contiguous();
  const bool* mk = masks.data_ptr<bool>();
  SkipPlan plan;
  plan.height = h;
  plan.width = w;
  plan.index = torch::zeros({kNumParts + 1, n}, torch::kLong);
  plan.valid = torch::zeros({kNumParts + 1, n}, torch::kBool);
  auto* idx = plan.index.data_ptr<int64_t>();
  auto* ok = plan.valid.data_ptr<bool>();
  for (int p = 0; p < kNumParts; ++p) {
    const auto inv = affines[p].inverse();
    if (!inv) continue;
    const bool* m = mk + p * n;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const Point2 s = inv->apply({static_cast<double>(x), static_cast<double>(y)});
        const int64_t sx = static_cast<int64_t>(std::floor(s.x + 0.5 + 1e-7));
        const int64_t sy = static_cast<int64_t>(std::floor(s.y + 0.5 + 1e-7));
        if (sx < 0 || sy < 0 || sx >= w || sy >= h || !m[sy * w + sx]) continue;
        idx[p * n + y * w + x] = sy * w + sx;
        ok[p * n + y * w + x] = true;
      }
  }
  for (int64_t i = 0; i < n; ++i) {
    bool covered = false;
    for (int p = 0; p < kNumParts && !covered; ++p) covered = mk[p * n + i] || ok[p * n + i];
    idx[kNumParts * n + i] = i;
    ok[kNumParts * n + i] = !covered;
  }
  return plan;
}

torch::Tensor apply_skip_plan(const torch::Tensor& feature, const SkipPlan& plan) {
  if (feature.dim() != 3 || feature.size(1) != plan.height || feature.size(2) != plan.width)
    throw InputError("skip plan does not match the feature size");
  const auto c = feature.size(0), n = plan.height * plan.width;
  auto flat = feature.reshape({c, n});
  auto gathered = flat.index_select(1, plan.index.flatten().to(feature.device())).view({c, kNumParts + 1, n});
  auto valid = plan.valid.to(feature.device()).unsqueeze(0);
  const auto neg = torch::full({}, -std::numeric_limits<float>::infinity(), feature.options());
  auto best = torch::where(valid, gathered, neg).amax(1);
  auto reached = plan.valid.any(0).to(feature.device()).unsqueeze(0);
  return torch::where(reached, best, torch::zeros({}, feature.options())).view({c, plan.height, plan.width});
}

torch::Tensor deformable_skip(const torch::Tensor& feature, const std::array<PartAffine, kNumParts>& affines,
                              const torch::Tensor& part_masks) {
  return apply_skip_plan(feature, make_skip_plan(affines, part_masks));
}

std::vector<SkipPlan> skip_plans(const BodyPartMasks& source, const BodyPartMasks& target, int depth) {
  std::array<PartAffine, kNumParts> pixel_affines;
  const int h = source.parts[0].height, w = source.parts[0].width;
  auto masks = torch::zeros({kNumParts, 1, h, w});
  for (int p = 0; p < kNumParts; ++p) {
    pixel_affines[p] = estimate_part_affine(source.part_boxes[p], target.part_boxes[p]);
    const auto& m = source.parts[p];
    auto acc = masks.accessor<float, 4>();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc[p][0][y][x] = m.at(y, x) ? 1.0f : 0.0f;
  }
  std::vector<SkipPlan> plans;
  for (int k = 0; k <= depth; ++k) {
    const int f = 1 << k;
    std::array<PartAffine, kNumParts> affines;
    for (int p = 0; p < kNumParts; ++p) affines[p] = to_feature_scale(pixel_affines[p], f);
    auto level_masks = k == 0 ? masks : F::max_pool2d(masks, F::MaxPool2dFuncOptions(f));
    plans.push_back(make_skip_plan(affines, level_masks.squeeze(1)));
  }
  return plans;
}

AppearanceGeneratorImpl::AppearanceGeneratorImpl(const AppearanceNetConfig& c) : config(c) {
  config.validate();
  const int64_t b = c.base_channels;
  const int64_t a_in = c.semantic_input ? 3 + kNumLabels + kNumJoints : 3 + kNumJoints;
  const int64_t s_in = c.semantic_input ? kNumLabels + kNumJoints : kNumJoints;
  enc_a = register_module("enc_a", Encoder(a_in, b, c.depth));
  enc_s = register_module("enc_s", Encoder(s_in, b, c.depth));
  int64_t in = 2 * level_channels(b, c.depth);
  for (int k = c.depth - 1; k >= 0; --k) {
    const int64_t out_ch = level_channels(b, k);
    ups->push_back(UpBlock(in, out_ch));
    in = out_ch + enc_s->channels[k] + enc_a->channels[k];
  }
  register_module("ups", ups);
  out = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 3).padding(1)));
}

torch::Tensor AppearanceGeneratorImpl::forward(const AppearanceInputs& in) {
  const auto& res = config.input_resolution;
  for (const auto* t : {&in.ref_image, &in.ref_heatmap, &in.tgt_heatmap})
    if (t->dim() != 4 || t->size(2) != res.height || t->size(3) != res.width)
      throw InputError("appearance net input does not match the configured resolution");
  const int64_t n = in.ref_image.size(0);
  if (static_cast<int64_t>(in.plans.size()) != n) throw InputError("one skip plan set per sample required");
  for (const auto& p : in.plans)
    if (static_cast<int>(p.size()) != config.depth + 1) throw InputError("skip plans must cover every level");

  torch::Tensor a_in, s_in;
  if (config.semantic_input) {
    if (in.ref_parse.size(2) != res.height || in.tgt_parse.size(2) != res.height ||
        in.ref_parse.size(3) != res.width || in.tgt_parse.size(3) != res.width)
      throw InputError("semantic maps do not match the configured resolution");
    a_in = torch::cat({in.ref_image, in.ref_parse, in.ref_heatmap}, 1);
    s_in = torch::cat({in.tgt_parse, in.tgt_heatmap}, 1);
  } else {
    a_in = torch::cat({in.ref_image, in.ref_heatmap}, 1);
    s_in = in.tgt_heatmap;
  }
  auto fa = enc_a->forward(a_in);
  auto fs = enc_s->forward(s_in);
  auto warped = [&](int k) {
    std::vector<torch::Tensor> items;
    for (int64_t i = 0; i < n; ++i) items.push_back(apply_skip_plan(fa[k][i], in.plans[i][k]));
    return torch::stack(items);
  };
  auto x = torch::cat({warped(config.depth), fs[config.depth]}, 1);
  int k = config.depth - 1;
  for (const auto& m : *ups) {
    x = m->as<UpBlock>()->forward(x);
    x = torch::cat({x, fs[k], warped(k)}, 1);
    --k;
  }
  return torch::tanh(out(x));
}

BodyPartMasks skip_parts(const AppearanceNetConfig& config, const torch::Tensor& parse, const PoseSpec& pose) {
  if (!config.semantic_input) return pose_part_masks(pose);
  return decompose_body_parts(SemanticMap{harden(parse), MapMode::Hard}, pose);
}

torch::Tensor ha_forward(AppearanceGenerator& net, const torch::Tensor& ref_image, const SemanticMap& ref_parse,
                         const PoseSpec& ref_pose, const PoseHeatmap& ref_heatmap, const SemanticMap& tgt_parse,
                         const PoseSpec& tgt_pose, const PoseHeatmap& tgt_heatmap) {
  const auto& cfg = net->config;
  AppearanceInputs in{ref_image.unsqueeze(0), ref_parse.data.unsqueeze(0), ref_heatmap.data.unsqueeze(0),
                      tgt_parse.data.unsqueeze(0), tgt_heatmap.data.unsqueeze(0), {}};
  in.plans.push_back(skip_plans(skip_parts(cfg, ref_parse.data, ref_pose), skip_parts(cfg, tgt_parse.data, tgt_pose),
                                cfg.depth));
  return net->forward(in)[0];
}

AppearanceDiscriminators make_appearance_discriminators(const AppearanceNetConfig& config) {
  return {PatchDiscriminator(3, config.base_channels), PatchDiscriminator(3, config.base_channels)};
}

AdversarialLoss appearance_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fwd,
                                    const torch::Tensor& d_back) {
  return paired_adversarial_loss(d_real, d_fwd, d_back);
}

LossReport ha_total_loss(const AppearanceTerms& t, const AppearanceNetConfig& c) {
  return weighted_total({{"adv", t.adv, 1.0},
                         {"pose", t.pose, c.lambda_pose},
                         {"cont", t.cont, c.lambda_cont},
                         {"sty", t.sty, c.lambda_sty},
                         {"face", t.face, 1.0}});
}

}  // namespace parsegen
