#include "parsegen/semantic_net.hpp"

#include "parsegen/errors.hpp"

namespace parsegen {

namespace {

void check_resolution(const torch::Tensor& t, ImageSize size, const char* what) {
  if (t.dim() != 4 || t.size(2) != size.height || t.size(3) != size.width)
    throw InputError(std::string(what) + " does not match the configured input resolution " +
                     std::to_string(size.height) + "x" + std::to_string(size.width));
}

}  // namespace

void SemanticNetConfig::validate() const {
  if (depth < 2) throw InputError("semantic net depth must be at least 2");
  if (!(lambda_ce > 0)) throw InputError("lambda_ce must be positive");
  if (base_channels < 1) throw InputError("base_channels must be positive");
  const int f = 1 << depth;
  if (input_resolution.height % f || input_resolution.width % f)
    throw InputError("input resolution must be divisible by 2^depth");
}

SemanticGeneratorImpl::SemanticGeneratorImpl(const SemanticNetConfig& c) : config(c) {
  config.validate();
  const int64_t b = c.base_channels;
  enc_s = register_module("enc_s", Encoder(kNumLabels + kNumJoints + 1, b, c.depth));
  enc_p = register_module("enc_p", Encoder(kNumJoints + 1, b, c.depth));
  // Level k decoder input: upsampled features + E_P skip at level k.
  int64_t in = 2 * level_channels(b, c.depth);
  for (int k = c.depth - 1; k >= 0; --k) {
    const int64_t out_ch = level_channels(b, k);
    ups->push_back(UpBlock(in, out_ch));
    in = out_ch + enc_p->channels[k];
  }
  register_module("ups", ups);
  out = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, kNumLabels, 3).padding(1)));
}

torch::Tensor SemanticGeneratorImpl::forward(const torch::Tensor& src_parse, const torch::Tensor& src_heatmap,
                                             const torch::Tensor& src_mask, const torch::Tensor& tgt_heatmap,
                                             const torch::Tensor& tgt_mask) {
  for (const auto* t : {&src_parse, &src_heatmap, &src_mask, &tgt_heatmap, &tgt_mask})
    check_resolution(*t, config.input_resolution, "semantic net input");
  auto fs = enc_s->forward(torch::cat({src_parse, src_heatmap, src_mask}, 1));
  auto fp = enc_p->forward(torch::cat({tgt_heatmap, tgt_mask}, 1));
  auto x = torch::cat({fs.back(), fp.back()}, 1);
  int k = config.depth - 1;
  for (const auto& m : *ups) {
    x = m->as<UpBlock>()->forward(x);
    x = torch::cat({x, fp[k]}, 1);
    --k;
  }
  return torch::softmax(out(x), 1);
}

SemanticDiscriminatorImpl::SemanticDiscriminatorImpl(const SemanticNetConfig& c) {
  net = register_module("net", PatchDiscriminator(kNumLabels + kNumJoints, c.base_channels));
}

torch::Tensor SemanticDiscriminatorImpl::forward(const torch::Tensor& parse, const torch::Tensor& heatmap) {
  return net(torch::cat({parse, heatmap}, 1));
}

SemanticPrediction hs_forward(SemanticGenerator& net, const SemanticMap& src_parse, const PoseEncoding& src,
                              const PoseEncoding& tgt) {
  auto probs = net->forward(src_parse.data.unsqueeze(0), src.heatmap.data.unsqueeze(0), src.mask.data.unsqueeze(0),
                            tgt.heatmap.data.unsqueeze(0), tgt.mask.data.unsqueeze(0));
  return {SemanticMap{probs[0], MapMode::Soft}};
}

AdversarialLoss semantic_adv_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return adversarial_loss(d_real, d_fake);
}

LossReport hs_total_loss(const torch::Tensor& adv, const torch::Tensor& ce, const SemanticNetConfig& config) {
  return weighted_total({{"adv", adv, 1.0}, {"ce", ce, config.lambda_ce}});
}

}  // namespace parsegen
