#include "parsegen/layers.hpp"

#include <algorithm>
#include <cstring>

namespace parsegen {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::Tensor instance_norm(const torch::Tensor& x) { return F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5)); }

}  // namespace

DownBlockImpl::DownBlockImpl(int64_t in, int64_t out, bool norm_)
    : conv(register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)))),
      norm(norm_) {}

torch::Tensor DownBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv(x);
  if (norm) y = instance_norm(y);
  return lrelu(y);
}

UpBlockImpl::UpBlockImpl(int64_t in, int64_t out)
    : conv(register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)))) {}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
  auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
  return lrelu(instance_norm(conv(y)));
}

int64_t level_channels(int64_t base, int level) { return base * std::min<int64_t>(int64_t{1} << level, 4); }

EncoderImpl::EncoderImpl(int64_t in_channels, int64_t base, int depth) {
  stem = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, base, 3).padding(1)));
  channels.push_back(base);
  for (int k = 1; k <= depth; ++k) {
    channels.push_back(level_channels(base, k));
    downs->push_back(DownBlock(channels[k - 1], channels[k]));
  }
  register_module("downs", downs);
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  out.push_back(lrelu(stem(x)));
  for (const auto& m : *downs) out.push_back(m->as<DownBlock>()->forward(out.back()));
  return out;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t in_channels, int64_t base) {
  body->push_back(DownBlock(in_channels, base, /*norm=*/false));
  body->push_back(DownBlock(base, base * 2));
  body->push_back(DownBlock(base * 2, base * 4));
  register_module("body", body);
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(base * 4, 1, 3).padding(1)));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return torch::sigmoid(head(body->forward(x))); }

void init_weights(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& item : module.named_parameters()) {
    auto& p = item.value();
    if (item.key().ends_with("bias"))
      p.zero_();
    else
      p.copy_(at::normal(0.0, 0.02, p.sizes(), gen).to(p.dtype()));
  }
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  auto visit = [&](const std::string& name, const torch::Tensor& t) {
    mix(name.data(), name.size());
    auto c = t.detach().to(torch::kCPU).contiguous();
    mix(c.data_ptr(), c.numel() * c.element_size());
  };
  for (const auto& item : module.named_parameters()) visit(item.key(), item.value());
  for (const auto& item : module.named_buffers()) visit(item.key(), item.value());
  return h;
}

}  // namespace parsegen
