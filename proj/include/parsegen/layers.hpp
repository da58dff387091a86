#pragma once

// Building blocks shared by the generators and discriminators.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace parsegen {

// conv k4 s2 p1 -> InstanceNorm -> LeakyReLU(0.2)
struct DownBlockImpl : torch::nn::Module {
  DownBlockImpl(int64_t in, int64_t out, bool norm = true);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  bool norm;
};
TORCH_MODULE(DownBlock);

// nearest x2 -> conv 3x3 -> InstanceNorm -> LeakyReLU(0.2)
struct UpBlockImpl : torch::nn::Module {
  UpBlockImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(UpBlock);

// Full-resolution stem followed by `depth` halvings. forward returns the
// features of every level, finest first; level k has stride 2^k.
struct EncoderImpl : torch::nn::Module {
  EncoderImpl(int64_t in_channels, int64_t base_channels, int depth);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  std::vector<int64_t> channels;  // per level
  torch::nn::Conv2d stem{nullptr};
  torch::nn::ModuleList downs;
};
TORCH_MODULE(Encoder);

int64_t level_channels(int64_t base_channels, int level);

// Patch discriminator with three downsampling blocks and a sigmoid head;
// [N, C, H, W] -> [N, 1, H/8, W/8] probabilities.
struct PatchDiscriminatorImpl : torch::nn::Module {
  PatchDiscriminatorImpl(int64_t in_channels, int64_t base_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential body;
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Conv weights ~ N(0, 0.02), biases zero, drawn from a generator seeded with `seed`.
void init_weights(torch::nn::Module& module, std::uint64_t seed);

void set_requires_grad(torch::nn::Module& module, bool flag);

// Order-sensitive FNV-1a digest over every parameter and buffer, by name.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace parsegen
