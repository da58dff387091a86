#pragma once

// PNG I/O for RGB images, paletted label maps and binary masks, plus
// conversions to and from [-1, 1] image tensors.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "parsegen/constants.hpp"
#include "parsegen/representation.hpp"

namespace parsegen {

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}
  ImageSize size() const { return {height, width}; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

std::string encode_png(const RgbImage& image);
RgbImage decode_png_rgb(std::string_view bytes);

// 8-bit paletted PNG; pixel values are palette indices.
std::string encode_png_indexed(const LabelImage& labels, std::span<const Rgb> palette);
// Accepts paletted (indices are returned) or 8-bit grayscale PNGs.
LabelImage decode_png_indexed(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

RgbImage read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);
LabelImage read_png_indexed(const std::filesystem::path& path);
void write_png_indexed(const std::filesystem::path& path, const LabelImage& labels,
                       std::span<const Rgb> palette = kLabelPalette);

// [3, H, W] float tensor in [-1, 1].
torch::Tensor image_to_tensor(const RgbImage& image);
RgbImage tensor_to_image(const torch::Tensor& tensor);

// Side-by-side grid of [3, H, W] tensors, one row per entry of `rows`.
RgbImage tile_images(const std::vector<std::vector<torch::Tensor>>& rows);
// Colourised label map using the canonical palette.
RgbImage colorize(const LabelImage& labels);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace parsegen
