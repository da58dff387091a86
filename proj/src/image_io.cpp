#include "parsegen/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "parsegen/errors.hpp"

namespace parsegen {
namespace {

struct ReadCursor {
  std::string_view bytes;
  std::size_t offset = 0;
};

void read_callback(png_structp png, png_bytep out, png_size_t count) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + count > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes.data() + cur->offset, count);
  cur->offset += count;
}

void write_callback(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), count);
}

void flush_callback(png_structp) {}

[[noreturn]] void error_callback(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg); }
void warning_callback(png_structp, png_const_charp) {}

// RAII for libpng read/write structs.
class PngReader {
 public:
  explicit PngReader(std::string_view bytes) : cursor_{bytes} {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
      throw FormatError("not a PNG stream");
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
    info_ = png_create_info_struct(png_);
    png_set_read_fn(png_, &cursor_, read_callback);
    png_read_info(png_, info_);
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  int width() const { return static_cast<int>(png_get_image_width(png_, info_)); }
  int height() const { return static_cast<int>(png_get_image_height(png_, info_)); }
  int color_type() const { return png_get_color_type(png_, info_); }
  int bit_depth() const { return png_get_bit_depth(png_, info_); }
  png_structp png() { return png_; }
  png_infop info() { return info_; }

  std::vector<std::uint8_t> read_rows(std::size_t row_bytes) {
    std::vector<std::uint8_t> data(row_bytes * height());
    std::vector<png_bytep> rows(height());
    for (int y = 0; y < height(); ++y) rows[y] = data.data() + y * row_bytes;
    png_read_image(png_, rows.data());
    png_read_end(png_, nullptr);
    return data;
  }

 private:
  ReadCursor cursor_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

class PngWriter {
 public:
  PngWriter() {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
    info_ = png_create_info_struct(png_);
    png_set_write_fn(png_, &out_, write_callback, flush_callback);
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

  std::string finish(const std::uint8_t* data, int height, std::size_t row_bytes) {
    png_write_info(png_, info_);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(data + y * row_bytes);
    png_write_image(png_, rows.data());
    png_write_end(png_, nullptr);
    return std::move(out_);
  }

 private:
  std::string out_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

std::string encode_png(const RgbImage& image) {
  if (image.height <= 0 || image.width <= 0) throw InputError("cannot encode an empty image");
  PngWriter w;
  png_set_IHDR(w.png(), w.info(), image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  return w.finish(image.rgb.data(), image.height, static_cast<std::size_t>(image.width) * 3);
}

RgbImage decode_png_rgb(std::string_view bytes) {
  PngReader r(bytes);
  png_structp png = r.png();
  if (r.bit_depth() == 16) png_set_strip_16(png);
  if (r.color_type() == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (r.color_type() == PNG_COLOR_TYPE_GRAY || r.color_type() == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (r.bit_depth() < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (r.color_type() & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, r.info());
  RgbImage out;
  out.height = r.height();
  out.width = r.width();
  out.rgb = r.read_rows(static_cast<std::size_t>(out.width) * 3);
  return out;
}

std::string encode_png_indexed(const LabelImage& labels, std::span<const Rgb> palette) {
  if (labels.height <= 0 || labels.width <= 0) throw InputError("cannot encode an empty label map");
  PngWriter w;
  png_set_IHDR(w.png(), w.info(), labels.width, labels.height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> colors(256, png_color{0, 0, 0});
  for (std::size_t i = 0; i < palette.size() && i < 256; ++i) colors[i] = {palette[i].r, palette[i].g, palette[i].b};
  const int max_label = labels.pixels.empty() ? 0 : *std::max_element(labels.pixels.begin(), labels.pixels.end());
  const int n = std::max<int>(static_cast<int>(palette.size()), max_label + 1);
  png_set_PLTE(w.png(), w.info(), colors.data(), std::min(n, 256));
  return w.finish(labels.pixels.data(), labels.height, static_cast<std::size_t>(labels.width));
}

LabelImage decode_png_indexed(std::string_view bytes) {
  PngReader r(bytes);
  const int ct = r.color_type();
  if (ct != PNG_COLOR_TYPE_PALETTE && ct != PNG_COLOR_TYPE_GRAY)
    throw FormatError("label PNG must be paletted or 8-bit grayscale");
  if (r.bit_depth() == 16) throw FormatError("label PNG must be 8-bit");
  if (r.bit_depth() < 8) png_set_packing(r.png());
  png_read_update_info(r.png(), r.info());
  LabelImage out;
  out.height = r.height();
  out.width = r.width();
  out.pixels = r.read_rows(static_cast<std::size_t>(out.width));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RgbImage read_png_rgb(const std::filesystem::path& path) { return decode_png_rgb(read_file(path)); }
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) { write_file(path, encode_png(image)); }
LabelImage read_png_indexed(const std::filesystem::path& path) { return decode_png_indexed(read_file(path)); }
void write_png_indexed(const std::filesystem::path& path, const LabelImage& labels, std::span<const Rgb> palette) {
  write_file(path, encode_png_indexed(labels, palette));
}

torch::Tensor image_to_tensor(const RgbImage& image) {
  auto t = torch::empty({3, image.height, image.width});
  auto a = t.accessor<float, 3>();
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        a[c][y][x] = image.rgb[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] / 127.5f - 1.0f;
  return t;
}

RgbImage tensor_to_image(const torch::Tensor& tensor) {
  TORCH_CHECK(tensor.dim() == 3 && tensor.size(0) == 3, "expected a [3, H, W] image tensor");
  auto t = tensor.detach().to(torch::kCPU, torch::kFloat).contiguous();
  auto a = t.accessor<float, 3>();
  RgbImage out(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp((a[c][y][x] + 1.0f) * 127.5f, 0.0f, 255.0f);
        out.rgb[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
      }
  return out;
}

RgbImage tile_images(const std::vector<std::vector<torch::Tensor>>& rows) {
  if (rows.empty() || rows.front().empty()) return {};
  const int h = static_cast<int>(rows.front().front().size(1));
  const int w = static_cast<int>(rows.front().front().size(2));
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  RgbImage out(h * static_cast<int>(rows.size()), w * static_cast<int>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const RgbImage tile = tensor_to_image(rows[r][c]);
      for (int y = 0; y < h; ++y)
        std::copy_n(tile.rgb.begin() + static_cast<std::size_t>(y) * w * 3, w * 3,
                    out.rgb.begin() + ((r * h + y) * out.width + c * w) * 3);
    }
  return out;
}

RgbImage colorize(const LabelImage& labels) {
  RgbImage out(labels.height, labels.width);
  for (std::size_t i = 0; i < labels.pixels.size(); ++i) {
    const auto& c = kLabelPalette[std::min<int>(labels.pixels[i], kNumLabels - 1)];
    out.rgb[i * 3] = c.r;
    out.rgb[i * 3 + 1] = c.g;
    out.rgb[i * 3 + 2] = c.b;
  }
  return out;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' ) break;
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw InputError("invalid base64 character");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  return out;
}

}  // namespace parsegen
