#pragma once

// Person representation: poses, heatmaps, pose masks, semantic maps,
// body-part decomposition and face crops. All functions are pure.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "parsegen/constants.hpp"

namespace parsegen {

struct ImageSize {
  int height = 0;
  int width = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct PoseSpec {
  std::array<Keypoint, kNumJoints> keypoints{};
  ImageSize size;

  const Keypoint& operator[](Joint j) const { return keypoints[J(j)]; }
  Keypoint& operator[](Joint j) { return keypoints[J(j)]; }
  int visible_count() const;

  // Throws InputError if a visible keypoint lies outside the image.
  void validate() const;

  friend bool operator==(const PoseSpec&, const PoseSpec&) = default;
};

// Horizontal mirror of a pose: x -> W-1-x with left/right joints swapped.
PoseSpec mirror_pose(const PoseSpec& pose);

// Single-channel integer image (label ids or binary mask values).
struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  LabelImage() = default;
  LabelImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  ImageSize size() const { return {height, width}; }

  friend bool operator==(const LabelImage&, const LabelImage&) = default;
};

enum class MapMode { Hard, Soft };

// [L, H, W] float tensor. Hard maps are one-hot; soft maps are per-pixel
// distributions.
struct SemanticMap {
  torch::Tensor data;
  MapMode mode = MapMode::Hard;

  int height() const { return static_cast<int>(data.size(-2)); }
  int width() const { return static_cast<int>(data.size(-1)); }

  static SemanticMap from_labels(const LabelImage& labels);
  // Per-pixel argmax; exact inverse of from_labels for hard maps.
  LabelImage to_labels() const;
  SemanticMap hardened() const;
};

// Per-pixel argmax over the channel dimension of [..., L, H, W], one-hot
// encoded again. Not differentiable.
torch::Tensor harden(const torch::Tensor& probs);

struct PoseHeatmap {
  torch::Tensor data;  // [18, H, W]
};

struct PoseMask {
  torch::Tensor data;  // [1, H, W], values in {0, 1}
};

struct RepresentationConfig {
  double heatmap_sigma = 6.0;
  double limb_radius = 10.0;
  double dilation_radius = 5.0;

  // Defaults are stated at 256-pixel height and scale linearly with H.
  static RepresentationConfig for_height(int height);
};

PoseHeatmap encode_heatmap(const PoseSpec& pose, double sigma);
PoseMask encode_pose_mask(const PoseSpec& pose, double limb_radius, double dilation_radius);

// Binary raster of the skeleton segments (no dilation).
LabelImage rasterize_skeleton(const PoseSpec& pose, double limb_radius);
// Disk dilation: a pixel is set when any set pixel lies within radius.
LabelImage dilate(const LabelImage& mask, double radius);

namespace serial {
PoseHeatmap encode_heatmap(const PoseSpec& pose, double sigma);
LabelImage dilate(const LabelImage& mask, double radius);
}  // namespace serial

// Axis-aligned box of a part mask in pixel-edge coordinates: pixel (x, y)
// covers [x-0.5, x+0.5] x [y-0.5, y+0.5]. Corners run clockwise from the top
// left.
struct PartBox {
  std::array<Point2, 4> corners{};
  bool degenerate = true;

  double area() const;
  static PartBox from_extent(double x0, double y0, double x1, double y1);
};

struct BodyPartMasks {
  std::array<LabelImage, kNumParts> parts;
  std::array<PartBox, kNumParts> part_boxes;
};

struct PartConfig {
  double margin_fraction = 0.2;  // rectangle padding, fraction of its diagonal
};

// Part support rectangle spanned by the part's joints, or nullopt when a
// required joint is invisible. Returned as inclusive pixel bounds.
struct PixelRect {
  int x0, y0, x1, y1;
};
std::optional<PixelRect> part_rectangle(const PoseSpec& pose, BodyPart part,
                                        const PartConfig& config = {});

BodyPartMasks decompose_body_parts(const LabelImage& labels, const PoseSpec& pose,
                                   const PartConfig& config = {});
BodyPartMasks decompose_body_parts(const SemanticMap& map, const PoseSpec& pose,
                                   const PartConfig& config = {});

// Parts from pose geometry alone (rectangles, no label intersection).
BodyPartMasks pose_part_masks(const PoseSpec& pose, const PartConfig& config = {});

PartBox bounding_box(const LabelImage& mask);

struct FaceCrop {
  torch::Tensor data;  // [C, h_f, w_f]
  bool valid = false;
  // Image-space area covered by the crop window, in pixels.
  double source_area = 0.0;
};

struct CropSize {
  int height = 48;
  int width = 48;
};

// Similarity transform mapping image coordinates onto crop coordinates,
// fitted by least squares to the visible face joints. nullopt with fewer
// than two visible face joints.
struct Similarity {
  double a = 1.0, b = 0.0, tx = 0.0, ty = 0.0;  // [a -b; b a] p + t
  Point2 apply(Point2 p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  Point2 apply_inverse(Point2 q) const;
  double scale() const;
};
std::optional<Similarity> fit_face_transform(const PoseSpec& pose, CropSize crop);

// Differentiable with respect to `image` ([C, H, W]).
FaceCrop extract_face(const torch::Tensor& image, const PoseSpec& pose, CropSize crop = {});

using MergeTable = std::map<int, Label>;
MergeTable default_merge_table();

SemanticMap merge_parser_labels(const LabelImage& raw, const MergeTable& table);
LabelImage merge_parser_label_image(const LabelImage& raw, const MergeTable& table);

// Pose heatmap and mask stacked with a batch-friendly layout.
struct PoseEncoding {
  PoseHeatmap heatmap;
  PoseMask mask;
};
PoseEncoding encode_pose(const PoseSpec& pose, const RepresentationConfig& config);

}  // namespace parsegen
