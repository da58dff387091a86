#include "parsegen/representation.hpp"

#include <Eigen/Dense>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "parsegen/errors.hpp"

namespace parsegen {

int PoseSpec::visible_count() const {
  return static_cast<int>(std::count_if(keypoints.begin(), keypoints.end(),
                                        [](const Keypoint& k) { return k.visible; }));
}

void PoseSpec::validate() const {
  if (size.height <= 0 || size.width <= 0) throw InputError("pose has empty image size");
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& k = keypoints[j];
    if (!k.visible) continue;
    if (!(k.x >= 0 && k.x < size.width && k.y >= 0 && k.y < size.height)) {
      throw InputError("visible joint " + std::string(kJointNames[j]) + " lies outside the image");
    }
  }
}

PoseSpec mirror_pose(const PoseSpec& pose) {
  PoseSpec out;
  out.size = pose.size;
  for (int j = 0; j < kNumJoints; ++j) {
    Keypoint k = pose.keypoints[j];
    k.x = pose.size.width - 1 - k.x;
    out.keypoints[kJointMirror[j]] = k;
  }
  return out;
}

SemanticMap SemanticMap::from_labels(const LabelImage& labels) {
  auto data = torch::zeros({kNumLabels, labels.height, labels.width});
  auto acc = data.accessor<float, 3>();
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const int l = labels.at(y, x);
      if (l >= kNumLabels) throw InputError("label " + std::to_string(l) + " outside canonical palette");
      acc[l][y][x] = 1.0f;
    }
  }
  return {data, MapMode::Hard};
}

LabelImage SemanticMap::to_labels() const {
  auto idx = data.detach().to(torch::kCPU).argmax(0).to(torch::kUInt8).contiguous();
  LabelImage out(height(), width());
  std::copy_n(idx.data_ptr<std::uint8_t>(), out.pixels.size(), out.pixels.begin());
  return out;
}

SemanticMap SemanticMap::hardened() const { return {harden(data), MapMode::Hard}; }

torch::Tensor harden(const torch::Tensor& probs) {
  const int64_t dim = probs.dim() - 3;
  auto idx = probs.detach().argmax(dim, /*keepdim=*/true);
  return torch::zeros_like(probs).scatter_(dim, idx, 1.0);
}

RepresentationConfig RepresentationConfig::for_height(int height) {
  const double s = height / 256.0;
  return {6.0 * s, 10.0 * s, 5.0 * s};
}

namespace {

void fill_heatmap_channel(float* out, const Keypoint& k, int height, int width, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y) {
    const double dy = y - k.y;
    for (int x = 0; x < width; ++x) {
      const double dx = x - k.x;
      out[y * width + x] = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
    }
  }
}

void check_sigma(double sigma) {
  if (!(sigma > 0)) throw InputError("heatmap sigma must be positive");
}

double segment_distance2(double px, double py, const Keypoint& a, const Keypoint& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return dx * dx + dy * dy;
}

}  // namespace

namespace serial {

PoseHeatmap encode_heatmap(const PoseSpec& pose, double sigma) {
  check_sigma(sigma);
  const int h = pose.size.height, w = pose.size.width;
  auto data = torch::zeros({kNumJoints, h, w});
  float* base = data.data_ptr<float>();
  for (int j = 0; j < kNumJoints; ++j) {
    if (pose.keypoints[j].visible) fill_heatmap_channel(base + j * h * w, pose.keypoints[j], h, w, sigma);
  }
  return {data};
}

LabelImage dilate(const LabelImage& mask, double radius) {
  LabelImage out(mask.height, mask.width);
  const int r = static_cast<int>(std::floor(radius));
  const double r2 = radius * radius;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      bool hit = false;
      for (int dy = -r; dy <= r && !hit; ++dy) {
        for (int dx = -r; dx <= r && !hit; ++dx) {
          if (dx * dx + dy * dy > r2) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < mask.height && xx >= 0 && xx < mask.width && mask.at(yy, xx)) hit = true;
        }
      }
      out.at(y, x) = hit ? 1 : 0;
    }
  }
  return out;
}

}  // namespace serial

PoseHeatmap encode_heatmap(const PoseSpec& pose, double sigma) {
  check_sigma(sigma);
  const int h = pose.size.height, w = pose.size.width;
  auto data = torch::zeros({kNumJoints, h, w});
  float* base = data.data_ptr<float>();
#pragma omp parallel for schedule(static)
  for (int j = 0; j < kNumJoints; ++j) {
    if (pose.keypoints[j].visible) fill_heatmap_channel(base + j * h * w, pose.keypoints[j], h, w, sigma);
  }
  return {data};
}

LabelImage rasterize_skeleton(const PoseSpec& pose, double limb_radius) {
  LabelImage out(pose.size.height, pose.size.width);
  const double r2 = limb_radius * limb_radius;
  auto stamp = [&](const Keypoint& a, const Keypoint& b) {
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - limb_radius)));
    const int x1 = std::min(out.width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + limb_radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - limb_radius)));
    const int y1 = std::min(out.height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + limb_radius)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (segment_distance2(x, y, a, b) <= r2) out.at(y, x) = 1;
  };
  for (const auto& k : pose.keypoints)
    if (k.visible) stamp(k, k);
  for (const auto& e : kSkeleton) {
    const auto& a = pose[e.a];
    const auto& b = pose[e.b];
    if (a.visible && b.visible) stamp(a, b);
  }
  return out;
}

LabelImage dilate(const LabelImage& mask, double radius) {
  if (radius < 1.0) return mask;
  const int r = static_cast<int>(std::floor(radius));
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dy, dx);
  LabelImage out(mask.height, mask.width);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      for (const auto& [dy, dx] : offsets) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < mask.height && xx >= 0 && xx < mask.width && mask.at(yy, xx)) {
          out.at(y, x) = 1;
          break;
        }
      }
    }
  }
  return out;
}

PoseMask encode_pose_mask(const PoseSpec& pose, double limb_radius, double dilation_radius) {
  auto raster = dilate(rasterize_skeleton(pose, limb_radius), dilation_radius);
  auto data = torch::zeros({1, raster.height, raster.width});
  float* p = data.data_ptr<float>();
  for (std::size_t i = 0; i < raster.pixels.size(); ++i) p[i] = raster.pixels[i];
  return {data};
}

PoseEncoding encode_pose(const PoseSpec& pose, const RepresentationConfig& config) {
  return {encode_heatmap(pose, config.heatmap_sigma),
          encode_pose_mask(pose, config.limb_radius, config.dilation_radius)};
}

double PartBox::area() const {
  if (degenerate) return 0.0;
  return (corners[2].x - corners[0].x) * (corners[2].y - corners[0].y);
}

PartBox PartBox::from_extent(double x0, double y0, double x1, double y1) {
  PartBox box;
  box.corners = {Point2{x0, y0}, Point2{x1, y0}, Point2{x1, y1}, Point2{x0, y1}};
  box.degenerate = !(x1 > x0 && y1 > y0);
  return box;
}

PartBox bounding_box(const LabelImage& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return PartBox{};
  return PartBox::from_extent(x0 - 0.5, y0 - 0.5, x1 + 0.5, y1 + 0.5);
}

std::optional<PixelRect> part_rectangle(const PoseSpec& pose, BodyPart part, const PartConfig& config) {
  const auto& def = kPartDefinitions[static_cast<int>(part)];
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  auto include = [&](const Keypoint& k) {
    x0 = std::min(x0, k.x);
    x1 = std::max(x1, k.x);
    y0 = std::min(y0, k.y);
    y1 = std::max(y1, k.y);
  };
  for (int j : def.required) {
    if (j < 0) continue;
    if (!pose.keypoints[j].visible) return std::nullopt;
    include(pose.keypoints[j]);
  }
  for (int j : def.optional)
    if (j >= 0 && pose.keypoints[j].visible) include(pose.keypoints[j]);
  const double pad = config.margin_fraction * std::hypot(x1 - x0, y1 - y0);
  PixelRect r{static_cast<int>(std::ceil(x0 - pad)), static_cast<int>(std::ceil(y0 - pad)),
              static_cast<int>(std::floor(x1 + pad)), static_cast<int>(std::floor(y1 + pad))};
  r.x0 = std::max(r.x0, 0);
  r.y0 = std::max(r.y0, 0);
  r.x1 = std::min(r.x1, pose.size.width - 1);
  r.y1 = std::min(r.y1, pose.size.height - 1);
  if (r.x1 < r.x0 || r.y1 < r.y0) return std::nullopt;
  return r;
}

BodyPartMasks decompose_body_parts(const LabelImage& labels, const PoseSpec& pose, const PartConfig& config) {
  if (labels.size() != pose.size) throw InputError("semantic map and pose sizes differ");
  BodyPartMasks out;
  for (int p = 0; p < kNumParts; ++p) {
    out.parts[p] = LabelImage(labels.height, labels.width);
    const auto rect = part_rectangle(pose, static_cast<BodyPart>(p), config);
    if (!rect) continue;
    const auto& wanted = kPartDefinitions[p].labels;
    for (int y = rect->y0; y <= rect->y1; ++y)
      for (int x = rect->x0; x <= rect->x1; ++x) {
        const int l = labels.at(y, x);
        if (l != 0 && std::find(wanted.begin(), wanted.end(), l) != wanted.end()) out.parts[p].at(y, x) = 1;
      }
    out.part_boxes[p] = bounding_box(out.parts[p]);
  }
  return out;
}

BodyPartMasks decompose_body_parts(const SemanticMap& map, const PoseSpec& pose, const PartConfig& config) {
  if (map.mode != MapMode::Hard) throw InputError("body-part decomposition needs a hard semantic map");
  return decompose_body_parts(map.to_labels(), pose, config);
}

BodyPartMasks pose_part_masks(const PoseSpec& pose, const PartConfig& config) {
  BodyPartMasks out;
  for (int p = 0; p < kNumParts; ++p) {
    out.parts[p] = LabelImage(pose.size.height, pose.size.width);
    const auto rect = part_rectangle(pose, static_cast<BodyPart>(p), config);
    if (!rect) continue;
    for (int y = rect->y0; y <= rect->y1; ++y)
      for (int x = rect->x0; x <= rect->x1; ++x) out.parts[p].at(y, x) = 1;
    out.part_boxes[p] = bounding_box(out.parts[p]);
  }
  return out;
}

Point2 Similarity::apply_inverse(Point2 q) const {
  const double det = a * a + b * b;
  const double qx = q.x - tx, qy = q.y - ty;
  return {(a * qx + b * qy) / det, (-b * qx + a * qy) / det};
}

double Similarity::scale() const { return std::hypot(a, b); }

std::optional<Similarity> fit_face_transform(const PoseSpec& pose, CropSize crop) {
  std::vector<std::pair<Point2, Point2>> pairs;
  for (const auto& anchor : kFaceTemplate) {
    const auto& k = pose[anchor.joint];
    if (k.visible) pairs.push_back({{k.x, k.y}, {anchor.u * crop.width, anchor.v * crop.height}});
  }
  if (pairs.size() < 2) return std::nullopt;
  // Unknowns (a, b, tx, ty); each correspondence gives two rows.
  Eigen::MatrixXd A(2 * pairs.size(), 4);
  Eigen::VectorXd rhs(2 * pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [p, q] = pairs[i];
    A.row(2 * i) << p.x, -p.y, 1.0, 0.0;
    A.row(2 * i + 1) << p.y, p.x, 0.0, 1.0;
    rhs(2 * i) = q.x;
    rhs(2 * i + 1) = q.y;
  }
  const Eigen::Vector4d s = A.colPivHouseholderQr().solve(rhs);
  Similarity t{s(0), s(1), s(2), s(3)};
  if (!std::isfinite(t.scale()) || t.scale() < 1e-9) return std::nullopt;
  return t;
}

FaceCrop extract_face(const torch::Tensor& image, const PoseSpec& pose, CropSize crop) {
  TORCH_CHECK(image.dim() == 3, "extract_face expects a [C, H, W] image");
  const int64_t channels = image.size(0), h = image.size(1), w = image.size(2);
  FaceCrop out;
  const auto t = fit_face_transform(pose, crop);
  if (!t) {
    out.data = torch::zeros({channels, crop.height, crop.width}, image.options());
    return out;
  }
  // Sampling grid in align_corners=true normalised coordinates.
  std::vector<double> grid(static_cast<std::size_t>(crop.height) * crop.width * 2);
  for (int v = 0; v < crop.height; ++v)
    for (int u = 0; u < crop.width; ++u) {
      const Point2 p = t->apply_inverse({static_cast<double>(u), static_cast<double>(v)});
      const std::size_t i = (static_cast<std::size_t>(v) * crop.width + u) * 2;
      grid[i] = w > 1 ? 2.0 * p.x / (w - 1) - 1.0 : 0.0;
      grid[i + 1] = h > 1 ? 2.0 * p.y / (h - 1) - 1.0 : 0.0;
    }
  auto grid_t = torch::from_blob(grid.data(), {1, crop.height, crop.width, 2}, torch::kDouble)
                    .to(image.options())
                    .clone();
  namespace F = torch::nn::functional;
  auto sampled = F::grid_sample(
      image.unsqueeze(0), grid_t,
      F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(true));
  out.data = sampled.squeeze(0);
  out.valid = true;
  const double s = t->scale();
  out.source_area = (crop.width / s) * (crop.height / s);
  return out;
}

MergeTable default_merge_table() {
  MergeTable table;
  for (int i = 0; i < kLipNumLabels; ++i) table[i] = kLipMergeTable[i];
  return table;
}

LabelImage merge_parser_label_image(const LabelImage& raw, const MergeTable& table) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (const auto& [raw_id, label] : table)
    if (raw_id >= 0 && raw_id < 256) lut[raw_id] = static_cast<int>(label);
  LabelImage out(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    const int m = lut[raw.pixels[i]];
    if (m < 0) throw UnknownLabelError(raw.pixels[i]);
    out.pixels[i] = static_cast<std::uint8_t>(m);
  }
  return out;
}

SemanticMap merge_parser_labels(const LabelImage& raw, const MergeTable& table) {
  return SemanticMap::from_labels(merge_parser_label_image(raw, table));
}

}  // namespace parsegen
