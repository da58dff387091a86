#include "parsegen/pair_miner.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "parsegen/errors.hpp"
#include "parsegen/image_io.hpp"

namespace parsegen {
namespace {

double quad_area(std::span<const Point2, 4> q) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = q[i];
    const auto& b = q[(i + 1) % 4];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(s);
}

struct Region {
  int x0, y0, x1, y1;  // inclusive
  bool empty() const { return x1 < x0 || y1 < y0; }
};

Region pixel_region(const PartBox& box, int height, int width) {
  // Pixel centres strictly inside the edge-coordinate box.
  Region r{static_cast<int>(std::ceil(box.corners[0].x)), static_cast<int>(std::ceil(box.corners[0].y)),
           static_cast<int>(std::floor(box.corners[2].x)), static_cast<int>(std::floor(box.corners[2].y))};
  r.x0 = std::max(r.x0, 0);
  r.y0 = std::max(r.y0, 0);
  r.x1 = std::min(r.x1, width - 1);
  r.y1 = std::min(r.y1, height - 1);
  return r;
}

Region transformed_region(const PartBox& box, const PartAffine& a, int height, int width) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (const auto& c : box.corners) {
    const Point2 p = a.apply(c);
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  // One pixel of slack for rounding in the nearest-neighbour lookup.
  Region r{static_cast<int>(std::floor(x0)) - 1, static_cast<int>(std::floor(y0)) - 1,
           static_cast<int>(std::ceil(x1)) + 1, static_cast<int>(std::ceil(y1)) + 1};
  r.x0 = std::max(r.x0, 0);
  r.y0 = std::max(r.y0, 0);
  r.x1 = std::min(r.x1, width - 1);
  r.y1 = std::min(r.y1, height - 1);
  return r;
}

Region merge(const Region& a, const Region& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

// Box corners sit on pixel edges, so affine images of pixel centres often land
// on exact half-integers; ties round up regardless of float noise.
constexpr double kTieSlack = 1e-7;

inline int round_nearest(double v) { return static_cast<int>(std::floor(v + 0.5 + kTieSlack)); }

inline std::uint8_t sample_nearest(const LabelImage& labels, const LabelImage& mask, const PartAffine& inv, int x,
                                   int y) {
  const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
  const int sx = round_nearest(s.x);
  const int sy = round_nearest(s.y);
  if (sx < 0 || sy < 0 || sx >= labels.width || sy >= labels.height || !mask.at(sy, sx)) return kNoLabel;
  return labels.at(sy, sx);
}

}  // namespace

std::optional<PartAffine> PartAffine::inverse() const {
  const double det = matrix[0] * matrix[4] - matrix[1] * matrix[3];
  if (!valid || !(std::abs(det) > 1e-12)) return std::nullopt;
  const double ia = matrix[4] / det, ib = -matrix[1] / det;
  const double id = -matrix[3] / det, ie = matrix[0] / det;
  return PartAffine{{ia, ib, -(ia * matrix[2] + ib * matrix[5]), id, ie, -(id * matrix[2] + ie * matrix[5])}, true};
}

PartAffine estimate_part_affine(std::span<const Point2, 4> src, std::span<const Point2, 4> dst) {
  PartAffine out;
  if (!(quad_area(src) > 1e-9) || !(quad_area(dst) > 1e-9)) return out;
  Eigen::Matrix<double, 8, 6> A = Eigen::Matrix<double, 8, 6>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    A.row(2 * i) << src[i].x, src[i].y, 1.0, 0.0, 0.0, 0.0;
    A.row(2 * i + 1) << 0.0, 0.0, 0.0, src[i].x, src[i].y, 1.0;
    b(2 * i) = dst[i].x;
    b(2 * i + 1) = dst[i].y;
  }
  const Eigen::Matrix<double, 6, 1> m = A.colPivHouseholderQr().solve(b);
  if (!m.allFinite()) return out;
  std::copy(m.data(), m.data() + 6, out.matrix.begin());
  out.valid = true;
  return out;
}

PartAffine estimate_part_affine(const PartBox& src, const PartBox& dst) {
  if (src.degenerate || dst.degenerate) return {};
  return estimate_part_affine(std::span<const Point2, 4>(src.corners), std::span<const Point2, 4>(dst.corners));
}

PartedMap make_parted_map(const LabelImage& labels, const PoseSpec& pose, const PartConfig& config) {
  return {labels, decompose_body_parts(labels, pose, config)};
}

LabelImage warp_masked_labels(const LabelImage& labels, const LabelImage& mask, const PartAffine& affine) {
  LabelImage out(labels.height, labels.width, kNoLabel);
  const auto inv = affine.inverse();
  if (!inv) return out;
  const PartBox box = bounding_box(mask);
  if (box.degenerate) return out;
  const Region r = transformed_region(box, affine, labels.height, labels.width);
  for (int y = r.y0; y <= r.y1; ++y)
    for (int x = r.x0; x <= r.x1; ++x) out.at(y, x) = sample_nearest(labels, mask, *inv, x, y);
  return out;
}

double part_alignment_cost(const PartedMap& src, const PartedMap& cand, int part, const DegeneratePenalty& penalty) {
  const PartBox& sb = src.parts.part_boxes[part];
  const PartBox& cb = cand.parts.part_boxes[part];
  if (sb.degenerate && cb.degenerate) return 0.0;
  if (sb.degenerate) return penalty(cb);
  if (cb.degenerate) return penalty(sb);
  const PartAffine affine = estimate_part_affine(sb, cb);
  const auto inv = affine.inverse();
  if (!inv) return penalty(sb);

  const LabelImage& src_mask = src.parts.parts[part];
  const LabelImage& cand_mask = cand.parts.parts[part];
  const int h = cand.labels.height, w = cand.labels.width;
  const Region r = merge(pixel_region(cb, h, w), transformed_region(sb, affine, h, w));
  // Squared distance of one-hot columns: 0 when equal, 1 when exactly one
  // side is empty, 2 when both carry different labels.
  long long cost = 0;
  for (int y = r.y0; y <= r.y1; ++y) {
    for (int x = r.x0; x <= r.x1; ++x) {
      const std::uint8_t c = cand_mask.at(y, x) ? cand.labels.at(y, x) : kNoLabel;
      const std::uint8_t s = sample_nearest(src.labels, src_mask, *inv, x, y);
      if (c == s) continue;
      cost += (c == kNoLabel || s == kNoLabel) ? 1 : 2;
    }
  }
  return static_cast<double>(cost);
}

double alignment_cost(const PartedMap& src, const PartedMap& cand, const DegeneratePenalty& penalty) {
  if (src.labels.size() != cand.labels.size()) throw InputError("alignment_cost: semantic map shapes differ");
  double total = 0.0;
  for (int p = 0; p < kNumParts; ++p) total += part_alignment_cost(src, cand, p, penalty);
  return total;
}

double alignment_cost(const SemanticMap& src_map, const BodyPartMasks& src_parts, const SemanticMap& cand_map,
                      const BodyPartMasks& cand_parts, const DegeneratePenalty& penalty) {
  if (src_map.mode != MapMode::Hard || cand_map.mode != MapMode::Hard)
    throw InputError("alignment_cost needs hard semantic maps");
  if (src_map.data.sizes() != cand_map.data.sizes()) throw InputError("alignment_cost: semantic map shapes differ");
  return alignment_cost(PartedMap{src_map.to_labels(), src_parts}, PartedMap{cand_map.to_labels(), cand_parts},
                        penalty);
}

bool exclude_similar_pose(const PoseSpec& src, const PoseSpec& cand, double threshold) {
  if (src.size != cand.size) throw InputError("exclude_similar_pose: poses have different image sizes");
  double sum = 0.0;
  int n = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& a = src.keypoints[j];
    const auto& b = cand.keypoints[j];
    if (!a.visible || !b.visible) continue;
    sum += std::hypot(a.x - b.x, a.y - b.y);
    ++n;
  }
  if (n == 0) return true;
  return sum / n < threshold;
}

MiningConfig MiningConfig::for_height(int height) { return {15.0 * height / 256.0, {}}; }

namespace {

// Best match for records[i]; nullopt when every candidate is excluded.
std::optional<PairEntry> best_match(std::span<const MiningRecord> records, std::size_t i, const MiningConfig& config) {
  const auto& src = records[i];
  double best = std::numeric_limits<double>::infinity();
  const std::string* best_id = nullptr;
  int excluded = 0;
  for (std::size_t j = 0; j < records.size(); ++j) {
    if (j == i) continue;
    const auto& cand = records[j];
    if (cand.id == src.id) continue;
    if (exclude_similar_pose(src.pose, cand.pose, config.pose_threshold)) {
      ++excluded;
      continue;
    }
    if (src.map.labels.size() != cand.map.labels.size()) throw InputError("mine_pairs: records differ in size");
    double cost = 0.0;
    bool abandoned = false;
    for (int p = 0; p < kNumParts; ++p) {
      cost += part_alignment_cost(src.map, cand.map, p, config.penalty);
      if (cost > best) {
        abandoned = true;
        break;
      }
    }
    if (abandoned) continue;
    if (cost < best || (cost == best && best_id && cand.id < *best_id)) {
      best = cost;
      best_id = &cand.id;
    }
  }
  if (!best_id) return std::nullopt;
  return PairEntry{*best_id, best, excluded};
}

void check_records(std::span<const MiningRecord> records) {
  if (records.size() < 2) throw InputError("mine_pairs needs at least two records");
}

}  // namespace

namespace serial {

PairIndex mine_pairs(std::span<const MiningRecord> records, const MiningConfig& config) {
  check_records(records);
  PairIndex index;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (auto e = best_match(records, i, config)) index.entries[records[i].id] = std::move(*e);
  return index;
}

}  // namespace serial

PairIndex mine_pairs(std::span<const MiningRecord> records, const MiningConfig& config) {
  check_records(records);
  std::vector<std::optional<PairEntry>> found(records.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      found[i] = best_match(records, i, config);
    } catch (...) {
#pragma omp critical
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  PairIndex index;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (found[i]) index.entries[records[i].id] = std::move(*found[i]);
  return index;
}

std::string format_pair_index(const PairIndex& index) {
  std::string out;
  char buf[64];
  for (const auto& [src, e] : index.entries) {
    std::snprintf(buf, sizeof buf, "%.17g", e.cost);
    out += src + " " + e.matched_id + " " + buf + "\n";
  }
  return out;
}

PairIndex parse_pair_index(std::string_view text) {
  PairIndex index;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string src, dst;
    double cost;
    if (!(fields >> src >> dst >> cost) || cost < 0 || src == dst)
      throw FormatError("pairs file line " + std::to_string(lineno) + " is malformed");
    index.entries[src] = PairEntry{dst, cost, 0};
  }
  return index;
}

void save_pair_index(const std::filesystem::path& path, const PairIndex& index) {
  write_file(path, format_pair_index(index));
}

PairIndex load_pair_index(const std::filesystem::path& path) { return parse_pair_index(read_file(path)); }

}  // namespace parsegen
