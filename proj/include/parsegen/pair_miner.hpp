#pragma once

// Pseudo ground-truth mining: for each record, the candidate record whose
// part-aligned semantic map is closest (summed over the ten rigid parts).

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parsegen/representation.hpp"

namespace parsegen {

struct PartAffine {
  std::array<double, 6> matrix{1, 0, 0, 0, 1, 0};  // row-major 2x3
  bool valid = false;

  Point2 apply(Point2 p) const {
    return {matrix[0] * p.x + matrix[1] * p.y + matrix[2], matrix[3] * p.x + matrix[4] * p.y + matrix[5]};
  }
  std::optional<PartAffine> inverse() const;
  static PartAffine identity() { return {{1, 0, 0, 0, 1, 0}, true}; }
};

// Least-squares affine taking the four source corners onto the four
// destination corners. Invalid when either quadrilateral has no area.
PartAffine estimate_part_affine(std::span<const Point2, 4> src, std::span<const Point2, 4> dst);
PartAffine estimate_part_affine(const PartBox& src, const PartBox& dst);

// A record prepared for alignment: hard labels plus its part decomposition.
struct PartedMap {
  LabelImage labels;
  BodyPartMasks parts;
};

PartedMap make_parted_map(const LabelImage& labels, const PoseSpec& pose, const PartConfig& config = {});

// Cost contributed when a part is missing on exactly one side. Without a
// fixed value, the non-degenerate side's box area is charged.
struct DegeneratePenalty {
  std::optional<double> fixed;
  double operator()(const PartBox& present) const { return fixed ? *fixed : present.area(); }
};

// Nearest-neighbour warp of `labels` restricted to `mask`, as a label image
// where kNoLabel marks pixels that receive nothing.
inline constexpr std::uint8_t kNoLabel = 255;
LabelImage warp_masked_labels(const LabelImage& labels, const LabelImage& mask, const PartAffine& affine);

double part_alignment_cost(const PartedMap& src, const PartedMap& cand, int part, const DegeneratePenalty& penalty);
double alignment_cost(const PartedMap& src, const PartedMap& cand, const DegeneratePenalty& penalty = {});
double alignment_cost(const SemanticMap& src_map, const BodyPartMasks& src_parts, const SemanticMap& cand_map,
                      const BodyPartMasks& cand_parts, const DegeneratePenalty& penalty = {});

bool exclude_similar_pose(const PoseSpec& src, const PoseSpec& cand, double threshold);

struct PairEntry {
  std::string matched_id;
  double cost = 0.0;
  int excluded_candidates = 0;
  friend bool operator==(const PairEntry&, const PairEntry&) = default;
};

struct PairIndex {
  std::map<std::string, PairEntry> entries;
  friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

struct MiningRecord {
  std::string id;
  PoseSpec pose;
  PartedMap map;
};

struct MiningConfig {
  double pose_threshold = 15.0;
  DegeneratePenalty penalty;
  // Defaults are stated at 256-pixel height.
  static MiningConfig for_height(int height);
};

// OpenMP over source records; output is independent of thread count.
PairIndex mine_pairs(std::span<const MiningRecord> records, const MiningConfig& config);

namespace serial {
PairIndex mine_pairs(std::span<const MiningRecord> records, const MiningConfig& config);
}

std::string format_pair_index(const PairIndex& index);
PairIndex parse_pair_index(std::string_view text);
void save_pair_index(const std::filesystem::path& path, const PairIndex& index);
PairIndex load_pair_index(const std::filesystem::path& path);

}  // namespace parsegen
