#pragma once

// Procedural "paper-doll" people: flat coloured body parts with exactly known
// keypoints and parses. Used as the bundled desk-scale corpus and as ground
// truth for pose-transfer checks, since the same doll can be rendered in any
// pose.

#include <filesystem>
#include <random>

#include "parsegen/image_io.hpp"
#include "parsegen/representation.hpp"

namespace parsegen::synthetic {

enum class Sleeves { Long, Short, None };
enum class Bottom { Pants, Shorts, Skirt };

struct Appearance {
  Rgb skin, hair, top, top_stripe, bottom, shoes, background;
  Sleeves sleeves = Sleeves::Long;
  Bottom bottom_kind = Bottom::Pants;
  bool striped_top = false;
  bool long_hair = false;
  int top_raw_label = 5;  // one of the raw upper-body ids that merge together
  int hair_raw_label = 2;
};

// Angles in radians, measured from straight down, positive towards the
// person's own left (image right).
struct Articulation {
  double center_x = 0.0;  // offset from image centre, pixels at 64 px height
  double scale = 1.0;
  double l_shoulder = 0.3, l_elbow = 0.0;
  double r_shoulder = -0.3, r_elbow = 0.0;
  double l_hip = 0.1, l_knee = 0.0;
  double r_hip = -0.1, r_knee = 0.0;
};

struct Rendering {
  RgbImage image;
  LabelImage raw_parse;  // LIP ids
  LabelImage parse;      // canonical labels
  PoseSpec pose;
};

Appearance random_appearance(std::mt19937_64& rng);
Articulation random_articulation(std::mt19937_64& rng);

PoseSpec doll_pose(const Articulation& art, ImageSize size);
Rendering render(const Appearance& look, const Articulation& art, ImageSize size, std::uint64_t noise_seed);

struct CorpusSpec {
  int count = 200;
  double test_fraction = 0.1;
  ImageSize size{64, 48};
  std::uint64_t seed = 7;
};

// Writes the corpus directory layout and manifest. Ids are doll_NNNN.
void write_corpus(const std::filesystem::path& root, const CorpusSpec& spec);

// The same appearance rendered under two articulations, for checks that need
// a ground-truth target image.
struct HeldOutPair {
  Rendering source;
  Rendering target;
};
std::vector<HeldOutPair> held_out_pairs(int count, ImageSize size, std::uint64_t seed);

}  // namespace parsegen::synthetic
