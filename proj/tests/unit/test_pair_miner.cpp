#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "oracles/pair_oracle.hpp"
#include "parsegen/errors.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/synthetic.hpp"
#include "test_util.hpp"
#include "testing.hpp"

using namespace parsegen;
using parsegen::testing::make_pose;

namespace {

std::array<Point2, 4> corners(double x0, double y0, double x1, double y1) {
  return {Point2{x0, y0}, Point2{x1, y0}, Point2{x1, y1}, Point2{x0, y1}};
}

PartAffine fit(const std::array<Point2, 4>& s, const std::array<Point2, 4>& d) {
  return estimate_part_affine(std::span<const Point2, 4>(s), std::span<const Point2, 4>(d));
}

std::vector<MiningRecord> doll_records(int n, std::uint64_t seed, ImageSize size = {32, 24}) {
  std::mt19937_64 rng(seed);
  std::vector<MiningRecord> out;
  for (int i = 0; i < n; ++i) {
    auto look = synthetic::random_appearance(rng);
    auto art = synthetic::random_articulation(rng);
    art.scale = 0.85;
    auto r = synthetic::render(look, art, size, rng());
    // Hide a joint now and then so degenerate parts appear.
    std::uniform_int_distribution<int> joint(0, kNumJoints - 1);
    if (rng() % 3 == 0) r.pose.keypoints[joint(rng)].visible = false;
    out.push_back({"r" + std::to_string(100 + i), r.pose, make_parted_map(r.parse, r.pose)});
  }
  return out;
}

}  // namespace

TEST_CASE("estimate_part_affine") {
  const auto box = corners(2, 3, 10, 8);
  SUBCASE("identical boxes give the identity") {
    auto a = fit(box, box);
    REQUIRE(a.valid);
    const std::array<double, 6> id{1, 0, 0, 0, 1, 0};
    for (int i = 0; i < 6; ++i) CHECK(a.matrix[i] == doctest::Approx(id[i]).epsilon(1e-12));
  }
  SUBCASE("translation") {
    auto a = fit(box, corners(12, -1, 20, 4));
    REQUIRE(a.valid);
    CHECK(a.matrix[0] == doctest::Approx(1.0));
    CHECK(a.matrix[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(a.matrix[2] == doctest::Approx(10.0));
    CHECK(a.matrix[3] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(a.matrix[4] == doctest::Approx(1.0));
    CHECK(a.matrix[5] == doctest::Approx(-4.0));
  }
  SUBCASE("rotation by 90 degrees about the centre matches the normal equations") {
    std::array<Point2, 4> rotated;
    const Point2 c{6, 5.5};
    for (int i = 0; i < 4; ++i) rotated[i] = {c.x - (box[i].y - c.y), c.y + (box[i].x - c.x)};
    auto a = fit(box, rotated);
    oracle::Affine ref;
    REQUIRE(oracle::solve_normal_equations(box, rotated, ref));
    REQUIRE(a.valid);
    for (int i = 0; i < 6; ++i) CHECK(a.matrix[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    CHECK(a.matrix[1] == doctest::Approx(-1.0));
  }
  SUBCASE("degenerate boxes are invalid") {
    CHECK_FALSE(fit(corners(2, 3, 2, 8), box).valid);
    CHECK_FALSE(fit(box, corners(1, 1, 5, 1)).valid);
    CHECK_FALSE(estimate_part_affine(PartBox{}, PartBox::from_extent(0, 0, 2, 2)).valid);
  }
  SUBCASE("least squares on inconsistent corners matches the normal equations") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int t = 0; t < 20; ++t) {
      std::array<Point2, 4> s, d;
      for (int i = 0; i < 4; ++i) {
        s[i] = {u(rng), u(rng)};
        d[i] = {u(rng), u(rng)};
      }
      auto a = fit(s, d);
      oracle::Affine ref;
      if (!a.valid || !oracle::solve_normal_equations(s, d, ref)) continue;
      for (int i = 0; i < 6; ++i) CHECK(a.matrix[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("alignment_cost") {
  auto pose = make_pose(24, 24, {{Joint::RShoulder, {6, 5}}, {Joint::LShoulder, {17, 5}},
                                 {Joint::RHip, {7, 17}}, {Joint::LHip, {16, 17}}});
  LabelImage src(24, 24, 0);
  for (int y = 4; y <= 18; ++y)
    for (int x = 6; x <= 17; ++x) src.at(y, x) = static_cast<std::uint8_t>(Label::UpperClothes);
  const auto src_map = make_parted_map(src, pose);

  SUBCASE("identical record costs nothing") { CHECK(alignment_cost(src_map, src_map) == 0.0); }

  SUBCASE("relabelled torso costs two per pixel") {
    LabelImage cand = src;
    for (auto& v : cand.pixels)
      if (v) v = static_cast<std::uint8_t>(Label::Skirt);
    const auto cand_map = make_parted_map(cand, pose);
    const auto& torso = src_map.parts.parts[static_cast<int>(BodyPart::Torso)];
    const auto n = std::count(torso.pixels.begin(), torso.pixels.end(), 1);
    REQUIRE(n > 0);
    CHECK(alignment_cost(src_map, cand_map) == doctest::Approx(2.0 * n));
    // Brute force via the one-hot oracle.
    CHECK(alignment_cost(src_map, cand_map) == doctest::Approx(oracle::cost(src_map, cand_map)));
  }

  SUBCASE("a part missing on one side adds exactly one penalty") {
    auto with_arm = pose;
    with_arm[Joint::RElbow] = {4, 11, true};
    LabelImage labels = src;
    for (int y = 4; y <= 12; ++y)
      for (int x = 3; x <= 6; ++x) labels.at(y, x) = static_cast<std::uint8_t>(Label::RightArm);
    const auto a = make_parted_map(labels, with_arm);
    const auto b = make_parted_map(labels, pose);
    const auto& arm_box = a.parts.part_boxes[static_cast<int>(BodyPart::RightUpperArm)];
    REQUIRE_FALSE(arm_box.degenerate);
    CHECK(b.parts.part_boxes[static_cast<int>(BodyPart::RightUpperArm)].degenerate);
    const double without = part_alignment_cost(a, b, static_cast<int>(BodyPart::RightUpperArm), {});
    CHECK(without == doctest::Approx(arm_box.area()));
    CHECK(part_alignment_cost(a, b, static_cast<int>(BodyPart::RightUpperArm), {.fixed = 7.0}) == 7.0);
  }

  SUBCASE("shape mismatch is rejected") {
    const auto small = make_parted_map(LabelImage(12, 12, 0), make_pose(12, 12, {}));
    CHECK_THROWS_AS(alignment_cost(src_map, small), InputError);
  }
}

TEST_CASE("alignment_cost is non-negative, zero on self, and matches the oracle") {
  const auto records = doll_records(10, 77);
  for (const auto& a : records) {
    CHECK(alignment_cost(a.map, a.map) == 0.0);
    for (const auto& b : records) {
      const double c = alignment_cost(a.map, b.map);
      CHECK(c >= 0.0);
      CHECK(c == doctest::Approx(oracle::cost(a.map, b.map)).epsilon(1e-12));
    }
  }
}

TEST_CASE("warping keeps one-hot columns at most one") {
  const auto records = doll_records(6, 5);
  for (const auto& a : records)
    for (const auto& b : records)
      for (int p = 0; p < kNumParts; ++p) {
        auto affine = estimate_part_affine(a.map.parts.part_boxes[p], b.map.parts.part_boxes[p]);
        if (!affine.valid) continue;
        auto warped = warp_masked_labels(a.map.labels, a.map.parts.parts[p], affine);
        auto hot = SemanticMap::from_labels([&] {
          LabelImage l = warped;
          for (auto& v : l.pixels) v = v == kNoLabel ? 0 : v;
          return l;
        }());
        // Each pixel carries at most one label by construction; also check
        // that warped labels come from the source part.
        for (auto v : warped.pixels) CHECK((v == kNoLabel || v < kNumLabels));
        CHECK(hot.data.sum(0).max().item<float>() <= 1.0f);
      }
}

TEST_CASE("exclude_similar_pose") {
  auto a = make_pose(100, 100, {{Joint::Nose, {10, 10}}, {Joint::Neck, {10, 20}},
                                {Joint::RHip, {20, 40}}, {Joint::LHip, {30, 40}}});
  CHECK(exclude_similar_pose(a, a, 10));
  auto far = a;
  for (auto& k : far.keypoints)
    if (k.visible) k.x += 50;
  CHECK_FALSE(exclude_similar_pose(a, far, 10));
  auto half = a;
  half[Joint::Nose].x += 8;
  half[Joint::Neck].y += 8;
  half[Joint::RHip].x += 12;
  half[Joint::LHip].y += 12;
  // Mean distance is exactly 10; the comparison is strict.
  CHECK_FALSE(exclude_similar_pose(a, half, 10));
  CHECK(exclude_similar_pose(a, half, 10.0001));
  PoseSpec none;
  none.size = {100, 100};
  CHECK(exclude_similar_pose(a, none, 10));
}

TEST_CASE("mine_pairs") {
  SUBCASE("two records match each other") {
    auto recs = doll_records(2, 1);
    auto index = mine_pairs(recs, {.pose_threshold = 0.5});
    REQUIRE(index.entries.size() == 2);
    CHECK(index.entries.at(recs[0].id).matched_id == recs[1].id);
    CHECK(index.entries.at(recs[1].id).matched_id == recs[0].id);
  }
  SUBCASE("five records equal exhaustive search") {
    auto recs = doll_records(5, 31);
    const auto index = mine_pairs(recs, {.pose_threshold = 2.0});
    const auto ref = oracle::mine(recs, 2.0);
    CHECK(index.entries.size() == ref.entries.size());
    for (const auto& [id, e] : ref.entries) {
      REQUIRE(index.entries.contains(id));
      CHECK(index.entries.at(id).matched_id == e.matched_id);
      CHECK(std::abs(index.entries.at(id).cost - e.cost) <= 1e-9);
      CHECK(index.entries.at(id).excluded_candidates == e.excluded_candidates);
    }
  }
  SUBCASE("all candidates excluded") {
    auto recs = doll_records(4, 8);
    CHECK(mine_pairs(recs, {.pose_threshold = 1e9}).entries.empty());
  }
  SUBCASE("fewer than two records") {
    auto recs = doll_records(1, 8);
    CHECK_THROWS_AS(mine_pairs(recs, {}), InputError);
  }
  SUBCASE("order invariance and serial agreement") {
    auto recs = doll_records(12, 99);
    const MiningConfig cfg{.pose_threshold = 2.0};
    const auto index = mine_pairs(recs, cfg);
    CHECK(index == serial::mine_pairs(recs, cfg));
    std::mt19937_64 rng(4);
    for (int t = 0; t < 3; ++t) {
      std::shuffle(recs.begin(), recs.end(), rng);
      CHECK(mine_pairs(recs, cfg) == index);
    }
    for (const auto& [id, e] : index.entries) {
      CHECK(e.matched_id != id);
      CHECK(e.cost >= 0.0);
    }
  }
}

TEST_CASE("pair index text format") {
  PairIndex index;
  index.entries["a"] = {"b", 12.5, 0};
  index.entries["b"] = {"a", 0.1, 0};
  const auto text = format_pair_index(index);
  CHECK(text.starts_with("a b 12.5\n"));
  CHECK(parse_pair_index(text) == index);
  CHECK_THROWS_AS(parse_pair_index("a a 1\n"), FormatError);
  CHECK_THROWS_AS(parse_pair_index("a b\n"), FormatError);
  CHECK_THROWS_AS(parse_pair_index("a b -1\n"), FormatError);
}
