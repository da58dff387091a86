#include <fstream>
#include <set>

#include "parsegen/corpus.hpp"
#include "parsegen/errors.hpp"
#include "parsegen/synthetic.hpp"
#include "test_util.hpp"
#include "testing.hpp"

using namespace parsegen;
using parsegen::testing::TempDir;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

TEST_CASE("scan_corpus") {
  SUBCASE("empty manifest") {
    TempDir dir("empty");
    write_text(dir.path() / "manifest.txt", "");
    auto scan = scan_corpus(dir.path());
    CHECK(scan.records.empty());
    CHECK(scan.errors.empty());
  }
  SUBCASE("missing manifest") {
    TempDir dir("nomanifest");
    CHECK_THROWS_AS(scan_corpus(dir.path()), FormatError);
  }
  SUBCASE("records are sorted and invalid ones reported") {
    TempDir dir("three");
    synthetic::write_corpus(dir.path(), {.count = 4, .test_fraction = 0.25, .size = {32, 24}, .seed = 3});
    // Reverse the manifest order; the scan still sorts by id.
    write_text(dir.path() / "manifest.txt", "doll_0003 test\ndoll_0001 train\ndoll_0000 train\ndoll_0002 train\n");
    fs::remove(dir.path() / "parses" / "doll_0002.png");
    auto scan = scan_corpus(dir.path());
    REQUIRE(scan.records.size() == 3);
    CHECK(scan.records[0].image_id == "doll_0000");
    CHECK(scan.records[1].image_id == "doll_0001");
    CHECK(scan.records[2].image_id == "doll_0003");
    CHECK(scan.records[2].split == Split::Test);
    REQUIRE(scan.errors.size() == 1);
    CHECK(scan.errors[0].image_id == "doll_0002");
    CHECK_THROWS_AS(load_corpus(dir.path()), InputError);
  }
  SUBCASE("rescanning is byte-identical") {
    TempDir dir("rescan");
    synthetic::write_corpus(dir.path(), {.count = 5, .test_fraction = 0.2, .size = {32, 24}, .seed = 9});
    const auto a = scan_corpus(dir.path());
    const auto b = scan_corpus(dir.path());
    CHECK((a.records == b.records));
    for (const auto& r : a.records) {
      CHECK(pose_to_json(r.image_id, r.pose) == pose_to_json(r.image_id, b.records[&r - a.records.data()].pose));
      CHECK(pose_from_json(slurp(dir.path() / "keypoints" / (r.image_id + ".json"))).keypoints == r.pose.keypoints);
    }
  }
  SUBCASE("mismatched dimensions and bad poses") {
    TempDir dir("bad");
    synthetic::write_corpus(dir.path(), {.count = 3, .test_fraction = 0.0, .size = {32, 24}, .seed = 1});
    write_text(dir.path() / "keypoints" / "doll_0001.json", "{\"image_id\": \"doll_0001\"}");
    write_text(dir.path() / "keypoints" / "doll_0002.json", [] {
      PoseSpec p;
      p.size = {16, 16};
      return pose_to_json("doll_0002", p);
    }());
    auto scan = scan_corpus(dir.path());
    CHECK(scan.records.size() == 1);
    CHECK(scan.errors.size() == 2);
  }
}

TEST_CASE("pose json round trip") {
  std::mt19937_64 rng(1);
  auto pose = parsegen::testing::random_pose(rng, 64, 48);
  std::string id;
  auto back = pose_from_json(pose_to_json("x1", pose), &id);
  CHECK(id == "x1");
  CHECK(back.size == pose.size);
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK(back.keypoints[j].visible == pose.keypoints[j].visible);
    if (pose.keypoints[j].visible) {
      CHECK(back.keypoints[j].x == pose.keypoints[j].x);
      CHECK(back.keypoints[j].y == pose.keypoints[j].y);
    }
  }
  CHECK_THROWS_AS(pose_from_json("not json"), FormatError);
}

TEST_CASE("sample_training_batch") {
  TempDir dir("sample");
  synthetic::write_corpus(dir.path(), {.count = 8, .test_fraction = 0.0, .size = {32, 24}, .seed = 5});
  const Corpus corpus = load_corpus(dir.path());
  REQUIRE(corpus.items.size() == 8);

  SUBCASE("deterministic for a seed") {
    auto a = sample_training_batch(corpus, nullptr, 4, 11);
    auto b = sample_training_batch(corpus, nullptr, 4, 11);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].reference_index == b[i].reference_index);
      CHECK(a[i].target_index == b[i].target_index);
    }
  }
  SUBCASE("distinct references and no self pairs") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto batch = sample_training_batch(corpus, nullptr, 8, seed);
      std::set<std::size_t> refs;
      for (const auto& s : batch) {
        refs.insert(s.reference_index);
        CHECK(s.target_index != s.reference_index);
        CHECK(s.provenance == Provenance::RandomPose);
        CHECK_FALSE(s.pseudo_parse.has_value());
      }
      CHECK(refs.size() == 8);
    }
  }
  SUBCASE("mined pairs supply targets and pseudo parses") {
    const auto pairs = mine_pairs(corpus.mining_records(), MiningConfig::for_height(32));
    REQUIRE_FALSE(pairs.entries.empty());
    auto batch = sample_training_batch(corpus, &pairs, 8, 3);
    for (const auto& s : batch) {
      auto it = pairs.entries.find(s.reference.image_id);
      if (it == pairs.entries.end()) {
        CHECK(s.provenance == Provenance::RandomPose);
        continue;
      }
      CHECK(s.provenance == Provenance::Mined);
      CHECK(corpus.items[s.target_index].record.image_id == it->second.matched_id);
      REQUIRE(s.pseudo_parse.has_value());
      CHECK(torch::equal(s.pseudo_parse->data, corpus.items[s.target_index].semantic.data));
    }
  }
  SUBCASE("invalid batch sizes") {
    CHECK_THROWS_AS(sample_training_batch(corpus, nullptr, 0, 1), InputError);
    CHECK_THROWS_AS(sample_training_batch(corpus, nullptr, 9, 1), InputError);
    Corpus one;
    one.items.push_back(corpus.items[0]);
    CHECK_THROWS_AS(sample_training_batch(one, nullptr, 1, 1), InputError);
  }
}

TEST_CASE("corpus lookup") {
  TempDir dir("lookup");
  synthetic::write_corpus(dir.path(), {.count = 10, .test_fraction = 0.2, .size = {32, 24}, .seed = 2});
  const Corpus corpus = load_corpus(dir.path());
  CHECK(corpus.indices(Split::Train).size() == 8);
  CHECK(corpus.indices(Split::Test).size() == 2);
  CHECK(corpus.find("doll_0004").value() == 4);
  CHECK_FALSE(corpus.find("nope").has_value());
  CHECK_THROWS_AS(corpus.at("nope"), InputError);
  CHECK(corpus.size() == ImageSize{32, 24});
  const auto& item = corpus.at("doll_0000");
  CHECK(item.image.sizes() == torch::IntArrayRef{3, 32, 24});
  CHECK(item.image.min().item<float>() >= -1.0f);
  CHECK(item.image.max().item<float>() <= 1.0f);
  CHECK(corpus.mining_records().size() == 8);
}
