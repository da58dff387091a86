#pragma once

// Corpus ingestion and training-batch sampling.
//
// Layout on disk:
//   root/manifest.txt            "<id> <split>" per line
//   root/images/<id>.png         RGB image
//   root/keypoints/<id>.json     {"image_id", "height", "width", "keypoints": [[x, y, v] x 18]}
//   root/parses/<id>.png         raw parser labels, single-channel 8-bit

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "parsegen/image_io.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/representation.hpp"

namespace parsegen {

enum class Split { Train, Test };

std::string_view split_name(Split s);

struct CorpusRecord {
  std::string image_id;
  std::filesystem::path image_path;
  PoseSpec pose;
  std::filesystem::path parse_path;
  Split split = Split::Train;
  friend bool operator==(const CorpusRecord&, const CorpusRecord&) = default;
};

struct ScanError {
  std::string image_id;
  std::string message;
};

struct ScanResult {
  std::vector<CorpusRecord> records;
  std::vector<ScanError> errors;
};

// Records are sorted by image_id. Invalid entries are reported in `errors`
// and skipped. A missing manifest throws.
ScanResult scan_corpus(const std::filesystem::path& root);
ScanResult scan_corpus(const std::filesystem::path& root, const std::filesystem::path& manifest);

std::string pose_to_json(const std::string& image_id, const PoseSpec& pose);
PoseSpec pose_from_json(std::string_view text, std::string* image_id = nullptr);

// A record with its image, merged parse and pose encodings held in memory.
struct LoadedRecord {
  CorpusRecord record;
  torch::Tensor image;  // [3, H, W] in [-1, 1]
  LabelImage parse;     // canonical labels
  SemanticMap semantic;
  PoseEncoding pose;
};

struct Corpus {
  std::vector<LoadedRecord> items;
  RepresentationConfig representation;

  ImageSize size() const;
  std::optional<std::size_t> find(std::string_view id) const;
  const LoadedRecord& at(std::string_view id) const;
  std::vector<std::size_t> indices(Split split) const;
  std::vector<MiningRecord> mining_records(std::optional<Split> split = Split::Train) const;
};

Corpus load_corpus(const std::vector<CorpusRecord>& records, const MergeTable& table = default_merge_table());
Corpus load_corpus(const std::filesystem::path& root);

enum class Provenance { Mined, RandomPose };

struct TrainingSample {
  CorpusRecord reference;
  PoseSpec target_pose;
  std::optional<SemanticMap> pseudo_parse;
  Provenance provenance = Provenance::RandomPose;
  std::size_t reference_index = 0;
  std::size_t target_index = 0;  // record whose pose (and parse, if mined) is the target
};

// Distinct references; mined targets when the index has an entry, otherwise
// a uniformly drawn other record's pose.
std::vector<TrainingSample> sample_training_batch(const Corpus& corpus, std::span<const std::size_t> pool,
                                                  const PairIndex* pairs, int batch_size, std::mt19937_64& rng);
std::vector<TrainingSample> sample_training_batch(const Corpus& corpus, const PairIndex* pairs, int batch_size,
                                                  std::uint64_t seed);

}  // namespace parsegen
