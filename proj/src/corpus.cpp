#include "parsegen/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "parsegen/errors.hpp"

namespace parsegen {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::string pose_to_json(const std::string& image_id, const PoseSpec& pose) {
  json kps = json::array();
  for (const auto& k : pose.keypoints) kps.push_back({k.x, k.y, k.visible ? 1 : 0});
  json j = {{"image_id", image_id}, {"height", pose.size.height}, {"width", pose.size.width}, {"keypoints", kps}};
  return j.dump();
}

PoseSpec pose_from_json(std::string_view text, std::string* image_id) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("keypoint record is not valid JSON: ") + e.what());
  }
  try {
    PoseSpec pose;
    pose.size = {j.at("height").get<int>(), j.at("width").get<int>()};
    const auto& kps = j.at("keypoints");
    if (!kps.is_array() || kps.size() != kNumJoints)
      throw FormatError("keypoint record must hold exactly 18 entries");
    for (int i = 0; i < kNumJoints; ++i) {
      const auto& e = kps[i];
      if (!e.is_array() || e.size() != 3) throw FormatError("keypoint entry must be [x, y, visible]");
      pose.keypoints[i] = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>() != 0};
    }
    if (image_id) *image_id = j.value("image_id", std::string{});
    return pose;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed keypoint record: ") + e.what());
  }
}

ScanResult scan_corpus(const fs::path& root) { return scan_corpus(root, root / "manifest.txt"); }

ScanResult scan_corpus(const fs::path& root, const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  std::map<std::string, Split> listed;
  ScanResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id, split;
    if (!(fields >> id >> split) || (split != "train" && split != "test")) {
      result.errors.push_back({id, "malformed manifest line: " + line});
      continue;
    }
    if (listed.contains(id)) {
      result.errors.push_back({id, "duplicate id in manifest"});
      continue;
    }
    listed[id] = split == "train" ? Split::Train : Split::Test;
  }
  for (const auto& [id, split] : listed) {
    CorpusRecord rec;
    rec.image_id = id;
    rec.split = split;
    rec.image_path = root / "images" / (id + ".png");
    rec.parse_path = root / "parses" / (id + ".png");
    const fs::path kp_path = root / "keypoints" / (id + ".json");
    try {
      for (const auto& p : {rec.image_path, rec.parse_path, kp_path})
        if (!fs::exists(p)) throw FormatError("missing file " + p.string());
      const RgbImage image = read_png_rgb(rec.image_path);
      const LabelImage parse = read_png_indexed(rec.parse_path);
      rec.pose = pose_from_json(read_file(kp_path));
      if (parse.size() != image.size()) throw InputError("parse and image dimensions differ");
      if (rec.pose.size != image.size()) throw InputError("keypoint and image dimensions differ");
      rec.pose.validate();
      result.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      result.errors.push_back({id, e.what()});
    }
  }
  return result;
}

ImageSize Corpus::size() const { return items.empty() ? ImageSize{} : items.front().record.pose.size; }

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  auto it = std::lower_bound(items.begin(), items.end(), id,
                             [](const LoadedRecord& r, std::string_view v) { return r.record.image_id < v; });
  if (it == items.end() || it->record.image_id != id) return std::nullopt;
  return static_cast<std::size_t>(it - items.begin());
}

const LoadedRecord& Corpus::at(std::string_view id) const {
  const auto i = find(id);
  if (!i) throw InputError("unknown record id " + std::string(id));
  return items[*i];
}

std::vector<std::size_t> Corpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].record.split == split) out.push_back(i);
  return out;
}

std::vector<MiningRecord> Corpus::mining_records(std::optional<Split> split) const {
  std::vector<MiningRecord> out;
  for (const auto& item : items) {
    if (split && item.record.split != *split) continue;
    out.push_back({item.record.image_id, item.record.pose, make_parted_map(item.parse, item.record.pose)});
  }
  return out;
}

Corpus load_corpus(const std::vector<CorpusRecord>& records, const MergeTable& table) {
  Corpus corpus;
  std::vector<CorpusRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  if (!sorted.empty()) corpus.representation = RepresentationConfig::for_height(sorted.front().pose.size.height);
  for (const auto& rec : sorted) {
    if (!corpus.items.empty() && rec.pose.size != corpus.items.front().record.pose.size)
      throw InputError("corpus records must share one image size");
    LoadedRecord item;
    item.record = rec;
    item.image = image_to_tensor(read_png_rgb(rec.image_path));
    item.parse = merge_parser_label_image(read_png_indexed(rec.parse_path), table);
    item.semantic = SemanticMap::from_labels(item.parse);
    item.pose = encode_pose(rec.pose, corpus.representation);
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

Corpus load_corpus(const fs::path& root) {
  auto scan = scan_corpus(root);
  if (!scan.errors.empty()) {
    std::string msg = "corpus has " + std::to_string(scan.errors.size()) + " invalid records, first: " +
                      scan.errors.front().image_id + ": " + scan.errors.front().message;
    throw InputError(msg);
  }
  return load_corpus(scan.records);
}

std::vector<TrainingSample> sample_training_batch(const Corpus& corpus, std::span<const std::size_t> pool,
                                                  const PairIndex* pairs, int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) throw InputError("batch_size must be at least 1");
  if (pool.size() < 2) throw InputError("sampling needs at least two records for distinct target poses");
  if (static_cast<std::size_t>(batch_size) > pool.size()) throw InputError("batch_size exceeds corpus size");
  std::vector<std::size_t> order(pool.begin(), pool.end());
  for (int i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<TrainingSample> batch;
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t ref = order[i];
    TrainingSample s;
    s.reference = corpus.items[ref].record;
    s.reference_index = ref;
    std::optional<std::size_t> mined;
    if (pairs) {
      auto it = pairs->entries.find(s.reference.image_id);
      if (it != pairs->entries.end()) mined = corpus.find(it->second.matched_id);
    }
    if (mined && *mined != ref) {
      s.target_index = *mined;
      s.provenance = Provenance::Mined;
      s.pseudo_parse = corpus.items[*mined].semantic;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 2);
      std::size_t k = pick(rng);
      std::size_t target = pool[k];
      if (target == ref) target = pool[pool.size() - 1];
      s.target_index = target;
      s.provenance = Provenance::RandomPose;
    }
    s.target_pose = corpus.items[s.target_index].record.pose;
    batch.push_back(std::move(s));
  }
  return batch;
}

std::vector<TrainingSample> sample_training_batch(const Corpus& corpus, const PairIndex* pairs, int batch_size,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(corpus.items.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  return sample_training_batch(corpus, pool, pairs, batch_size, rng);
}

}  // namespace parsegen
