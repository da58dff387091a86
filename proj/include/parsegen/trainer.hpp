#pragma once

// Three-phase training schedule: pretrain H_S on mined pairs, train H_A with
// H_S frozen, then optimise both jointly with the appearance objective.

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "parsegen/appearance_net.hpp"
#include "parsegen/corpus.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/perception.hpp"
#include "parsegen/semantic_net.hpp"

namespace parsegen {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
};

struct TrainConfig {
  int pretrain_hs_steps = 1500;
  int train_ha_steps = 1000;
  int joint_steps = 300;
  OptimizerConfig optimizer;
  int batch_size = 4;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0: only at the end of each phase
  int sample_every = 0;      // 0: no sample grids
  std::string extractor = "random_conv";
  DetectorTraining detector;
  SemanticNetConfig semantic;
  AppearanceNetConfig appearance;

  void validate() const;

  // Flat "key = value" text; unknown keys and malformed values throw.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

struct LossRow {
  int phase = 0;
  int step = 0;  // 1-based within the phase
  LossReport generator;
  double discriminator = 0.0;
};

// All networks of the framework.
struct Networks {
  SemanticGenerator hs{nullptr};
  SemanticDiscriminator ds{nullptr};
  AppearanceGenerator ha{nullptr};
  PatchDiscriminator da{nullptr};
  PatchDiscriminator df{nullptr};
  PoseDetector detector{nullptr};

  static Networks create(const TrainConfig& config);
};

struct TrainState {
  std::array<bool, 3> phase_done{false, false, false};
  std::array<int, 3> phase_step{0, 0, 0};
  int global_step = 0;
  bool detector_ready = false;
  std::mt19937_64 rng;
};

class Trainer {
 public:
  // `pairs` may be null when phase 1 is not run; both must outlive the trainer.
  Trainer(TrainConfig config, const Corpus& corpus, const PairIndex* pairs);

  // Run the remaining steps of a phase (or `max_steps` of them) and mark it
  // complete once its configured step count is reached.
  void run_phase1(std::optional<int> max_steps = std::nullopt);
  void run_phase2(std::optional<int> max_steps = std::nullopt);
  void run_phase3(std::optional<int> max_steps = std::nullopt);
  void run_phase(int phase, std::optional<int> max_steps = std::nullopt);

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<Trainer> load(const std::filesystem::path& path, const Corpus& corpus,
                                       const PairIndex* pairs);

  // Optional outputs: loss CSV appended per step, checkpoints, sample grids.
  void set_output_dir(const std::filesystem::path& dir);

  const TrainConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  Networks& networks() { return nets_; }
  const std::vector<LossRow>& history() const { return history_; }
  const FeatureExtractor& extractor() const { return *extractor_; }

 private:
  struct Optimizers;

  LossRow step_phase1();
  LossRow step_appearance(bool joint);
  void ensure_detector();
  void record(LossRow row);
  void write_samples(int phase, const std::vector<std::vector<torch::Tensor>>& rows) const;

  TrainConfig config_;
  const Corpus& corpus_;
  const PairIndex* pairs_;
  Networks nets_;
  std::shared_ptr<Optimizers> optim_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  TrainState state_;
  std::vector<LossRow> history_;
  std::vector<std::size_t> pair_pool_;
  std::optional<std::filesystem::path> out_dir_;
};

// Networks and metadata of a training checkpoint, without optimiser state.
struct CheckpointContents {
  TrainConfig config;
  TrainState state;
  Networks networks;
};
CheckpointContents load_checkpoint_networks(const std::filesystem::path& path);

// Phase-ordered stack of per-sample tensors for a training batch.
struct AppearanceBatch {
  torch::Tensor ref_image, ref_parse, ref_heatmap, ref_mask, tgt_heatmap, tgt_mask;
  std::vector<PoseSpec> ref_poses, tgt_poses;
};
AppearanceBatch make_appearance_batch(const Corpus& corpus, const std::vector<TrainingSample>& samples);

// Batched region maps for the style loss and skip geometry: semantic maps or
// pose-derived part masks in the baseline configuration.
torch::Tensor part_mask_tensor(const std::vector<BodyPartMasks>& parts);

const char* loss_csv_header();
std::string loss_csv_row(const LossRow& row);

}  // namespace parsegen
