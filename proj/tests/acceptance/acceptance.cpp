// Acceptance runner: one PASS/FAIL line per criterion, tolerances fixed here.
// An optional argument restricts the run to criteria whose key contains it.

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/loss_suite.hpp"
#include "oracles/pair_oracle.hpp"
#include "parsegen/corpus.hpp"
#include "parsegen/evalsuite.hpp"
#include "parsegen/gen_service.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/synthetic.hpp"
#include "parsegen/trainer.hpp"
#include "unit/test_util.hpp"

using namespace parsegen;
namespace fs = std::filesystem;

namespace {

// ---- tolerances and budgets ----
constexpr int kMinerCorpora = 20;
constexpr int kMinerMaxRecords = 32;
constexpr double kMinerCostTol = 1e-9;
constexpr double kMinerBudgetSeconds = 10.0;

constexpr int kAffineTrials = 100;
constexpr double kAffineTol = 1e-6;

constexpr double kGradientTol = 1e-3;
constexpr double kGradientBudgetSeconds = 60.0;

constexpr double kAnalyticTol = 1e-6;
constexpr double kIdenticalTol = 1e-9;

constexpr int kResumeSteps = 100;

constexpr int kDeskRecords = 200;
constexpr double kDeskBudgetSeconds = 1800.0;
constexpr int kOverfitSteps = 500;
constexpr double kOverfitCe = 0.1;
constexpr int kContentSteps = 1000;
constexpr int kContentWindow = 10;
constexpr double kContentReduction = 0.5;
constexpr double kIouThreshold = 0.6;
constexpr int kHeldOut = 50;

constexpr double kSsimTol = 1e-9;
constexpr double kScoreTol = 1e-6;

using clk = std::chrono::steady_clock;
double seconds_since(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
}

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// ---- pair miner ----

std::vector<MiningRecord> random_dolls(std::mt19937_64& rng, int n, ImageSize size) {
  std::vector<MiningRecord> out;
  for (int i = 0; i < n; ++i) {
    auto look = synthetic::random_appearance(rng);
    auto art = synthetic::random_articulation(rng);
    art.scale = 0.85;
    auto r = synthetic::render(look, art, size, rng());
    std::uniform_int_distribution<int> joint(0, kNumJoints - 1);
    if (rng() % 3 == 0) r.pose.keypoints[joint(rng)].visible = false;
    out.push_back({"d" + std::to_string(1000 + i), r.pose, make_parted_map(r.parse, r.pose)});
  }
  return out;
}

Outcome pair_miner_equivalence() {
  std::mt19937_64 rng(20240601);
  const ImageSize size{32, 24};
  const auto cfg = MiningConfig::for_height(size.height);
  double mine_seconds = 0, worst = 0;
  int mismatched = 0, compared = 0;
  for (int c = 0; c < kMinerCorpora; ++c) {
    const int n = std::uniform_int_distribution<int>(2, kMinerMaxRecords)(rng);
    const auto records = random_dolls(rng, n, size);
    const auto t = clk::now();
    const auto got = mine_pairs(records, cfg);
    mine_seconds += seconds_since(t);
    const auto want = oracle::mine(records, cfg.pose_threshold);
    if (got.entries.size() != want.entries.size()) ++mismatched;
    for (const auto& [id, e] : want.entries) {
      ++compared;
      auto it = got.entries.find(id);
      if (it == got.entries.end() || it->second.matched_id != e.matched_id) {
        ++mismatched;
        continue;
      }
      worst = std::max(worst, std::abs(it->second.cost - e.cost));
    }
  }
  Outcome o;
  o.pass = mismatched == 0 && worst <= kMinerCostTol && mine_seconds < kMinerBudgetSeconds;
  o.detail = std::to_string(kMinerCorpora) + " corpora, " + std::to_string(compared) + " matches, " +
             std::to_string(mismatched) + " mismatched, max cost error " + num(worst) + ", mining " +
             num(mine_seconds) + " s";
  return o;
}

// ---- affine solver ----

Outcome affine_exactness() {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> coord(-50, 50), coef(-2, 2);
  double worst = 0;
  int invalid = 0;
  for (int t = 0; t < kAffineTrials; ++t) {
    std::array<double, 6> m;
    do {
      for (auto& v : m) v = coef(rng);
    } while (std::abs(m[0] * m[4] - m[1] * m[3]) < 0.1);
    std::array<Point2, 4> src, dst;
    double area;
    do {
      for (auto& p : src) p = {coord(rng), coord(rng)};
      area = 0;
      for (int i = 0; i < 4; ++i) {
        const auto& a = src[i];
        const auto& b = src[(i + 1) % 4];
        area += a.x * b.y - b.x * a.y;
      }
    } while (std::abs(area) < 50);
    for (int i = 0; i < 4; ++i)
      dst[i] = {m[0] * src[i].x + m[1] * src[i].y + m[2], m[3] * src[i].x + m[4] * src[i].y + m[5]};
    const auto fit = estimate_part_affine(std::span<const Point2, 4>(src), std::span<const Point2, 4>(dst));
    if (!fit.valid) {
      ++invalid;
      continue;
    }
    for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(fit.matrix[i] - m[i]));
  }
  return {invalid == 0 && worst <= kAffineTol, std::to_string(kAffineTrials) + " random affines, max element error " +
                                                   num(worst) + ", " + std::to_string(invalid) + " rejected"};
}

// ---- losses ----

Outcome gradient_suite() {
  const auto t = clk::now();
  const auto errors = oracle::loss_gradient_errors();
  const double elapsed = seconds_since(t);
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, e] : errors) {
    const double v = std::isfinite(e) ? e : INFINITY;
    if (worst_name.empty() || v > worst) worst = v, worst_name = name;
  }
  return {worst < kGradientTol && elapsed < kGradientBudgetSeconds,
          std::to_string(errors.size()) + " checks, max relative error " + num(worst) + " (" + worst_name + "), " +
              num(elapsed) + " s"};
}

Outcome analytic_values() {
  const auto values = oracle::analytic_loss_values();
  int failed = 0;
  std::string first;
  for (const auto& v : values) {
    const bool identical = v.name.find("identical") != std::string::npos;
    const double tol = identical ? kIdenticalTol : kAnalyticTol;
    if (!(std::abs(v.value - v.expected) <= tol)) {
      ++failed;
      if (first.empty()) first = v.name + " = " + num(v.value) + " vs " + num(v.expected);
    }
  }
  const auto x = oracle::dnormal({3, 16, 16}, 5, 0.4).clamp(-1, 1);
  const double ssim_loss = 1.0 - ssim(x, x);
  if (!(std::abs(ssim_loss) <= kIdenticalTol)) {
    ++failed;
    if (first.empty()) first = "1 - SSIM(x, x) = " + num(ssim_loss);
  }
  return {failed == 0, std::to_string(values.size() + 1) + " closed-form values, " + std::to_string(failed) +
                           " outside tolerance" + (first.empty() ? "" : "; first: " + first)};
}

// ---- training schedule conformance ----

TrainConfig small_config() {
  TrainConfig c;
  c.pretrain_hs_steps = 5;
  c.train_ha_steps = kResumeSteps;
  c.joint_steps = 1;
  c.batch_size = 2;
  c.detector.steps = 20;
  c.semantic.base_channels = c.appearance.base_channels = 4;
  c.semantic.input_resolution = c.appearance.input_resolution = {32, 24};
  return c;
}

Outcome schedule_conformance(const fs::path& work) {
  const auto root = work / "schedule_corpus";
  synthetic::write_corpus(root, {.count = 12, .test_fraction = 0.0, .size = {32, 24}, .seed = 12});
  const auto corpus = load_corpus(root);
  const auto records = corpus.mining_records();
  const auto pairs = mine_pairs(records, MiningConfig::for_height(32));

  Trainer whole(small_config(), corpus, &pairs);
  whole.run_phase1();
  const auto hs1 = parameter_hash(*whole.networks().hs), ds1 = parameter_hash(*whole.networks().ds);
  whole.run_phase2();
  const bool frozen = parameter_hash(*whole.networks().hs) == hs1 && parameter_hash(*whole.networks().ds) == ds1;
  whole.run_phase3(1);
  const bool moved = parameter_hash(*whole.networks().hs) != hs1;

  Trainer split(small_config(), corpus, &pairs);
  split.run_phase1();
  split.run_phase2(kResumeSteps / 2);
  split.save(work / "half.pt");
  auto resumed = Trainer::load(work / "half.pt", corpus, &pairs);
  resumed->run_phase2();

  auto at_step = [](const Trainer& t) {
    for (const auto& r : t.history())
      if (r.phase == 2 && r.step == kResumeSteps) return r.generator.total_value();
    return std::nan("");
  };
  const double a = at_step(whole), b = at_step(*resumed);
  const bool exact = a == b && parameter_hash(*resumed->networks().ha) == [&] {
    Trainer again(small_config(), corpus, &pairs);
    again.run_phase1();
    again.run_phase2();
    return parameter_hash(*again.networks().ha);
  }();
  std::ostringstream d;
  d.precision(17);
  d << "phase-2 freeze " << (frozen ? "bit-identical" : "CHANGED") << ", phase-3 step "
    << (moved ? "updates" : "does not update") << " H_S, loss at step " << kResumeSteps << ": unbroken " << a
    << " vs resumed " << b;
  return {frozen && moved && exact, d.str()};
}

// ---- desk-scale training ----

TrainConfig desk_config() {
  TrainConfig c;
  c.pretrain_hs_steps = 1000;
  c.train_ha_steps = kContentSteps;
  c.joint_steps = 200;
  c.batch_size = 4;
  c.seed = 3;
  c.semantic.base_channels = 8;
  c.appearance.base_channels = 8;
  return c;
}

struct DeskModels {
  std::shared_ptr<const ModelSnapshot> pipeline;
  std::shared_ptr<const ModelSnapshot> baseline;
  double seconds = 0;
};

double foreground_iou(const LabelImage& a, const LabelImage& b) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool fa = a.pixels[i] != 0, fb = b.pixels[i] != 0;
    inter += fa && fb;
    uni += fa || fb;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

Subject subject_of(const synthetic::Rendering& r) {
  return {image_to_tensor(r.image), SemanticMap::from_labels(r.parse), r.pose};
}

Outcome desk_training(const fs::path& work, DeskModels& models) {
  const auto start = clk::now();
  const auto root = work / "desk_corpus";
  synthetic::write_corpus(root, {.count = kDeskRecords, .test_fraction = 0.1, .size = {64, 48}, .seed = 7});
  const auto corpus = load_corpus(root);
  const auto records = corpus.mining_records(Split::Train);
  const auto pairs = mine_pairs(records, MiningConfig::for_height(64));

  // Single mined pair, batch of one.
  progress("phase-1 single-pair overfit");
  const auto& first = *pairs.entries.begin();
  PairIndex single;
  single.entries.insert(first);
  auto oc = desk_config();
  oc.pretrain_hs_steps = kOverfitSteps;
  oc.batch_size = 1;
  oc.semantic.base_channels = SemanticNetConfig{}.base_channels;
  Trainer overfit(oc, corpus, &single);
  overfit.run_phase1();
  const double final_ce = overfit.history().back().generator.value("ce");

  progress("pipeline training");
  Trainer pipe(desk_config(), corpus, &pairs);
  pipe.run_phase1();
  progress("  phase 2");
  pipe.run_phase2();
  std::vector<double> cont;
  for (const auto& r : pipe.history())
    if (r.phase == 2) cont.push_back(r.generator.value("cont"));
  double head = 0, tail = 0;
  for (int i = 0; i < kContentWindow; ++i) {
    head += cont[i] / kContentWindow;
    tail += cont[cont.size() - 1 - i] / kContentWindow;
  }
  progress("  phase 3");
  pipe.run_phase3();
  models.pipeline = make_snapshot(pipe.networks().hs, pipe.networks().ha, "pipeline");

  progress("baseline training");
  auto bc = desk_config();
  bc.appearance.semantic_input = false;
  Trainer base(bc, corpus, nullptr);
  base.run_phase1();
  base.run_phase2();
  base.run_phase3();
  models.baseline = make_snapshot(base.networks().hs, base.networks().ha, "baseline");

  progress("held-out pose transfer");
  const auto held = synthetic::held_out_pairs(kHeldOut, {64, 48}, 4242);
  double iou = 0;
  for (const auto& h : held) {
    const auto r = pose_transfer(*models.pipeline, subject_of(h.source), h.target.pose);
    iou += foreground_iou(r.parse->to_labels(), h.target.parse) / kHeldOut;
  }
  models.seconds = seconds_since(start);

  const bool ok_ce = final_ce < kOverfitCe;
  const bool ok_cont = tail <= (1 - kContentReduction) * head;
  const bool ok_iou = iou >= kIouThreshold;
  const bool ok_time = models.seconds < kDeskBudgetSeconds;
  std::ostringstream d;
  d << "single-pair ce after " << kOverfitSteps << " steps " << num(final_ce) << " (< " << kOverfitCe
    << "); content loss " << num(head) << " -> " << num(tail) << " over " << kContentSteps << " steps ("
    << num(100 * (1 - tail / head)) << "% reduction, need " << 100 * kContentReduction << "%); foreground IoU "
    << num(iou) << " over " << kHeldOut << " held-out transfers (>= " << kIouThreshold << "); "
    << num(models.seconds) << " s";
  return {ok_ce && ok_cont && ok_iou && ok_time, d.str()};
}

Outcome ablation(const DeskModels& models) {
  if (!models.pipeline || !models.baseline) return {false, "desk training did not produce models"};
  const auto held = synthetic::held_out_pairs(kHeldOut, {64, 48}, 4242);
  const auto rep = RepresentationConfig::for_height(64);
  double pipe = 0, base = 0;
  for (const auto& h : held) {
    const Subject src = subject_of(h.source);
    const auto truth = image_to_tensor(h.target.image);
    const auto mask = encode_pose_mask(h.target.pose, rep.limb_radius, rep.dilation_radius).data;
    pipe += masked_ssim(pose_transfer(*models.pipeline, src, h.target.pose).image, truth, mask) / kHeldOut;
    base += masked_ssim(pose_transfer(*models.baseline, src, h.target.pose).image, truth, mask) / kHeldOut;
  }
  return {pipe > base, "mask-SSIM over " + std::to_string(kHeldOut) + " held-out transfers: semantic pipeline " +
                           num(pipe) + " vs baseline " + num(base)};
}

// ---- metrics ----

Outcome metric_correctness() {
  const auto x = oracle::dnormal({3, 24, 20}, 9, 0.5).clamp(-1, 1);
  const double self = ssim(x, x);
  const double full_mask = masked_ssim(x, x * 0.7, torch::ones({1, 24, 20}, torch::kDouble));
  const double plain = ssim(x, x * 0.7);
  const int c = 7;
  const double uniform = inception_score_from_probs(torch::full({12, c}, 1.0 / c, torch::kDouble), 3).mean;
  const double onehot = inception_score_from_probs(torch::eye(c, torch::kDouble).repeat({2, 1}), 2).mean;
  const bool ok = std::abs(self - 1) <= kSsimTol && std::abs(uniform - 1) <= kScoreTol &&
                  std::abs(onehot - c) <= kScoreTol && std::abs(full_mask - plain) <= kSsimTol;
  return {ok, "SSIM(x,x) = " + num(self) + ", IS uniform = " + num(uniform) + ", IS one-hot = " + num(onehot) +
                  " (C = " + std::to_string(c) + "), full-mask SSIM - SSIM = " + num(full_mask - plain)};
}

}  // namespace

int main(int argc, char** argv) {
  torch::manual_seed(0);
  const std::string filter = argc > 1 ? argv[1] : "";
  auto wanted = [&](const std::string& key) { return filter.empty() || key.find(filter) != std::string::npos; };
  const fs::path work = fs::temp_directory_path() / ("parsegen_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  auto run = [&](const std::string& key, const std::string& title, const std::function<Outcome()>& f) {
    if (!wanted(key)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    report(title, o);
  };

  DeskModels desk;
  run("miner", "pair-miner oracle equivalence", pair_miner_equivalence);
  run("affine", "affine solver exactness", affine_exactness);
  run("gradient", "loss gradient suite", gradient_suite);
  run("analytic", "analytic loss values", analytic_values);
  run("schedule", "training schedule conformance", [&] { return schedule_conformance(work); });
  run("desk", "desk-scale training smoke", [&] { return desk_training(work, desk); });
  run("metrics", "metric correctness", metric_correctness);
  run("desk", "ablation direction", [&] { return ablation(desk); });

  fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
