#include "parsegen/trainer.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "parsegen/errors.hpp"
#include "parsegen/image_io.hpp"

namespace parsegen {
namespace {

constexpr const char* kMagic = "parsegen-train";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw InputError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw InputError("config key '" + key + "': expected true or false, got '" + text + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field number_field(std::string key, T TrainConfig::*outer) {
  return {key, [outer](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*outer);
            else return std::to_string(c.*outer);
          },
          [outer, key](TrainConfig& c, const std::string& v) { c.*outer = parse_number<T>(key, v); }};
}

template <typename S, typename T>
Field nested_field(std::string key, S TrainConfig::*outer, T S::*inner) {
  return {key,
          [outer, inner](const TrainConfig& c) {
            const T& v = c.*outer.*inner;
            if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
            else if constexpr (std::is_floating_point_v<T>) return fmt(v);
            else return std::to_string(v);
          },
          [outer, inner, key](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) c.*outer.*inner = parse_bool(key, v);
            else c.*outer.*inner = parse_number<T>(key, v);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(number_field("pretrain_hs_steps", &TrainConfig::pretrain_hs_steps));
    v.push_back(number_field("train_ha_steps", &TrainConfig::train_ha_steps));
    v.push_back(number_field("joint_steps", &TrainConfig::joint_steps));
    v.push_back(number_field("batch_size", &TrainConfig::batch_size));
    v.push_back(number_field("seed", &TrainConfig::seed));
    v.push_back(number_field("checkpoint_every", &TrainConfig::checkpoint_every));
    v.push_back(number_field("sample_every", &TrainConfig::sample_every));
    v.push_back({"extractor", [](const TrainConfig& c) { return c.extractor; },
                 [](TrainConfig& c, const std::string& s) { c.extractor = s; }});
    v.push_back({"input_height", [](const TrainConfig& c) { return std::to_string(c.semantic.input_resolution.height); },
                 [](TrainConfig& c, const std::string& s) {
                   c.semantic.input_resolution.height = c.appearance.input_resolution.height =
                       parse_number<int>("input_height", s);
                 }});
    v.push_back({"input_width", [](const TrainConfig& c) { return std::to_string(c.semantic.input_resolution.width); },
                 [](TrainConfig& c, const std::string& s) {
                   c.semantic.input_resolution.width = c.appearance.input_resolution.width =
                       parse_number<int>("input_width", s);
                 }});
    v.push_back(nested_field("optimizer.learning_rate", &TrainConfig::optimizer, &OptimizerConfig::learning_rate));
    v.push_back(nested_field("optimizer.beta1", &TrainConfig::optimizer, &OptimizerConfig::beta1));
    v.push_back(nested_field("optimizer.beta2", &TrainConfig::optimizer, &OptimizerConfig::beta2));
    v.push_back(nested_field("detector.steps", &TrainConfig::detector, &DetectorTraining::steps));
    v.push_back(nested_field("detector.batch_size", &TrainConfig::detector, &DetectorTraining::batch_size));
    v.push_back(nested_field("detector.learning_rate", &TrainConfig::detector, &DetectorTraining::learning_rate));
    v.push_back(nested_field("detector.seed", &TrainConfig::detector, &DetectorTraining::seed));
    v.push_back(nested_field("semantic.base_channels", &TrainConfig::semantic, &SemanticNetConfig::base_channels));
    v.push_back(nested_field("semantic.depth", &TrainConfig::semantic, &SemanticNetConfig::depth));
    v.push_back(nested_field("semantic.lambda_ce", &TrainConfig::semantic, &SemanticNetConfig::lambda_ce));
    v.push_back(nested_field("appearance.base_channels", &TrainConfig::appearance,
                             &AppearanceNetConfig::base_channels));
    v.push_back(nested_field("appearance.depth", &TrainConfig::appearance, &AppearanceNetConfig::depth));
    v.push_back(nested_field("appearance.lambda_pose", &TrainConfig::appearance, &AppearanceNetConfig::lambda_pose));
    v.push_back(nested_field("appearance.lambda_cont", &TrainConfig::appearance, &AppearanceNetConfig::lambda_cont));
    v.push_back(nested_field("appearance.lambda_sty", &TrainConfig::appearance, &AppearanceNetConfig::lambda_sty));
    v.push_back(nested_field("appearance.use_face_loss", &TrainConfig::appearance,
                             &AppearanceNetConfig::use_face_loss));
    v.push_back(nested_field("appearance.semantic_input", &TrainConfig::appearance,
                             &AppearanceNetConfig::semantic_input));
    v.push_back({"appearance.face_crop", [](const TrainConfig& c) { return std::to_string(c.appearance.face.crop.height); },
                 [](TrainConfig& c, const std::string& s) {
                   const int n = parse_number<int>("appearance.face_crop", s);
                   c.appearance.face.crop = {n, n};
                 }});
    v.push_back({"appearance.min_face_area", [](const TrainConfig& c) { return fmt(c.appearance.face.min_source_area); },
                 [](TrainConfig& c, const std::string& s) {
                   c.appearance.face.min_source_area = parse_number<double>("appearance.min_face_area", s);
                 }});
    return v;
  }();
  return f;
}

torch::Tensor stack_field(const std::vector<torch::Tensor>& xs) { return torch::stack(xs); }

std::string state_to_text(const TrainState& s) {
  std::ostringstream os;
  os << "phase_done " << s.phase_done[0] << ' ' << s.phase_done[1] << ' ' << s.phase_done[2] << '\n';
  os << "phase_step " << s.phase_step[0] << ' ' << s.phase_step[1] << ' ' << s.phase_step[2] << '\n';
  os << "global_step " << s.global_step << '\n';
  os << "detector_ready " << s.detector_ready << '\n';
  os << "rng " << s.rng << '\n';
  return os.str();
}

TrainState state_from_text(const std::string& text) {
  TrainState s;
  std::istringstream is(text);
  std::string tag;
  is >> tag >> s.phase_done[0] >> s.phase_done[1] >> s.phase_done[2];
  if (tag != "phase_done") throw FormatError("checkpoint state is corrupt");
  is >> tag >> s.phase_step[0] >> s.phase_step[1] >> s.phase_step[2];
  if (tag != "phase_step") throw FormatError("checkpoint state is corrupt");
  is >> tag >> s.global_step;
  if (tag != "global_step") throw FormatError("checkpoint state is corrupt");
  is >> tag >> s.detector_ready;
  if (tag != "detector_ready") throw FormatError("checkpoint state is corrupt");
  is >> tag >> s.rng;
  if (tag != "rng" || is.fail()) throw FormatError("checkpoint state is corrupt");
  return s;
}

const std::array<const char*, 7> kCsvTerms = {"adv", "ce", "pose", "cont", "sty", "face", "total"};

LossRow row_from_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (cells.size() != 3 + kCsvTerms.size()) throw FormatError("checkpoint loss history is corrupt");
  LossRow r;
  try {
    r.phase = std::stoi(cells[0]);
    r.step = std::stoi(cells[1]);
    r.discriminator = std::stod(cells[2]);
    for (std::size_t i = 0; i < kCsvTerms.size(); ++i)
      if (!cells[3 + i].empty()) r.generator.terms.emplace_back(kCsvTerms[i], std::stod(cells[3 + i]));
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint loss history is corrupt");
  }
  return r;
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v) || !v.isString()) throw FormatError("checkpoint is missing '" + key + "'");
  return v.toStringRef();
}

torch::serialize::InputArchive open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw StateError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error&) {
    throw FormatError("corrupt checkpoint: " + path.string());
  }
  if (read_string(ar, "magic") != kMagic) throw FormatError("not a training checkpoint: " + path.string());
  c10::IValue version;
  if (!ar.try_read("version", version) || !version.isInt()) throw FormatError("checkpoint has no version tag");
  if (version.toInt() != kFormatVersion)
    throw FormatError("checkpoint version " + std::to_string(version.toInt()) + " does not match supported version " +
                      std::to_string(kFormatVersion));
  return ar;
}

std::array<std::pair<const char*, torch::nn::Module*>, 6> named_modules(Networks& n) {
  return {{{"hs", n.hs.get()}, {"ds", n.ds.get()}, {"ha", n.ha.get()}, {"da", n.da.get()}, {"df", n.df.get()},
           {"detector", n.detector.get()}}};
}

void load_networks(torch::serialize::InputArchive& ar, Networks& n) {
  try {
    for (const auto& [name, m] : named_modules(n)) {
      torch::serialize::InputArchive sub;
      if (!ar.try_read(std::string("net.") + name, sub)) throw FormatError(std::string("checkpoint lacks net.") + name);
      m->load(sub);
    }
  } catch (const c10::Error& e) {
    throw FormatError(std::string("corrupt checkpoint: ") + e.what_without_backtrace());
  }
  set_requires_grad(*n.detector, false);
  n.detector->eval();
}

}  // namespace

void TrainConfig::validate() const {
  if (pretrain_hs_steps < 0 || train_ha_steps < 0 || joint_steps < 0)
    throw InputError("phase step counts must be non-negative");
  if (!(optimizer.learning_rate > 0)) throw InputError("learning_rate must be positive");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1))
    throw InputError("Adam betas must lie in [0, 1)");
  if (batch_size < 1) throw InputError("batch_size must be at least 1");
  if (checkpoint_every < 0 || sample_every < 0) throw InputError("cadences must be non-negative");
  if (detector.steps < 0 || detector.batch_size < 1 || !(detector.learning_rate > 0))
    throw InputError("invalid detector training settings");
  if (!(semantic.input_resolution == appearance.input_resolution))
    throw InputError("semantic and appearance nets must share the input resolution");
  semantic.validate();
  appearance.validate();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    bool found = false;
    for (const auto& f : fields())
      if (f.key == key) {
        f.set(c, value);
        found = true;
      }
    if (!found) throw InputError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

Networks Networks::create(const TrainConfig& c) {
  Networks n;
  n.hs = SemanticGenerator(c.semantic);
  n.ds = SemanticDiscriminator(c.semantic);
  n.ha = AppearanceGenerator(c.appearance);
  auto d = make_appearance_discriminators(c.appearance);
  n.da = d.image;
  n.df = d.face;
  n.detector = PoseDetector();
  init_weights(*n.hs, c.seed + 1);
  init_weights(*n.ds, c.seed + 2);
  init_weights(*n.ha, c.seed + 3);
  init_weights(*n.da, c.seed + 4);
  init_weights(*n.df, c.seed + 5);
  set_requires_grad(*n.detector, false);
  return n;
}

struct Trainer::Optimizers {
  std::unique_ptr<torch::optim::Adam> hs, ds, ha, da, df;

  Optimizers(Networks& n, const OptimizerConfig& o) {
    auto opts = [&] { return torch::optim::AdamOptions(o.learning_rate).betas({o.beta1, o.beta2}); };
    hs = std::make_unique<torch::optim::Adam>(n.hs->parameters(), opts());
    ds = std::make_unique<torch::optim::Adam>(n.ds->parameters(), opts());
    ha = std::make_unique<torch::optim::Adam>(n.ha->parameters(), opts());
    da = std::make_unique<torch::optim::Adam>(n.da->parameters(), opts());
    df = std::make_unique<torch::optim::Adam>(n.df->parameters(), opts());
  }

  std::array<std::pair<const char*, torch::optim::Adam*>, 5> named() {
    return {{{"hs", hs.get()}, {"ds", ds.get()}, {"ha", ha.get()}, {"da", da.get()}, {"df", df.get()}}};
  }
};

Trainer::Trainer(TrainConfig config, const Corpus& corpus, const PairIndex* pairs)
    : config_(std::move(config)), corpus_(corpus), pairs_(pairs) {
  config_.validate();
  if (!(corpus_.size() == config_.semantic.input_resolution))
    throw InputError("corpus image size differs from the configured input resolution");
  nets_ = Networks::create(config_);
  optim_ = std::make_shared<Optimizers>(nets_, config_.optimizer);
  extractor_ = make_extractor(config_.extractor);
  state_.rng.seed(config_.seed);
  if (pairs_)
    for (std::size_t i : corpus_.indices(Split::Train)) {
      auto it = pairs_->entries.find(corpus_.items[i].record.image_id);
      if (it == pairs_->entries.end()) continue;
      auto m = corpus_.find(it->second.matched_id);
      if (m && *m != i) pair_pool_.push_back(i);
    }
}

void Trainer::set_output_dir(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  out_dir_ = dir;
}

void Trainer::run_phase1(std::optional<int> max_steps) { run_phase(1, max_steps); }
void Trainer::run_phase2(std::optional<int> max_steps) { run_phase(2, max_steps); }
void Trainer::run_phase3(std::optional<int> max_steps) { run_phase(3, max_steps); }

void Trainer::run_phase(int phase, std::optional<int> max_steps) {
  if (phase < 1 || phase > 3) throw InputError("phase must be 1, 2 or 3");
  const int k = phase - 1;
  for (int p = 0; p < k; ++p)
    if (!state_.phase_done[p])
      throw StateError("phase " + std::to_string(phase) + " requires phase " + std::to_string(p + 1) +
                       " to be completed first");
  const bool semantic = config_.appearance.semantic_input;
  if (phase == 1 && semantic && config_.pretrain_hs_steps > 0 && pair_pool_.empty())
    throw StateError("phase 1 needs a non-empty pair index; run `parsegen mine-pairs` first");
  const int target = phase == 1 ? config_.pretrain_hs_steps : phase == 2 ? config_.train_ha_steps : config_.joint_steps;
  // Without semantic input there is no H_S to pretrain.
  if (phase == 1 && !semantic) state_.phase_step[0] = target;
  if (phase > 1 && state_.phase_step[k] < target) ensure_detector();

  set_requires_grad(*nets_.hs, phase != 2 && semantic);
  set_requires_grad(*nets_.ds, phase != 2 && semantic);
  set_requires_grad(*nets_.ha, phase > 1);
  set_requires_grad(*nets_.da, phase > 1);
  set_requires_grad(*nets_.df, phase > 1);

  int done = 0;
  while (state_.phase_step[k] < target && (!max_steps || done < *max_steps)) {
    LossRow row = phase == 1 ? step_phase1() : step_appearance(phase == 3);
    ++state_.phase_step[k];
    ++state_.global_step;
    ++done;
    row.phase = phase;
    row.step = state_.phase_step[k];
    record(std::move(row));
    if (out_dir_ && config_.checkpoint_every > 0 && state_.phase_step[k] % config_.checkpoint_every == 0 &&
        state_.phase_step[k] < target)
      save(*out_dir_ / ("checkpoint_phase" + std::to_string(phase) + "_step" +
                        std::to_string(state_.phase_step[k]) + ".pt"));
  }
  if (state_.phase_step[k] >= target && !state_.phase_done[k]) {
    state_.phase_done[k] = true;
    if (out_dir_) save(*out_dir_ / ("checkpoint_phase" + std::to_string(phase) + ".pt"));
  }
}

void Trainer::ensure_detector() {
  if (state_.detector_ready) return;
  pretrain_pose_detector(nets_.detector, corpus_, config_.detector);
  state_.detector_ready = true;
}

LossRow Trainer::step_phase1() {
  const std::size_t b = std::min<std::size_t>(config_.batch_size, pair_pool_.size());
  std::vector<std::size_t> order = pair_pool_;
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(state_.rng)]);
  }
  std::vector<torch::Tensor> sp, sh, sm, tp, th, tm;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& src = corpus_.items[order[i]];
    const auto& tgt = corpus_.at(pairs_->entries.at(src.record.image_id).matched_id);
    sp.push_back(src.semantic.data);
    sh.push_back(src.pose.heatmap.data);
    sm.push_back(src.pose.mask.data);
    tp.push_back(tgt.semantic.data);
    th.push_back(tgt.pose.heatmap.data);
    tm.push_back(tgt.pose.mask.data);
  }
  auto src_parse = stack_field(sp), src_heat = stack_field(sh), src_mask = stack_field(sm);
  auto tgt_parse = stack_field(tp), tgt_heat = stack_field(th), tgt_mask = stack_field(tm);

  auto fake = nets_.hs->forward(src_parse, src_heat, src_mask, tgt_heat, tgt_mask);

  auto d_adv = semantic_adv_loss(nets_.ds->forward(tgt_parse, tgt_heat), nets_.ds->forward(fake.detach(), tgt_heat));
  optim_->ds->zero_grad();
  d_adv.d.backward();
  optim_->ds->step();

  auto g_adv = semantic_adv_loss(nets_.ds->forward(tgt_parse, tgt_heat), nets_.ds->forward(fake, tgt_heat));
  auto report = hs_total_loss(g_adv.g, ce_loss(fake, tgt_parse, tgt_mask), config_.semantic);
  optim_->hs->zero_grad();
  report.total.backward();
  optim_->hs->step();

  LossRow row;
  row.generator = std::move(report);
  row.discriminator = d_adv.d.item<double>();
  if (config_.sample_every > 0 && (state_.phase_step[0] + 1) % config_.sample_every == 0) {
    std::vector<std::vector<torch::Tensor>> rows;
    for (std::size_t i = 0; i < b; ++i) {
      auto as_rgb = [](const torch::Tensor& m) {
        return image_to_tensor(colorize(SemanticMap{m.detach(), MapMode::Soft}.to_labels()));
      };
      rows.push_back({as_rgb(src_parse[i]), as_rgb(fake[i]), as_rgb(tgt_parse[i])});
    }
    write_samples(1, rows);
  }
  return row;
}

LossRow Trainer::step_appearance(bool joint) {
  const auto pool = corpus_.indices(Split::Train);
  const int b = std::min<int>(config_.batch_size, static_cast<int>(pool.size()));
  const auto samples = sample_training_batch(corpus_, pool, nullptr, b, state_.rng);
  const auto batch = make_appearance_batch(corpus_, samples);
  const auto& acfg = config_.appearance;
  const bool semantic = acfg.semantic_input;

  torch::Tensor s_t, s_s;
  std::vector<BodyPartMasks> ref_parts(b), tgt_parts(b), back_parts(b);
  if (semantic) {
    {
      std::optional<torch::NoGradGuard> guard;
      if (!joint) guard.emplace();
      s_t = nets_.hs->forward(batch.ref_parse, batch.ref_heatmap, batch.ref_mask, batch.tgt_heatmap, batch.tgt_mask);
      s_s = nets_.hs->forward(harden(s_t.detach()), batch.tgt_heatmap, batch.tgt_mask, batch.ref_heatmap,
                              batch.ref_mask);
    }
  }
  for (int i = 0; i < b; ++i) {
    ref_parts[i] = skip_parts(acfg, semantic ? batch.ref_parse[i] : torch::Tensor(), batch.ref_poses[i]);
    tgt_parts[i] = skip_parts(acfg, semantic ? s_t[i].detach() : torch::Tensor(), batch.tgt_poses[i]);
    back_parts[i] = skip_parts(acfg, semantic ? s_s[i].detach() : torch::Tensor(), batch.ref_poses[i]);
  }
  AppearanceInputs fwd{batch.ref_image, batch.ref_parse, batch.ref_heatmap, s_t, batch.tgt_heatmap, {}};
  for (int i = 0; i < b; ++i) fwd.plans.push_back(skip_plans(ref_parts[i], tgt_parts[i], acfg.depth));
  auto img_t = nets_.ha->forward(fwd);
  AppearanceInputs back{img_t, s_t, batch.tgt_heatmap, s_s, batch.ref_heatmap, {}};
  for (int i = 0; i < b; ++i) back.plans.push_back(skip_plans(tgt_parts[i], back_parts[i], acfg.depth));
  auto img_s = nets_.ha->forward(back);

  double d_total = 0.0;
  {
    auto adv = appearance_adv_loss(nets_.da->forward(batch.ref_image), nets_.da->forward(img_t.detach()),
                                   nets_.da->forward(img_s.detach()));
    optim_->da->zero_grad();
    adv.d.backward();
    optim_->da->step();
    d_total += adv.d.item<double>();
  }
  auto face_d = [this](const torch::Tensor& x) { return nets_.df->forward(x); };
  if (acfg.use_face_loss) {
    auto face = face_loss(batch.ref_image, img_t.detach(), img_s.detach(), batch.ref_poses, batch.tgt_poses, face_d,
                          acfg.face);
    if (face.d.requires_grad()) {
      optim_->df->zero_grad();
      face.d.backward();
      optim_->df->step();
    }
    d_total += face.d.item<double>();
  }
  if (joint && semantic) {
    auto adv = semantic_adv_loss(nets_.ds->forward(batch.ref_parse, batch.ref_heatmap),
                                 nets_.ds->forward(s_t.detach(), batch.tgt_heatmap));
    optim_->ds->zero_grad();
    adv.d.backward();
    optim_->ds->step();
    d_total += adv.d.item<double>();
  }

  AppearanceTerms terms;
  terms.adv = appearance_adv_loss(nets_.da->forward(batch.ref_image), nets_.da->forward(img_t),
                                  nets_.da->forward(img_s))
                  .g;
  auto detector = [this](const torch::Tensor& x) { return nets_.detector->forward(x); };
  terms.pose = pose_loss(img_t, img_s, batch.tgt_heatmap, batch.ref_heatmap, detector);
  terms.cont = content_loss(img_s, batch.ref_image, *extractor_);
  if (semantic) {
    terms.sty = semantic_style_loss(batch.ref_image, img_t, batch.ref_parse, s_t, *extractor_) +
                semantic_style_loss(img_t, img_s, s_t, s_s, *extractor_);
  } else {
    const auto rp = part_mask_tensor(ref_parts), tp = part_mask_tensor(tgt_parts), bp = part_mask_tensor(back_parts);
    terms.sty = semantic_style_loss(batch.ref_image, img_t, rp, tp, *extractor_) +
                semantic_style_loss(img_t, img_s, tp, bp, *extractor_);
  }
  if (acfg.use_face_loss)
    terms.face = face_loss(batch.ref_image, img_t, img_s, batch.ref_poses, batch.tgt_poses, face_d, acfg.face).g;
  auto report = ha_total_loss(terms, acfg);
  optim_->ha->zero_grad();
  if (joint && semantic) optim_->hs->zero_grad();
  report.total.backward();
  optim_->ha->step();
  if (joint && semantic) optim_->hs->step();

  LossRow row;
  row.generator = std::move(report);
  row.discriminator = d_total;
  const int k = joint ? 2 : 1;
  if (config_.sample_every > 0 && (state_.phase_step[k] + 1) % config_.sample_every == 0) {
    std::vector<std::vector<torch::Tensor>> rows;
    for (int i = 0; i < b; ++i) {
      std::vector<torch::Tensor> r{batch.ref_image[i], img_t[i].detach(), img_s[i].detach()};
      if (semantic) r.push_back(image_to_tensor(colorize(SemanticMap{s_t[i].detach(), MapMode::Soft}.to_labels())));
      rows.push_back(r);
    }
    write_samples(k + 1, rows);
  }
  return row;
}

void Trainer::record(LossRow row) {
  if (out_dir_) {
    const auto path = *out_dir_ / "losses.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (fresh) out << loss_csv_header() << '\n';
    out << loss_csv_row(row) << '\n';
  }
  row.generator.total = row.generator.total.defined() ? row.generator.total.detach() : torch::Tensor();
  history_.push_back(std::move(row));
}

void Trainer::write_samples(int phase, const std::vector<std::vector<torch::Tensor>>& rows) const {
  if (!out_dir_) return;
  const auto dir = *out_dir_ / "samples";
  std::filesystem::create_directories(dir);
  write_png_rgb(dir / ("phase" + std::to_string(phase) + "_step" +
                       std::to_string(state_.phase_step[phase - 1] + 1) + ".png"),
                tile_images(rows));
}

void Trainer::save(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive ar;
  ar.write("magic", c10::IValue(std::string(kMagic)));
  ar.write("version", c10::IValue(static_cast<int64_t>(kFormatVersion)));
  ar.write("config", c10::IValue(config_.to_text()));
  ar.write("state", c10::IValue(state_to_text(state_)));
  std::string hist;
  for (const auto& r : history_) hist += loss_csv_row(r) + "\n";
  ar.write("history", c10::IValue(hist));
  for (const auto& [name, m] : named_modules(const_cast<Networks&>(nets_))) {
    torch::serialize::OutputArchive sub;
    m->save(sub);
    ar.write(std::string("net.") + name, sub);
  }
  for (const auto& [name, o] : optim_->named()) {
    torch::serialize::OutputArchive sub;
    o->save(sub);
    ar.write(std::string("opt.") + name, sub);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ar.save_to(path.string());
}

std::unique_ptr<Trainer> Trainer::load(const std::filesystem::path& path, const Corpus& corpus,
                                       const PairIndex* pairs) {
  auto ar = open_checkpoint(path);
  auto trainer = std::make_unique<Trainer>(TrainConfig::parse(read_string(ar, "config")), corpus, pairs);
  trainer->state_ = state_from_text(read_string(ar, "state"));
  std::istringstream hist(read_string(ar, "history"));
  for (std::string line; std::getline(hist, line);)
    if (!line.empty()) trainer->history_.push_back(row_from_csv(line));
  load_networks(ar, trainer->nets_);
  try {
    for (const auto& [name, o] : trainer->optim_->named()) {
      torch::serialize::InputArchive sub;
      if (!ar.try_read(std::string("opt.") + name, sub)) throw FormatError(std::string("checkpoint lacks opt.") + name);
      o->load(sub);
    }
  } catch (const c10::Error& e) {
    throw FormatError(std::string("corrupt checkpoint: ") + e.what_without_backtrace());
  }
  return trainer;
}

CheckpointContents load_checkpoint_networks(const std::filesystem::path& path) {
  auto ar = open_checkpoint(path);
  CheckpointContents c{TrainConfig::parse(read_string(ar, "config")), state_from_text(read_string(ar, "state")), {}};
  c.networks = Networks::create(c.config);
  load_networks(ar, c.networks);
  return c;
}

AppearanceBatch make_appearance_batch(const Corpus& corpus, const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw InputError("empty training batch");
  std::vector<torch::Tensor> img, parse, rh, rm, th, tm;
  AppearanceBatch b;
  for (const auto& s : samples) {
    const auto& ref = corpus.items.at(s.reference_index);
    const auto& tgt = corpus.items.at(s.target_index);
    img.push_back(ref.image);
    parse.push_back(ref.semantic.data);
    rh.push_back(ref.pose.heatmap.data);
    rm.push_back(ref.pose.mask.data);
    th.push_back(tgt.pose.heatmap.data);
    tm.push_back(tgt.pose.mask.data);
    b.ref_poses.push_back(ref.record.pose);
    b.tgt_poses.push_back(s.target_pose);
  }
  b.ref_image = torch::stack(img);
  b.ref_parse = torch::stack(parse);
  b.ref_heatmap = torch::stack(rh);
  b.ref_mask = torch::stack(rm);
  b.tgt_heatmap = torch::stack(th);
  b.tgt_mask = torch::stack(tm);
  return b;
}

torch::Tensor part_mask_tensor(const std::vector<BodyPartMasks>& parts) {
  if (parts.empty()) throw InputError("no part masks");
  const int h = parts[0].parts[0].height, w = parts[0].parts[0].width;
  auto out = torch::zeros({static_cast<int64_t>(parts.size()), kNumParts, h, w});
  auto acc = out.accessor<float, 4>();
  for (std::size_t n = 0; n < parts.size(); ++n)
    for (int p = 0; p < kNumParts; ++p) {
      const auto& m = parts[n].parts[p];
      if (m.height != h || m.width != w) throw InputError("part masks differ in size");
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) acc[n][p][y][x] = m.at(y, x) ? 1.0f : 0.0f;
    }
  return out;
}

const char* loss_csv_header() { return "phase,step,d_loss,adv,ce,pose,cont,sty,face,total"; }

std::string loss_csv_row(const LossRow& row) {
  std::string s = std::to_string(row.phase) + "," + std::to_string(row.step) + "," + fmt(row.discriminator);
  for (const char* name : kCsvTerms) {
    s += ",";
    for (const auto& [k, v] : row.generator.terms)
      if (k == name) {
        s += fmt(v);
        break;
      }
  }
  return s;
}

}  // namespace parsegen
