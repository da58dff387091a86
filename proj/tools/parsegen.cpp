// parsegen command-line interface.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>

#include "parsegen/corpus.hpp"
#include "parsegen/errors.hpp"
#include "parsegen/evalsuite.hpp"
#include "parsegen/gen_service.hpp"
#include "parsegen/image_io.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/synthetic.hpp"
#include "parsegen/trainer.hpp"

namespace fs = std::filesystem;
using namespace parsegen;

namespace {

ImageSize parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw InputError("size must look like 64x48 (height x width)");
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

std::shared_ptr<Corpus> open_corpus(const fs::path& root) {
  const auto scan = scan_corpus(root);
  for (const auto& e : scan.errors) std::cerr << "warning: skipping " << e.image_id << ": " << e.message << "\n";
  if (scan.records.empty()) throw InputError("corpus " + root.string() + " has no usable records");
  return std::make_shared<Corpus>(load_corpus(scan.records));
}

void write_image(const fs::path& path, const torch::Tensor& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_png_rgb(path, tensor_to_image(image));
}

HttpServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-guided person image generation with semantic parsing transformation"};
  app.require_subcommand(1);

  // make-corpus
  auto* mk = app.add_subcommand("make-corpus", "Render a synthetic paper-doll corpus");
  fs::path mk_out;
  int mk_count = 200;
  std::string mk_size = "64x48";
  std::uint64_t mk_seed = 7;
  double mk_test = 0.1;
  mk->add_option("--out", mk_out, "Corpus root")->required();
  mk->add_option("--count", mk_count, "Number of records");
  mk->add_option("--size", mk_size, "HxW");
  mk->add_option("--seed", mk_seed);
  mk->add_option("--test-fraction", mk_test);

  // mine-pairs
  auto* mp = app.add_subcommand("mine-pairs", "Search pseudo ground-truth pairs for the training split");
  fs::path mp_corpus, mp_out;
  std::optional<double> mp_threshold;
  mp->add_option("--corpus", mp_corpus)->required();
  mp->add_option("--out", mp_out)->required();
  mp->add_option("--pose-threshold", mp_threshold, "Pixels; default scales 15 px at 256 px height");

  // print-config
  auto* pc = app.add_subcommand("print-config", "Print every training config key with its default");

  // train
  auto* tr = app.add_subcommand("train", "Run training phases");
  std::string tr_phase = "all";
  fs::path tr_config, tr_corpus, tr_pairs, tr_out, tr_resume;
  tr->add_option("--phase", tr_phase, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}));
  tr->add_option("--config", tr_config, "Flat key = value file");
  tr->add_option("--corpus", tr_corpus)->required();
  tr->add_option("--pairs", tr_pairs, "Pair index from mine-pairs");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "Score generated images against references");
  fs::path ev_gen, ev_ref, ev_masks, ev_out, ev_classifier;
  int ev_splits = 10;
  ev->add_option("--generated", ev_gen)->required();
  ev->add_option("--reference", ev_ref)->required();
  ev->add_option("--masks", ev_masks);
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--classifier", ev_classifier, "TorchScript classifier; default is a fixed random classifier");
  ev->add_option("--splits", ev_splits);

  // generate / transfer / manipulate / serve
  fs::path checkpoint, corpus_root;
  auto* gen = app.add_subcommand("generate", "Pose transfer of a corpus record");
  std::string g_ref, g_target_id;
  fs::path g_target_pose, g_out, g_parse_out;
  gen->add_option("--checkpoint", checkpoint)->required();
  gen->add_option("--corpus", corpus_root)->required();
  gen->add_option("--reference", g_ref)->required();
  auto* g_tid = gen->add_option("--target-id", g_target_id, "Record whose pose is the target");
  auto* g_tp = gen->add_option("--target-pose", g_target_pose, "Keypoint JSON file");
  g_tid->excludes(g_tp);
  gen->add_option("--out", g_out)->required();
  gen->add_option("--parse-out", g_parse_out, "Write the predicted target parse");

  auto* tt = app.add_subcommand("transfer", "Clothing texture transfer between two records");
  std::string t_a, t_b;
  fs::path t_out_ab, t_out_ba;
  tt->add_option("--checkpoint", checkpoint)->required();
  tt->add_option("--corpus", corpus_root)->required();
  tt->add_option("--a", t_a)->required();
  tt->add_option("--b", t_b)->required();
  tt->add_option("--out-ab", t_out_ab)->required();
  tt->add_option("--out-ba", t_out_ba)->required();

  auto* mn = app.add_subcommand("manipulate", "Generate from an edited semantic map");
  std::string m_ref;
  fs::path m_parse, m_out;
  mn->add_option("--checkpoint", checkpoint)->required();
  mn->add_option("--corpus", corpus_root)->required();
  mn->add_option("--reference", m_ref)->required();
  mn->add_option("--parse", m_parse, "Paletted PNG with canonical labels")->required();
  mn->add_option("--out", m_out)->required();

  auto* sv = app.add_subcommand("serve", "HTTP service for the map editor");
  int s_port = 8080;
  std::string s_host = "127.0.0.1";
  sv->add_option("--port", s_port);
  sv->add_option("--host", s_host);
  sv->add_option("--checkpoint", checkpoint)->required();
  sv->add_option("--corpus", corpus_root)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mk) {
      synthetic::write_corpus(mk_out, {mk_count, mk_test, parse_size(mk_size), mk_seed});
      std::cout << "wrote " << mk_count << " records to " << mk_out << "\n";
    } else if (*mp) {
      const auto corpus = open_corpus(mp_corpus);
      auto cfg = MiningConfig::for_height(corpus->size().height);
      if (mp_threshold) cfg.pose_threshold = *mp_threshold;
      const auto records = corpus->mining_records(Split::Train);
      const auto index = mine_pairs(records, cfg);
      save_pair_index(mp_out, index);
      std::cout << "mined " << index.entries.size() << " pairs from " << records.size() << " records\n";
    } else if (*pc) {
      std::cout << TrainConfig().to_text();
    } else if (*tr) {
      const auto corpus = open_corpus(tr_corpus);
      std::optional<PairIndex> pairs;
      if (!tr_pairs.empty()) pairs = load_pair_index(tr_pairs);
      const PairIndex* p = pairs ? &*pairs : nullptr;
      std::unique_ptr<Trainer> trainer;
      if (!tr_resume.empty()) {
        trainer = Trainer::load(tr_resume, *corpus, p);
      } else {
        trainer = std::make_unique<Trainer>(tr_config.empty() ? TrainConfig() : TrainConfig::load(tr_config),
                                            *corpus, p);
      }
      trainer->set_output_dir(tr_out);
      std::vector<int> phases = tr_phase == "all" ? std::vector<int>{1, 2, 3} : std::vector<int>{std::stoi(tr_phase)};
      for (int ph : phases) {
        std::cout << "phase " << ph << "\n" << std::flush;
        trainer->run_phase(ph);
        if (!trainer->history().empty()) std::cout << "  last: " << loss_csv_row(trainer->history().back()) << "\n";
      }
      trainer->save(tr_out / "checkpoint.pt");
      std::cout << "saved " << (tr_out / "checkpoint.pt") << "\n";
    } else if (*ev) {
      const Classifier cls = ev_classifier.empty() ? random_conv_classifier() : torchscript_classifier(ev_classifier);
      EvalOptions opts;
      opts.splits = ev_splits;
      std::optional<fs::path> masks;
      if (!ev_masks.empty()) masks = ev_masks;
      const auto report = evaluate_directories(ev_gen, ev_ref, masks, cls, opts);
      write_file(ev_out, report.to_json());
      std::cout << report.to_json() << "\n";
    } else if (*gen) {
      const auto models = load_snapshot(checkpoint);
      const auto corpus = open_corpus(corpus_root);
      const auto ref = subject_from_record(corpus->at(g_ref));
      PoseSpec target;
      if (!g_target_id.empty()) target = corpus->at(g_target_id).record.pose;
      else if (!g_target_pose.empty()) target = pose_from_json(read_file(g_target_pose));
      else throw InputError("generate needs --target-id or --target-pose");
      const auto r = pose_transfer(*models, ref, target);
      write_image(g_out, r.image);
      if (!g_parse_out.empty() && r.parse) write_png_indexed(g_parse_out, r.parse->to_labels());
    } else if (*tt) {
      const auto models = load_snapshot(checkpoint);
      const auto corpus = open_corpus(corpus_root);
      const auto [ab, ba] =
          texture_transfer(*models, subject_from_record(corpus->at(t_a)), subject_from_record(corpus->at(t_b)));
      write_image(t_out_ab, ab);
      write_image(t_out_ba, ba);
    } else if (*mn) {
      const auto models = load_snapshot(checkpoint);
      const auto corpus = open_corpus(corpus_root);
      const auto out = manipulate(*models, subject_from_record(corpus->at(m_ref)), read_png_indexed(m_parse));
      write_image(m_out, out);
    } else if (*sv) {
      const auto models = load_snapshot(checkpoint);
      const auto corpus = open_corpus(corpus_root);
      auto service = std::make_shared<GenerationService>(models, corpus);
      HttpServer server(service);
      const int port = server.bind(s_host, s_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << models->checkpoint_id << " on http://" << s_host << ":" << port << "\n"
                << std::flush;
      server.listen();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
