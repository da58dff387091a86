#include <httplib.h>

#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

#include "parsegen/errors.hpp"
#include "parsegen/gen_service.hpp"
#include "parsegen/image_io.hpp"
#include "parsegen/synthetic.hpp"
#include "parsegen/trainer.hpp"
#include "test_util.hpp"
#include "testing.hpp"

using namespace parsegen;
using parsegen::testing::TempDir;
using json = nlohmann::json;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.pretrain_hs_steps = c.train_ha_steps = c.joint_steps = 0;
  c.semantic.base_channels = c.appearance.base_channels = 4;
  c.semantic.input_resolution = c.appearance.input_resolution = {32, 24};
  return c;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Fixture {
  TempDir dir{"service"};
  std::shared_ptr<Corpus> corpus;
  std::shared_ptr<const ModelSnapshot> models;

  Fixture() {
    synthetic::write_corpus(dir.path(), {.count = 4, .test_fraction = 0.25, .size = {32, 24}, .seed = 8});
    corpus = std::make_shared<Corpus>(load_corpus(dir.path()));
    auto n = Networks::create(tiny_config());
    models = make_snapshot(n.hs, n.ha, "fixture");
  }

  Subject subject(std::size_t i) const { return subject_from_record(corpus->items[i]); }
  const std::string& id(std::size_t i) const { return corpus->items[i].record.image_id; }
};

std::string parse_b64(const LabelImage& labels) { return base64_encode(encode_png_indexed(labels, kLabelPalette)); }

bool same(const torch::Tensor& a, const torch::Tensor& b) { return torch::equal(a, b); }

}  // namespace

TEST_CASE("pose transfer") {
  Fixture f;
  const auto ref = f.subject(0);
  const auto r = pose_transfer(*f.models, ref, ref.pose);
  CHECK(r.image.sizes() == torch::IntArrayRef({3, 32, 24}));
  CHECK(r.image.abs().max().item<double>() <= 1.0);
  REQUIRE(r.parse);
  CHECK(r.parse->data.sum(0).eq(1).all().item<bool>());
  CHECK(r.parse->data.sum().item<double>() == 32 * 24);

  const auto again = pose_transfer(*f.models, ref, ref.pose);
  CHECK(encode_png(tensor_to_image(again.image)) == encode_png(tensor_to_image(r.image)));
  CHECK(same(again.parse->data, r.parse->data));

  const auto moved = pose_transfer(*f.models, ref, f.subject(1).pose);
  CHECK_FALSE(same(moved.image, r.image));

  auto wrong = ref.pose;
  wrong.size = {64, 48};
  CHECK_THROWS_AS(pose_transfer(*f.models, ref, wrong), InputError);
  Subject no_parse = ref;
  no_parse.parse.reset();
  CHECK_THROWS_AS(pose_transfer(*f.models, no_parse, ref.pose), InputError);
}

TEST_CASE("texture transfer and manipulation") {
  Fixture f;
  const auto a = f.subject(0), b = f.subject(1);
  const auto [ab, ba] = texture_transfer(*f.models, a, b);
  const auto [ba2, ab2] = texture_transfer(*f.models, b, a);
  CHECK(same(ab, ab2));
  CHECK(same(ba, ba2));

  Subject no_parse = b;
  no_parse.parse.reset();
  CHECK_THROWS_AS(texture_transfer(*f.models, a, no_parse), InputError);

  const auto aa = texture_transfer(*f.models, a, a).first;
  const LabelImage original = f.corpus->items[0].parse;
  CHECK(same(manipulate(*f.models, a, original), aa));

  LabelImage edited = original;
  for (int y = edited.height / 2; y < edited.height; ++y)
    for (int x = 0; x < edited.width; ++x)
      if (edited.at(y, x) == L(Label::Background)) edited.at(y, x) = L(Label::Pants);
  REQUIRE_FALSE(edited == original);
  CHECK((manipulate(*f.models, a, edited) - aa).abs().max().item<double>() > 0);

  LabelImage bad = original;
  bad.at(0, 0) = 255;
  bad.at(1, 1) = 12;
  try {
    manipulate(*f.models, a, bad);
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("255") != std::string::npos);
    CHECK(msg.find("12") != std::string::npos);
    CHECK(msg.find("2 pixels") != std::string::npos);
  }
}

TEST_CASE("http dispatch") {
  Fixture f;
  GenerationService svc(f.models, f.corpus);
  const auto hash = f.models->parameter_hash();

  auto health = svc.handle("GET", "/health", "");
  CHECK(health.status == 200);
  CHECK(json::parse(health.body)["checkpoint_id"] == "fixture");

  auto listing = json::parse(svc.handle("GET", "/corpus", "").body);
  CHECK(listing["records"].size() == 4);
  CHECK(decode_png_rgb(base64_decode(listing["records"][0]["thumbnail"].get<std::string>())).size() ==
        ImageSize{32, 24});

  auto rec = svc.handle("GET", "/record/" + f.id(2), "");
  CHECK(rec.status == 200);
  auto rj = json::parse(rec.body);
  CHECK(rj["keypoints"].size() == kNumJoints);
  CHECK(decode_png_indexed(base64_decode(rj["parse"].get<std::string>())) == f.corpus->items[2].parse);

  auto missing = svc.handle("GET", "/record/nobody", "");
  CHECK(missing.status == 404);
  CHECK(json::parse(missing.body)["code"] == "not_found");

  SUBCASE("manipulation returns a png") {
    json req = {{"mode", "manipulation"}, {"reference_id", f.id(0)}, {"edited_parse", parse_b64(f.corpus->items[0].parse)}};
    auto r = svc.handle("POST", "/generate", req.dump());
    CHECK(r.status == 200);
    CHECK(r.content_type == "image/png");
    const auto expect = manipulate(*f.models, f.subject(0), f.corpus->items[0].parse);
    CHECK(r.body == encode_png(tensor_to_image(expect)));
  }

  SUBCASE("json responses for all modes") {
    json pt = {{"mode", "pose_transfer"}, {"reference_id", f.id(0)}, {"target_id", f.id(1)}, {"response", "json"}};
    auto j = json::parse(svc.handle("POST", "/generate", pt.dump()).body);
    CHECK(j["images"].size() == 1);
    CHECK(j["parse"].is_string());

    json kp = {{"mode", "pose_transfer"}, {"reference_id", f.id(0)},
               {"target_pose", {{"keypoints", json::parse(rec.body)["keypoints"]}}}};
    auto by_pose = svc.handle("POST", "/generate", kp.dump());
    json by_id = {{"mode", "pose_transfer"}, {"reference_id", f.id(0)}, {"target_id", f.id(2)}};
    CHECK(by_pose.status == 200);
    CHECK(by_pose.body == svc.handle("POST", "/generate", by_id.dump()).body);

    json tt = {{"mode", "texture_transfer"}, {"reference_id", f.id(0)}, {"donor_id", f.id(1)}, {"response", "json"}};
    auto t = json::parse(svc.handle("POST", "/generate", tt.dump()).body);
    CHECK(t["images"].size() == 2);
    CHECK(t["parse"].is_null());
  }

  SUBCASE("uploaded subject matches the corpus record") {
    const auto& item = f.corpus->items[1];
    json up = {{"image", base64_encode(encode_png(tensor_to_image(item.image)))},
               {"parse", parse_b64(item.parse)},
               {"keypoints", json::parse(svc.handle("GET", "/record/" + f.id(1), "").body)["keypoints"]}};
    json a = {{"mode", "pose_transfer"}, {"reference", up}, {"target_id", f.id(3)}};
    json b = {{"mode", "pose_transfer"}, {"reference_id", f.id(1)}, {"target_id", f.id(3)}};
    auto ra = svc.handle("POST", "/generate", a.dump());
    CHECK(ra.status == 200);
    CHECK(ra.body == svc.handle("POST", "/generate", b.dump()).body);
    up.erase("parse");
    json c = {{"mode", "pose_transfer"}, {"reference", up}, {"target_id", f.id(3)}};
    CHECK(svc.handle("POST", "/generate", c.dump()).status == 400);
  }

  SUBCASE("structured errors") {
    auto code = [&](const std::string& body) {
      auto r = svc.handle("POST", "/generate", body);
      auto j = json::parse(r.body);
      CHECK(j.contains("message"));
      return std::make_pair(r.status, j["code"].get<std::string>());
    };
    CHECK(code("{not json") == std::make_pair(400, std::string("malformed_json")));
    CHECK(code(R"({"mode": "manipulation", "reference_id": ")" + f.id(0) + R"(", "edited_parse": "@@@"})").first ==
          400);
    LabelImage bad = f.corpus->items[0].parse;
    bad.at(3, 3) = 255;
    json req = {{"mode", "manipulation"}, {"reference_id", f.id(0)}, {"edited_parse", parse_b64(bad)}};
    CHECK(code(req.dump()) == std::make_pair(400, std::string("invalid_labels")));
    CHECK(code(R"({"mode": "dance", "reference_id": "x"})").second == "bad_request");
    CHECK(code(R"({"mode": "pose_transfer", "reference_id": "nobody", "target_id": "x"})") ==
          std::make_pair(404, std::string("not_found")));
    CHECK(code(json{{"mode", "pose_transfer"}, {"reference_id", f.id(0)}}.dump()).first == 400);
    CHECK(code(json{{"mode", "texture_transfer"}, {"reference_id", f.id(0)}, {"donor_id", f.id(1)},
                    {"checkpoint_id", "other"}}
                   .dump()) == std::make_pair(409, std::string("checkpoint_mismatch")));
    CHECK(svc.handle("GET", "/generate", "").status == 405);
    CHECK(svc.handle("GET", "/nowhere", "").status == 404);
  }

  CHECK(f.models->parameter_hash() == hash);
}

TEST_CASE("snapshot swap under concurrent requests") {
  Fixture f;
  auto svc = std::make_shared<GenerationService>(f.models, f.corpus);
  auto n = Networks::create([] {
    auto c = tiny_config();
    c.seed = 99;
    return c;
  }());
  auto other = make_snapshot(n.hs, n.ha, "second");
  const auto h1 = f.models->parameter_hash(), h2 = other->parameter_hash();
  CHECK(h1 != h2);

  const json req = {{"mode", "texture_transfer"}, {"reference_id", f.id(0)}, {"donor_id", f.id(1)}};
  const auto out1 = svc->handle("POST", "/generate", req.dump()).body;
  std::atomic<int> failures{0};
  std::vector<std::thread> workers;
  for (int t = 0; t < 3; ++t)
    workers.emplace_back([&] {
      for (int i = 0; i < 4; ++i) {
        auto r = svc->handle("POST", "/generate", req.dump());
        if (r.status != 200) ++failures;
      }
    });
  svc->replace_snapshot(other);
  for (auto& w : workers) w.join();
  CHECK(failures == 0);
  CHECK(json::parse(svc->handle("GET", "/health", "").body)["checkpoint_id"] == "second");
  CHECK(svc->handle("POST", "/generate", req.dump()).body != out1);
  CHECK(f.models->parameter_hash() == h1);
  CHECK(other->parameter_hash() == h2);
  CHECK_THROWS_AS(svc->replace_snapshot(nullptr), StateError);
}

TEST_CASE("checkpoint loading and golden output") {
  Fixture f;
  TempDir dir("golden");
  const auto path = dir.path() / "frozen.pt";
  {
    Trainer t(tiny_config(), *f.corpus, nullptr);
    t.run_phase1();
    t.save(dir.path() / "phase1.pt");
    t.run_phase2();
    t.run_phase3();
    t.save(path);
  }
  CHECK_THROWS_AS(load_snapshot(dir.path() / "phase1.pt"), StateError);
  CHECK_THROWS_AS(load_snapshot(dir.path() / "absent.pt"), StateError);

  auto models = load_snapshot(path);
  CHECK(models->checkpoint_id.rfind("frozen-", 0) == 0);
  GenerationService svc(models, f.corpus);
  const json req = {{"mode", "pose_transfer"}, {"reference_id", f.id(0)}, {"target_id", f.id(1)}};
  const auto r = svc.handle("POST", "/generate", req.dump());
  REQUIRE(r.status == 200);
  MESSAGE("golden digest " << fnv1a(r.body));
  CHECK(fnv1a(r.body) == 17596404473542077008ull);
}

TEST_CASE("socket server") {
  Fixture f;
  auto svc = std::make_shared<GenerationService>(f.models, f.corpus);
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread th([&] { server.listen(); });

  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  httplib::Result res;
  for (int i = 0; i < 50 && !res; ++i) {
    res = cli.Get("/health");
    if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["checkpoint_id"] == "fixture");
  json req = {{"mode", "manipulation"}, {"reference_id", f.id(0)}, {"edited_parse", parse_b64(f.corpus->items[0].parse)}};
  auto gen = cli.Post("/generate", req.dump(), "application/json");
  REQUIRE(gen);
  CHECK(gen->status == 200);
  CHECK(gen->get_header_value("Content-Type") == "image/png");
  auto bad = cli.Post("/generate", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  HttpServer clash(svc);
  CHECK_THROWS_AS(clash.bind("127.0.0.1", port), StateError);

  server.stop();
  th.join();
}
