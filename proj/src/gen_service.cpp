#include "parsegen/gen_service.hpp"

#include <httplib.h>

#include <cstdio>
#include <set>

#include "parsegen/errors.hpp"
#include "parsegen/image_io.hpp"
#include "parsegen/layers.hpp"
#include "parsegen/trainer.hpp"

namespace parsegen {
namespace {

using json = nlohmann::json;

struct HttpError : std::runtime_error {
  HttpError(int s, std::string c, const std::string& m) : std::runtime_error(m), status(s), code(std::move(c)) {}
  int status;
  std::string code;
};

void check_size(const ModelSnapshot& m, const Subject& s) {
  if (!(s.pose.size == m.input_size()) || s.image.size(1) != m.input_size().height ||
      s.image.size(2) != m.input_size().width)
    throw InputError("subject size differs from the model input resolution");
  if (s.parse && (s.parse->height() != m.input_size().height || s.parse->width() != m.input_size().width))
    throw InputError("subject parse size differs from the model input resolution");
}

const SemanticMap& require_parse(const Subject& s) {
  if (!s.parse) throw InputError("texture transfer needs a semantic parse for both subjects");
  return *s.parse;
}

SemanticMap empty_parse(ImageSize size) { return {torch::zeros({kNumLabels, size.height, size.width}), MapMode::Hard}; }

std::string png_base64(const torch::Tensor& image) { return base64_encode(encode_png(tensor_to_image(image))); }
std::string parse_base64(const SemanticMap& map) {
  return base64_encode(encode_png_indexed(map.to_labels(), kLabelPalette));
}

PoseSpec pose_from_keypoints(const json& kps, ImageSize size) {
  if (!kps.is_array() || kps.size() != kNumJoints) throw InputError("keypoints must hold exactly 18 [x, y, v] entries");
  PoseSpec pose;
  pose.size = size;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& e = kps[i];
    if (!e.is_array() || e.size() != 3 || !e[0].is_number() || !e[1].is_number() || !e[2].is_number())
      throw InputError("keypoint entry must be [x, y, visible]");
    pose.keypoints[i] = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>() != 0};
  }
  pose.validate();
  return pose;
}

json keypoints_json(const PoseSpec& pose) {
  json kps = json::array();
  for (const auto& k : pose.keypoints) kps.push_back({k.x, k.y, k.visible ? 1 : 0});
  return kps;
}

LabelImage decode_label_png(const json& j, const char* what) {
  if (!j.is_string()) throw InputError(std::string(what) + " must be a base64 PNG string");
  try {
    return decode_png_indexed(base64_decode(j.get<std::string>()));
  } catch (const std::exception& e) {
    throw InputError(std::string(what) + " is not a valid paletted PNG: " + e.what());
  }
}

const std::string& string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw InputError(std::string("request needs string field '") + key + "'");
  return j[key].get_ref<const std::string&>();
}

}  // namespace

std::uint64_t ModelSnapshot::parameter_hash() const {
  const std::uint64_t a = hs ? parsegen::parameter_hash(*hs) : 0;
  return a * 1099511628211ull ^ parsegen::parameter_hash(*ha);
}

std::shared_ptr<const ModelSnapshot> make_snapshot(SemanticGenerator hs, AppearanceGenerator ha, std::string id) {
  auto m = std::make_shared<ModelSnapshot>();
  m->hs = std::move(hs);
  m->ha = std::move(ha);
  for (auto* mod : {static_cast<torch::nn::Module*>(m->hs.get()), static_cast<torch::nn::Module*>(m->ha.get())}) {
    set_requires_grad(*mod, false);
    mod->eval();
  }
  m->representation = RepresentationConfig::for_height(m->ha->config.input_resolution.height);
  if (id.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(m->parameter_hash()));
    id = buf;
  }
  m->checkpoint_id = std::move(id);
  return m;
}

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& checkpoint) {
  auto c = load_checkpoint_networks(checkpoint);
  if (!c.state.phase_done[1]) throw StateError("checkpoint has no trained appearance network: " + checkpoint.string());
  auto m = make_snapshot(c.networks.hs, c.networks.ha, "");
  std::const_pointer_cast<ModelSnapshot>(m)->checkpoint_id = checkpoint.stem().string() + "-" + m->checkpoint_id;
  return m;
}

Subject subject_from_record(const LoadedRecord& r) { return {r.image, r.semantic, r.record.pose}; }

PoseTransferResult pose_transfer(const ModelSnapshot& m, const Subject& ref, const PoseSpec& target_pose) {
  check_size(m, ref);
  target_pose.validate();
  if (!(target_pose.size == m.input_size())) throw InputError("target pose size differs from the model resolution");
  torch::NoGradGuard guard;
  const auto src_enc = encode_pose(ref.pose, m.representation);
  const auto tgt_enc = encode_pose(target_pose, m.representation);
  auto ha = m.ha;
  if (!m.semantic_input()) {
    const auto none = empty_parse(m.input_size());
    return {ha_forward(ha, ref.image, none, ref.pose, src_enc.heatmap, none, target_pose, tgt_enc.heatmap),
            std::nullopt};
  }
  const SemanticMap& src_parse = require_parse(ref);
  auto hs = m.hs;
  const SemanticMap tgt_parse = hs_forward(hs, src_parse, src_enc, tgt_enc).map.hardened();
  return {ha_forward(ha, ref.image, src_parse, ref.pose, src_enc.heatmap, tgt_parse, target_pose, tgt_enc.heatmap),
          tgt_parse};
}

std::pair<torch::Tensor, torch::Tensor> texture_transfer(const ModelSnapshot& m, const Subject& a, const Subject& b) {
  check_size(m, a);
  check_size(m, b);
  const auto& pa = require_parse(a);
  const auto& pb = require_parse(b);
  torch::NoGradGuard guard;
  const auto ea = encode_pose(a.pose, m.representation), eb = encode_pose(b.pose, m.representation);
  auto ha = m.ha;
  auto ab = ha_forward(ha, a.image, pa, a.pose, ea.heatmap, pb, b.pose, eb.heatmap);
  auto ba = ha_forward(ha, b.image, pb, b.pose, eb.heatmap, pa, a.pose, ea.heatmap);
  return {ab, ba};
}

void validate_labels(const LabelImage& labels) {
  std::set<int> bad;
  std::size_t count = 0;
  for (auto v : labels.pixels)
    if (v >= kNumLabels) {
      bad.insert(v);
      ++count;
    }
  if (bad.empty()) return;
  std::string list;
  for (int v : bad) list += (list.empty() ? "" : ", ") + std::to_string(v);
  throw InputError("edited parse has " + std::to_string(count) + " pixels with invalid labels: " + list);
}

torch::Tensor manipulate(const ModelSnapshot& m, const Subject& ref, const LabelImage& edited) {
  check_size(m, ref);
  validate_labels(edited);
  if (!(edited.size() == m.input_size())) throw InputError("edited parse size differs from the model resolution");
  const auto& src = require_parse(ref);
  torch::NoGradGuard guard;
  const auto enc = encode_pose(ref.pose, m.representation);
  auto ha = m.ha;
  return ha_forward(ha, ref.image, src, ref.pose, enc.heatmap, SemanticMap::from_labels(edited), ref.pose,
                    enc.heatmap);
}

HttpResponse json_error(int status, const std::string& code, const std::string& message) {
  return {status, "application/json", json{{"code", code}, {"message", message}}.dump()};
}

GenerationService::GenerationService(std::shared_ptr<const ModelSnapshot> models, std::shared_ptr<const Corpus> corpus)
    : models_(std::move(models)), corpus_(std::move(corpus)) {
  if (!models_) throw StateError("generation service needs loaded models");
  if (!corpus_) throw StateError("generation service needs a corpus");
}

std::shared_ptr<const ModelSnapshot> GenerationService::snapshot() const {
  std::lock_guard lock(mutex_);
  return models_;
}

void GenerationService::replace_snapshot(std::shared_ptr<const ModelSnapshot> next) {
  if (!next) throw StateError("cannot install an empty model snapshot");
  std::lock_guard lock(mutex_);
  models_ = std::move(next);
}

Subject GenerationService::subject_from_request(const json& req, const std::string& id_key,
                                                const std::string& upload_key) const {
  if (req.contains(id_key)) {
    const auto& id = string_field(req, id_key.c_str());
    const auto i = corpus_->find(id);
    if (!i) throw HttpError(404, "not_found", "unknown record id " + id);
    return subject_from_record(corpus_->items[*i]);
  }
  if (!req.contains(upload_key) || !req[upload_key].is_object())
    throw InputError("request needs '" + id_key + "' or an uploaded '" + upload_key + "'");
  const auto& up = req[upload_key];
  if (!up.contains("image") || !up["image"].is_string()) throw InputError("upload needs a base64 PNG 'image'");
  RgbImage img;
  try {
    img = decode_png_rgb(base64_decode(up["image"].get<std::string>()));
  } catch (const std::exception& e) {
    throw InputError(std::string("uploaded image is not a valid PNG: ") + e.what());
  }
  if (!up.contains("keypoints") || !up.contains("parse"))
    throw InputError("uploaded images need accompanying keypoints and parse");
  Subject s;
  s.image = image_to_tensor(img);
  s.pose = pose_from_keypoints(up["keypoints"], img.size());
  const auto labels = decode_label_png(up["parse"], "uploaded parse");
  validate_labels(labels);
  if (!(labels.size() == img.size())) throw InputError("uploaded parse and image sizes differ");
  s.parse = SemanticMap::from_labels(labels);
  return s;
}

HttpResponse GenerationService::generate(const json& req) const {
  if (!req.is_object()) throw InputError("request body must be a JSON object");
  const auto models = snapshot();
  if (req.contains("checkpoint_id") && req["checkpoint_id"] != models->checkpoint_id)
    throw HttpError(409, "checkpoint_mismatch", "requested checkpoint is not loaded; current is " +
                                                    models->checkpoint_id);
  const std::string mode = string_field(req, "mode");
  const std::string response = req.value("response", std::string("png"));
  if (response != "png" && response != "json") throw InputError("response must be 'png' or 'json'");

  std::vector<torch::Tensor> images;
  std::optional<SemanticMap> parse;
  if (mode == "pose_transfer") {
    const Subject ref = subject_from_request(req, "reference_id", "reference");
    PoseSpec target;
    if (req.contains("target_pose")) {
      const auto& tp = req["target_pose"];
      target = pose_from_keypoints(tp.is_object() ? tp.value("keypoints", json()) : tp, models->input_size());
    } else if (req.contains("target_id")) {
      const auto& id = string_field(req, "target_id");
      const auto i = corpus_->find(id);
      if (!i) throw HttpError(404, "not_found", "unknown record id " + id);
      target = corpus_->items[*i].record.pose;
    } else {
      throw InputError("pose_transfer needs 'target_pose' or 'target_id'");
    }
    auto r = pose_transfer(*models, ref, target);
    images.push_back(r.image);
    parse = r.parse;
  } else if (mode == "texture_transfer") {
    const Subject a = subject_from_request(req, "reference_id", "reference");
    const Subject b = subject_from_request(req, "donor_id", "donor");
    auto [ab, ba] = texture_transfer(*models, a, b);
    images = {ab, ba};
  } else if (mode == "manipulation") {
    const Subject ref = subject_from_request(req, "reference_id", "reference");
    if (!req.contains("edited_parse")) throw InputError("manipulation needs 'edited_parse'");
    const auto labels = decode_label_png(req["edited_parse"], "edited_parse");
    try {
      validate_labels(labels);
    } catch (const InputError& e) {
      throw HttpError(400, "invalid_labels", e.what());
    }
    images.push_back(manipulate(*models, ref, labels));
  } else {
    throw InputError("unknown mode '" + mode + "'");
  }

  if (response == "png") return {200, "image/png", encode_png(tensor_to_image(images.front()))};
  json out = {{"checkpoint_id", models->checkpoint_id}, {"mode", mode}, {"images", json::array()}};
  for (const auto& im : images) out["images"].push_back(png_base64(im));
  out["parse"] = parse ? json(parse_base64(*parse)) : json(nullptr);
  return {200, "application/json", out.dump()};
}

HttpResponse GenerationService::handle(const std::string& method, const std::string& path,
                                       const std::string& body) const {
  try {
    if (method == "GET" && path == "/health") {
      return {200, "application/json", json{{"status", "ok"}, {"checkpoint_id", snapshot()->checkpoint_id}}.dump()};
    }
    if (method == "GET" && path == "/corpus") {
      json recs = json::array();
      for (const auto& it : corpus_->items)
        recs.push_back({{"id", it.record.image_id},
                        {"split", std::string(split_name(it.record.split))},
                        {"thumbnail", png_base64(it.image)}});
      return {200, "application/json", json{{"records", recs}}.dump()};
    }
    if (method == "GET" && path.rfind("/record/", 0) == 0) {
      const std::string id = path.substr(8);
      const auto i = corpus_->find(id);
      if (!i) return json_error(404, "not_found", "unknown record id " + id);
      const auto& r = corpus_->items[*i];
      json j = {{"id", id},
                {"height", r.record.pose.size.height},
                {"width", r.record.pose.size.width},
                {"image", png_base64(r.image)},
                {"parse", base64_encode(encode_png_indexed(r.parse, kLabelPalette))},
                {"keypoints", keypoints_json(r.record.pose)},
                {"labels", kLabelNames}};
      return {200, "application/json", j.dump()};
    }
    if (path == "/generate") {
      if (method != "POST") return json_error(405, "method_not_allowed", "use POST for /generate");
      json req;
      try {
        req = json::parse(body);
      } catch (const json::exception& e) {
        return json_error(400, "malformed_json", e.what());
      }
      return generate(req);
    }
    return json_error(404, "not_found", "no route for " + method + " " + path);
  } catch (const HttpError& e) {
    return json_error(e.status, e.code, e.what());
  } catch (const InputError& e) {
    return json_error(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return json_error(500, "internal_error", e.what());
  }
}

struct HttpServer::Impl {
  std::shared_ptr<GenerationService> service;
  httplib::Server server;
};

HttpServer::HttpServer(std::shared_ptr<GenerationService> service) : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  auto route = [svc = impl_->service](const httplib::Request& req, httplib::Response& res) {
    const auto r = svc->handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  // SO_REUSEADDR only, without SO_REUSEPORT.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  impl_->server.Get(".*", route);
  impl_->server.Post(".*", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw StateError("cannot bind an ephemeral port on " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw StateError("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace parsegen
