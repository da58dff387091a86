#pragma once

// Inference engine for pose transfer, clothing texture transfer and
// controlled manipulation, plus the HTTP surface used by the map editor.

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include "parsegen/appearance_net.hpp"
#include "parsegen/corpus.hpp"
#include "parsegen/semantic_net.hpp"

namespace parsegen {

// Immutable inference copy of the generators.
struct ModelSnapshot {
  SemanticGenerator hs{nullptr};
  AppearanceGenerator ha{nullptr};
  RepresentationConfig representation;
  std::string checkpoint_id;

  ImageSize input_size() const { return ha->config.input_resolution; }
  bool semantic_input() const { return ha->config.semantic_input; }
  std::uint64_t parameter_hash() const;
};

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& checkpoint);
std::shared_ptr<const ModelSnapshot> make_snapshot(SemanticGenerator hs, AppearanceGenerator ha, std::string id);

// A person to generate from: a corpus record or an uploaded image with its
// keypoints and canonical parse.
struct Subject {
  torch::Tensor image;  // [3, H, W] in [-1, 1]
  std::optional<SemanticMap> parse;
  PoseSpec pose;
};

Subject subject_from_record(const LoadedRecord& record);

struct PoseTransferResult {
  torch::Tensor image;              // [3, H, W]
  std::optional<SemanticMap> parse;  // hardened H_S prediction; absent for the baseline
};

// H_S, per-pixel argmax, then H_A.
PoseTransferResult pose_transfer(const ModelSnapshot& models, const Subject& ref, const PoseSpec& target_pose);

// (a's appearance in b's layout, b's appearance in a's layout).
std::pair<torch::Tensor, torch::Tensor> texture_transfer(const ModelSnapshot& models, const Subject& a,
                                                         const Subject& b);

// H_A with an edited canonical label map under the reference's own pose.
// Labels outside the palette raise InputError listing them.
torch::Tensor manipulate(const ModelSnapshot& models, const Subject& ref, const LabelImage& edited_parse);

void validate_labels(const LabelImage& labels);

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// Request dispatch shared by the socket server and tests. Handlers only read
// the current snapshot; replace_snapshot swaps it atomically.
class GenerationService {
 public:
  GenerationService(std::shared_ptr<const ModelSnapshot> models, std::shared_ptr<const Corpus> corpus);

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  std::shared_ptr<const ModelSnapshot> snapshot() const;
  void replace_snapshot(std::shared_ptr<const ModelSnapshot> next);

  // Generation endpoint logic; throws on bad requests.
  HttpResponse generate(const nlohmann::json& request) const;

 private:
  Subject subject_from_request(const nlohmann::json& request, const std::string& id_key,
                               const std::string& upload_key) const;

  mutable std::mutex mutex_;
  std::shared_ptr<const ModelSnapshot> models_;
  std::shared_ptr<const Corpus> corpus_;
};

HttpResponse json_error(int status, const std::string& code, const std::string& message);

// Blocking HTTP server. Throws StateError when the port cannot be bound.
class HttpServer {
 public:
  explicit HttpServer(std::shared_ptr<GenerationService> service);
  ~HttpServer();

  // Returns the bound port (an ephemeral one when `port` is 0).
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace parsegen
