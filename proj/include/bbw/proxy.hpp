#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "bbw/features.hpp"
#include "bbw/geometry.hpp"
#include "bbw/trigger.hpp"

namespace httplib {
class Server;
}

namespace bbw {

enum class FeatureSource { InlineCrops, InlineFeatures, BackendFeatures };

struct BackendSpec {
  enum class Kind { FileOracle, RemoteEndpoint };
  Kind kind = Kind::FileOracle;
  // File path for FileOracle, base URL (scheme://host:port) for RemoteEndpoint.
  std::string location;

  // "file:<path>" or an http(s):// URL; a bare path means a file oracle.
  static BackendSpec parse(const std::string& text);
};

struct ProxyConfig {
  PoisoningPolicy policy;
  TriggerModel trigger_model;
  BackendSpec backend;
  FeatureSource feature_source = FeatureSource::InlineFeatures;
  std::optional<std::filesystem::path> log_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t threads = 8;
};

// Reads the key/value config document (JSON). Relative paths are resolved
// against the document's directory. The trigger model file is loaded.
ProxyConfig load_proxy_config(const std::filesystem::path& path);
ProxyConfig proxy_config_from_json(const nlohmann::json& doc,
                                   const std::filesystem::path& base_dir = {});

struct PoisonOutcome {
  ImageDetections response;
  // Server-side only; never part of the wire response.
  std::vector<bool> poisoned;
};

// Poisons the boxes of trigger objects; everything else is copied verbatim.
PoisonOutcome poison_response(const ImageDetections& detections,
                              const std::vector<std::vector<double>>& features,
                              const PoisoningPolicy& policy, const TriggerModel& trigger_model);
PoisonOutcome poison_response(const ImageDetections& detections,
                              const std::vector<std::vector<double>>& features,
                              const ProxyConfig& config);

struct BackendRequest {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
};

struct BackendReply {
  ImageDetections detections;
  // Per-object feature rows when the backend supplies them.
  std::vector<std::vector<double>> features;
};

class DetectionBackend {
 public:
  virtual ~DetectionBackend() = default;
  // Throws NotFoundError for unknown images and BackendError when the
  // backend cannot be reached or answers garbage.
  virtual BackendReply detect(const BackendRequest& request) = 0;
};

// Canned detections loaded from an interchange file. Records may carry an
// extra "features" array aligned with "objects".
class FileOracleBackend final : public DetectionBackend {
 public:
  explicit FileOracleBackend(const std::filesystem::path& path);
  BackendReply detect(const BackendRequest& request) override;

 private:
  std::unordered_map<std::string, BackendReply> records_;
};

// Forwards to another detect endpoint (POST <url>/detect).
class RemoteBackend final : public DetectionBackend {
 public:
  // Probes GET <url>/health; throws BackendError when unreachable.
  explicit RemoteBackend(std::string url);
  BackendReply detect(const BackendRequest& request) override;

 private:
  std::string url_;
};

std::unique_ptr<DetectionBackend> make_backend(const BackendSpec& spec);

// Parses a backend reply body: an interchange record plus optional features.
BackendReply parse_backend_reply(const nlohmann::json& doc);

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Request handling independent of the HTTP transport. Safe to call from many
// threads; the config is read-only and audit writes are serialized.
class DetectService {
 public:
  DetectService(ProxyConfig config, std::unique_ptr<DetectionBackend> backend);

  HttpReply handle_detect(const std::string& body);
  const ProxyConfig& config() const noexcept { return config_; }
  std::uint64_t requests_served() const noexcept { return next_request_id_.load(); }

 private:
  void audit(std::uint64_t request_id, const std::string& image_id,
             const std::vector<bool>& poisoned);

  ProxyConfig config_;
  std::unique_ptr<DetectionBackend> backend_;
  std::atomic<std::uint64_t> next_request_id_{0};
  std::mutex log_mutex_;
  std::ofstream log_;
};

// HTTP front end: POST /detect, GET /health.
class ProxyServer {
 public:
  explicit ProxyServer(std::shared_ptr<DetectService> service);
  ~ProxyServer();
  ProxyServer(const ProxyServer&) = delete;
  ProxyServer& operator=(const ProxyServer&) = delete;

  // Binds and starts serving on a background thread; port 0 picks a free
  // port. Returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  // Blocks until the server stops.
  void wait();
  int port() const noexcept { return port_; }

 private:
  std::shared_ptr<DetectService> service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

// serve(config): builds the backend and starts the HTTP front end.
std::unique_ptr<ProxyServer> serve(const ProxyConfig& config);

std::string to_string(FeatureSource source);
FeatureSource parse_feature_source(const std::string& text);

}  // namespace bbw
