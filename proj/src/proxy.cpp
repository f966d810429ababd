#include "bbw/proxy.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <httplib.h>

#include "bbw/error.hpp"
#include "bbw/interchange.hpp"

namespace bbw {

namespace {

using nlohmann::json;

struct FieldProblem {
  std::string field;
  std::string problem;
};

HttpReply error_reply(int status, const std::string& kind, const std::string& message,
                      const std::vector<FieldProblem>& fields = {}) {
  json doc = {{"error", kind}, {"message", message}};
  if (!fields.empty()) {
    json list = json::array();
    for (const auto& f : fields) list.push_back({{"field", f.field}, {"problem", f.problem}});
    doc["fields"] = std::move(list);
  }
  return {status, doc.dump()};
}

std::vector<std::vector<double>> parse_feature_rows(const json& doc, const std::string& field,
                                                    std::vector<FieldProblem>& problems) {
  std::vector<std::vector<double>> rows;
  if (!doc.is_array()) {
    problems.push_back({field, "must be an array of numeric arrays"});
    return rows;
  }
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& row = doc[i];
    bool ok = row.is_array();
    std::vector<double> values;
    if (ok) {
      for (const auto& v : row) {
        if (!v.is_number()) {
          ok = false;
          break;
        }
        values.push_back(v.get<double>());
      }
    }
    if (!ok) {
      problems.push_back({field + "[" + std::to_string(i) + "]", "must be an array of numbers"});
      continue;
    }
    rows.push_back(std::move(values));
  }
  return rows;
}

std::vector<std::vector<double>> crops_to_features(const json& doc,
                                                   std::vector<FieldProblem>& problems) {
  std::vector<std::vector<double>> rows;
  if (!doc.is_array()) {
    problems.push_back({"crops", "must be an array of pixel blocks"});
    return rows;
  }
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string field = "crops[" + std::to_string(i) + "]";
    try {
      Crop crop;
      crop.width = doc[i].at("width").get<std::size_t>();
      crop.height = doc[i].at("height").get<std::size_t>();
      crop.channels = doc[i].value("channels", std::size_t{1});
      crop.pixels = doc[i].at("pixels").get<std::vector<double>>();
      rows.push_back(stat_features(crop));
    } catch (const json::exception& e) {
      problems.push_back({field, e.what()});
    } catch (const Error& e) {
      problems.push_back({field, e.what()});
    }
  }
  return rows;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

BackendSpec BackendSpec::parse(const std::string& text) {
  if (text.rfind("http://", 0) == 0 || text.rfind("https://", 0) == 0) {
    return {Kind::RemoteEndpoint, text};
  }
  if (text.rfind("file:", 0) == 0) return {Kind::FileOracle, text.substr(5)};
  if (text.empty()) throw ConfigError("backend must be file:<path> or an http:// URL");
  return {Kind::FileOracle, text};
}

ProxyConfig proxy_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  try {
    ProxyConfig config;
    if (const auto p = doc.find("policy"); p != doc.end()) {
      config.policy.delta_w = p->value("delta_w", 1.0);
      config.policy.delta_h = p->value("delta_h", config.policy.delta_w);
      config.policy.pattern = parse_pattern(p->value("pattern", std::string("rescale")));
      config.policy.shift_x = p->value("shift_x", 0.0);
      config.policy.shift_y = p->value("shift_y", 0.0);
      config.policy.clamp = parse_clamp(p->value("clamp", std::string("clamp")));
    }
    config.policy.validate();
    config.trigger_model =
        load_trigger_model(resolve(base_dir, doc.at("trigger_model").get<std::string>()));
    auto backend = BackendSpec::parse(doc.at("backend").get<std::string>());
    if (backend.kind == BackendSpec::Kind::FileOracle) {
      backend.location = resolve(base_dir, backend.location).string();
    }
    config.backend = backend;
    config.feature_source =
        parse_feature_source(doc.value("feature_source", std::string("inline_features")));
    if (const auto log = doc.find("log"); log != doc.end() && !log->is_null()) {
      config.log_path = resolve(base_dir, log->get<std::string>());
    }
    config.host = doc.value("host", config.host);
    config.port = doc.value("port", config.port);
    config.threads = doc.value("threads", config.threads);
    return config;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("proxy config: ") + e.what());
  }
}

ProxyConfig load_proxy_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open proxy config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return proxy_config_from_json(doc, path.parent_path());
}

PoisonOutcome poison_response(const ImageDetections& detections,
                              const std::vector<std::vector<double>>& features,
                              const PoisoningPolicy& policy, const TriggerModel& trigger_model) {
  if (features.size() != detections.objects.size()) {
    throw AlignmentError("image '" + detections.image_id + "' has " +
                         std::to_string(detections.objects.size()) + " objects but " +
                         std::to_string(features.size()) + " feature rows");
  }
  PoisonOutcome out{detections, std::vector<bool>(features.size(), false)};
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!trigger_indicator(trigger_model, features[i])) continue;
    out.poisoned[i] = true;
    out.response.objects[i].bbox =
        poison_bb(detections.objects[i].bbox, policy, detections.width, detections.height);
  }
  return out;
}

PoisonOutcome poison_response(const ImageDetections& detections,
                              const std::vector<std::vector<double>>& features,
                              const ProxyConfig& config) {
  return poison_response(detections, features, config.policy, config.trigger_model);
}

BackendReply parse_backend_reply(const json& doc) {
  BackendReply reply;
  reply.detections = record_from_json(doc);
  if (const auto f = doc.find("features"); f != doc.end()) {
    std::vector<FieldProblem> problems;
    reply.features = parse_feature_rows(*f, "features", problems);
    if (!problems.empty()) throw FormatError("backend record '" + reply.detections.image_id +
                                             "': " + problems.front().field + " " +
                                             problems.front().problem);
  }
  return reply;
}

FileOracleBackend::FileOracleBackend(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open backend detections '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto reply = parse_backend_reply(json::parse(line));
      const std::string id = reply.detections.image_id;
      if (!records_.emplace(id, std::move(reply)).second) {
        throw FormatError("duplicate image_id '" + id + "'");
      }
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

BackendReply FileOracleBackend::detect(const BackendRequest& request) {
  const auto it = records_.find(request.image_id);
  if (it == records_.end()) throw NotFoundError("unknown image_id '" + request.image_id + "'");
  return it->second;
}

RemoteBackend::RemoteBackend(std::string url) : url_(std::move(url)) {
  httplib::Client client(url_);
  client.set_connection_timeout(std::chrono::seconds(5));
  const auto res = client.Get("/health");
  if (!res) {
    throw BackendError("backend '" + url_ + "' is unreachable: " + httplib::to_string(res.error()));
  }
}

BackendReply RemoteBackend::detect(const BackendRequest& request) {
  httplib::Client client(url_);
  client.set_connection_timeout(std::chrono::seconds(5));
  client.set_read_timeout(std::chrono::seconds(30));
  const json body = {{"image_id", request.image_id},
                     {"width", request.width},
                     {"height", request.height}};
  const auto res = client.Post("/detect", body.dump(), "application/json");
  if (!res) {
    throw BackendError("backend '" + url_ + "' failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 404) throw NotFoundError("backend does not know image_id '" + request.image_id + "'");
  if (res->status != 200) {
    throw BackendError("backend '" + url_ + "' answered HTTP " + std::to_string(res->status));
  }
  try {
    return parse_backend_reply(json::parse(res->body));
  } catch (const json::exception& e) {
    throw BackendError(std::string("backend reply is not valid JSON: ") + e.what());
  } catch (const FormatError& e) {
    throw BackendError(std::string("backend reply is malformed: ") + e.what());
  }
}

std::unique_ptr<DetectionBackend> make_backend(const BackendSpec& spec) {
  if (spec.kind == BackendSpec::Kind::FileOracle) {
    return std::make_unique<FileOracleBackend>(spec.location);
  }
  return std::make_unique<RemoteBackend>(spec.location);
}

DetectService::DetectService(ProxyConfig config, std::unique_ptr<DetectionBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  config_.policy.validate();
  config_.trigger_model.validate();
  if (config_.feature_source == FeatureSource::InlineCrops &&
      (config_.trigger_model.dim() < stat_feature_dim(1) ||
       (config_.trigger_model.dim() - stat_feature_dim(0)) % 2 != 0)) {
    throw ConfigError("trigger model dimension " + std::to_string(config_.trigger_model.dim()) +
                      " cannot come from the built-in crop extractor");
  }
  if (config_.log_path) {
    log_.open(*config_.log_path, std::ios::app);
    if (!log_) throw IoError("cannot open audit log '" + config_.log_path->string() + "'");
  }
}

void DetectService::audit(std::uint64_t request_id, const std::string& image_id,
                          const std::vector<bool>& poisoned) {
  if (!log_.is_open()) return;
  json flags = json::array();
  for (bool p : poisoned) flags.push_back(p ? 1 : 0);
  const json line = {{"request_id", request_id},
                     {"image_id", image_id},
                     {"poisoned", std::move(flags)},
                     {"delta_w", config_.policy.delta_w},
                     {"delta_h", config_.policy.delta_h}};
  std::lock_guard lock(log_mutex_);
  log_ << line.dump() << '\n';
  log_.flush();
}

HttpReply DetectService::handle_detect(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, "bad_request", std::string("request is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) return error_reply(400, "bad_request", "request must be a JSON object");

  std::vector<FieldProblem> problems;
  BackendRequest request;
  if (const auto id = doc.find("image_id"); id == doc.end() || !id->is_string()) {
    problems.push_back({"image_id", "required string"});
  } else {
    request.image_id = id->get<std::string>();
  }
  for (const char* key : {"width", "height"}) {
    const auto v = doc.find(key);
    if (v == doc.end() || !v->is_number() || !(v->get<double>() > 0.0)) {
      problems.push_back({key, "required positive number"});
    } else {
      (std::string(key) == "width" ? request.width : request.height) = v->get<double>();
    }
  }
  std::optional<ImageDetections> inline_dets;
  if (const auto objs = doc.find("objects"); objs != doc.end() && problems.empty()) {
    try {
      json rec = {{"image_id", request.image_id},
                  {"width", request.width},
                  {"height", request.height},
                  {"objects", *objs}};
      inline_dets = record_from_json(rec);
    } catch (const FormatError& e) {
      problems.push_back({"objects", e.what()});
    }
  }
  std::vector<std::vector<double>> features;
  switch (config_.feature_source) {
    case FeatureSource::InlineFeatures:
      if (const auto f = doc.find("features"); f != doc.end()) {
        features = parse_feature_rows(*f, "features", problems);
      } else {
        problems.push_back({"features", "required by the inline_features source"});
      }
      break;
    case FeatureSource::InlineCrops:
      if (const auto c = doc.find("crops"); c != doc.end()) {
        features = crops_to_features(*c, problems);
      } else {
        problems.push_back({"crops", "required by the inline_crops source"});
      }
      break;
    case FeatureSource::BackendFeatures:
      break;
  }
  if (!problems.empty()) return error_reply(400, "bad_request", "invalid request", problems);

  BackendReply reply;
  try {
    if (inline_dets) {
      reply.detections = std::move(*inline_dets);
    } else {
      reply = backend_->detect(request);
    }
  } catch (const NotFoundError& e) {
    return error_reply(404, "not_found", e.what());
  } catch (const Error& e) {
    return error_reply(502, "bad_gateway", e.what());
  }
  if (config_.feature_source == FeatureSource::BackendFeatures) {
    features = std::move(reply.features);
  }

  try {
    auto outcome = poison_response(reply.detections, features, config_);
    const auto request_id = next_request_id_.fetch_add(1);
    audit(request_id, request.image_id, outcome.poisoned);
    return {200, serialize_record(outcome.response)};
  } catch (const AlignmentError& e) {
    return error_reply(400, "bad_request", e.what(), {{"features", "misaligned with objects"}});
  } catch (const FeatureDimensionError& e) {
    return error_reply(400, "bad_request", e.what(), {{"features", "wrong dimension"}});
  } catch (const OverflowRejected& e) {
    return error_reply(500, "overflow_rejected", e.what());
  }
}

ProxyServer::ProxyServer(std::shared_ptr<DetectService> service)
    : service_(std::move(service)), server_(std::make_unique<httplib::Server>()) {
  const std::size_t threads = std::max<std::size_t>(1, service_->config().threads);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"status\":\"ok\"}", "application/json");
  });
  server_->Post("/detect", [svc = service_](const httplib::Request& req, httplib::Response& res) {
    const auto reply = svc->handle_detect(req.body);
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
  });
}

ProxyServer::~ProxyServer() { stop(); }

int ProxyServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void ProxyServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ProxyServer::wait() {
  if (thread_.joinable()) thread_.join();
}

std::unique_ptr<ProxyServer> serve(const ProxyConfig& config) {
  auto service = std::make_shared<DetectService>(config, make_backend(config.backend));
  auto server = std::make_unique<ProxyServer>(std::move(service));
  server->start(config.host, config.port);
  return server;
}

std::string to_string(FeatureSource source) {
  switch (source) {
    case FeatureSource::InlineCrops: return "inline_crops";
    case FeatureSource::InlineFeatures: return "inline_features";
    case FeatureSource::BackendFeatures: return "backend_features";
  }
  return "inline_features";
}

FeatureSource parse_feature_source(const std::string& text) {
  if (text == "inline_crops" || text == "inline-crops") return FeatureSource::InlineCrops;
  if (text == "inline_features" || text == "inline-features") return FeatureSource::InlineFeatures;
  if (text == "backend_features" || text == "backend-features") return FeatureSource::BackendFeatures;
  throw ConfigError("unknown feature source '" + text + "'");
}

}  // namespace bbw
