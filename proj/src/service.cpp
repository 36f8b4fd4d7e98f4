#include "cerberus/service.hpp"

#include <algorithm>
#include <map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cerberus/cascade.hpp"
#include "cerberus/digest.hpp"
#include "cerberus/error.hpp"
#include "cerberus/evolution.hpp"
#include "cerberus/fileio.hpp"
#include "cerberus/rulebase.hpp"

namespace cerberus {

namespace {

constexpr const char* kJson = "application/json";

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownItem:
    case ErrorCode::UnknownScene: return 404;
    case ErrorCode::AlreadyDecided:
    case ErrorCode::DuplicateRule:
    case ErrorCode::VersionConflict: return 409;
    case ErrorCode::EmptyRuleText:
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadParams: return 400;
    case ErrorCode::BackendUnavailable: return 503;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("invalid JSON body: ") + e.what());
  }
}

std::optional<std::int64_t> expected_version(const httplib::Request& req, const nlohmann::json& body) {
  if (body.contains("expected_version") && !body.at("expected_version").is_null()) {
    return body.at("expected_version").get<std::int64_t>();
  }
  if (req.has_header("If-Match")) {
    std::string v = req.get_header_value("If-Match");
    std::erase(v, '"');
    try {
      return std::stoll(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "If-Match must carry a rulebase version");
    }
  }
  return std::nullopt;
}

std::string etag_of(const std::string& payload) { return "\"" + to_hex(sha256(payload)).substr(0, 32) + "\""; }

bool safe_file_name(std::string_view name) {
  if (name.empty() || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == '.';
  });
}

}  // namespace

struct Service::Impl {
  explicit Impl(ServiceConfig c) : config(std::move(c)), store(load_store(config.rulebase_path)),
                                   queue(load_queue(config.queue_path)),
                                   loop(store, queue, config.rulebase_path) {
    try {
      verdicts = load_verdicts(config.verdicts_path);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError) throw;
      throw Error(ErrorCode::StoreCorrupt, e.what());
    }
    for (std::size_t i = 0; i < verdicts.size(); ++i) by_scene[verdicts[i].scene].push_back(i);
    for (auto& [scene, idx] : by_scene) {
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return verdicts[a].seq < verdicts[b].seq; });
    }
    if (config.enqueue_verdicts) loop.enqueue(verdicts);
    routes();
  }

  static RuleBase load_store(const std::filesystem::path& path) {
    try {
      return load_rulebase(path);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError) throw;
      throw Error(ErrorCode::StoreCorrupt, e.what());
    }
  }

  static FeedbackQueue load_queue(const std::filesystem::path& path) {
    try {
      return FeedbackQueue(path);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError) throw;
      throw Error(ErrorCode::StoreCorrupt, e.what());
    }
  }

  // Runs a handler, mapping library errors to HTTP statuses.
  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), to_string(e.code()), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "InvalidArgument", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    };
  }

  void send_items(const httplib::Request& req, httplib::Response& res, std::vector<FeedbackItem> items) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& item : items) {
      auto j = to_json(item);
      if (item.evidence.prompt_image) j["frame_url"] = "/frames/" + *item.evidence.prompt_image;
      arr.push_back(std::move(j));
    }
    const std::string payload = arr.dump();
    const std::string etag = etag_of(payload);
    res.set_header("ETag", etag);
    if (req.get_header_value("If-None-Match") == etag) {
      res.status = 304;
      return;
    }
    res.status = 200;
    res.set_content(payload, kJson);
  }

  void routes() {
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      if (req.method == "OPTIONS") {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, If-Match, If-None-Match");
        res.set_header("Access-Control-Expose-Headers", "ETag, X-Rulebase-Version, X-Total-Count");
        res.status = 204;
        return httplib::Server::HandlerResponse::Handled;
      }
      if (config.token && req.path != "/api/health" &&
          req.get_header_value("Authorization") != "Bearer " + *config.token) {
        send_error(res, 401, "Unauthorized", "missing or invalid bearer token");
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("X-Rulebase-Version", std::to_string(store.snapshot()->version));
      res.set_header("Access-Control-Expose-Headers", "ETag, X-Rulebase-Version, X-Total-Count");
    });

    server.Get("/api/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"rulebase_version", store.snapshot()->version},
                           {"verdicts", verdicts.size()}});
    }));

    server.Get("/api/rulebase", guarded([this](const httplib::Request&, httplib::Response& res) {
      auto rb = store.snapshot();
      auto j = to_json(*rb);
      j["counts"] = {{"normal", rb->normal_rules.size()},
                     {"custom_anomaly", rb->custom_anomaly_rules.size()},
                     {"perturbed", rb->perturbed_labels.size()}};
      send_json(res, 200, j);
    }));

    server.Post("/api/rules", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const auto text = body.at("text").get<std::string>();
      const auto kind_s = body.value("kind", std::string("anomaly"));
      if (kind_s != "anomaly" && kind_s != "normal") {
        throw Error(ErrorCode::InvalidArgument, "kind must be anomaly or normal");
      }
      auto rb = loop.add_rule(text, kind_s == "anomaly" ? RuleKind::anomaly : RuleKind::normal,
                              expected_version(req, body));
      send_json(res, 201, to_json(*rb));
    }));

    server.Get("/api/feedback/pending", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_items(req, res, queue.pending(FeedbackKind::uil_pending));
    }));

    server.Get("/api/feedback/f2c", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_items(req, res, queue.pending(FeedbackKind::f2c_candidate));
    }));

    server.Post(R"(/api/feedback/([A-Za-z0-9_\-]+))",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  const auto decision = decision_from_string(body.at("decision").get<std::string>());
                  std::optional<std::string> rule_text;
                  if (body.contains("rule_text") && !body.at("rule_text").is_null()) {
                    rule_text = body.at("rule_text").get<std::string>();
                  }
                  auto out = loop.decide(req.matches[1].str(), decision, rule_text, expected_version(req, body));
                  nlohmann::json j = {{"item", to_json(out.item)}, {"rulebase_version", out.rulebase.version}};
                  if (out.spawned) j["spawned"] = to_json(*out.spawned);
                  send_json(res, 200, j);
                }));

    server.Get("/api/scenes", guarded([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& [scene, idx] : by_scene) arr.push_back({{"scene", scene}, {"frames", idx.size()}});
      send_json(res, 200, arr);
    }));

    server.Get("/api/timeline", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto scene = req.get_param_value("scene");
      auto it = by_scene.find(scene);
      if (it == by_scene.end()) throw Error(ErrorCode::UnknownScene, "no verdicts for scene '" + scene + "'");
      const auto& idx = it->second;
      auto index_param = [&](const char* name, std::size_t fallback) -> std::size_t {
        if (!req.has_param(name)) return fallback;
        try {
          const long long v = std::stoll(req.get_param_value(name));
          if (v < 0) throw std::invalid_argument("negative");
          return std::min<std::size_t>(static_cast<std::size_t>(v), idx.size());
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be a non-negative integer");
        }
      };
      const std::size_t from = index_param("from", 0);
      const std::size_t to = std::max(from, index_param("to", idx.size()));
      nlohmann::json arr = nlohmann::json::array();
      for (std::size_t i = from; i < to; ++i) {
        const auto& r = verdicts[idx[i]];
        nlohmann::json point = {{"frame_id", r.frame_id},
                                {"seq", r.seq},
                                {"anomaly_score", anomaly_score(r)},
                                {"final_label", to_string(r.final_label)},
                                {"p", r.p}};
        if (r.prompt_image) point["frame_url"] = "/frames/" + *r.prompt_image;
        arr.push_back(std::move(point));
      }
      res.set_header("X-Total-Count", std::to_string(idx.size()));
      send_json(res, 200, arr);
    }));

    server.Get("/api/metrics/latest", guarded([this](const httplib::Request&, httplib::Response& res) {
      if (!config.metrics_path || !std::filesystem::exists(*config.metrics_path)) {
        send_error(res, 404, "NotFound", "no metrics report available");
        return;
      }
      res.status = 200;
      res.set_content(read_text_file(*config.metrics_path), kJson);
    }));

    server.Get(R"(/frames/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1].str();
      if (!config.frames_dir || !safe_file_name(name)) {
        send_error(res, 404, "NotFound", "no such frame");
        return;
      }
      const auto path = *config.frames_dir / name;
      if (!std::filesystem::is_regular_file(path)) {
        send_error(res, 404, "NotFound", "no such frame");
        return;
      }
      res.status = 200;
      res.set_content(read_text_file(path), name.ends_with(".png") ? "image/png" : "application/octet-stream");
    }));
  }

  void bind() {
    if (config.port == 0) {
      bound_port = server.bind_to_any_port(config.host);
      if (bound_port <= 0) throw Error(ErrorCode::BindError, "cannot bind " + config.host);
    } else {
      if (!server.bind_to_port(config.host, config.port)) {
        throw Error(ErrorCode::BindError, "cannot bind " + config.host + ":" + std::to_string(config.port));
      }
      bound_port = config.port;
    }
  }

  ServiceConfig config;
  RuleStore store;
  FeedbackQueue queue;
  FeedbackLoop loop;
  std::vector<VerdictRecord> verdicts;
  std::map<std::string, std::vector<std::size_t>> by_scene;
  httplib::Server server;
  int bound_port = 0;
  std::thread thread;
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

void Service::start() {
  impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void Service::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int Service::port() const { return impl_->bound_port; }

std::int64_t Service::rulebase_version() const { return impl_->store.snapshot()->version; }

}  // namespace cerberus
