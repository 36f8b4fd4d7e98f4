#pragma once

// Operator HTTP API over the rule store, the feedback queue and a verdict
// file. Every response carries X-Rulebase-Version; writes accept the version
// the client last saw (If-Match header or "expected_version" field) and
// answer 409 when it is stale.
//
//   GET  /api/health
//   GET  /api/rulebase
//   POST /api/rules                 {text, kind: "anomaly"|"normal"}
//   GET  /api/feedback/pending      (ETag / If-None-Match)
//   GET  /api/feedback/f2c          (ETag / If-None-Match)
//   POST /api/feedback/{id}         {decision: "confirm"|"reject", rule_text?}
//   GET  /api/scenes
//   GET  /api/timeline?scene=&from=&to=
//   GET  /api/metrics/latest
//   GET  /frames/{file}

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

namespace cerberus {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  // 0 picks a free port.
  int port = 8787;
  std::filesystem::path rulebase_path;
  std::filesystem::path verdicts_path;
  std::filesystem::path queue_path;
  std::optional<std::filesystem::path> metrics_path;
  std::optional<std::filesystem::path> frames_dir;
  // When set, every route except /api/health needs "Authorization: Bearer <token>".
  std::optional<std::string> token;
  // Queue a UIL item for every abnormal verdict at startup.
  bool enqueue_verdicts = true;
};

class Service {
 public:
  // Loads the stores. Throws IoError for missing files and StoreCorrupt for
  // unreadable ones.
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread. Throws BindError.
  void start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

  int port() const;
  std::int64_t rulebase_version() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cerberus
