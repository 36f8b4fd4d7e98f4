#pragma once

// OpenAI-compatible clients.
//   text embeddings   POST {url}/v1/embeddings        {model, input: [..texts..]}
//   image embeddings  POST {url}/v1/embeddings        {model, input: [{type: "image_b64", data}]}
//   captions / rules  POST {url}/v1/chat/completions  images as base64 PNG data URLs
// Transport failures are retried twice with exponential backoff; malformed
// responses and HTTP error statuses are not retried.

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>

#include <nlohmann/json.hpp>

#include "cerberus/backends.hpp"

namespace cerberus {

struct BackendConfig {
  BackendRole role = BackendRole::text_embed;
  std::string url;
  std::string model;
  double timeout_s = 30.0;
  int max_in_flight = 4;
  std::string api_key_env;
  // Only used by mock:// backends.
  std::size_t mock_dim = 64;
  double mock_latency_ms = 0.0;
  // Captioners: send every segment frame rather than the middle one.
  bool multi_image = true;

  // Throws BadParams when timeout <= 0 or max_in_flight < 1.
  void validate() const;
};

struct RetryPolicy {
  int retries = 2;
  std::chrono::milliseconds initial_backoff{100};
};

class OpenAiClient {
 public:
  explicit OpenAiClient(BackendConfig config, RetryPolicy retry = {});
  ~OpenAiClient();

  // POSTs JSON to {url}{path}. Throws BackendUnavailable on transport failure
  // (after retries) or non-2xx status, MalformedResponse on unparseable JSON.
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
  RetryPolicy retry_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::counting_semaphore<1 << 16> in_flight_;
};

std::vector<EmbeddingVector> parse_embeddings_response(const nlohmann::json& response, std::size_t expected);
std::string parse_chat_response(const nlohmann::json& response);

class HttpImageEmbedder final : public ImageEmbedder {
 public:
  explicit HttpImageEmbedder(BackendConfig config, RetryPolicy retry = {});
  std::string model_id() const override { return client_.config().model; }
  EmbeddingVector embed_image(const ImagePayload& image) override;
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;

 private:
  OpenAiClient client_;
};

class HttpTextEmbedder final : public TextEmbedder {
 public:
  explicit HttpTextEmbedder(BackendConfig config, RetryPolicy retry = {});
  std::string model_id() const override { return client_.config().model; }
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;

 private:
  OpenAiClient client_;
};

class HttpCaptioner final : public Captioner {
 public:
  explicit HttpCaptioner(BackendConfig config, RetryPolicy retry = {});
  std::string model_id() const override { return client_.config().model; }
  std::string caption(std::span<const ImagePayload> frames, std::string_view prompt) override;
  bool supports_multi_image() const override { return client_.config().multi_image; }

 private:
  OpenAiClient client_;
};

class HttpRuleGeneralizer final : public RuleGeneralizer {
 public:
  explicit HttpRuleGeneralizer(BackendConfig config, RetryPolicy retry = {});
  std::string model_id() const override { return client_.config().model; }
  std::string complete_rules(std::string_view prompt, std::span<const std::string> documents) override;

 private:
  OpenAiClient client_;
};

}  // namespace cerberus
