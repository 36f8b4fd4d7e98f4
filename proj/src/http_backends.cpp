#include "cerberus/http_backends.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "cerberus/error.hpp"

namespace cerberus {

namespace {

std::string data_url(const ImagePayload& image) { return "data:image/png;base64," + base64_encode(image.png); }

// Releases the in-flight slot on scope exit.
template <typename Sem>
class SlotGuard {
 public:
  explicit SlotGuard(Sem& sem) : sem_(sem) { sem_.acquire(); }
  ~SlotGuard() { sem_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  Sem& sem_;
};

}  // namespace

void BackendConfig::validate() const {
  if (!(timeout_s > 0.0)) throw Error(ErrorCode::BadParams, "timeout must be > 0");
  if (max_in_flight < 1) throw Error(ErrorCode::BadParams, "max_in_flight must be >= 1");
  if (url.empty()) throw Error(ErrorCode::BadParams, "backend url is empty");
}

OpenAiClient::OpenAiClient(BackendConfig config, RetryPolicy retry)
    : config_(std::move(config)), retry_(retry), in_flight_(config_.max_in_flight) {
  config_.validate();
  // Split "http://host:port/prefix" into the httplib base and a path prefix.
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::BadParams, "backend url needs a scheme: " + config_.url);
  const auto path_start = config_.url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.url.substr(0, path_start);
  if (path_start != std::string::npos) {
    path_prefix_ = config_.url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

OpenAiClient::~OpenAiClient() = default;

nlohmann::json OpenAiClient::post(const std::string& path, const nlohmann::json& body) {
  SlotGuard slot(in_flight_);
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const std::string payload = body.dump();
  const std::string target = path_prefix_ + path;

  auto backoff = retry_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= retry_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(target, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::BackendUnavailable,
                  config_.url + target + " returned HTTP " + std::to_string(res->status));
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, std::string("invalid JSON from backend: ") + e.what());
    }
  }
  throw Error(ErrorCode::BackendUnavailable, config_.url + target + ": " + last_error);
}

std::vector<EmbeddingVector> parse_embeddings_response(const nlohmann::json& response, std::size_t expected) {
  try {
    const auto& data = response.at("data");
    if (!data.is_array()) throw Error(ErrorCode::MalformedResponse, "'data' is not an array");
    std::vector<std::optional<EmbeddingVector>> slots(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& item = data[i];
      const std::size_t index = item.contains("index") ? item["index"].get<std::size_t>() : i;
      if (index >= slots.size() || slots[index]) throw Error(ErrorCode::MalformedResponse, "bad embedding index");
      auto raw = item.at("embedding").get<std::vector<double>>();
      try {
        slots[index] = EmbeddingVector::normalized(std::move(raw));
      } catch (const Error& e) {
        throw Error(ErrorCode::MalformedResponse, e.what());
      }
    }
    std::vector<EmbeddingVector> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    check_embedding_batch(out, expected);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("embedding response: ") + e.what());
  }
}

std::string parse_chat_response(const nlohmann::json& response) {
  try {
    const auto& content = response.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    // Some servers return content parts.
    std::string text;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
    }
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("chat response: ") + e.what());
  }
}

HttpImageEmbedder::HttpImageEmbedder(BackendConfig config, RetryPolicy retry) : client_(std::move(config), retry) {}

EmbeddingVector HttpImageEmbedder::embed_image(const ImagePayload& image) {
  count_request();
  nlohmann::json body = {
      {"model", client_.config().model},
      {"input", nlohmann::json::array({{{"type", "image_b64"}, {"data", base64_encode(image.png)}}})},
  };
  return parse_embeddings_response(client_.post("/v1/embeddings", body), 1).front();
}

std::vector<EmbeddingVector> HttpImageEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  nlohmann::json body = {{"model", client_.config().model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  return parse_embeddings_response(client_.post("/v1/embeddings", body), texts.size());
}

HttpTextEmbedder::HttpTextEmbedder(BackendConfig config, RetryPolicy retry) : client_(std::move(config), retry) {}

std::vector<EmbeddingVector> HttpTextEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  nlohmann::json body = {{"model", client_.config().model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  return parse_embeddings_response(client_.post("/v1/embeddings", body), texts.size());
}

HttpCaptioner::HttpCaptioner(BackendConfig config, RetryPolicy retry) : client_(std::move(config), retry) {}

std::string HttpCaptioner::caption(std::span<const ImagePayload> frames, std::string_view prompt) {
  count_request();
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", std::string(prompt)}});
  for (const auto& f : frames) {
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(f)}}}});
  }
  nlohmann::json body = {
      {"model", client_.config().model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::move(content)}}})},
  };
  return parse_chat_response(client_.post("/v1/chat/completions", body));
}

HttpRuleGeneralizer::HttpRuleGeneralizer(BackendConfig config, RetryPolicy retry) : client_(std::move(config), retry) {}

std::string HttpRuleGeneralizer::complete_rules(std::string_view prompt, std::span<const std::string> documents) {
  count_request();
  std::string message(prompt);
  message += "\n\n";
  for (const auto& d : documents) message += "- " + d + "\n";
  nlohmann::json body = {
      {"model", client_.config().model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", message}}})},
  };
  return parse_chat_response(client_.post("/v1/chat/completions", body));
}

}  // namespace cerberus
