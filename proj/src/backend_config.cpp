#include "cerberus/backend_config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <toml.hpp>

#include "cerberus/error.hpp"

namespace cerberus {

namespace {

constexpr BackendRole kRoles[] = {BackendRole::image_embed, BackendRole::text_embed, BackendRole::caption,
                                  BackendRole::rule_llm};

constexpr std::string_view kMockScheme = "mock://";

bool is_mock(const BackendConfig& c) { return c.url.starts_with(kMockScheme); }

MockOptions mock_options(const BackendConfig& c) {
  MockOptions o;
  const std::string seed = c.url.substr(kMockScheme.size());
  if (!seed.empty()) {
    try {
      o.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadParams, "mock url seed must be an integer: " + c.url);
    }
  }
  o.dim = c.mock_dim;
  o.latency = std::chrono::microseconds(static_cast<long long>(c.mock_latency_ms * 1000.0));
  o.multi_image = c.multi_image;
  return o;
}

std::string env_name(BackendRole role) {
  std::string name = "CERBERUS_BACKEND_";
  for (char c : to_string(role)) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name + "_URL";
}

}  // namespace

BackendConfigs default_backend_configs() {
  BackendConfigs out;
  for (auto role : kRoles) {
    BackendConfig c;
    c.role = role;
    c.url = "mock://0";
    c.model = "mock";
    out[role] = c;
  }
  return out;
}

BackendConfigs parse_backend_configs(std::string_view toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::CorruptFile, std::string("backend config: ") + std::string(e.description()));
  }
  BackendConfigs out = default_backend_configs();
  const toml::table* backends = root["backend"].as_table();
  if (backends == nullptr) return out;
  for (const auto& [key, node] : *backends) {
    const BackendRole role = backend_role_from_string(key.str());
    const toml::table* t = node.as_table();
    if (t == nullptr) throw Error(ErrorCode::CorruptFile, "backend." + std::string(key.str()) + " must be a table");
    BackendConfig& c = out[role];
    c.role = role;
    c.url = (*t)["url"].value_or(c.url);
    c.model = (*t)["model"].value_or(c.model);
    c.timeout_s = (*t)["timeout_s"].value_or(c.timeout_s);
    c.max_in_flight = (*t)["max_in_flight"].value_or(c.max_in_flight);
    c.api_key_env = (*t)["api_key_env"].value_or(c.api_key_env);
    c.mock_dim = static_cast<std::size_t>((*t)["dim"].value_or(static_cast<std::int64_t>(c.mock_dim)));
    c.mock_latency_ms = (*t)["latency_ms"].value_or(c.mock_latency_ms);
    c.multi_image = (*t)["multi_image"].value_or(c.multi_image);
    c.validate();
  }
  return out;
}

BackendConfigs load_backend_configs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_backend_configs(text.str());
}

void apply_env_overrides(BackendConfigs& configs) {
  for (auto role : kRoles) {
    if (const char* url = std::getenv(env_name(role).c_str()); url != nullptr && *url != '\0') {
      configs[role].role = role;
      configs[role].url = url;
    }
  }
}

BackendSet make_backends(const BackendConfigs& configs, const CacheOptions& cache_options) {
  auto cache = std::make_shared<EmbeddingCache>(cache_options.capacity, cache_options.spill_dir);
  auto config_for = [&](BackendRole role) {
    auto it = configs.find(role);
    if (it == configs.end()) throw Error(ErrorCode::BadParams, "no config for role " + std::string(to_string(role)));
    it->second.validate();
    return it->second;
  };

  BackendSet set;
  {
    const auto c = config_for(BackendRole::image_embed);
    std::shared_ptr<ImageEmbedder> inner;
    if (is_mock(c)) inner = std::make_shared<MockImageEmbedder>(mock_options(c));
    else inner = std::make_shared<HttpImageEmbedder>(c);
    set.image_embedder = std::make_shared<CachedImageEmbedder>(std::move(inner), cache);
  }
  {
    const auto c = config_for(BackendRole::text_embed);
    std::shared_ptr<TextEmbedder> inner;
    if (is_mock(c)) inner = std::make_shared<MockTextEmbedder>(mock_options(c));
    else inner = std::make_shared<HttpTextEmbedder>(c);
    set.text_embedder = std::make_shared<CachedTextEmbedder>(std::move(inner), cache);
  }
  {
    const auto c = config_for(BackendRole::caption);
    if (is_mock(c)) set.captioner = std::make_shared<MockCaptioner>(mock_options(c));
    else set.captioner = std::make_shared<HttpCaptioner>(c);
  }
  {
    const auto c = config_for(BackendRole::rule_llm);
    if (is_mock(c)) set.rule_llm = std::make_shared<MockRuleGeneralizer>(mock_options(c));
    else set.rule_llm = std::make_shared<HttpRuleGeneralizer>(c);
  }
  return set;
}

}  // namespace cerberus
