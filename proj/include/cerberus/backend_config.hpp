#pragma once

// Backend configuration file (TOML), one table per role:
//
//   [backend.caption]
//   url = "http://gpu-box:8000"
//   model = "Qwen2.5-VL-7B"
//   timeout_s = 60
//   max_in_flight = 2
//   api_key_env = "OPENAI_API_KEY"
//
// A url of the form "mock://<seed>" selects the deterministic mock backend
// (optional keys: dim, latency_ms). CERBERUS_BACKEND_<ROLE>_URL overrides url.

#include <filesystem>
#include <map>
#include <optional>
#include <string_view>

#include "cerberus/backends.hpp"
#include "cerberus/http_backends.hpp"

namespace cerberus {

using BackendConfigs = std::map<BackendRole, BackendConfig>;

// Every role pointed at mock://0.
BackendConfigs default_backend_configs();

BackendConfigs parse_backend_configs(std::string_view toml_text);
BackendConfigs load_backend_configs(const std::filesystem::path& path);

// Applies CERBERUS_BACKEND_<ROLE>_URL from the environment.
void apply_env_overrides(BackendConfigs& configs);

struct CacheOptions {
  std::size_t capacity = 4096;
  std::optional<std::filesystem::path> spill_dir;
};

// Builds the four backends; embedders are wrapped in a shared LRU cache.
BackendSet make_backends(const BackendConfigs& configs, const CacheOptions& cache = {});

}  // namespace cerberus
