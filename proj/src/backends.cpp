#include "cerberus/backends.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>

#include "cerberus/error.hpp"
#include "cerberus/strings.hpp"

namespace cerberus {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform in (0, 1].
double unit_uniform(std::uint64_t& state) {
  return (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
}

EmbeddingVector expand_digest(const Sha256& digest, std::size_t dim) {
  std::uint64_t state = 0;
  for (std::size_t i = 0; i < digest.size(); ++i) state ^= static_cast<std::uint64_t>(digest[i]) << (8 * (i % 8));
  std::vector<double> raw(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    // Box-Muller keeps this independent of the standard library's distributions.
    const double u1 = unit_uniform(state);
    const double u2 = unit_uniform(state);
    const double r = std::sqrt(-2.0 * std::log(u1));
    raw[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < dim) raw[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  return EmbeddingVector::normalized(std::move(raw));
}

// Yields until the deadline.
void simulate_latency(std::chrono::microseconds latency) {
  if (latency.count() <= 0) return;
  const auto deadline = std::chrono::steady_clock::now() + latency;
  while (std::chrono::steady_clock::now() < deadline) std::this_thread::yield();
}

std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::vector<EmbeddingVector> lookup_texts(const std::map<std::string, std::vector<double>>& table,
                                          std::span<const std::string> texts, const MockOptions& fallback,
                                          bool strict) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    if (auto it = table.find(t); it != table.end()) {
      out.push_back(EmbeddingVector::normalized(it->second));
    } else if (strict) {
      throw Error(ErrorCode::BackendUnavailable, "no fixture embedding for text '" + t + "'");
    } else {
      out.push_back(mock_unit_vector(fallback.seed, "text", t, fallback.dim));
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(BackendRole role) {
  switch (role) {
    case BackendRole::image_embed: return "image_embed";
    case BackendRole::text_embed: return "text_embed";
    case BackendRole::caption: return "caption";
    case BackendRole::rule_llm: return "rule_llm";
  }
  return "image_embed";
}

BackendRole backend_role_from_string(std::string_view s) {
  if (s == "image_embed") return BackendRole::image_embed;
  if (s == "text_embed") return BackendRole::text_embed;
  if (s == "caption") return BackendRole::caption;
  if (s == "rule_llm") return BackendRole::rule_llm;
  throw Error(ErrorCode::InvalidArgument, "unknown backend role '" + std::string(s) + "'");
}

void check_embedding_batch(const std::vector<EmbeddingVector>& batch, std::size_t expected_count) {
  if (batch.size() != expected_count) {
    throw Error(ErrorCode::MalformedResponse, "expected " + std::to_string(expected_count) + " embeddings, got " +
                                                  std::to_string(batch.size()));
  }
  for (const auto& v : batch) {
    if (v.dim() != batch.front().dim()) throw Error(ErrorCode::MalformedResponse, "embedding dimensions disagree");
  }
}

std::vector<EmbeddingVector> embed_texts(TextEmbedder& backend, std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  auto out = backend.embed_texts(texts);
  check_embedding_batch(out, texts.size());
  return out;
}

std::vector<EmbeddingVector> embed_texts(ImageEmbedder& backend, std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  auto out = backend.embed_texts(texts);
  check_embedding_batch(out, texts.size());
  return out;
}

EmbeddingVector embed_image(ImageEmbedder& backend, const ImagePayload& image) {
  if (image.png.empty()) throw Error(ErrorCode::InvalidArgument, "image payload is empty");
  return backend.embed_image(image);
}

std::string caption_frame(Captioner& backend, std::span<const ImagePayload> frames, std::string_view prompt) {
  if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "no frames to caption");
  std::string text = backend.caption(frames, prompt);
  if (trim(text).empty()) throw Error(ErrorCode::EmptyCaption, "captioner returned empty text");
  return text;
}

std::string complete_rules(RuleGeneralizer& backend, std::string_view prompt, std::span<const std::string> documents) {
  return backend.complete_rules(prompt, documents);
}

EmbeddingVector mock_unit_vector(std::uint64_t seed, std::string_view domain, std::span<const std::uint8_t> bytes,
                                 std::size_t dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "mock dimension must be >= 1");
  Sha256Builder h;
  h.field(std::to_string(seed)).field(domain).field(bytes);
  return expand_digest(h.finish(), dim);
}

EmbeddingVector mock_unit_vector(std::uint64_t seed, std::string_view domain, std::string_view text,
                                 std::size_t dim) {
  return mock_unit_vector(seed, domain, as_bytes(text), dim);
}

EmbeddingVector MockImageEmbedder::embed_image(const ImagePayload& image) {
  count_request();
  simulate_latency(options_.latency);
  return mock_unit_vector(options_.seed, "image", image.png, options_.dim);
}

std::vector<EmbeddingVector> MockImageEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  simulate_latency(options_.latency);
  std::vector<EmbeddingVector> out;
  for (const auto& t : texts) out.push_back(mock_unit_vector(options_.seed, "text", t, options_.dim));
  return out;
}

std::vector<EmbeddingVector> MockTextEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  simulate_latency(options_.latency);
  std::vector<EmbeddingVector> out;
  for (const auto& t : texts) out.push_back(mock_unit_vector(options_.seed, "text", t, options_.dim));
  return out;
}

std::string MockCaptioner::caption(std::span<const ImagePayload> frames, std::string_view prompt) {
  count_request();
  simulate_latency(options_.latency);
  Sha256Builder h;
  h.field(std::to_string(options_.seed)).field(prompt);
  for (const auto& f : frames) h.field(f.png);
  const auto digest = h.finish();
  return "mock caption " + to_hex(std::span(digest).first(8));
}

std::string MockRuleGeneralizer::complete_rules(std::string_view, std::span<const std::string> documents) {
  count_request();
  simulate_latency(options_.latency);
  std::string out;
  std::set<std::string> seen;
  for (const auto& d : documents) {
    if (!seen.insert(d).second) continue;
    out += "- " + d + "\n";
  }
  return out;
}

ScriptedImageEmbedder::ScriptedImageEmbedder(std::map<std::string, std::vector<double>> frames,
                                             std::map<std::string, std::vector<double>> texts, MockOptions fallback,
                                             bool strict)
    : frames_(std::move(frames)), texts_(std::move(texts)), fallback_(fallback), strict_(strict) {}

void ScriptedImageEmbedder::fail_on(std::string frame_id) {
  std::lock_guard lock(mu_);
  failing_.insert(std::move(frame_id));
}

EmbeddingVector ScriptedImageEmbedder::embed_image(const ImagePayload& image) {
  count_request();
  simulate_latency(latency_);
  std::lock_guard lock(mu_);
  if (failing_.contains(image.frame_id)) {
    throw Error(ErrorCode::BackendUnavailable, "injected failure for frame " + image.frame_id);
  }
  if (auto it = frames_.find(image.frame_id); it != frames_.end()) return EmbeddingVector::normalized(it->second);
  if (strict_) throw Error(ErrorCode::BackendUnavailable, "no fixture embedding for frame " + image.frame_id);
  return mock_unit_vector(fallback_.seed, "image", image.png, fallback_.dim);
}

std::vector<EmbeddingVector> ScriptedImageEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  std::lock_guard lock(mu_);
  return lookup_texts(texts_, texts, fallback_, strict_);
}

ScriptedTextEmbedder::ScriptedTextEmbedder(std::map<std::string, std::vector<double>> texts, MockOptions fallback,
                                           bool strict)
    : texts_(std::move(texts)), fallback_(fallback), strict_(strict) {}

void ScriptedTextEmbedder::set(std::string text, std::vector<double> vector) {
  std::lock_guard lock(mu_);
  texts_[std::move(text)] = std::move(vector);
}

std::vector<EmbeddingVector> ScriptedTextEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  std::lock_guard lock(mu_);
  return lookup_texts(texts_, texts, fallback_, strict_);
}

ScriptedCaptioner::ScriptedCaptioner(std::map<std::string, std::string> captions,
                                     std::optional<std::string> default_caption, bool multi_image)
    : captions_(std::move(captions)), default_caption_(std::move(default_caption)), multi_image_(multi_image) {}

void ScriptedCaptioner::fail_on(std::string frame_id) {
  std::lock_guard lock(mu_);
  failing_.insert(std::move(frame_id));
}

std::string ScriptedCaptioner::caption(std::span<const ImagePayload> frames, std::string_view prompt) {
  count_request();
  simulate_latency(latency_);
  std::lock_guard lock(mu_);
  prompts_.emplace_back(prompt);
  std::vector<std::string> ids;
  for (const auto& f : frames) ids.push_back(f.frame_id);
  frame_ids_.push_back(ids);
  for (const auto& id : ids) {
    if (failing_.contains(id)) throw Error(ErrorCode::BackendUnavailable, "injected failure for frame " + id);
  }
  for (const auto& id : ids) {
    if (auto it = captions_.find(id); it != captions_.end()) return it->second;
  }
  if (default_caption_) return *default_caption_;
  throw Error(ErrorCode::BackendUnavailable, "no fixture caption");
}

std::vector<std::string> ScriptedCaptioner::prompts_seen() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

std::vector<std::vector<std::string>> ScriptedCaptioner::frame_ids_seen() const {
  std::lock_guard lock(mu_);
  return frame_ids_;
}

ScriptedRuleGeneralizer::ScriptedRuleGeneralizer(std::vector<std::string> responses)
    : responses_(std::move(responses)) {}

std::string ScriptedRuleGeneralizer::complete_rules(std::string_view prompt, std::span<const std::string> documents) {
  count_request();
  std::lock_guard lock(mu_);
  last_prompt_ = std::string(prompt);
  last_documents_.assign(documents.begin(), documents.end());
  if (failing_) throw Error(ErrorCode::BackendUnavailable, "injected rule LLM failure");
  if (responses_.empty()) return {};
  const std::string& out = responses_[std::min(next_, responses_.size() - 1)];
  ++next_;
  return out;
}

std::string ScriptedRuleGeneralizer::last_prompt() const {
  std::lock_guard lock(mu_);
  return last_prompt_;
}

std::vector<std::string> ScriptedRuleGeneralizer::last_documents() const {
  std::lock_guard lock(mu_);
  return last_documents_;
}

std::size_t EmbeddingCache::KeyHash::operator()(const Sha256& k) const noexcept {
  std::size_t h = 0;
  std::memcpy(&h, k.data(), sizeof(h));
  return h;
}

EmbeddingCache::EmbeddingCache(std::size_t capacity, std::optional<std::filesystem::path> spill_dir)
    : capacity_(std::max<std::size_t>(capacity, 1)), spill_dir_(std::move(spill_dir)) {
  if (spill_dir_) std::filesystem::create_directories(*spill_dir_);
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mu_);
  return lru_.size();
}

std::optional<EmbeddingVector> EmbeddingCache::get(const Sha256& key) {
  {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(key); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      hits_.fetch_add(1);
      return it->second->second;
    }
  }
  if (auto spilled = unspill(key)) {
    hits_.fetch_add(1);
    put(key, *spilled);
    return spilled;
  }
  misses_.fetch_add(1);
  return std::nullopt;
}

void EmbeddingCache::put(const Sha256& key, const EmbeddingVector& value) {
  std::optional<Entry> evicted;
  {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(key); it != index_.end()) {
      it->second->second = value;
      lru_.splice(lru_.begin(), lru_, it->second);
      return;
    }
    lru_.emplace_front(key, value);
    index_[key] = lru_.begin();
    if (lru_.size() > capacity_) {
      evicted = std::move(lru_.back());
      index_.erase(evicted->first);
      lru_.pop_back();
    }
  }
  if (evicted) spill(*evicted);
}

void EmbeddingCache::spill(const Entry& entry) const {
  if (!spill_dir_) return;
  std::ofstream out(*spill_dir_ / (to_hex(entry.first) + ".emb"), std::ios::binary | std::ios::trunc);
  const auto values = entry.second.values();
  const std::uint64_t dim = values.size();
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(dim * sizeof(double)));
}

std::optional<EmbeddingVector> EmbeddingCache::unspill(const Sha256& key) const {
  if (!spill_dir_) return std::nullopt;
  std::ifstream in(*spill_dir_ / (to_hex(key) + ".emb"), std::ios::binary);
  if (!in) return std::nullopt;
  std::uint64_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  if (!in || dim == 0 || dim > (1u << 20)) return std::nullopt;
  std::vector<double> values(dim);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(dim * sizeof(double)));
  if (!in) return std::nullopt;
  return EmbeddingVector::normalized(std::move(values));
}

Sha256 cache_key(BackendRole role, std::string_view model, std::span<const std::uint8_t> input) {
  Sha256Builder h;
  h.field(to_string(role)).field(model).field(input);
  return h.finish();
}

Sha256 cache_key(BackendRole role, std::string_view model, std::string_view input) {
  return cache_key(role, model, as_bytes(input));
}

namespace {

template <typename Fetch>
std::vector<EmbeddingVector> cached_text_batch(EmbeddingCache& cache, BackendRole role, const std::string& model,
                                               std::span<const std::string> texts, Fetch&& fetch) {
  std::vector<std::optional<EmbeddingVector>> slots(texts.size());
  std::vector<Sha256> keys(texts.size());
  std::vector<std::string> missing;
  std::map<std::string, std::vector<std::size_t>> missing_slots;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    keys[i] = cache_key(role, model, texts[i]);
    slots[i] = cache.get(keys[i]);
    if (!slots[i]) {
      auto& where = missing_slots[texts[i]];
      if (where.empty()) missing.push_back(texts[i]);
      where.push_back(i);
    }
  }
  if (!missing.empty()) {
    auto fresh = fetch(std::span<const std::string>(missing));
    check_embedding_batch(fresh, missing.size());
    for (std::size_t m = 0; m < missing.size(); ++m) {
      for (std::size_t i : missing_slots[missing[m]]) {
        slots[i] = fresh[m];
      }
      cache.put(keys[missing_slots[missing[m]].front()], fresh[m]);
    }
  }
  std::vector<EmbeddingVector> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace

CachedTextEmbedder::CachedTextEmbedder(std::shared_ptr<TextEmbedder> inner, std::shared_ptr<EmbeddingCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::vector<EmbeddingVector> CachedTextEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  return cached_text_batch(*cache_, BackendRole::text_embed, inner_->model_id(), texts,
                           [&](std::span<const std::string> batch) { return inner_->embed_texts(batch); });
}

CachedImageEmbedder::CachedImageEmbedder(std::shared_ptr<ImageEmbedder> inner, std::shared_ptr<EmbeddingCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

EmbeddingVector CachedImageEmbedder::embed_image(const ImagePayload& image) {
  count_request();
  const Sha256 key = cache_key(BackendRole::image_embed, inner_->model_id(), image.png);
  if (auto hit = cache_->get(key)) return *hit;
  EmbeddingVector v = inner_->embed_image(image);
  cache_->put(key, v);
  return v;
}

std::vector<EmbeddingVector> CachedImageEmbedder::embed_texts(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "empty text batch");
  count_request();
  // Image-space texts get their own role tag so they never alias the text embedder's entries.
  return cached_text_batch(*cache_, BackendRole::image_embed, inner_->model_id(), texts,
                           [&](std::span<const std::string> batch) { return inner_->embed_texts(batch); });
}

}  // namespace cerberus
