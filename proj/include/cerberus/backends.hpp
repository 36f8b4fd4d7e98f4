#pragma once

// Uniform interfaces over the external model services: image embedder (with
// its paired text tower), text embedder, captioner and rule generalizer.
// Mock and scripted implementations live here; HTTP clients are in
// http_backends.hpp.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cerberus/digest.hpp"
#include "cerberus/scoring.hpp"

namespace cerberus {

enum class BackendRole { image_embed, text_embed, caption, rule_llm };

std::string_view to_string(BackendRole role);
BackendRole backend_role_from_string(std::string_view s);

// An encoded frame as sent to a service. frame_id travels alongside so that
// scripted backends can key fixtures on it.
struct ImagePayload {
  std::string frame_id;
  std::vector<std::uint8_t> png;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string model_id() const = 0;

  // Number of requests this object has served (cache hits included for
  // caching wrappers; the wrapped backend counts only real calls).
  std::size_t request_count() const { return requests_.load(); }

 protected:
  void count_request() { requests_.fetch_add(1); }

 private:
  std::atomic<std::size_t> requests_{0};
};

// CLIP-style dual encoder: images and texts land in one space.
class ImageEmbedder : public Backend {
 public:
  virtual EmbeddingVector embed_image(const ImagePayload& image) = 0;
  virtual std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) = 0;
};

class TextEmbedder : public Backend {
 public:
  virtual std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) = 0;
};

class Captioner : public Backend {
 public:
  virtual std::string caption(std::span<const ImagePayload> frames, std::string_view prompt) = 0;
  virtual bool supports_multi_image() const { return false; }
};

class RuleGeneralizer : public Backend {
 public:
  virtual std::string complete_rules(std::string_view prompt, std::span<const std::string> documents) = 0;
};

struct BackendSet {
  std::shared_ptr<ImageEmbedder> image_embedder;
  std::shared_ptr<TextEmbedder> text_embedder;
  std::shared_ptr<Captioner> captioner;
  std::shared_ptr<RuleGeneralizer> rule_llm;
};

// Throws MalformedResponse when the count differs or dimensions disagree.
void check_embedding_batch(const std::vector<EmbeddingVector>& batch, std::size_t expected_count);

// Validating entry points used by the pipeline: batch shape is checked,
// captions must be non-empty (EmptyCaption), and the caption prompt is
// passed through untouched.
std::vector<EmbeddingVector> embed_texts(TextEmbedder& backend, std::span<const std::string> texts);
std::vector<EmbeddingVector> embed_texts(ImageEmbedder& backend, std::span<const std::string> texts);
EmbeddingVector embed_image(ImageEmbedder& backend, const ImagePayload& image);
std::string caption_frame(Captioner& backend, std::span<const ImagePayload> frames, std::string_view prompt);
std::string complete_rules(RuleGeneralizer& backend, std::string_view prompt, std::span<const std::string> documents);

// Deterministic unit vector expanded from SHA-256(seed, domain, bytes).
EmbeddingVector mock_unit_vector(std::uint64_t seed, std::string_view domain, std::span<const std::uint8_t> bytes,
                                 std::size_t dim);
EmbeddingVector mock_unit_vector(std::uint64_t seed, std::string_view domain, std::string_view text,
                                 std::size_t dim);

struct MockOptions {
  std::uint64_t seed = 0;
  std::size_t dim = 64;
  std::chrono::microseconds latency{0};
  bool multi_image = true;
};

class MockImageEmbedder final : public ImageEmbedder {
 public:
  explicit MockImageEmbedder(MockOptions options = {}) : options_(options) {}
  std::string model_id() const override { return "mock-image-embed"; }
  EmbeddingVector embed_image(const ImagePayload& image) override;
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;

 private:
  MockOptions options_;
};

class MockTextEmbedder final : public TextEmbedder {
 public:
  explicit MockTextEmbedder(MockOptions options = {}) : options_(options) {}
  std::string model_id() const override { return "mock-text-embed"; }
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;

 private:
  MockOptions options_;
};

// Returns "mock caption <digest>" where digest covers prompt and image bytes.
class MockCaptioner final : public Captioner {
 public:
  explicit MockCaptioner(MockOptions options = {}) : options_(options) {}
  std::string model_id() const override { return "mock-caption"; }
  std::string caption(std::span<const ImagePayload> frames, std::string_view prompt) override;
  bool supports_multi_image() const override { return options_.multi_image; }

 private:
  MockOptions options_;
};

// Echoes each distinct document as a "- " bullet, in first-seen order.
class MockRuleGeneralizer final : public RuleGeneralizer {
 public:
  explicit MockRuleGeneralizer(MockOptions options = {}) : options_(options) {}
  std::string model_id() const override { return "mock-rule-llm"; }
  std::string complete_rules(std::string_view prompt, std::span<const std::string> documents) override;

 private:
  MockOptions options_;
};

// Fixture-table image embedder. Unknown frames/texts fall back to mock hashing
// unless strict, in which case they raise BackendUnavailable.
class ScriptedImageEmbedder final : public ImageEmbedder {
 public:
  ScriptedImageEmbedder(std::map<std::string, std::vector<double>> frames,
                        std::map<std::string, std::vector<double>> texts, MockOptions fallback = {},
                        bool strict = false);
  std::string model_id() const override { return "scripted-image-embed"; }
  EmbeddingVector embed_image(const ImagePayload& image) override;
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;

  void fail_on(std::string frame_id);
  void set_latency(std::chrono::microseconds latency) { latency_ = latency; }

 private:
  std::map<std::string, std::vector<double>> frames_;
  std::map<std::string, std::vector<double>> texts_;
  MockOptions fallback_;
  bool strict_;
  std::set<std::string> failing_;
  std::chrono::microseconds latency_{0};
  std::mutex mu_;
};

class ScriptedTextEmbedder final : public TextEmbedder {
 public:
  explicit ScriptedTextEmbedder(std::map<std::string, std::vector<double>> texts, MockOptions fallback = {},
                                bool strict = false);
  std::string model_id() const override { return "scripted-text-embed"; }
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;

  void set(std::string text, std::vector<double> vector);

 private:
  std::map<std::string, std::vector<double>> texts_;
  MockOptions fallback_;
  bool strict_;
  std::mutex mu_;
};

// Looks up the first frame id with a fixture caption. Frames listed via
// fail_on raise BackendUnavailable; frames without a fixture get the default
// caption, or raise if none was given.
class ScriptedCaptioner final : public Captioner {
 public:
  explicit ScriptedCaptioner(std::map<std::string, std::string> captions,
                             std::optional<std::string> default_caption = std::nullopt, bool multi_image = true);
  std::string model_id() const override { return "scripted-caption"; }
  std::string caption(std::span<const ImagePayload> frames, std::string_view prompt) override;
  bool supports_multi_image() const override { return multi_image_; }

  void fail_on(std::string frame_id);
  void set_latency(std::chrono::microseconds latency) { latency_ = latency; }
  std::vector<std::string> prompts_seen() const;
  std::vector<std::vector<std::string>> frame_ids_seen() const;

 private:
  std::map<std::string, std::string> captions_;
  std::optional<std::string> default_caption_;
  bool multi_image_;
  std::set<std::string> failing_;
  std::chrono::microseconds latency_{0};
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
  std::vector<std::vector<std::string>> frame_ids_;
};

// Serves responses in order; the last one repeats once the script runs out.
class ScriptedRuleGeneralizer final : public RuleGeneralizer {
 public:
  explicit ScriptedRuleGeneralizer(std::vector<std::string> responses);
  std::string model_id() const override { return "scripted-rule-llm"; }
  std::string complete_rules(std::string_view prompt, std::span<const std::string> documents) override;

  void set_failing(bool failing) { failing_ = failing; }
  std::string last_prompt() const;
  std::vector<std::string> last_documents() const;

 private:
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
  std::atomic<bool> failing_{false};
  mutable std::mutex mu_;
  std::string last_prompt_;
  std::vector<std::string> last_documents_;
};

// In-memory LRU keyed by SHA-256 with optional on-disk spill of evicted
// entries. Thread-safe.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::size_t capacity = 4096, std::optional<std::filesystem::path> spill_dir = std::nullopt);

  std::optional<EmbeddingVector> get(const Sha256& key);
  void put(const Sha256& key, const EmbeddingVector& value);

  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }
  std::size_t size() const;

 private:
  struct KeyHash {
    std::size_t operator()(const Sha256& k) const noexcept;
  };
  using Entry = std::pair<Sha256, EmbeddingVector>;

  void spill(const Entry& entry) const;
  std::optional<EmbeddingVector> unspill(const Sha256& key) const;

  std::size_t capacity_;
  std::optional<std::filesystem::path> spill_dir_;
  mutable std::mutex mu_;
  std::list<Entry> lru_;
  std::unordered_map<Sha256, std::list<Entry>::iterator, KeyHash> index_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

Sha256 cache_key(BackendRole role, std::string_view model, std::span<const std::uint8_t> input);
Sha256 cache_key(BackendRole role, std::string_view model, std::string_view input);

class CachedTextEmbedder final : public TextEmbedder {
 public:
  CachedTextEmbedder(std::shared_ptr<TextEmbedder> inner, std::shared_ptr<EmbeddingCache> cache);
  std::string model_id() const override { return inner_->model_id(); }
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;
  TextEmbedder& inner() { return *inner_; }

 private:
  std::shared_ptr<TextEmbedder> inner_;
  std::shared_ptr<EmbeddingCache> cache_;
};

class CachedImageEmbedder final : public ImageEmbedder {
 public:
  CachedImageEmbedder(std::shared_ptr<ImageEmbedder> inner, std::shared_ptr<EmbeddingCache> cache);
  std::string model_id() const override { return inner_->model_id(); }
  EmbeddingVector embed_image(const ImagePayload& image) override;
  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) override;
  ImageEmbedder& inner() { return *inner_; }

 private:
  std::shared_ptr<ImageEmbedder> inner_;
  std::shared_ptr<EmbeddingCache> cache_;
};

}  // namespace cerberus
