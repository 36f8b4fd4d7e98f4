#pragma once

// Frame manifests (JSONL, one entry per line) and the in-memory frame handle
// the pipelines consume.
//
//   {"schema":"cerberus-manifest/1","frame_id":"s01_0000","path":"s01/0000.png",
//    "label":0,"scene":"s01","seq":0}

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cerberus/image.hpp"

namespace cerberus {

inline constexpr std::string_view kManifestSchema = "cerberus-manifest/1";

// Suffix appended to frame ids created by duplicate_normals.
inline constexpr std::string_view kDuplicateMarker = "#dup";

struct ManifestEntry {
  std::string frame_id;
  std::string path;
  int label = 0;
  std::string scene;
  std::int64_t seq = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  // Relative entry paths resolve against this directory.
  std::filesystem::path base_dir;

  std::size_t anomaly_count() const;
  // anomalies / total; 0 for an empty manifest.
  double anomaly_ratio() const;

  // Throws InvalidArgument on duplicate frame ids, labels outside {0,1} or
  // non-contiguous seq values within a scene. Duplicates created by
  // duplicate_normals share their original's seq.
  void validate() const;

  std::filesystem::path resolve(const ManifestEntry& entry) const;
};

nlohmann::json to_json(const ManifestEntry& entry);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);

// Lines without a schema key are accepted; a different schema is rejected.
DatasetManifest parse_manifest(std::string_view jsonl, std::filesystem::path base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_jsonl(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// "cam1_0042#dup3" -> "cam1_0042".
std::string base_frame_id(std::string_view frame_id);

// One frame of a stream. Pixels come from `image` when set, else from `path`.
struct Frame {
  std::string frame_id;
  std::string scene;
  std::int64_t seq = 0;
  int label = 0;
  std::filesystem::path path;
  std::shared_ptr<const ColorImage> image;

  ColorImage pixels() const;
};

std::vector<Frame> frames_from_manifest(const DatasetManifest& manifest);

// frame_id -> Frame, for feedback loops that revisit individual frames.
class FrameIndex {
 public:
  FrameIndex() = default;
  explicit FrameIndex(std::vector<Frame> frames);

  // Throws UnknownItem.
  const Frame& at(std::string_view frame_id) const;
  bool contains(std::string_view frame_id) const;
  const std::vector<Frame>& frames() const { return frames_; }

 private:
  std::vector<Frame> frames_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

}  // namespace cerberus
