#include "cerberus/dataset.hpp"

#include <set>

#include "cerberus/error.hpp"
#include "cerberus/fileio.hpp"

namespace cerberus {

std::size_t DatasetManifest::anomaly_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.label == 1 ? 1 : 0;
  return n;
}

double DatasetManifest::anomaly_ratio() const {
  if (entries.empty()) return 0.0;
  return static_cast<double>(anomaly_count()) / static_cast<double>(entries.size());
}

void DatasetManifest::validate() const {
  std::set<std::string_view> ids;
  std::map<std::string_view, std::set<std::int64_t>> seqs;
  for (const auto& e : entries) {
    if (e.frame_id.empty()) throw Error(ErrorCode::InvalidArgument, "manifest entry without frame_id");
    if (!ids.insert(e.frame_id).second) throw Error(ErrorCode::InvalidArgument, "duplicate frame_id " + e.frame_id);
    if (e.label != 0 && e.label != 1) throw Error(ErrorCode::InvalidArgument, "label must be 0 or 1: " + e.frame_id);
    seqs[e.scene].insert(e.seq);
  }
  for (const auto& [scene, values] : seqs) {
    const auto span = *values.rbegin() - *values.begin() + 1;
    if (span != static_cast<std::int64_t>(values.size())) {
      throw Error(ErrorCode::InvalidArgument, "seq values are not contiguous in scene " + std::string(scene));
    }
  }
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& entry) const {
  std::filesystem::path p(entry.path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

nlohmann::json to_json(const ManifestEntry& e) {
  return {{"schema", kManifestSchema}, {"frame_id", e.frame_id}, {"path", e.path},
          {"label", e.label},          {"scene", e.scene},       {"seq", e.seq}};
}

ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  if (j.contains("schema") && j.at("schema") != kManifestSchema) {
    throw Error(ErrorCode::SchemaVersionMismatch, "manifest schema " + j.at("schema").dump());
  }
  ManifestEntry e;
  try {
    e.frame_id = j.at("frame_id").get<std::string>();
    e.path = j.value("path", "");
    e.label = j.value("label", 0);
    e.scene = j.value("scene", "default");
    e.seq = j.at("seq").get<std::int64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::CorruptFile, std::string("manifest entry: ") + ex.what());
  }
  return e;
}

DatasetManifest parse_manifest(std::string_view jsonl, std::filesystem::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::size_t line_no = 0;
  for (const auto& line : nonblank_lines(jsonl)) {
    ++line_no;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::CorruptFile, "manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
    m.entries.push_back(manifest_entry_from_json(j));
  }
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.parent_path());
}

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) out += to_json(e).dump() + "\n";
  return out;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_jsonl(manifest));
}

std::string base_frame_id(std::string_view frame_id) {
  const auto pos = frame_id.rfind(kDuplicateMarker);
  if (pos == std::string_view::npos) return std::string(frame_id);
  const auto digits = frame_id.substr(pos + kDuplicateMarker.size());
  if (digits.empty()) return std::string(frame_id);
  for (char c : digits) {
    if (c < '0' || c > '9') return std::string(frame_id);
  }
  return std::string(frame_id.substr(0, pos));
}

ColorImage Frame::pixels() const {
  if (image) return *image;
  return load_image(path);
}

std::vector<Frame> frames_from_manifest(const DatasetManifest& manifest) {
  std::vector<Frame> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Frame f;
    f.frame_id = e.frame_id;
    f.scene = e.scene;
    f.seq = e.seq;
    f.label = e.label;
    f.path = manifest.resolve(e);
    out.push_back(std::move(f));
  }
  return out;
}

FrameIndex::FrameIndex(std::vector<Frame> frames) : frames_(std::move(frames)) {
  for (std::size_t i = 0; i < frames_.size(); ++i) by_id_.emplace(frames_[i].frame_id, i);
}

const Frame& FrameIndex::at(std::string_view frame_id) const {
  auto it = by_id_.find(frame_id);
  if (it == by_id_.end()) throw Error(ErrorCode::UnknownItem, "unknown frame " + std::string(frame_id));
  return frames_[it->second];
}

bool FrameIndex::contains(std::string_view frame_id) const { return by_id_.find(frame_id) != by_id_.end(); }

}  // namespace cerberus
