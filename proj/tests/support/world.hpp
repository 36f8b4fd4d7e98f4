#pragma once

// Synthetic detection world with engineered embedding geometry. Frames are
// small in-memory images with a moving blob; fixture vectors for the scripted
// backends are keyed by frame id (image space) and caption text (text space).
//
// Frame kinds:
//   static      identical to its predecessor; dropped by the gate
//   normal      image and caption built from normal-rule vectors
//   hard        normal frame whose image leans toward perturbed labels, so
//               stage 1 flags it and stage 2 clears it
//   anomaly     image and caption built from perturbed-label vectors
//   camouflaged anomaly whose image looks normal; only stage 2 would catch it
//   uil_target  hard frame whose caption is 0.6 * (normal rule 0) + 0.8 *
//               (the future custom rule)

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cerberus/backends.hpp"
#include "cerberus/dataset.hpp"
#include "cerberus/rulebase.hpp"

namespace cerberus::testing {

enum class FrameKind { still, normal, hard, anomaly, camouflaged, uil_target };

struct WorldOptions {
  std::size_t frames = 500;
  std::size_t anomalies = 50;  // camouflaged ones included
  std::size_t camouflaged = 1;
  std::size_t hard_normals = 15;
  double static_fraction = 0.4;
  std::size_t dim = 512;
  std::uint64_t seed = 7;
  int width = 64;
  int height = 48;
  double noise = 0.5;
};

struct World {
  WorldOptions options;
  RuleBase rulebase;
  std::vector<Frame> frames;
  DatasetManifest manifest;
  std::vector<FrameKind> kinds;
  std::string uil_target_id;
  std::string custom_rule = "loitering is anomalous";

  std::map<std::string, std::vector<double>> image_vectors;       // frame id -> image embedding
  std::map<std::string, std::vector<double>> image_text_vectors;  // candidate text -> image-space vector
  std::map<std::string, std::vector<double>> text_vectors;        // candidate or caption text -> vector
  std::map<std::string, std::string> captions;                    // frame id -> caption

  std::size_t count(FrameKind kind) const;
  bool is_anomaly(std::size_t i) const { return frames[i].label == 1; }

  // Fresh scripted backends over the fixture tables.
  BackendSet backends(std::vector<std::string> llm_responses = {"- people walk along the sidewalk"}) const;
};

World make_world(const WorldOptions& options = {});

// Eleven normal rules shared by the fixtures.
std::vector<std::string> fixture_rules();

// The shipped 339-label resource.
std::vector<std::string> fixture_labels();

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim);

}  // namespace cerberus::testing
