#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cerberus/backend_config.hpp"
#include "cerberus/cascade.hpp"
#include "cerberus/dataset.hpp"
#include "cerberus/error.hpp"
#include "cerberus/eval.hpp"
#include "cerberus/evolution.hpp"
#include "cerberus/fileio.hpp"
#include "cerberus/induction.hpp"
#include "cerberus/rulebase.hpp"
#include "cerberus/service.hpp"

#ifndef CERBERUS_RESOURCE_DIR
#define CERBERUS_RESOURCE_DIR "resources"
#endif

namespace fs = std::filesystem;
using namespace cerberus;

namespace {

BackendSet backends_from(const std::string& config_path) {
  BackendConfigs configs = config_path.empty() ? default_backend_configs() : load_backend_configs(config_path);
  apply_env_overrides(configs);
  return make_backends(configs);
}

DatasetManifest manifest_from(const std::string& manifest_path, const std::string& frames_dir) {
  DatasetManifest m = load_manifest(manifest_path);
  if (!frames_dir.empty()) m.base_dir = frames_dir;
  return m;
}

Service* running_service = nullptr;

void on_signal(int) {
  if (running_service != nullptr) running_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded video anomaly detection: rule induction, detection, evaluation and feedback."};
  app.require_subcommand(1);
  std::string backends_path;
  app.add_option("--backends", backends_path, "Backend config (TOML); defaults to mock backends")
      ->check(CLI::ExistingFile);

  // induce
  auto* induce = app.add_subcommand("induce", "Induce normality rules from the normal frames of a manifest");
  std::string induce_manifest, induce_frames, induce_out;
  std::string labels_path = std::string(CERBERUS_RESOURCE_DIR) + "/perturbed_labels.txt";
  std::size_t segment_len = kDefaultSegmentLen, stride = kDefaultStride;
  induce->add_option("--manifest", induce_manifest, "Frame manifest (JSONL)")->required()->check(CLI::ExistingFile);
  induce->add_option("--frames", induce_frames, "Directory frame paths are relative to");
  induce->add_option("--out", induce_out, "Output rulebase")->required();
  induce->add_option("--segment-len", segment_len, "Frames per segment")->capture_default_str();
  induce->add_option("--stride", stride, "Window stride")->capture_default_str();
  induce->add_option("--labels", labels_path, "Perturbed label list")->capture_default_str();

  // detect
  auto* detect = app.add_subcommand("detect", "Run the cascade over a manifest");
  std::string detect_rulebase, detect_manifest, detect_frames, detect_out, detect_dump, detect_queue, detect_mode = "both";
  bool pipelined = false;
  detect->add_option("--rulebase", detect_rulebase)->required()->check(CLI::ExistingFile);
  detect->add_option("--manifest", detect_manifest)->required()->check(CLI::ExistingFile);
  detect->add_option("--frames", detect_frames, "Directory frame paths are relative to");
  detect->add_option("--mode", detect_mode, "both | coarse | fine")->capture_default_str();
  detect->add_option("--out", detect_out, "Verdict file (JSONL)")->required();
  detect->add_option("--dump-prompts", detect_dump, "Write prompted frames here");
  detect->add_option("--queue", detect_queue, "Also queue abnormal frames for review in this feedback file");
  detect->add_flag("--pipelined", pipelined, "Run stages concurrently");

  // eval
  auto* eval = app.add_subcommand("eval", "Compute metrics for a verdict file");
  std::string eval_manifest, eval_verdicts, eval_out, eval_mode = "both";
  double wall_s = 0.0;
  eval->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--verdicts", eval_verdicts)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Report (JSON)")->required();
  eval->add_option("--mode", eval_mode, "Mode label recorded in the report")->capture_default_str();
  eval->add_option("--wall-seconds", wall_s, "Wall time of the run, for throughput");

  // dataset dup
  auto* dataset = app.add_subcommand("dataset", "Dataset tools");
  dataset->require_subcommand(1);
  auto* dup = dataset->add_subcommand("dup", "Duplicate normal frames down to a target anomaly ratio");
  std::string dup_manifest, dup_out;
  double target_ratio = 0.05;
  dup->add_option("--manifest", dup_manifest)->required()->check(CLI::ExistingFile);
  dup->add_option("--target-ratio", target_ratio)->required();
  dup->add_option("--out", dup_out)->required();

  // evolve
  auto* evolve = app.add_subcommand("evolve", "Feedback loops");
  evolve->require_subcommand(1);
  std::string ev_rulebase, ev_queue, ev_verdicts, ev_manifest, ev_frames, ev_id, ev_rule_text;
  auto* f2c = evolve->add_subcommand("f2c", "Fold stage-2-cleared frames back into the normal rules");
  f2c->add_option("--rulebase", ev_rulebase)->required()->check(CLI::ExistingFile);
  f2c->add_option("--verdicts", ev_verdicts)->required()->check(CLI::ExistingFile);
  f2c->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  f2c->add_option("--frames", ev_frames);
  f2c->add_option("--queue", ev_queue, "Feedback file")->required();
  auto* uil = evolve->add_subcommand("uil", "Operator review queue");
  uil->require_subcommand(1);
  auto* uil_enqueue = uil->add_subcommand("enqueue", "Queue every abnormal verdict for review");
  uil_enqueue->add_option("--verdicts", ev_verdicts)->required()->check(CLI::ExistingFile);
  uil_enqueue->add_option("--queue", ev_queue)->required();
  auto* uil_list = uil->add_subcommand("list", "List pending review items");
  uil_list->add_option("--queue", ev_queue)->required();
  auto* uil_confirm = uil->add_subcommand("confirm", "Confirm an anomaly, optionally adding a rule");
  auto* uil_reject = uil->add_subcommand("reject", "Reject a false positive");
  for (auto* sub : {uil_confirm, uil_reject}) {
    sub->add_option("--queue", ev_queue)->required();
    sub->add_option("--rulebase", ev_rulebase)->required()->check(CLI::ExistingFile);
    sub->add_option("--id", ev_id)->required();
  }
  uil_confirm->add_option("--rule-text", ev_rule_text, "New anomaly rule");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the operator API");
  ServiceConfig svc;
  std::string svc_metrics, svc_frames, token_env;
  serve->add_option("--host", svc.host)->capture_default_str();
  serve->add_option("--port", svc.port)->capture_default_str();
  serve->add_option("--rulebase", svc.rulebase_path)->required()->check(CLI::ExistingFile);
  serve->add_option("--verdicts", svc.verdicts_path)->required()->check(CLI::ExistingFile);
  serve->add_option("--queue", svc.queue_path)->required();
  serve->add_option("--metrics", svc_metrics, "Report served at /api/metrics/latest");
  serve->add_option("--frames-dir", svc_frames, "Prompted frames served under /frames/");
  serve->add_option("--token-env", token_env, "Environment variable holding the bearer token");

  CLI11_PARSE(app, argc, argv);

  try {
    if (induce->parsed()) {
      auto manifest = manifest_from(induce_manifest, induce_frames);
      std::vector<Frame> normals;
      for (auto& f : frames_from_manifest(manifest)) {
        if (f.label == 0) normals.push_back(std::move(f));
      }
      Params params;
      params.segment_len = static_cast<int>(segment_len);
      InductionOptions options;
      options.stride = stride;
      auto report = induce_rulebase(normals, backends_from(backends_path), params, load_label_list(labels_path), options);
      save_rulebase(report.rulebase, induce_out);
      std::cout << "segments: " << report.segments << ", failed: " << report.failures.size()
                << ", rules: " << report.rulebase.normal_rules.size() << "\n";
      for (const auto& f : report.failures) std::cerr << "segment " << f.segment_index << ": " << f.message << "\n";
    } else if (detect->parsed()) {
      const RuleBase rb = load_rulebase(detect_rulebase);
      auto manifest = manifest_from(detect_manifest, detect_frames);
      CascadeConfig config;
      config.mode = cascade_mode_from_string(detect_mode);
      config.params = rb.params;
      config.pipelined = pipelined;
      if (!detect_dump.empty()) config.dump_prompts = fs::path(detect_dump);
      auto backends = backends_from(backends_path);
      Cascade cascade(config, backends);
      cascade.set_pool(embed_pool(std::make_shared<const CandidatePool>(build_candidate_pool(rb)), backends, config.mode));
      auto result = cascade.process_stream(frames_from_manifest(manifest));
      save_verdicts(result.records, detect_out);
      if (!detect_queue.empty()) {
        FeedbackQueue queue{fs::path(detect_queue)};
        queue.add(enqueue_uil(result.records));
      }
      std::cout << "frames: " << result.frames << ", active: " << result.active << ", escalated: " << result.escalated
                << ", rho: " << result.rho << ", fps: " << result.fps() << "\n";
    } else if (eval->parsed()) {
      auto manifest = load_manifest(eval_manifest);
      auto records = load_verdicts(eval_verdicts);
      auto report = compute_report(records, manifest, wall_s, eval_mode);
      write_file_atomic(eval_out, to_json(report).dump(2) + "\n");
      std::cout << to_json(report).dump(2) << "\n";
    } else if (dup->parsed()) {
      auto manifest = load_manifest(dup_manifest);
      auto out = duplicate_normals(manifest, target_ratio);
      save_manifest(out, dup_out);
      std::cout << "entries: " << out.entries.size() << ", anomaly ratio: " << out.anomaly_ratio() << "\n";
    } else if (f2c->parsed()) {
      RuleStore store(load_rulebase(ev_rulebase));
      FeedbackQueue queue{fs::path(ev_queue)};
      FeedbackLoop loop(store, queue, fs::path(ev_rulebase));
      FrameIndex frames(frames_from_manifest(manifest_from(ev_manifest, ev_frames)));
      auto out = loop.run_f2c(load_verdicts(ev_verdicts), frames, backends_from(backends_path));
      std::cout << "applied: " << out.applied_ids.size() << ", new rules: " << out.new_rules.size()
                << ", version: " << out.rulebase.version << "\n";
      for (const auto& r : out.new_rules) std::cout << "  + " << r << "\n";
    } else if (uil_enqueue->parsed()) {
      FeedbackQueue queue{fs::path(ev_queue)};
      auto added = queue.add(enqueue_uil(load_verdicts(ev_verdicts)));
      std::cout << "queued: " << added.size() << "\n";
    } else if (uil_list->parsed()) {
      FeedbackQueue queue{fs::path(ev_queue)};
      for (const auto& item : queue.pending(FeedbackKind::uil_pending)) {
        std::cout << item.id << "\t" << item.frame_id << "\t" << item.evidence.anomaly_score << "\t"
                  << item.evidence.caption << "\n";
      }
    } else if (uil_confirm->parsed() || uil_reject->parsed()) {
      RuleStore store(load_rulebase(ev_rulebase));
      FeedbackQueue queue{fs::path(ev_queue)};
      FeedbackLoop loop(store, queue, fs::path(ev_rulebase));
      std::optional<std::string> text;
      if (!ev_rule_text.empty()) text = ev_rule_text;
      auto out = loop.decide(ev_id, uil_confirm->parsed() ? Decision::confirm : Decision::reject, text);
      std::cout << out.item.id << ": " << to_string(out.item.status) << ", version: " << out.rulebase.version << "\n";
    } else if (serve->parsed()) {
      if (!svc_metrics.empty()) svc.metrics_path = fs::path(svc_metrics);
      if (!svc_frames.empty()) svc.frames_dir = fs::path(svc_frames);
      if (!token_env.empty()) {
        const char* token = std::getenv(token_env.c_str());
        if (token == nullptr || *token == '\0') throw Error(ErrorCode::BadParams, token_env + " is not set");
        svc.token = token;
      }
      Service service(svc);
      running_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << svc.host << ":" << svc.port << std::endl;
      service.run();
      running_service = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
