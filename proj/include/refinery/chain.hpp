#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/train.hpp"

// Sequential refinement chains. Stage t trains against labels generated by
// stage t-1's checkpoint unless an explicit teacher checkpoint overrides the
// wiring (cross-architecture refinement). Every stage persists its
// checkpoint, metrics and a manifest entry; completed stages are skipped on
// rerun when their recorded checkpoint still matches.

namespace refinery {

struct ChainStageSpec {
  std::string arch = "smallnet";
  ProviderKind provider = ProviderKind::GroundTruth;
  LossKind loss = LossKind::KlLabelToOutput;
  TrainingSchedule schedule;
  std::optional<AdversarialConfig> adversarial;
  std::string init_checkpoint;    // empty: random initialization
  std::string teacher_checkpoint; // empty: previous stage's output
  TaxonomyNormalization taxonomy_norm = TaxonomyNormalization::Sum;
  double taxonomy_temperature = 1.0;
  int eval_every = 1;
};

struct ChainConfig {
  std::vector<ChainStageSpec> stages;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool quiet = false;
};

struct ChainStageOutcome {
  std::string checkpoint_path;
  std::string checkpoint_sha256;
  MetricsRecord metrics;
  StageTelemetry telemetry;
  bool skipped = false;
};

struct ChainResult {
  std::vector<ChainStageOutcome> stages;
  std::string manifest_path;
};

namespace detail {

inline nlohmann::json schedule_json(const TrainingSchedule& s) {
  nlohmann::json j;
  j["epochs"] = s.epochs;
  j["lr"] = s.lr_initial;
  nlohmann::json drops = nlohmann::json::array();
  for (const LrDrop& d : s.drops) drops.push_back({d.epoch, d.divisor});
  j["drops"] = drops;
  j["momentum"] = s.momentum;
  j["weight_decay"] = s.weight_decay;
  j["batch_size"] = s.batch_size;
  j["seed"] = s.seed;
  return j;
}

inline nlohmann::json stage_spec_json(const ChainStageSpec& spec) {
  nlohmann::json j;
  j["arch"] = spec.arch;
  j["provider"] = provider_kind_name(spec.provider);
  j["loss"] = loss_kind_name(spec.loss);
  j["schedule"] = schedule_json(spec.schedule);
  if (spec.adversarial) {
    j["adversarial"] = {
        {"eta", spec.adversarial->eta},
        {"clip", spec.adversarial->clip == ClipMode::InputRange ? "input_range"
                                                                : "none"},
        {"from_epoch", spec.adversarial->enabled_from_epoch}};
  } else {
    j["adversarial"] = nullptr;
  }
  j["init"] = spec.init_checkpoint.empty() ? "random" : spec.init_checkpoint;
  j["teacher"] =
      spec.teacher_checkpoint.empty() ? "previous" : spec.teacher_checkpoint;
  if (spec.provider == ProviderKind::CategoryTaxonomy) {
    j["taxonomy_normalization"] =
        spec.taxonomy_norm == TaxonomyNormalization::Sum ? "sum" : "softmax";
    j["taxonomy_temperature"] = spec.taxonomy_temperature;
  }
  return j;
}

inline void append_metrics_file(const std::string& path,
                                const MetricsRecord& rec) {
  std::ofstream os(path, std::ios::binary | std::ios::app);
  if (!os) throw IoError("cannot open for appending: " + path);
  os << metrics_to_jsonl(rec);
}

inline void write_per_category_csv(const MetricsRecord& rec,
                                   const std::vector<std::string>& class_names,
                                   const std::string& path) {
  std::ostringstream os;
  os << "class_index,class_name,train_acc,val_acc\n";
  const std::size_t k = rec.per_category_train.size();
  for (std::size_t c = 0; c < k; ++c) {
    os << c << ",";
    os << (c < class_names.size() ? class_names[c]
                                  : "class_" + std::to_string(c));
    os << ",";
    if (rec.per_category_train[c]) os << *rec.per_category_train[c];
    os << ",";
    if (c < rec.per_category_val.size() && rec.per_category_val[c])
      os << *rec.per_category_val[c];
    os << "\n";
  }
  write_text_file(path, os.str());
}

} // namespace detail

inline ChainResult run_chain(const ChainConfig& cfg, const Dataset& train,
                             const Dataset& val,
                             const TaxonomyTree* tree = nullptr,
                             const std::vector<int>* class_leaves = nullptr) {
  namespace fs = std::filesystem;
  if (cfg.stages.empty()) throw ConfigError("chain: no stages");
  if (cfg.out_dir.empty()) throw ConfigError("chain: no output directory");
  if (cfg.stages.front().provider != ProviderKind::GroundTruth &&
      cfg.stages.front().teacher_checkpoint.empty() &&
      cfg.stages.front().provider != ProviderKind::CategoryTaxonomy)
    throw ConfigError("chain: stage 1 must use the ground_truth provider or "
                      "name an explicit pretrained teacher checkpoint");
  fs::create_directories(cfg.out_dir);
  const std::string manifest_path =
      (fs::path(cfg.out_dir) / "chain_manifest.json").string();
  const std::string metrics_path =
      (fs::path(cfg.out_dir) / "metrics.jsonl").string();

  nlohmann::json previous_manifest;
  if (fs::exists(manifest_path)) {
    try {
      previous_manifest = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::parse_error&) {
      previous_manifest = nlohmann::json(); // rebuild from scratch
    }
  }

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["seed"] = cfg.seed;
  manifest["dataset"] = {{"train_hash", dataset_hash(train)},
                         {"val_hash", dataset_hash(val)}};
  manifest["stages"] = nlohmann::json::array();
  auto persist_manifest = [&manifest, &manifest_path]() {
    write_text_file(manifest_path, manifest.dump(2) + "\n");
  };

  ChainResult result;
  result.manifest_path = manifest_path;
  Classifier previous_student;
  bool have_previous = false;

  for (std::size_t t = 0; t < cfg.stages.size(); ++t) {
    const ChainStageSpec& spec = cfg.stages[t];
    const int stage_index = static_cast<int>(t) + 1;
    const std::string stage_dir =
        (fs::path(cfg.out_dir) / ("stage_" + std::to_string(stage_index)))
            .string();
    fs::create_directories(stage_dir);
    const std::string ckpt_path =
        (fs::path(stage_dir) / "checkpoint.ckpt").string();

    nlohmann::json entry = detail::stage_spec_json(spec);
    entry["index"] = stage_index;
    entry["checkpoint"] =
        ("stage_" + std::to_string(stage_index)) + "/checkpoint.ckpt";

    // Resumption: an already-completed stage with an intact checkpoint and
    // an identical configuration is reused, not retrained.
    bool skip = false;
    std::string recorded_sha;
    if (previous_manifest.contains("stages") &&
        t < previous_manifest["stages"].size()) {
      const nlohmann::json& old = previous_manifest["stages"][t];
      if (old.value("status", "") == "completed" && fs::exists(ckpt_path)) {
        nlohmann::json old_spec = old;
        for (const char* key :
             {"status", "sha256", "final", "telemetry", "index", "checkpoint"})
          old_spec.erase(key);
        nlohmann::json new_spec = detail::stage_spec_json(spec);
        recorded_sha = old.value("sha256", "");
        if (old_spec == new_spec && sha256_file(ckpt_path) == recorded_sha)
          skip = true;
      }
    }

    ChainStageOutcome outcome;
    outcome.checkpoint_path = ckpt_path;

    if (skip) {
      if (!cfg.quiet)
        std::cerr << "[chain] stage " << stage_index
                  << ": checkpoint up to date, skipping\n";
      previous_student = load_checkpoint(ckpt_path);
      have_previous = true;
      outcome.skipped = true;
      outcome.checkpoint_sha256 = recorded_sha;
      entry["status"] = "completed";
      entry["sha256"] = recorded_sha;
      if (previous_manifest["stages"][t].contains("final"))
        entry["final"] = previous_manifest["stages"][t]["final"];
      if (previous_manifest["stages"][t].contains("telemetry"))
        entry["telemetry"] = previous_manifest["stages"][t]["telemetry"];
      manifest["stages"].push_back(entry);
      persist_manifest();
      result.stages.push_back(std::move(outcome));
      continue;
    }

    // Teacher wiring.
    std::optional<Classifier> teacher_storage;
    Classifier* teacher = nullptr;
    if (spec.provider != ProviderKind::GroundTruth) {
      if (!spec.teacher_checkpoint.empty()) {
        teacher_storage = load_checkpoint(spec.teacher_checkpoint);
      } else if (spec.provider != ProviderKind::CategoryTaxonomy) {
        if (!have_previous)
          throw ConfigError("chain: stage " + std::to_string(stage_index) +
                            " has no previous stage to use as teacher");
        teacher_storage = previous_student;
      }
      if (teacher_storage) {
        teacher_storage->frozen = true;
        teacher = &*teacher_storage;
      }
    }

    StageConfig stage_cfg;
    stage_cfg.stage_index = stage_index;
    stage_cfg.student_arch = arch_by_name(spec.arch, train.num_classes);
    stage_cfg.provider = spec.provider;
    stage_cfg.loss = spec.loss;
    stage_cfg.schedule = spec.schedule;
    if (stage_cfg.schedule.seed == 0)
      stage_cfg.schedule.seed =
          derive_seed(cfg.seed, "stage", static_cast<std::uint64_t>(stage_index));
    stage_cfg.adversarial = spec.adversarial;
    stage_cfg.taxonomy_norm = spec.taxonomy_norm;
    stage_cfg.taxonomy_temperature = spec.taxonomy_temperature;
    stage_cfg.eval_every = spec.eval_every;
    if (!spec.init_checkpoint.empty()) {
      stage_cfg.init = InitMode::FromCheckpoint;
      stage_cfg.init_from = load_checkpoint(spec.init_checkpoint);
    }

    EpochCallback cb;
    if (!cfg.quiet)
      cb = [](int stage, const EpochMetrics& em) {
        std::cerr << "[stage " << stage << "] epoch " << em.epoch
                  << "  loss " << em.train_loss << "  train@1 " << em.train_top1
                  << "  val@1 " << em.val_top1 << "  val@5 " << em.val_top5
                  << "\n";
      };

    entry["status"] = "failed";
    try {
      StageResult stage_result =
          train_stage(stage_cfg, teacher, train, val, tree, class_leaves,
                      stage_dir, cb);
      save_checkpoint(stage_result.student, ckpt_path);
      outcome.checkpoint_sha256 = sha256_file(ckpt_path);
      detail::append_metrics_file(metrics_path, stage_result.metrics);
      detail::write_per_category_csv(
          stage_result.metrics, train.class_names,
          (fs::path(stage_dir) / "per_category.csv").string());

      entry["status"] = "completed";
      entry["sha256"] = outcome.checkpoint_sha256;
      entry["final"] = {
          {"train_top1", stage_result.metrics.final_train_top1()},
          {"val_top1", stage_result.metrics.final_val_top1()},
          {"val_top5", stage_result.metrics.epochs.empty()
                           ? 0.0
                           : stage_result.metrics.epochs.back().val_top5},
          {"wall_seconds", stage_result.metrics.wall_seconds}};
      entry["telemetry"] = {
          {"label_generations", stage_result.telemetry.labels.generations},
          {"train_mode_generations",
           stage_result.telemetry.labels.train_mode_generations},
          {"teacher_stat_writes", stage_result.telemetry.teacher_stat_writes},
          {"train_hard_label_reads",
           stage_result.telemetry.train_hard_label_reads}};

      outcome.metrics = std::move(stage_result.metrics);
      outcome.telemetry = std::move(stage_result.telemetry);
      previous_student = std::move(stage_result.student);
      have_previous = true;
    } catch (...) {
      // Partial results stay on disk; the manifest records the failure.
      manifest["stages"].push_back(entry);
      persist_manifest();
      throw;
    }

    manifest["stages"].push_back(entry);
    persist_manifest();
    result.stages.push_back(std::move(outcome));
  }

  return result;
}

} // namespace refinery
