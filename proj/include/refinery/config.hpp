#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/chain.hpp"
#include "refinery/dataset.hpp"
#include "refinery/taxonomy.hpp"

// Experiment configuration: one versioned JSON document fully determines a
// chain run. Validation resolves the whole document -- including the
// existence of every referenced file -- before any compute starts, and
// errors name the offending field.

namespace refinery {

struct DatasetPaths {
  std::string train;
  std::string val;
  std::string classes;
  std::string normalization;   // optional; recomputed from train when absent
  std::string taxonomy_tree;   // required only for category_taxonomy stages
  std::string taxonomy_leaves;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  DatasetPaths data;
  std::vector<ChainStageSpec> stages;
};

namespace config_detail {

[[noreturn]] inline void fail(const std::string& where, const std::string& why) {
  throw ConfigError(where + ": " + why);
}

inline const nlohmann::json& need(const nlohmann::json& j, const char* key,
                                  const std::string& where) {
  if (!j.contains(key)) fail(where + "." + key, "missing required field");
  return j.at(key);
}

template <typename T>
inline T as(const nlohmann::json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(where, "wrong type");
  }
}

inline void require_file(const std::string& path, const std::string& where) {
  if (!std::filesystem::exists(path))
    fail(where, "file not found: " + path);
}

inline TrainingSchedule parse_schedule(const nlohmann::json& j,
                                       const std::string& where) {
  TrainingSchedule s;
  if (j.contains("preset")) {
    const std::string preset = as<std::string>(j.at("preset"), where + ".preset");
    if (preset == "desk")
      s = TrainingSchedule::desk();
    else if (preset == "paper")
      s = TrainingSchedule::paper_preset();
    else
      fail(where + ".preset", "unknown preset '" + preset + "'");
  }
  if (j.contains("epochs")) s.epochs = as<int>(j.at("epochs"), where + ".epochs");
  if (j.contains("lr")) s.lr_initial = as<double>(j.at("lr"), where + ".lr");
  if (j.contains("drops")) {
    s.drops.clear();
    const nlohmann::json& drops = j.at("drops");
    if (!drops.is_array()) fail(where + ".drops", "expected a list of [epoch, divisor]");
    for (std::size_t i = 0; i < drops.size(); ++i) {
      const nlohmann::json& d = drops[i];
      const std::string dwhere = where + ".drops[" + std::to_string(i) + "]";
      if (!d.is_array() || d.size() != 2) fail(dwhere, "expected [epoch, divisor]");
      s.drops.push_back({as<int>(d[0], dwhere), as<double>(d[1], dwhere)});
    }
  }
  if (j.contains("momentum"))
    s.momentum = as<double>(j.at("momentum"), where + ".momentum");
  if (j.contains("weight_decay"))
    s.weight_decay = as<double>(j.at("weight_decay"), where + ".weight_decay");
  if (j.contains("batch_size"))
    s.batch_size = as<int>(j.at("batch_size"), where + ".batch_size");
  if (j.contains("seed"))
    s.seed = as<std::uint64_t>(j.at("seed"), where + ".seed");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    fail(where, e.what());
  }
  return s;
}

inline ChainStageSpec parse_stage(const nlohmann::json& j,
                                  const std::string& where) {
  ChainStageSpec spec;
  spec.arch = as<std::string>(need(j, "arch", where), where + ".arch");
  try {
    arch_by_name(spec.arch, 2);
  } catch (const ConfigError& e) {
    fail(where + ".arch", e.what());
  }
  try {
    spec.provider = provider_kind_from_name(
        as<std::string>(need(j, "provider", where), where + ".provider"));
  } catch (const ConfigError& e) {
    fail(where + ".provider", e.what());
  }
  if (j.contains("loss")) {
    try {
      spec.loss = loss_kind_from_name(as<std::string>(j.at("loss"), where + ".loss"));
    } catch (const ConfigError& e) {
      fail(where + ".loss", e.what());
    }
  }
  if (j.contains("schedule"))
    spec.schedule = parse_schedule(j.at("schedule"), where + ".schedule");
  if (j.contains("adversarial") && !j.at("adversarial").is_null()) {
    const nlohmann::json& a = j.at("adversarial");
    AdversarialConfig adv;
    if (a.contains("eta")) adv.eta = as<double>(a.at("eta"), where + ".adversarial.eta");
    if (a.contains("clip")) {
      const std::string clip =
          as<std::string>(a.at("clip"), where + ".adversarial.clip");
      if (clip == "none")
        adv.clip = ClipMode::None;
      else if (clip == "input_range")
        adv.clip = ClipMode::InputRange;
      else
        fail(where + ".adversarial.clip", "expected 'none' or 'input_range'");
    }
    if (a.contains("from_epoch"))
      adv.enabled_from_epoch =
          as<int>(a.at("from_epoch"), where + ".adversarial.from_epoch");
    try {
      adv.validate();
    } catch (const ConfigError& e) {
      fail(where + ".adversarial", e.what());
    }
    spec.adversarial = adv;
  }
  if (j.contains("init")) {
    const std::string init = as<std::string>(j.at("init"), where + ".init");
    if (init != "random") {
      require_file(init, where + ".init");
      spec.init_checkpoint = init;
    }
  }
  if (j.contains("teacher")) {
    spec.teacher_checkpoint = as<std::string>(j.at("teacher"), where + ".teacher");
    require_file(spec.teacher_checkpoint, where + ".teacher");
  }
  if (j.contains("taxonomy_normalization")) {
    const std::string n = as<std::string>(j.at("taxonomy_normalization"),
                                          where + ".taxonomy_normalization");
    if (n == "sum")
      spec.taxonomy_norm = TaxonomyNormalization::Sum;
    else if (n == "softmax")
      spec.taxonomy_norm = TaxonomyNormalization::Softmax;
    else
      fail(where + ".taxonomy_normalization", "expected 'sum' or 'softmax'");
  }
  if (j.contains("taxonomy_temperature"))
    spec.taxonomy_temperature =
        as<double>(j.at("taxonomy_temperature"), where + ".taxonomy_temperature");
  if (j.contains("eval_every")) {
    spec.eval_every = as<int>(j.at("eval_every"), where + ".eval_every");
    if (spec.eval_every < 1) fail(where + ".eval_every", "must be >= 1");
  }
  return spec;
}

} // namespace config_detail

inline ExperimentConfig load_experiment_config(
    const std::string& path, std::optional<std::uint64_t> seed_override = {},
    const std::string& out_override = "") {
  using namespace config_detail;
  namespace fs = std::filesystem;

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }

  const int version = as<int>(need(j, "version", "config"), "config.version");
  if (version != 1)
    fail("config.version", "unsupported version " + std::to_string(version));

  ExperimentConfig cfg;
  if (j.contains("seed")) cfg.seed = as<std::uint64_t>(j.at("seed"), "config.seed");
  if (seed_override) cfg.seed = *seed_override;
  if (j.contains("out")) cfg.out_dir = as<std::string>(j.at("out"), "config.out");
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.out_dir.empty()) fail("config.out", "missing output directory");

  const nlohmann::json& ds = need(j, "dataset", "config");
  if (ds.contains("dir")) {
    const std::string dir = as<std::string>(ds.at("dir"), "config.dataset.dir");
    require_file(dir, "config.dataset.dir");
    cfg.data.train = (fs::path(dir) / "train.lrds").string();
    cfg.data.val = (fs::path(dir) / "val.lrds").string();
    cfg.data.classes = (fs::path(dir) / "classes.tsv").string();
    const std::string norm = (fs::path(dir) / "normalization.tsv").string();
    if (fs::exists(norm)) cfg.data.normalization = norm;
    const std::string tree = (fs::path(dir) / "taxonomy.tsv").string();
    const std::string leaves = (fs::path(dir) / "leaves.tsv").string();
    if (fs::exists(tree)) cfg.data.taxonomy_tree = tree;
    if (fs::exists(leaves)) cfg.data.taxonomy_leaves = leaves;
  }
  if (ds.contains("train"))
    cfg.data.train = as<std::string>(ds.at("train"), "config.dataset.train");
  if (ds.contains("val"))
    cfg.data.val = as<std::string>(ds.at("val"), "config.dataset.val");
  if (ds.contains("classes"))
    cfg.data.classes = as<std::string>(ds.at("classes"), "config.dataset.classes");
  if (ds.contains("normalization"))
    cfg.data.normalization =
        as<std::string>(ds.at("normalization"), "config.dataset.normalization");
  if (ds.contains("taxonomy_tree"))
    cfg.data.taxonomy_tree =
        as<std::string>(ds.at("taxonomy_tree"), "config.dataset.taxonomy_tree");
  if (ds.contains("taxonomy_leaves"))
    cfg.data.taxonomy_leaves =
        as<std::string>(ds.at("taxonomy_leaves"), "config.dataset.taxonomy_leaves");

  if (cfg.data.train.empty()) fail("config.dataset.train", "missing");
  if (cfg.data.val.empty()) fail("config.dataset.val", "missing");
  require_file(cfg.data.train, "config.dataset.train");
  require_file(cfg.data.val, "config.dataset.val");
  if (!cfg.data.classes.empty())
    require_file(cfg.data.classes, "config.dataset.classes");
  if (!cfg.data.normalization.empty())
    require_file(cfg.data.normalization, "config.dataset.normalization");

  const nlohmann::json& chain = need(j, "chain", "config");
  if (!chain.is_array() || chain.empty())
    fail("config.chain", "expected a non-empty list of stages");
  for (std::size_t i = 0; i < chain.size(); ++i)
    cfg.stages.push_back(
        parse_stage(chain[i], "config.chain[" + std::to_string(i) + "]"));

  // Structural chain checks that need no data: stage-1 teacher rule and
  // taxonomy file availability.
  const ChainStageSpec& first = cfg.stages.front();
  if (first.provider != ProviderKind::GroundTruth &&
      first.provider != ProviderKind::CategoryTaxonomy &&
      first.teacher_checkpoint.empty())
    fail("config.chain[0].teacher",
         "first stage needs the ground_truth provider or an explicit teacher");
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    if (i > 0 && cfg.stages[i].provider == ProviderKind::GroundTruth)
      fail("config.chain[" + std::to_string(i) + "].provider",
           "only the first stage may use ground_truth labels");
    if (cfg.stages[i].provider == ProviderKind::CategoryTaxonomy) {
      if (cfg.data.taxonomy_tree.empty())
        fail("config.dataset.taxonomy_tree",
             "required by chain[" + std::to_string(i) + "] (category_taxonomy)");
      if (cfg.data.taxonomy_leaves.empty())
        fail("config.dataset.taxonomy_leaves",
             "required by chain[" + std::to_string(i) + "] (category_taxonomy)");
      require_file(cfg.data.taxonomy_tree, "config.dataset.taxonomy_tree");
      require_file(cfg.data.taxonomy_leaves, "config.dataset.taxonomy_leaves");
    }
  }
  return cfg;
}

struct LoadedData {
  Dataset train;
  Dataset val;
  std::optional<TaxonomyTree> tree;
  std::vector<int> class_leaves;
};

/// Loads a dataset file: packed binary for .lrds, manifest text otherwise.
inline Dataset load_dataset_file(const std::string& path,
                                 std::size_t num_classes_hint) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".lrds")
    return load_packed(path);
  return load_manifest(path, num_classes_hint);
}

inline LoadedData load_experiment_data(const ExperimentConfig& cfg) {
  LoadedData data;
  std::vector<std::string> class_names;
  std::size_t num_classes_hint = 0;
  if (!cfg.data.classes.empty()) {
    class_names = load_class_names(cfg.data.classes);
    num_classes_hint = class_names.size();
  }
  data.train = load_dataset_file(cfg.data.train, num_classes_hint);
  data.val = load_dataset_file(cfg.data.val, num_classes_hint);
  data.train.split = Split::Train;
  data.val.split = Split::Val;
  if (!class_names.empty()) {
    if (class_names.size() != data.train.num_classes)
      throw ConfigError("config.dataset.classes: table has " +
                        std::to_string(class_names.size()) +
                        " classes, dataset has " +
                        std::to_string(data.train.num_classes));
    data.train.class_names = class_names;
    data.val.class_names = class_names;
  }
  if (data.train.num_classes != data.val.num_classes)
    throw ConfigError("config.dataset: train/val class count mismatch");

  if (!cfg.data.normalization.empty())
    data.train.norm = load_norm_stats(cfg.data.normalization);
  else
    data.train.norm = compute_norm_stats(data.train.images);
  data.val.norm = data.train.norm;

  if (!cfg.data.taxonomy_tree.empty()) {
    data.tree = TaxonomyTree::load(cfg.data.taxonomy_tree);
    if (!cfg.data.taxonomy_leaves.empty())
      data.class_leaves = load_leaf_bindings(cfg.data.taxonomy_leaves, *data.tree);
  }
  return data;
}

} // namespace refinery
