#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/adversarial.hpp"
#include "refinery/checkpoint.hpp"
#include "refinery/classifier.hpp"
#include "refinery/dataset.hpp"
#include "refinery/eval.hpp"
#include "refinery/labels.hpp"
#include "refinery/losses.hpp"
#include "refinery/taxonomy.hpp"

// The refinement engine: one teacher->student training stage, and the
// sequential chain that wires each stage's student in as the next stage's
// teacher. Subsequent stages train purely from generated labels; the
// original hard labels stay untouched after stage one.

namespace refinery {

struct LrDrop {
  int epoch = 0;     // first epoch at which the divided rate applies
  double divisor = 10.0;
};

struct TrainingSchedule {
  int epochs = 60;
  double lr_initial = 0.05;
  std::vector<LrDrop> drops = {{42, 10.0}, {51, 10.0}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("schedule: epochs must be >= 1");
    if (lr_initial <= 0.0) throw ConfigError("schedule: lr must be positive");
    if (batch_size < 2)
      throw ConfigError("schedule: batch size must be >= 2 (batch statistics)");
    int prev = -1;
    for (const LrDrop& d : drops) {
      if (d.epoch <= prev || d.epoch >= epochs)
        throw ConfigError("schedule: lr drops must be strictly increasing and "
                          "inside the epoch range");
      if (d.divisor <= 0.0) throw ConfigError("schedule: bad lr divisor");
      prev = d.epoch;
    }
  }

  double lr_at(int epoch) const {
    double lr = lr_initial;
    for (const LrDrop& d : drops)
      if (epoch >= d.epoch) lr /= d.divisor;
    return lr;
  }

  /// Desk-scale default: proportional to the reference schedule of 200
  /// epochs with /10 drops after epochs 140 and 170.
  static TrainingSchedule desk() { return TrainingSchedule{}; }

  static TrainingSchedule paper_preset() {
    TrainingSchedule s;
    s.epochs = 200;
    s.lr_initial = 0.1;
    s.drops = {{140, 10.0}, {170, 10.0}};
    s.batch_size = 256;
    return s;
  }
};

enum class InitMode { Random, FromCheckpoint };

struct StageConfig {
  int stage_index = 1; // 1-based position in the chain
  ClassifierArch student_arch;
  ProviderKind provider = ProviderKind::GroundTruth;
  LossKind loss = LossKind::KlLabelToOutput;
  TrainingSchedule schedule;
  std::optional<AdversarialConfig> adversarial;
  InitMode init = InitMode::Random;
  std::optional<Classifier> init_from;
  TaxonomyNormalization taxonomy_norm = TaxonomyNormalization::Sum;
  double taxonomy_temperature = 1.0;
  int eval_every = 1; // epochs between metric evaluations (last always runs)
};

struct StageTelemetry {
  LabelTelemetry labels;
  std::uint64_t teacher_stat_writes = 0;
  std::uint64_t train_hard_label_reads = 0;
  std::string teacher_hash_before;
  std::string teacher_hash_after;
};

struct StageResult {
  Classifier student;
  MetricsRecord metrics;
  StageTelemetry telemetry;
};

using EpochCallback = std::function<void(int stage, const EpochMetrics&)>;

namespace detail {

inline void validate_stage(const StageConfig& cfg, const Classifier* teacher,
                           const TaxonomyTree* tree,
                           const std::vector<int>* class_leaves,
                           const Dataset& train) {
  cfg.schedule.validate();
  if (train.size() == 0) throw ConfigError("stage: empty training set");
  if (cfg.provider == ProviderKind::GroundTruth) {
    if (teacher)
      throw ConfigError("stage: ground_truth provider must not have a teacher");
    if (cfg.stage_index > 1)
      throw ConfigError("stage: only the first stage may train from "
                        "ground-truth labels");
  } else if (cfg.provider == ProviderKind::CategoryTaxonomy) {
    if (!tree || !class_leaves)
      throw ConfigError("stage: category_taxonomy provider needs a taxonomy "
                        "tree and leaf bindings");
  } else {
    if (!teacher)
      throw ConfigError(std::string("stage: provider ") +
                        provider_kind_name(cfg.provider) + " needs a teacher");
  }
  if (teacher && !teacher->frozen)
    throw ConfigError("stage: teacher must be frozen");
  if (teacher && teacher->arch.num_classes != train.num_classes)
    throw ConfigError("stage: teacher class count does not match dataset");
  if (cfg.adversarial) {
    cfg.adversarial->validate();
    if (!provider_is_dynamic(cfg.provider))
      throw ConfigError("stage: adversarial jittering needs a dynamic "
                        "teacher provider");
  }
  if (cfg.init == InitMode::FromCheckpoint) {
    if (!cfg.init_from)
      throw ConfigError("stage: init=from_checkpoint without a checkpoint");
    if (cfg.init_from->arch.name != cfg.student_arch.name ||
        cfg.init_from->arch.num_classes != cfg.student_arch.num_classes)
      throw ConfigError("stage: init checkpoint architecture mismatch");
  }
  if (cfg.student_arch.num_classes != train.num_classes)
    throw ConfigError("stage: student class count does not match dataset");
}

/// Builds the stage's label provider, computing (and optionally caching)
/// static tables. Cache files are keyed by teacher, dataset and provider so
/// a rerun never recomputes them.
inline StageLabeler build_labeler(const StageConfig& cfg, Classifier* teacher,
                                  const Dataset& train, const TaxonomyTree* tree,
                                  const std::vector<int>* class_leaves,
                                  const std::string& cache_dir) {
  namespace fs = std::filesystem;
  switch (cfg.provider) {
    case ProviderKind::GroundTruth:
      return StageLabeler::ground_truth();
    case ProviderKind::SoftDynamic:
      return StageLabeler::soft_dynamic(*teacher);
    case ProviderKind::HardDynamic:
      return StageLabeler::hard_dynamic(*teacher);
    case ProviderKind::SoftStatic:
    case ProviderKind::CategoryVisual: {
      const bool per_image = cfg.provider == ProviderKind::SoftStatic;
      std::string cache_path;
      if (!cache_dir.empty()) {
        const std::string key =
            sha256_hex(model_hash(*teacher) + dataset_hash(train) +
                       provider_kind_name(cfg.provider))
                .substr(0, 16);
        cache_path = (fs::path(cache_dir) /
                      (std::string("labels_") + provider_kind_name(cfg.provider) +
                       "_" + key + ".lrlc"))
                         .string();
        if (fs::exists(cache_path)) {
          auto rows = load_label_cache(cache_path, train.num_classes);
          if (per_image) {
            std::unordered_map<std::uint32_t, LabelVector> by_id;
            for (auto& [key_id, row] : rows) by_id[key_id] = std::move(row);
            std::vector<LabelVector> table(train.size());
            for (std::size_t i = 0; i < train.size(); ++i) {
              auto it = by_id.find(train.ids[i]);
              if (it == by_id.end())
                throw IoError(cache_path + ": missing image id " +
                              std::to_string(train.ids[i]));
              table[i] = it->second;
            }
            return StageLabeler::soft_static(std::move(table));
          }
          std::vector<LabelVector> table(train.num_classes);
          for (auto& [key_cls, row] : rows) {
            if (key_cls >= table.size())
              throw IoError(cache_path + ": class key out of range");
            table[key_cls] = std::move(row);
          }
          return StageLabeler::category(cfg.provider, std::move(table));
        }
      }
      std::vector<LabelVector> table =
          per_image ? soft_static_labels(*teacher, train)
                    : category_visual_labels(*teacher, train);
      if (!cache_path.empty()) {
        std::vector<std::pair<std::uint32_t, LabelVector>> rows;
        for (std::size_t i = 0; i < table.size(); ++i)
          rows.emplace_back(per_image ? train.ids[i]
                                      : static_cast<std::uint32_t>(i),
                            table[i]);
        save_label_cache(rows, train.num_classes, cache_path);
      }
      if (per_image) return StageLabeler::soft_static(std::move(table));
      return StageLabeler::category(cfg.provider, std::move(table));
    }
    case ProviderKind::CategoryTaxonomy:
      return StageLabeler::category(
          cfg.provider,
          category_taxonomy_labels(*tree, *class_leaves, cfg.taxonomy_norm,
                                   cfg.taxonomy_temperature));
  }
  throw ConfigError("stage: bad provider kind");
}

} // namespace detail

/// Runs one full stage: crops sampled on the fly, labels obtained from the
/// stage provider (dynamic providers label the exact crop tensors the
/// student sees), chosen loss backpropagated, SGD with the learning-rate
/// schedule. Bit-reproducible for a fixed schedule seed.
inline StageResult train_stage(const StageConfig& cfg, Classifier* teacher,
                               const Dataset& train, const Dataset& val,
                               const TaxonomyTree* tree = nullptr,
                               const std::vector<int>* class_leaves = nullptr,
                               const std::string& cache_dir = "",
                               const EpochCallback& on_epoch = nullptr) {
  detail::validate_stage(cfg, teacher, tree, class_leaves, train);
  const auto t_start = std::chrono::steady_clock::now();

  StageResult result;
  result.telemetry.teacher_hash_before = teacher ? model_hash(*teacher) : "";
  const std::uint64_t label_reads_before = train.training_label_reads;
  const std::uint64_t teacher_writes_before = teacher ? teacher->bn_stat_writes : 0;

  // Student initialization.
  if (cfg.init == InitMode::FromCheckpoint) {
    result.student = *cfg.init_from;
    result.student.frozen = false;
    result.student.bn_stat_writes = 0;
  } else {
    Rng init_rng = make_rng(cfg.schedule.seed, "init", cfg.stage_index);
    result.student = make_classifier(cfg.student_arch, init_rng);
  }
  Classifier& student = result.student;

  StageLabeler labeler = detail::build_labeler(cfg, teacher, train, tree,
                                               class_leaves, cache_dir);

  SgdState sgd_state;
  const std::size_t n_train = train.size();
  const std::size_t batch_size = static_cast<std::size_t>(cfg.schedule.batch_size);
  const std::size_t input = cfg.student_arch.input_size;
  const std::size_t k = cfg.student_arch.num_classes;

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  result.metrics.stage = cfg.stage_index;
  for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    const SgdConfig sgd{cfg.schedule.lr_at(epoch), cfg.schedule.momentum,
                        cfg.schedule.weight_decay};
    Rng shuffle_rng = make_rng(cfg.schedule.seed, "shuffle", cfg.stage_index,
                               static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const bool adversarial_active =
        cfg.adversarial && epoch >= cfg.adversarial->enabled_from_epoch;

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < n_train; start += batch_size) {
      const std::size_t n = std::min(batch_size, n_train - start);
      if (n < 2) break; // a trailing single sample cannot form batch statistics

      // Crops are a pure function of (seed, epoch, position in epoch), so
      // prefetch parallelism could never change the stream.
      Tensor batch({n, 3, input, input});
      std::vector<std::size_t> sample_indices(n);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = order[start + j];
        sample_indices[j] = idx;
        Rng crop_rng = make_rng(cfg.schedule.seed, "crop", cfg.stage_index,
                                static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(start + j));
        const Image& img = train.images[idx];
        const CropSpec spec = sample_crop(crop_rng, static_cast<int>(img.width),
                                          static_cast<int>(img.height));
        place_in_batch(batch, j, extract_crop(img, spec, input), train.norm);
      }

      if (adversarial_active) {
        const Tensor jittered =
            jitter(*teacher, student, batch, *cfg.adversarial, &train.norm);
        batch = compose_batch(batch, jittered);
        std::vector<std::size_t> doubled(2 * n);
        for (std::size_t j = 0; j < n; ++j) {
          doubled[2 * j] = sample_indices[j];
          doubled[2 * j + 1] = sample_indices[j];
        }
        sample_indices = std::move(doubled);
      }

      // Labels describe exactly the tensors the student trains on; for
      // adversarial batches dynamic teachers relabel the jittered crops.
      const std::vector<LabelVector> labels =
          labeler.labels(batch, sample_indices, train);

      ForwardState state;
      forward(student, batch, BnMode::Train, &state);
      const std::size_t rows = batch.dim(0);
      Tensor dlogits({rows, k});
      const float inv_rows = 1.0f / static_cast<float>(rows);
      for (std::size_t j = 0; j < rows; ++j) {
        const float* logits = state.logits.data.data() + j * k;
        const std::vector<double> q = softmax_row(logits, k);
        LabelVector p_cur;
        p_cur.probs.assign(q.begin(), q.end());
        loss_sum += loss_value(cfg.loss, labels[j], p_cur);
        ++loss_count;
        const std::vector<float> g =
            loss_grad_wrt_logits(cfg.loss, labels[j], logits, k);
        for (std::size_t c = 0; c < k; ++c)
          dlogits.data[j * k + c] = g[c] * inv_rows;
      }
      const Gradients grads = backward(student, state, dlogits);
      sgd_step(student, grads, sgd, sgd_state);
    }

    const bool measure = (epoch % cfg.eval_every == 0) ||
                         epoch + 1 == cfg.schedule.epochs;
    if (measure) {
      EpochMetrics em;
      em.epoch = epoch;
      em.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
      em.train_top1 = topk_accuracy(student, train, 1);
      if (val.size() > 0) {
        em.val_top1 = topk_accuracy(student, val, 1);
        em.val_top5 = topk_accuracy(student, val, std::min<std::size_t>(5, k));
      }
      result.metrics.epochs.push_back(em);
      if (on_epoch) on_epoch(cfg.stage_index, em);
    }
  }

  result.metrics.per_category_train = per_category_accuracy(student, train);
  if (val.size() > 0)
    result.metrics.per_category_val = per_category_accuracy(student, val);
  result.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();

  result.telemetry.labels = labeler.telemetry();
  result.telemetry.teacher_hash_after = teacher ? model_hash(*teacher) : "";
  result.telemetry.teacher_stat_writes =
      teacher ? teacher->bn_stat_writes - teacher_writes_before : 0;
  result.telemetry.train_hard_label_reads =
      train.training_label_reads - label_reads_before;
  return result;
}

} // namespace refinery
