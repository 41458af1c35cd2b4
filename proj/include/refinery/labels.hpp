#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "refinery/classifier.hpp"
#include "refinery/dataset.hpp"
#include "refinery/label_vector.hpp"
#include "refinery/serialize.hpp"
#include "refinery/taxonomy.hpp"

// Label providers. Dynamic providers query the teacher on the exact crop
// tensors the student is about to see; static providers label each image once
// from its deterministic center crop; category providers share one label per
// class. Teachers with batch normalization answer dynamic queries in training
// mode (batch statistics), which tracks how they themselves were trained --
// but their running statistics are never persisted.

namespace refinery {

enum class ProviderKind {
  GroundTruth,
  SoftDynamic,
  HardDynamic,
  SoftStatic,
  CategoryVisual,
  CategoryTaxonomy,
};

inline const char* provider_kind_name(ProviderKind k) {
  switch (k) {
    case ProviderKind::GroundTruth: return "ground_truth";
    case ProviderKind::SoftDynamic: return "soft_dynamic";
    case ProviderKind::HardDynamic: return "hard_dynamic";
    case ProviderKind::SoftStatic: return "soft_static";
    case ProviderKind::CategoryVisual: return "category_visual";
    case ProviderKind::CategoryTaxonomy: return "category_taxonomy";
  }
  return "?";
}

inline ProviderKind provider_kind_from_name(const std::string& s) {
  if (s == "ground_truth") return ProviderKind::GroundTruth;
  if (s == "soft_dynamic") return ProviderKind::SoftDynamic;
  if (s == "hard_dynamic") return ProviderKind::HardDynamic;
  if (s == "soft_static") return ProviderKind::SoftStatic;
  if (s == "category_visual") return ProviderKind::CategoryVisual;
  if (s == "category_taxonomy") return ProviderKind::CategoryTaxonomy;
  throw ConfigError("unknown label provider: " + s);
}

inline bool provider_needs_teacher(ProviderKind k) {
  return k == ProviderKind::SoftDynamic || k == ProviderKind::HardDynamic ||
         k == ProviderKind::SoftStatic || k == ProviderKind::CategoryVisual;
}

inline bool provider_is_dynamic(ProviderKind k) {
  return k == ProviderKind::SoftDynamic || k == ProviderKind::HardDynamic;
}

struct LabelTelemetry {
  std::uint64_t generations = 0;            // dynamic teacher queries
  std::uint64_t train_mode_generations = 0; // ... issued in BN train mode
};

/// Soft labels for a crop batch: softmax of the teacher run with train-mode
/// batch statistics on exactly this batch. The teacher must be frozen, so the
/// statistics are computed but never persisted.
inline std::vector<LabelVector> generate_labels(Classifier& teacher,
                                                const Tensor& crop_batch,
                                                LabelTelemetry* telemetry = nullptr) {
  if (!teacher.frozen)
    throw ProtocolError("generate_labels: teacher must be frozen");
  if (crop_batch.dim(0) < 2)
    throw DegenerateBatchError(
        "generate_labels: batch statistics need at least 2 crops");
  const Tensor probs = softmax(forward(teacher, crop_batch, BnMode::Train));
  if (telemetry) {
    ++telemetry->generations;
    ++telemetry->train_mode_generations;
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<LabelVector> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = LabelVector(std::vector<float>(probs.data.begin() + i * k,
                                            probs.data.begin() + (i + 1) * k));
  return out;
}

/// One-hot at the teacher's most likely category; ties break toward the
/// lowest class index.
inline std::vector<LabelVector> hard_dynamic_labels(Classifier& teacher,
                                                    const Tensor& crop_batch,
                                                    LabelTelemetry* telemetry = nullptr) {
  std::vector<LabelVector> soft = generate_labels(teacher, crop_batch, telemetry);
  for (LabelVector& v : soft) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < v.size(); ++c)
      if (v[c] > v[best]) best = c;
    v = one_hot(best, v.size());
  }
  return soft;
}

/// Per-image table: the teacher's soft output on each image's center crop,
/// computed once in eval mode (fixed batch-normalization statistics) and
/// shared by every crop of that image.
inline std::vector<LabelVector> soft_static_labels(Classifier& teacher,
                                                   const Dataset& ds,
                                                   std::size_t batch_chunk = 128) {
  if (!teacher.frozen)
    throw ProtocolError("soft_static_labels: teacher must be frozen");
  const std::size_t input = teacher.arch.input_size;
  std::vector<LabelVector> table(ds.size());
  std::vector<std::size_t> chunk;
  for (std::size_t start = 0; start < ds.size(); start += batch_chunk) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(start + batch_chunk, ds.size()); ++i)
      chunk.push_back(i);
    const Tensor batch = center_crop_batch(ds, chunk, input);
    const Tensor probs = softmax(forward(teacher, batch, BnMode::Eval));
    const std::size_t k = probs.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      table[chunk[i]] = LabelVector(std::vector<float>(
          probs.data.begin() + i * k, probs.data.begin() + (i + 1) * k));
  }
  return table;
}

/// Per-category table: mean of the soft static labels over each category's
/// images, renormalized onto the simplex.
inline std::vector<LabelVector> category_visual_labels(Classifier& teacher,
                                                       const Dataset& ds,
                                                       std::size_t batch_chunk = 128) {
  const std::vector<LabelVector> per_image =
      soft_static_labels(teacher, ds, batch_chunk);
  const std::size_t k = ds.num_classes;
  std::vector<std::vector<double>> acc(k, std::vector<double>(k, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int cls = ds.label(i);
    ++counts[static_cast<std::size_t>(cls)];
    for (std::size_t c = 0; c < k; ++c)
      acc[static_cast<std::size_t>(cls)][c] += per_image[i][c];
  }
  std::vector<LabelVector> table(k);
  for (std::size_t cls = 0; cls < k; ++cls) {
    if (counts[cls] == 0)
      throw ConfigError("category_visual_labels: category " +
                        std::to_string(cls) + " has no training images");
    double total = 0.0;
    for (double v : acc[cls]) total += v;
    std::vector<float> row(k);
    for (std::size_t c = 0; c < k; ++c)
      row[c] = static_cast<float>(acc[cls][c] / total);
    table[cls] = LabelVector(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// label cache: magic "LRLC", u32 K, u32 row count, per row u32 key + f32[K].
// Keys are image ids for per-image tables and class indices for per-category
// tables.

inline void save_label_cache(
    const std::vector<std::pair<std::uint32_t, LabelVector>>& rows,
    std::size_t num_classes, const std::string& path) {
  auto os = open_output(path);
  write_bytes(os, "LRLC", 4);
  write_u32(os, static_cast<std::uint32_t>(num_classes));
  write_u32(os, static_cast<std::uint32_t>(rows.size()));
  for (const auto& [key, row] : rows) {
    if (row.size() != num_classes)
      throw InvalidInputError("label cache: row length mismatch");
    write_u32(os, key);
    write_f32_array(os, row.probs.data(), row.probs.size());
  }
}

inline std::vector<std::pair<std::uint32_t, LabelVector>> load_label_cache(
    const std::string& path, std::size_t expect_classes) {
  auto is = open_input(path);
  expect_magic(is, "LRLC", path);
  const std::uint32_t k = read_u32(is, "class count");
  if (k != expect_classes)
    throw IoError(path + ": cache built for K=" + std::to_string(k) +
                  ", dataset has K=" + std::to_string(expect_classes));
  const std::uint32_t count = read_u32(is, "row count");
  std::vector<std::pair<std::uint32_t, LabelVector>> rows;
  rows.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t key = read_u32(is, "row key");
    std::vector<float> p(k);
    read_f32_array(is, p.data(), k, "row payload");
    rows.emplace_back(key, LabelVector(std::move(p)));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// stage labeler: uniform front end over the provider kinds

class StageLabeler {
public:
  ProviderKind kind() const { return kind_; }
  const LabelTelemetry& telemetry() const { return telemetry_; }
  bool dynamic() const { return provider_is_dynamic(kind_); }

  static StageLabeler ground_truth() {
    StageLabeler s;
    s.kind_ = ProviderKind::GroundTruth;
    return s;
  }

  static StageLabeler soft_dynamic(Classifier& teacher) {
    StageLabeler s;
    s.kind_ = ProviderKind::SoftDynamic;
    s.teacher_ = &teacher;
    return s;
  }

  static StageLabeler hard_dynamic(Classifier& teacher) {
    StageLabeler s;
    s.kind_ = ProviderKind::HardDynamic;
    s.teacher_ = &teacher;
    return s;
  }

  static StageLabeler soft_static(std::vector<LabelVector> per_image_table) {
    StageLabeler s;
    s.kind_ = ProviderKind::SoftStatic;
    s.table_ = std::move(per_image_table);
    return s;
  }

  static StageLabeler category(ProviderKind kind,
                               std::vector<LabelVector> per_class_table) {
    StageLabeler s;
    s.kind_ = kind;
    s.table_ = std::move(per_class_table);
    return s;
  }

  /// Labels for a batch. `sample_indices` gives the dataset index behind each
  /// batch row (rows beyond the natural batch repeat indices for adversarial
  /// twins). Dynamic providers ignore the indices and label the tensor.
  std::vector<LabelVector> labels(const Tensor& batch,
                                  std::span<const std::size_t> sample_indices,
                                  const Dataset& ds) {
    switch (kind_) {
      case ProviderKind::GroundTruth: {
        std::vector<LabelVector> out;
        out.reserve(sample_indices.size());
        for (std::size_t idx : sample_indices)
          out.push_back(one_hot(static_cast<std::size_t>(ds.label(idx)),
                                ds.num_classes));
        return out;
      }
      case ProviderKind::SoftDynamic:
        return generate_labels(*teacher_, batch, &telemetry_);
      case ProviderKind::HardDynamic:
        return hard_dynamic_labels(*teacher_, batch, &telemetry_);
      case ProviderKind::SoftStatic: {
        std::vector<LabelVector> out;
        out.reserve(sample_indices.size());
        for (std::size_t idx : sample_indices) out.push_back(table_[idx]);
        return out;
      }
      case ProviderKind::CategoryVisual:
      case ProviderKind::CategoryTaxonomy: {
        std::vector<LabelVector> out;
        out.reserve(sample_indices.size());
        for (std::size_t idx : sample_indices)
          out.push_back(table_[static_cast<std::size_t>(ds.label(idx))]);
        return out;
      }
    }
    throw ProtocolError("StageLabeler: bad provider kind");
  }

private:
  ProviderKind kind_ = ProviderKind::GroundTruth;
  Classifier* teacher_ = nullptr;
  std::vector<LabelVector> table_;
  LabelTelemetry telemetry_;
};

} // namespace refinery
