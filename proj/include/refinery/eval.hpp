#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/classifier.hpp"
#include "refinery/crops.hpp"
#include "refinery/dataset.hpp"

// Accuracy metrics and the generalization diagnostics: per-category accuracy,
// train/val gap binning, and qualitative per-crop prediction audits. The
// validation protocol is a single deterministic center crop evaluated with
// eval-mode batch normalization.

namespace refinery {

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double val_top1 = 0.0;
  double val_top5 = 0.0;
};

struct MetricsRecord {
  int stage = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<std::optional<double>> per_category_train;
  std::vector<std::optional<double>> per_category_val;
  double wall_seconds = 0.0;

  double final_val_top1() const {
    return epochs.empty() ? 0.0 : epochs.back().val_top1;
  }
  double final_train_top1() const {
    return epochs.empty() ? 0.0 : epochs.back().train_top1;
  }
};

namespace detail {
/// Indices of the k largest logits, ties broken toward the lowest class index.
inline std::vector<std::size_t> topk_indices(const float* logits, std::size_t k,
                                             std::size_t num_classes) {
  std::vector<std::size_t> order(num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [logits](std::size_t a, std::size_t b) {
                     return logits[a] > logits[b];
                   });
  order.resize(k);
  return order;
}
} // namespace detail

constexpr std::size_t kEvalChunk = 256;

/// Percentage of samples whose true label appears among the k most likely
/// classes under the center-crop protocol.
inline double topk_accuracy(Classifier& model, const Dataset& ds, std::size_t k) {
  if (k == 0 || k > model.arch.num_classes)
    throw InvalidInputError("topk_accuracy: k out of range");
  if (ds.size() == 0) return 0.0;
  std::size_t hits = 0;
  std::vector<std::size_t> chunk;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(start + kEvalChunk, ds.size()); ++i)
      chunk.push_back(i);
    const Tensor batch = center_crop_batch(ds, chunk, model.arch.input_size);
    const Tensor logits = forward(model, batch, BnMode::Eval);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto top = detail::topk_indices(
          logits.data.data() + i * model.arch.num_classes, k,
          model.arch.num_classes);
      const std::size_t truth =
          static_cast<std::size_t>(ds.label_for_eval(chunk[i]));
      if (std::find(top.begin(), top.end(), truth) != top.end()) ++hits;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ds.size());
}

/// Top-1 accuracy per category; categories with no samples report missing.
inline std::vector<std::optional<double>> per_category_accuracy(
    Classifier& model, const Dataset& ds) {
  const std::size_t k = ds.num_classes;
  std::vector<std::size_t> hits(k, 0), counts(k, 0);
  std::vector<std::size_t> chunk;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(start + kEvalChunk, ds.size()); ++i)
      chunk.push_back(i);
    const Tensor batch = center_crop_batch(ds, chunk, model.arch.input_size);
    const Tensor logits = forward(model, batch, BnMode::Eval);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto top =
          detail::topk_indices(logits.data.data() + i * k, 1, k);
      const std::size_t truth =
          static_cast<std::size_t>(ds.label_for_eval(chunk[i]));
      ++counts[truth];
      if (top[0] == truth) ++hits[truth];
    }
  }
  std::vector<std::optional<double>> acc(k);
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] > 0)
      acc[c] = 100.0 * static_cast<double>(hits[c]) /
               static_cast<double>(counts[c]);
  return acc;
}

// ---------------------------------------------------------------------------
// generalization-gap report

struct GapBin {
  double mean_train = 0.0;
  double mean_val = 0.0;
  double std_val = 0.0;
  std::vector<std::size_t> categories;
};

struct GapReport {
  std::vector<GapBin> bins; // ordered by ascending train accuracy
};

/// Sorts categories by training accuracy, partitions them into near-equal
/// bins (sizes differ by at most one) and reports per-bin mean train/val
/// accuracy plus the validation standard deviation (population form).
inline GapReport gap_report(const std::vector<double>& train_acc,
                            const std::vector<double>& val_acc,
                            std::size_t num_bins) {
  if (train_acc.size() != val_acc.size())
    throw InvalidInputError("gap_report: vector length mismatch");
  const std::size_t k = train_acc.size();
  if (num_bins == 0 || num_bins > k)
    throw InvalidInputError("gap_report: num_bins out of range");

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&train_acc](std::size_t a, std::size_t b) {
                     return train_acc[a] < train_acc[b];
                   });

  GapReport report;
  const std::size_t base = k / num_bins, extra = k % num_bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    GapBin bin;
    double sum_t = 0.0, sum_v = 0.0, sq_v = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t cat = order[pos++];
      bin.categories.push_back(cat);
      sum_t += train_acc[cat];
      sum_v += val_acc[cat];
      sq_v += val_acc[cat] * val_acc[cat];
    }
    bin.mean_train = sum_t / static_cast<double>(size);
    bin.mean_val = sum_v / static_cast<double>(size);
    const double var = sq_v / static_cast<double>(size) - bin.mean_val * bin.mean_val;
    bin.std_val = std::sqrt(std::max(var, 0.0));
    report.bins.push_back(std::move(bin));
  }
  return report;
}

// ---------------------------------------------------------------------------
// qualitative crop audits

struct CropAuditRow {
  CropSpec spec;
  std::vector<std::pair<std::size_t, float>> topk; // (class index, probability)
};

/// Top-k classes and probabilities for each crop of one image, eval mode.
/// Probabilities within each row are non-increasing.
inline std::vector<CropAuditRow> audit_crops(Classifier& model, const Image& image,
                                             const std::vector<CropSpec>& specs,
                                             std::size_t k, const NormStats& norm) {
  if (k == 0 || k > model.arch.num_classes)
    throw InvalidInputError("audit_crops: k out of range");
  std::vector<CropAuditRow> rows;
  if (specs.empty()) return rows;
  const std::size_t input = model.arch.input_size;
  Tensor batch({specs.size(), 3, input, input});
  for (std::size_t i = 0; i < specs.size(); ++i)
    place_in_batch(batch, i, extract_crop(image, specs[i], input), norm);
  Tensor probs = softmax(forward(model, batch, BnMode::Eval));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CropAuditRow row;
    row.spec = specs[i];
    const float* p = probs.data.data() + i * model.arch.num_classes;
    for (std::size_t idx : detail::topk_indices(p, k, model.arch.num_classes))
      row.topk.emplace_back(idx, p[idx]);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// metrics persistence: one structured record per line with fields
// (stage, epoch, split, metric, value); a final summary record per stage.

inline std::string metrics_to_jsonl(const MetricsRecord& rec) {
  std::string out;
  auto line = [&out, &rec](int epoch, const char* split, const char* metric,
                           double value) {
    nlohmann::json j;
    j["stage"] = rec.stage;
    j["epoch"] = epoch;
    j["split"] = split;
    j["metric"] = metric;
    j["value"] = value;
    out += j.dump();
    out += "\n";
  };
  for (const EpochMetrics& e : rec.epochs) {
    line(e.epoch, "train", "loss", e.train_loss);
    line(e.epoch, "train", "top1", e.train_top1);
    line(e.epoch, "val", "top1", e.val_top1);
    line(e.epoch, "val", "top5", e.val_top5);
  }
  line(-1, "summary", "wall_seconds", rec.wall_seconds);
  line(-1, "summary", "final_train_top1", rec.final_train_top1());
  line(-1, "summary", "final_val_top1", rec.final_val_top1());
  return out;
}

/// Parses concatenated metric records back into per-stage histories.
inline std::vector<MetricsRecord> metrics_from_jsonl(const std::string& text) {
  std::vector<MetricsRecord> records;
  auto record_for = [&records](int stage) -> MetricsRecord& {
    for (MetricsRecord& r : records)
      if (r.stage == stage) return r;
    records.emplace_back();
    records.back().stage = stage;
    return records.back();
  };
  auto epoch_for = [](MetricsRecord& r, int epoch) -> EpochMetrics& {
    for (EpochMetrics& e : r.epochs)
      if (e.epoch == epoch) return e;
    r.epochs.emplace_back();
    r.epochs.back().epoch = epoch;
    return r.epochs.back();
  };
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("metrics line " + std::to_string(lineno) + ": " + e.what());
    }
    MetricsRecord& rec = record_for(j.at("stage").get<int>());
    const std::string split = j.at("split").get<std::string>();
    const std::string metric = j.at("metric").get<std::string>();
    const double value = j.at("value").get<double>();
    if (split == "summary") {
      if (metric == "wall_seconds") rec.wall_seconds = value;
      continue;
    }
    EpochMetrics& e = epoch_for(rec, j.at("epoch").get<int>());
    if (split == "train" && metric == "loss") e.train_loss = value;
    if (split == "train" && metric == "top1") e.train_top1 = value;
    if (split == "val" && metric == "top1") e.val_top1 = value;
    if (split == "val" && metric == "top5") e.val_top5 = value;
  }
  for (MetricsRecord& r : records)
    std::sort(r.epochs.begin(), r.epochs.end(),
              [](const EpochMetrics& a, const EpochMetrics& b) {
                return a.epoch < b.epoch;
              });
  return records;
}

} // namespace refinery
