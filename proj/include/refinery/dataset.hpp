#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "refinery/crops.hpp"
#include "refinery/errors.hpp"
#include "refinery/hashing.hpp"
#include "refinery/image.hpp"
#include "refinery/serialize.hpp"
#include "refinery/tensor.hpp"

namespace refinery {

/// Per-channel standardization constants, computed once over the training
/// split at ingestion. Pixels are already scaled to [0,1]; standardization
/// pins the input scale that the adversarial step size is defined against.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> std_dev;

  float lo(std::size_t c) const { return (0.0f - mean[c]) / std_dev[c]; }
  float hi(std::size_t c) const { return (1.0f - mean[c]) / std_dev[c]; }
};

enum class Split { Train, Val };

struct Dataset {
  std::vector<Image> images;
  std::vector<std::uint32_t> ids;
  std::vector<std::string> class_names;
  std::size_t num_classes = 0;
  Split split = Split::Train;
  NormStats norm;

  /// Counts hard-label reads on the training path so the ground-truth
  /// isolation contract can be audited: refinement stages after the first
  /// must never consult these labels to build training targets.
  mutable std::uint64_t training_label_reads = 0;

  std::size_t size() const { return images.size(); }

  /// Training-path accessor (instrumented).
  int label(std::size_t i) const {
    ++training_label_reads;
    return hard_labels_[i];
  }

  /// Diagnostics-path accessor: metrics and accuracy reports use this one,
  /// which deliberately does not count as a training-side read.
  int label_for_eval(std::size_t i) const { return hard_labels_[i]; }

  void set_labels(std::vector<int> labels) { hard_labels_ = std::move(labels); }
  const std::vector<int>& raw_labels() const { return hard_labels_; }

  void validate() const {
    if (images.size() != hard_labels_.size() || images.size() != ids.size())
      throw ConfigError("dataset: images / labels / ids length mismatch");
    std::unordered_set<std::uint32_t> seen;
    for (std::uint32_t id : ids)
      if (!seen.insert(id).second)
        throw ConfigError("dataset: duplicate image id " + std::to_string(id));
    for (int l : hard_labels_)
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
        throw ConfigError("dataset: hard label out of range");
  }

private:
  std::vector<int> hard_labels_;
};

inline NormStats compute_norm_stats(const std::vector<Image>& images) {
  if (images.empty()) throw ConfigError("normalization: empty image set");
  const std::size_t channels = images[0].channels;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t count = 0;
  for (const Image& img : images) {
    for (std::size_t p = 0; p < img.height * img.width; ++p)
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = img.data[p * channels + c];
        sum[c] += v;
        sq[c] += v * v;
      }
    count += img.height * img.width;
  }
  NormStats st;
  st.mean.resize(channels);
  st.std_dev.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var = sq[c] / static_cast<double>(count) - mean * mean;
    st.mean[c] = static_cast<float>(mean);
    st.std_dev[c] = static_cast<float>(std::sqrt(std::max(var, 1e-8)));
  }
  return st;
}

/// Content identity of a dataset (ids, labels, pixels); used to key label
/// caches.
inline std::string dataset_hash(const Dataset& ds) {
  detail::Sha256 h;
  const std::uint32_t k = static_cast<std::uint32_t>(ds.num_classes);
  h.update(&k, sizeof(k));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    h.update(&ds.ids[i], sizeof(ds.ids[i]));
    const std::int32_t label = ds.raw_labels()[i];
    h.update(&label, sizeof(label));
    h.update(ds.images[i].data.data(), ds.images[i].data.size() * sizeof(float));
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// packed dataset binary: magic "LRDS", u32 count, u32 H, u32 W, u32 C, u32 K,
// then per image: u32 id, u8 label, f32 pixel payload (HWC row-major).

inline void save_packed(const Dataset& ds, const std::string& path) {
  if (ds.images.empty()) throw ConfigError("save_packed: empty dataset");
  const Image& first = ds.images[0];
  auto os = open_output(path);
  write_bytes(os, "LRDS", 4);
  write_u32(os, static_cast<std::uint32_t>(ds.images.size()));
  write_u32(os, static_cast<std::uint32_t>(first.height));
  write_u32(os, static_cast<std::uint32_t>(first.width));
  write_u32(os, static_cast<std::uint32_t>(first.channels));
  write_u32(os, static_cast<std::uint32_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const Image& img = ds.images[i];
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels)
      throw ConfigError("save_packed: packed datasets require uniform shapes");
    write_u32(os, ds.ids[i]);
    write_u8(os, static_cast<std::uint8_t>(ds.raw_labels()[i]));
    write_f32_array(os, img.data.data(), img.data.size());
  }
}

inline Dataset load_packed(const std::string& path) {
  auto is = open_input(path);
  expect_magic(is, "LRDS", path);
  const std::uint32_t count = read_u32(is, "image count");
  const std::uint32_t h = read_u32(is, "height");
  const std::uint32_t w = read_u32(is, "width");
  const std::uint32_t c = read_u32(is, "channels");
  const std::uint32_t k = read_u32(is, "class count");
  if (h == 0 || w == 0 || c == 0 || k == 0)
    throw IoError(path + ": degenerate packed header");
  Dataset ds;
  ds.num_classes = k;
  ds.images.reserve(count);
  ds.ids.reserve(count);
  std::vector<int> labels;
  labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.ids.push_back(read_u32(is, "image id"));
    labels.push_back(read_u8(is, "label"));
    Image img(h, w, c);
    read_f32_array(is, img.data.data(), img.data.size(), "pixels");
    ds.images.push_back(std::move(img));
  }
  ds.set_labels(std::move(labels));
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// manifest format: one record per line, `<image-id>\t<relative-path>\t<class-index>`

inline Dataset load_manifest(const std::string& manifest_path,
                             std::size_t num_classes) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  std::istringstream lines(read_text_file(manifest_path));
  Dataset ds;
  ds.num_classes = num_classes;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw IoError(manifest_path + ":" + std::to_string(lineno) +
                    ": expected <id>\\t<path>\\t<class>");
    try {
      ds.ids.push_back(static_cast<std::uint32_t>(std::stoul(line.substr(0, t1))));
      labels.push_back(std::stoi(line.substr(t2 + 1)));
    } catch (const std::exception&) {
      throw IoError(manifest_path + ":" + std::to_string(lineno) +
                    ": malformed numeric field");
    }
    const std::string rel = line.substr(t1 + 1, t2 - t1 - 1);
    ds.images.push_back(read_ppm((base / rel).string()));
  }
  ds.set_labels(std::move(labels));
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// class-name table: `<class-index>\t<name>` lines

inline std::vector<std::string> load_class_names(const std::string& path) {
  std::istringstream lines(read_text_file(path));
  std::unordered_map<std::size_t, std::string> by_index;
  std::string line;
  std::size_t lineno = 0, max_index = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected <class-index>\\t<name>");
    std::size_t idx = 0;
    try {
      idx = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed index");
    }
    by_index[idx] = line.substr(tab + 1);
    max_index = std::max(max_index, idx);
  }
  if (by_index.empty()) throw IoError(path + ": empty class table");
  std::vector<std::string> names(max_index + 1);
  for (auto& [idx, name] : by_index) names[idx] = name;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i].empty())
      throw IoError(path + ": missing class index " + std::to_string(i));
  return names;
}

inline void save_class_names(const std::vector<std::string>& names,
                             const std::string& path) {
  std::string text;
  for (std::size_t i = 0; i < names.size(); ++i)
    text += std::to_string(i) + "\t" + names[i] + "\n";
  write_text_file(path, text);
}

// normalization table: `<channel>\t<mean>\t<std>` lines
inline void save_norm_stats(const NormStats& st, const std::string& path) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t c = 0; c < st.mean.size(); ++c)
    os << c << "\t" << st.mean[c] << "\t" << st.std_dev[c] << "\n";
  write_text_file(path, os.str());
}

inline NormStats load_norm_stats(const std::string& path) {
  std::istringstream lines(read_text_file(path));
  NormStats st;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream f(line);
    std::size_t c;
    float mean, sd;
    if (!(f >> c >> mean >> sd))
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected <channel> <mean> <std>");
    st.mean.push_back(mean);
    st.std_dev.push_back(sd);
  }
  if (st.mean.empty()) throw IoError(path + ": empty normalization table");
  return st;
}

// ---------------------------------------------------------------------------
// batch assembly

/// Standardizes an HWC [0,1] crop and writes it into row n of a [N,C,S,S]
/// batch tensor (CHW layout per sample).
inline void place_in_batch(Tensor& batch, std::size_t n, const Image& crop,
                           const NormStats& norm) {
  const std::size_t c = batch.dim(1), s = batch.dim(2);
  if (crop.height != s || crop.width != s || crop.channels != c)
    throw InvalidInputError("place_in_batch: crop does not match batch shape");
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float mean = norm.mean[ch], inv = 1.0f / norm.std_dev[ch];
    float* dst = batch.data.data() + ((n * c + ch) * s) * s;
    for (std::size_t p = 0; p < s * s; ++p)
      dst[p] = (crop.data[p * c + ch] - mean) * inv;
  }
}

/// Builds an evaluation batch of standardized center crops for the given
/// dataset indices.
inline Tensor center_crop_batch(const Dataset& ds,
                                const std::vector<std::size_t>& indices,
                                std::size_t input_size) {
  Tensor batch({indices.size(), 3, input_size, input_size});
  for (std::size_t i = 0; i < indices.size(); ++i)
    place_in_batch(batch, i, center_crop(ds.images[indices[i]], input_size),
                   ds.norm);
  return batch;
}

} // namespace refinery
