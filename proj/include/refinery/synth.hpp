#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refinery/dataset.hpp"
#include "refinery/rng.hpp"
#include "refinery/taxonomy.hpp"

// Synthetic shape/color dataset for desk-scale experiments. Ten classes
// (shape family x color) on cluttered backgrounds, with optional off-class
// distractor objects and a configurable fraction of corrupted training
// labels. Small crops frequently miss the labeled object, so crop-level
// labels inherit exactly the inconsistency that refined labels are meant to
// repair. The shape families double as the category taxonomy; visual
// confusion runs along colors instead, so taxonomic and visual similarity
// are deliberately decorrelated.

namespace refinery {

struct SynthConfig {
  std::size_t image_size = 32;
  std::size_t train_count = 5000;
  std::size_t val_count = 1000;
  std::uint64_t seed = 7;
  double label_noise = 0.12;    // train-split labels flipped to a random class
  double distractor_prob = 0.4; // second, differently-classed object
};

namespace synth_detail {

enum class Shape { Circle, Square, Triangle, Cross };

struct ClassDef {
  const char* name;
  const char* family;
  Shape shape;
  std::array<float, 3> color;
};

inline const std::array<ClassDef, 10>& class_defs() {
  static const std::array<ClassDef, 10> defs = {{
      {"circle_red", "circle", Shape::Circle, {0.85f, 0.15f, 0.15f}},
      {"circle_green", "circle", Shape::Circle, {0.12f, 0.75f, 0.18f}},
      {"circle_blue", "circle", Shape::Circle, {0.15f, 0.20f, 0.85f}},
      {"square_red", "square", Shape::Square, {0.85f, 0.15f, 0.15f}},
      {"square_green", "square", Shape::Square, {0.12f, 0.75f, 0.18f}},
      {"square_blue", "square", Shape::Square, {0.15f, 0.20f, 0.85f}},
      {"triangle_red", "triangle", Shape::Triangle, {0.85f, 0.15f, 0.15f}},
      {"triangle_green", "triangle", Shape::Triangle, {0.12f, 0.75f, 0.18f}},
      {"cross_red", "cross", Shape::Cross, {0.85f, 0.15f, 0.15f}},
      {"cross_blue", "cross", Shape::Cross, {0.15f, 0.20f, 0.85f}},
  }};
  return defs;
}

inline bool inside(Shape shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape::Circle:
      return dx * dx + dy * dy <= r * r;
    case Shape::Square:
      return std::max(std::fabs(dx), std::fabs(dy)) <= 0.9 * r;
    case Shape::Triangle: {
      if (dy < -r || dy > r) return false;
      const double halfwidth = 1.1 * r * (dy + r) / (2.0 * r);
      return std::fabs(dx) <= halfwidth;
    }
    case Shape::Cross:
      return (std::fabs(dx) <= 0.35 * r && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= 0.35 * r && std::fabs(dx) <= r);
  }
  return false;
}

inline void draw_shape(Image& img, Rng& rng, int cls, double min_radius_frac,
                       double max_radius_frac) {
  const ClassDef& def = class_defs()[static_cast<std::size_t>(cls)];
  const double size = static_cast<double>(img.width);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r =
      (min_radius_frac + (max_radius_frac - min_radius_frac) * unit(rng)) * size;
  const double cx = r + unit(rng) * (size - 2.0 * r);
  const double cy = r + unit(rng) * (size - 2.0 * r);
  std::array<float, 3> color = def.color;
  for (float& ch : color)
    ch = std::clamp(ch + static_cast<float>((unit(rng) - 0.5) * 0.16), 0.0f, 1.0f);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (inside(def.shape, (x + 0.5) - cx, (y + 0.5) - cy, r))
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

inline Image make_image(Rng& rng, int cls, const SynthConfig& cfg) {
  const std::size_t s = cfg.image_size;
  Image img(s, s, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.035);

  // Smooth two-color gradient background; each image gets its own palette
  // and direction, which gives networks something memorizable per image.
  std::array<float, 3> c0, c1;
  for (std::size_t c = 0; c < 3; ++c) {
    c0[c] = static_cast<float>(0.15 + 0.5 * unit(rng));
    c1[c] = static_cast<float>(0.15 + 0.5 * unit(rng));
  }
  const double phi = unit(rng) * 2.0 * M_PI;
  const double nx = std::cos(phi), ny = std::sin(phi);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double t =
          0.5 + (nx * (static_cast<double>(x) / s - 0.5) +
                 ny * (static_cast<double>(y) / s - 0.5));
      const float tt = static_cast<float>(std::clamp(t, 0.0, 1.0));
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = c0[c] * (1.0f - tt) + c1[c] * tt;
    }

  if (unit(rng) < cfg.distractor_prob) {
    std::uniform_int_distribution<int> other(0, 8);
    int d = other(rng);
    if (d >= cls) ++d;
    draw_shape(img, rng, d, 0.10, 0.16);
  }
  draw_shape(img, rng, cls, 0.16, 0.28);

  for (float& v : img.data)
    v = std::clamp(v + static_cast<float>(noise(rng)), 0.0f, 1.0f);
  return img;
}

} // namespace synth_detail

inline std::vector<std::string> synth_class_names() {
  std::vector<std::string> names;
  for (const auto& def : synth_detail::class_defs()) names.push_back(def.name);
  return names;
}

/// Generates one split. Train-split labels are flipped to a random other
/// class with probability cfg.label_noise; validation labels stay clean.
inline Dataset make_synth_split(const SynthConfig& cfg, Split split) {
  const std::size_t count =
      split == Split::Train ? cfg.train_count : cfg.val_count;
  const std::uint64_t split_tag = split == Split::Train ? 0 : 1;
  Dataset ds;
  ds.split = split;
  ds.num_classes = synth_detail::class_defs().size();
  ds.class_names = synth_class_names();
  std::vector<int> labels;
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(i % ds.num_classes);
    Rng rng = make_rng(cfg.seed, "synth", split_tag, i);
    ds.images.push_back(synth_detail::make_image(rng, cls, cfg));
    ds.ids.push_back(static_cast<std::uint32_t>(split_tag * 1000000 + i));
    int stored = cls;
    if (split == Split::Train) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      if (unit(rng) < cfg.label_noise) {
        std::uniform_int_distribution<int> other(0, static_cast<int>(ds.num_classes) - 2);
        stored = other(rng);
        if (stored >= cls) ++stored;
      }
    }
    labels.push_back(stored);
  }
  ds.set_labels(std::move(labels));
  ds.validate();
  return ds;
}

struct SynthDataset {
  Dataset train;
  Dataset val;
};

inline SynthDataset make_synth_dataset(const SynthConfig& cfg) {
  SynthDataset out;
  out.train = make_synth_split(cfg, Split::Train);
  out.val = make_synth_split(cfg, Split::Val);
  out.train.norm = compute_norm_stats(out.train.images);
  out.val.norm = out.train.norm; // validation reuses the training statistics
  return out;
}

/// The category hierarchy the generator ships with: leaves are the ten
/// classes, grouped by shape family under a single root.
inline TaxonomyTree synth_taxonomy() {
  std::vector<std::pair<std::string, std::string>> edges;
  for (const auto& def : synth_detail::class_defs())
    edges.emplace_back(def.name, def.family);
  edges.emplace_back("circle", "object");
  edges.emplace_back("square", "object");
  edges.emplace_back("triangle", "object");
  edges.emplace_back("cross", "object");
  return TaxonomyTree::from_edges(edges);
}

/// Writes the full dataset directory: packed splits, class table, taxonomy
/// edge list, leaf bindings and normalization constants.
inline void write_synth_dataset_dir(const SynthConfig& cfg,
                                    const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SynthDataset ds = make_synth_dataset(cfg);
  save_packed(ds.train, (fs::path(dir) / "train.lrds").string());
  save_packed(ds.val, (fs::path(dir) / "val.lrds").string());
  save_class_names(ds.train.class_names, (fs::path(dir) / "classes.tsv").string());
  save_norm_stats(ds.train.norm, (fs::path(dir) / "normalization.tsv").string());

  std::string tree_text;
  for (const auto& def : synth_detail::class_defs())
    tree_text += std::string(def.name) + "\t" + def.family + "\n";
  for (const char* family : {"circle", "square", "triangle", "cross"})
    tree_text += std::string(family) + "\tobject\n";
  write_text_file((fs::path(dir) / "taxonomy.tsv").string(), tree_text);

  std::string leaves_text;
  const auto names = synth_class_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    leaves_text += std::to_string(i) + "\t" + names[i] + "\n";
  write_text_file((fs::path(dir) / "leaves.tsv").string(), leaves_text);
}

} // namespace refinery
