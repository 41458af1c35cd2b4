// Command-line front end for the label-refinement training framework:
// dataset generation, chain training, evaluation, qualitative crop audits,
// taxonomy queries and plot emission.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "refinery/chain.hpp"
#include "refinery/checkpoint.hpp"
#include "refinery/config.hpp"
#include "refinery/eval.hpp"
#include "refinery/plot.hpp"
#include "refinery/synth.hpp"

namespace fs = std::filesystem;
using namespace refinery;

namespace {

std::string default_out(const std::string& explicit_out) {
  if (!explicit_out.empty()) return explicit_out;
  if (const char* env = std::getenv("REFINERY_OUT")) return env;
  return ".";
}

struct EvalInputs {
  Dataset ds;
  std::vector<std::string> class_names;
};

/// Dataset argument: a packed .lrds file, a manifest, or a dataset directory
/// (which supplies val split, class names and normalization constants).
EvalInputs load_eval_dataset(const std::string& arg, const std::string& norm_path) {
  EvalInputs in;
  std::string data_file = arg;
  std::string classes_file;
  std::string norm_file = norm_path;
  if (fs::is_directory(arg)) {
    data_file = (fs::path(arg) / "val.lrds").string();
    classes_file = (fs::path(arg) / "classes.tsv").string();
    if (norm_file.empty()) {
      const std::string candidate = (fs::path(arg) / "normalization.tsv").string();
      if (fs::exists(candidate)) norm_file = candidate;
    }
  } else if (norm_file.empty()) {
    const std::string sibling =
        (fs::path(data_file).parent_path() / "normalization.tsv").string();
    if (fs::exists(sibling)) norm_file = sibling;
  }
  std::size_t hint = 0;
  if (!classes_file.empty() && fs::exists(classes_file)) {
    in.class_names = load_class_names(classes_file);
    hint = in.class_names.size();
  }
  in.ds = load_dataset_file(data_file, hint);
  if (!in.class_names.empty()) in.ds.class_names = in.class_names;
  if (!norm_file.empty()) {
    in.ds.norm = load_norm_stats(norm_file);
  } else {
    std::cerr << "warning: no normalization.tsv found; computing statistics "
                 "from the evaluation file itself\n";
    in.ds.norm = compute_norm_stats(in.ds.images);
  }
  return in;
}

Image load_audit_image(const std::string& arg, std::uint32_t* id_out) {
  const auto hash_pos = arg.rfind('#');
  if (hash_pos != std::string::npos && arg.find(".lrds#") != std::string::npos) {
    const std::string file = arg.substr(0, hash_pos);
    const std::uint32_t want_id =
        static_cast<std::uint32_t>(std::stoul(arg.substr(hash_pos + 1)));
    Dataset ds = load_packed(file);
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.ids[i] == want_id) {
        if (id_out) *id_out = want_id;
        return ds.images[i];
      }
    throw IoError(file + ": no image with id " + std::to_string(want_id));
  }
  return read_ppm(arg);
}

int cmd_dataset(const std::string& out, const SynthConfig& cfg) {
  write_synth_dataset_dir(cfg, out);
  std::cout << "wrote dataset (" << cfg.train_count << " train / "
            << cfg.val_count << " val, 10 classes) to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_override, bool quiet) {
  ExperimentConfig cfg = load_experiment_config(config_path, seed, out_override);
  LoadedData data = load_experiment_data(cfg);

  ChainConfig chain;
  chain.stages = cfg.stages;
  chain.seed = cfg.seed;
  chain.out_dir = cfg.out_dir;
  chain.quiet = quiet;
  const ChainResult result = run_chain(
      chain, data.train, data.val, data.tree ? &*data.tree : nullptr,
      data.class_leaves.empty() ? nullptr : &data.class_leaves);

  for (std::size_t t = 0; t < result.stages.size(); ++t) {
    const ChainStageOutcome& s = result.stages[t];
    std::cout << "stage " << (t + 1) << ": "
              << (s.skipped ? "skipped (up to date)" : "completed") << "  "
              << s.checkpoint_path;
    if (!s.skipped)
      std::cout << "  val@1 " << s.metrics.final_val_top1();
    std::cout << "\n";
  }
  std::cout << "manifest: " << result.manifest_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_arg,
             const std::vector<std::size_t>& topk, const std::string& norm_path,
             const std::string& out) {
  Classifier model = load_checkpoint(ckpt_path);
  EvalInputs in = load_eval_dataset(dataset_arg, norm_path);
  if (model.arch.num_classes != in.ds.num_classes)
    throw ConfigError("checkpoint " + ckpt_path + " has " +
                      std::to_string(model.arch.num_classes) +
                      " classes but the dataset has " +
                      std::to_string(in.ds.num_classes));

  MetricsRecord rec;
  rec.stage = 0;
  EpochMetrics em;
  em.epoch = 0;
  std::string printed;
  for (std::size_t k : topk) {
    const double acc = topk_accuracy(model, in.ds, k);
    std::cout << "top" << k << " " << acc << "\n";
    if (k == 1) em.val_top1 = acc;
    if (k == 5) em.val_top5 = acc;
  }
  rec.epochs.push_back(em);

  const std::string out_dir = default_out(out);
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "eval_metrics.jsonl").string(),
                  metrics_to_jsonl(rec));
  return 0;
}

int cmd_audit(const std::string& ckpt_path, const std::string& image_arg,
              std::size_t crops, std::size_t topk, std::uint64_t seed,
              const std::string& norm_path, const std::string& classes_path,
              const std::string& out) {
  Classifier model = load_checkpoint(ckpt_path);
  Image image = load_audit_image(image_arg, nullptr);

  NormStats norm;
  if (!norm_path.empty()) {
    norm = load_norm_stats(norm_path);
  } else {
    const std::string sibling =
        (fs::path(image_arg.substr(0, image_arg.rfind('#'))).parent_path() /
         "normalization.tsv")
            .string();
    if (fs::exists(sibling)) {
      norm = load_norm_stats(sibling);
    } else {
      std::cerr << "warning: no normalization constants given; assuming "
                   "identity normalization\n";
      norm.mean.assign(image.channels, 0.0f);
      norm.std_dev.assign(image.channels, 1.0f);
    }
  }
  std::vector<std::string> class_names;
  if (!classes_path.empty()) class_names = load_class_names(classes_path);
  auto name_of = [&class_names](std::size_t c) {
    return c < class_names.size() ? class_names[c] : "class_" + std::to_string(c);
  };

  // Row 0 is the whole image; remaining rows are seeded random crops.
  std::vector<CropSpec> specs;
  specs.push_back({0, 0, static_cast<int>(image.width),
                   static_cast<int>(image.height), false});
  for (std::size_t i = 1; i < crops; ++i) {
    Rng rng = make_rng(seed, "audit", i);
    specs.push_back(sample_crop(rng, static_cast<int>(image.width),
                                static_cast<int>(image.height)));
  }
  const auto rows = audit_crops(model, image, specs, topk, norm);

  std::ostringstream csv;
  csv << "crop,x,y,w,h,hflip";
  for (std::size_t j = 0; j < topk; ++j) csv << ",class" << j << ",prob" << j;
  csv << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const CropAuditRow& row = rows[i];
    std::cout << "crop " << i << " [" << row.spec.x << "," << row.spec.y << " "
              << row.spec.w << "x" << row.spec.h
              << (row.spec.hflip ? " flipped" : "") << "]:";
    csv << i << "," << row.spec.x << "," << row.spec.y << "," << row.spec.w
        << "," << row.spec.h << "," << (row.spec.hflip ? 1 : 0);
    for (const auto& [cls, prob] : row.topk) {
      std::cout << "  " << name_of(cls) << " " << prob;
      csv << "," << name_of(cls) << "," << prob;
    }
    std::cout << "\n";
    csv << "\n";
  }

  const std::string out_dir = default_out(out);
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "audit.csv").string(), csv.str());
  return 0;
}

int cmd_taxonomy(const std::string& tree_path,
                 const std::vector<std::string>& pair, bool matrix,
                 const std::string& leaves_path) {
  const TaxonomyTree tree = TaxonomyTree::load(tree_path);
  if (!pair.empty()) {
    std::cout << tree.wu_palmer(pair[0], pair[1]) << "\n";
    return 0;
  }
  if (!matrix) throw ConfigError("taxonomy: pass --pair A B or --matrix");

  std::vector<int> leaves;
  std::vector<std::string> names;
  if (!leaves_path.empty()) {
    leaves = load_leaf_bindings(leaves_path, tree);
    for (int node : leaves) names.push_back(tree.node(node).name);
  } else {
    for (const std::string& name : tree.leaf_names()) {
      leaves.push_back(tree.require(name));
      names.push_back(name);
    }
  }
  const auto table = category_taxonomy_labels(tree, leaves);
  std::cout << "class_index,name";
  for (const std::string& n : names) std::cout << "," << n;
  std::cout << "\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::cout << i << "," << names[i];
    for (std::size_t jc = 0; jc < table[i].size(); ++jc)
      std::cout << "," << table[i][jc];
    std::cout << "\n";
  }
  return 0;
}

int cmd_plot(const std::string& metrics_dir, const std::string& out,
             std::size_t bins) {
  const std::string metrics_file =
      (fs::path(metrics_dir) / "metrics.jsonl").string();
  if (!fs::exists(metrics_file))
    throw IoError(metrics_dir + ": no metrics.jsonl found");
  const auto records = metrics_from_jsonl(read_text_file(metrics_file));
  if (records.empty()) throw IoError(metrics_file + ": no metric records");

  const std::string out_dir = out.empty() ? metrics_dir : out;
  fs::create_directories(out_dir);
  for (const MetricsRecord& rec : records) {
    const std::string tag = "stage_" + std::to_string(rec.stage);
    write_text_file((fs::path(out_dir) / ("curves_" + tag + ".csv")).string(),
                    curves_csv(rec));
    write_text_file((fs::path(out_dir) / ("curves_" + tag + ".svg")).string(),
                    curves_svg(rec));

    // The gap report needs the per-category table persisted by training.
    const std::string per_cat =
        (fs::path(metrics_dir) / tag / "per_category.csv").string();
    if (!fs::exists(per_cat)) {
      std::cerr << "warning: " << per_cat
                << " missing; skipping gap report for " << tag << "\n";
      continue;
    }
    std::vector<double> train_acc, val_acc;
    std::istringstream lines(read_text_file(per_cat));
    std::string line;
    std::getline(lines, line); // header
    bool complete = true;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::size_t pos = 0;
      while (true) {
        const auto comma = line.find(',', pos);
        fields.push_back(line.substr(pos, comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (fields.size() < 4 || fields[2].empty() || fields[3].empty()) {
        complete = false;
        continue;
      }
      train_acc.push_back(std::stod(fields[2]));
      val_acc.push_back(std::stod(fields[3]));
    }
    if (!complete)
      std::cerr << "warning: " << per_cat << " has categories without "
                << "accuracy values; they are excluded from the gap report\n";
    if (train_acc.empty()) continue;
    const std::size_t use_bins = std::min(bins, train_acc.size());
    if (use_bins < bins)
      std::cerr << "warning: only " << train_acc.size()
                << " categories; using " << use_bins << " bins\n";
    const GapReport report = gap_report(train_acc, val_acc, use_bins);
    write_text_file((fs::path(out_dir) / ("gap_" + tag + ".csv")).string(),
                    gap_csv(report));
    write_text_file((fs::path(out_dir) / ("gap_" + tag + ".svg")).string(),
                    gap_svg(report, rec.stage));
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-refinement training framework: iterative re-training of "
               "image classifiers from soft, dynamic, crop-level labels"};
  app.require_subcommand(1);

  // dataset
  auto* sc_dataset = app.add_subcommand(
      "dataset", "Generate the synthetic shapes dataset directory");
  std::string ds_out;
  SynthConfig synth_cfg;
  sc_dataset->add_option("--out", ds_out, "Output directory")->required();
  sc_dataset->add_option("--train", synth_cfg.train_count, "Training images");
  sc_dataset->add_option("--val", synth_cfg.val_count, "Validation images");
  sc_dataset->add_option("--size", synth_cfg.image_size, "Image side length");
  sc_dataset->add_option("--seed", synth_cfg.seed, "Generator seed");
  sc_dataset->add_option("--label-noise", synth_cfg.label_noise,
                         "Fraction of corrupted training labels");
  sc_dataset->add_option("--distractor", synth_cfg.distractor_prob,
                         "Probability of an off-class distractor object");

  // train
  auto* sc_train = app.add_subcommand("train", "Run a refinement chain from a "
                                               "config file");
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  bool train_quiet = false;
  bool train_seed_set = false;
  sc_train->add_option("config", train_config, "Experiment config (JSON)")
      ->required();
  sc_train->add_option("--seed", train_seed, "Override the config seed")
      ->each([&train_seed_set](const std::string&) { train_seed_set = true; });
  sc_train->add_option("--out", train_out, "Override the output directory");
  sc_train->add_flag("--quiet", train_quiet, "Suppress progress output");

  // eval
  auto* sc_eval = app.add_subcommand(
      "eval", "Top-k accuracy of a checkpoint under the center-crop protocol");
  std::string eval_ckpt, eval_dataset, eval_norm, eval_out;
  std::vector<std::size_t> eval_topk{1, 5};
  sc_eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();
  sc_eval->add_option("dataset", eval_dataset,
                      "Dataset directory or packed/manifest file")->required();
  sc_eval->add_option("--topk", eval_topk, "k values to report")->delimiter(',');
  sc_eval->add_option("--norm", eval_norm, "Normalization constants file");
  sc_eval->add_option("--out", eval_out, "Directory for persisted metrics");

  // audit
  auto* sc_audit = app.add_subcommand(
      "audit", "Top-k predictions for crops of one image (row 0: full image)");
  std::string audit_ckpt, audit_image, audit_norm, audit_classes, audit_out;
  std::size_t audit_crops_n = 5, audit_topk = 3;
  std::uint64_t audit_seed = 0;
  sc_audit->add_option("checkpoint", audit_ckpt, "Checkpoint file")->required();
  sc_audit->add_option("image", audit_image,
                       "PPM image or packed file reference (file.lrds#id)")
      ->required();
  sc_audit->add_option("--crops", audit_crops_n, "Number of crops");
  sc_audit->add_option("--topk", audit_topk, "Classes per crop");
  sc_audit->add_option("--seed", audit_seed, "Crop sampling seed");
  sc_audit->add_option("--norm", audit_norm, "Normalization constants file");
  sc_audit->add_option("--classes", audit_classes, "Class-name table");
  sc_audit->add_option("--out", audit_out, "Directory for the CSV output");

  // taxonomy
  auto* sc_tax = app.add_subcommand(
      "taxonomy", "Wu-Palmer similarity queries over a category tree");
  std::string tax_tree, tax_leaves;
  std::vector<std::string> tax_pair;
  bool tax_matrix = false;
  sc_tax->add_option("tree", tax_tree, "Tree edge-list file")->required();
  sc_tax->add_option("--pair", tax_pair, "Two node names")->expected(2);
  sc_tax->add_flag("--matrix", tax_matrix,
                   "Print the normalized per-category label table");
  sc_tax->add_option("--leaves", tax_leaves, "Leaf binding file");

  // plot
  auto* sc_plot = app.add_subcommand(
      "plot", "Emit CSV/SVG training curves and gap reports from metrics");
  std::string plot_dir, plot_out;
  std::size_t plot_bins = 20;
  sc_plot->add_option("metrics-dir", plot_dir, "Directory with metrics.jsonl")
      ->required();
  sc_plot->add_option("--out", plot_out, "Output directory (default: input)");
  sc_plot->add_option("--bins", plot_bins, "Gap report bins");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_dataset->parsed()) return cmd_dataset(ds_out, synth_cfg);
    if (sc_train->parsed())
      return cmd_train(train_config,
                       train_seed_set ? std::optional<std::uint64_t>(train_seed)
                                      : std::nullopt,
                       train_out, train_quiet);
    if (sc_eval->parsed())
      return cmd_eval(eval_ckpt, eval_dataset, eval_topk, eval_norm, eval_out);
    if (sc_audit->parsed())
      return cmd_audit(audit_ckpt, audit_image, audit_crops_n, audit_topk,
                       audit_seed, audit_norm, audit_classes, audit_out);
    if (sc_tax->parsed())
      return cmd_taxonomy(tax_tree, tax_pair, tax_matrix, tax_leaves);
    if (sc_plot->parsed()) return cmd_plot(plot_dir, plot_out, plot_bins);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
