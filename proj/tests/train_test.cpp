#include <gtest/gtest.h>

#include <filesystem>

#include "refinery/chain.hpp"
#include "refinery/checkpoint.hpp"
#include "refinery/train.hpp"
#include "test_util.hpp"

using namespace refinery;
namespace fs = std::filesystem;

namespace {

TrainingSchedule tiny_schedule(std::uint64_t seed, int epochs = 2) {
  TrainingSchedule s;
  s.epochs = epochs;
  s.drops = {};
  s.batch_size = 32;
  s.lr_initial = 0.05;
  s.seed = seed;
  return s;
}

StageConfig gt_stage(const SynthDataset& data, std::uint64_t seed,
                     int epochs = 2) {
  StageConfig cfg;
  cfg.stage_index = 1;
  cfg.student_arch = smallnet_arch(data.train.num_classes);
  cfg.provider = ProviderKind::GroundTruth;
  cfg.loss = LossKind::CrossEntropySoft;
  cfg.schedule = tiny_schedule(seed, epochs);
  cfg.eval_every = epochs; // final epoch only; keeps unit tests fast
  return cfg;
}

} // namespace

TEST(Schedule, LrDropConvention) {
  TrainingSchedule s;
  s.epochs = 60;
  s.lr_initial = 0.05;
  s.drops = {{42, 10.0}, {51, 10.0}};
  EXPECT_DOUBLE_EQ(s.lr_at(0), 0.05);
  EXPECT_DOUBLE_EQ(s.lr_at(41), 0.05);
  EXPECT_DOUBLE_EQ(s.lr_at(42), 0.005);
  EXPECT_DOUBLE_EQ(s.lr_at(50), 0.005);
  EXPECT_DOUBLE_EQ(s.lr_at(51), 0.0005);
  EXPECT_NO_THROW(s.validate());
}

TEST(Schedule, ValidatesDropOrdering) {
  TrainingSchedule s;
  s.epochs = 10;
  s.drops = {{8, 10.0}, {4, 10.0}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.drops = {{4, 10.0}, {12, 10.0}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.drops = {};
  s.batch_size = 1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Schedule, PaperPresetValues) {
  const TrainingSchedule p = TrainingSchedule::paper_preset();
  EXPECT_EQ(p.epochs, 200);
  ASSERT_EQ(p.drops.size(), 2u);
  EXPECT_EQ(p.drops[0].epoch, 140);
  EXPECT_EQ(p.drops[1].epoch, 170);
  EXPECT_DOUBLE_EQ(p.lr_at(139), 0.1);
  EXPECT_DOUBLE_EQ(p.lr_at(140), 0.01);
  EXPECT_DOUBLE_EQ(p.lr_at(170), 0.001);
}

TEST(StageValidation, ProviderTeacherConsistency) {
  SynthDataset data = refinery::test::tiny_synth(40, 10);
  Rng rng(1);
  Classifier teacher = make_classifier(smallnet_arch(10), rng);
  teacher.frozen = true;

  StageConfig cfg = gt_stage(data, 1);
  // ground_truth with a teacher: rejected
  EXPECT_THROW(train_stage(cfg, &teacher, data.train, data.val), ConfigError);

  // dynamic provider without a teacher: rejected
  cfg.provider = ProviderKind::SoftDynamic;
  EXPECT_THROW(train_stage(cfg, nullptr, data.train, data.val), ConfigError);

  // ground truth at stage > 1: rejected
  StageConfig late = gt_stage(data, 1);
  late.stage_index = 2;
  EXPECT_THROW(train_stage(late, nullptr, data.train, data.val), ConfigError);

  // adversarial jittering without a dynamic provider: rejected
  StageConfig adv = gt_stage(data, 1);
  adv.adversarial = AdversarialConfig{};
  EXPECT_THROW(train_stage(adv, nullptr, data.train, data.val), ConfigError);

  // unfrozen teacher: rejected
  Classifier thawed = teacher;
  thawed.frozen = false;
  StageConfig dyn = gt_stage(data, 1);
  dyn.stage_index = 2;
  dyn.provider = ProviderKind::SoftDynamic;
  EXPECT_THROW(train_stage(dyn, &thawed, data.train, data.val), ConfigError);
}

TEST(TrainStage, SameSeedGivesBitIdenticalCheckpoints) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const StageConfig cfg = gt_stage(data, 77);
  const StageResult a = train_stage(cfg, nullptr, data.train, data.val);
  const StageResult b = train_stage(cfg, nullptr, data.train, data.val);
  EXPECT_EQ(model_hash(a.student), model_hash(b.student));
}

TEST(TrainStage, DifferentSeedsDiverge) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const StageResult a = train_stage(gt_stage(data, 1), nullptr, data.train, data.val);
  const StageResult b = train_stage(gt_stage(data, 2), nullptr, data.train, data.val);
  EXPECT_NE(model_hash(a.student), model_hash(b.student));
}

TEST(TrainStage, OneHotKlReproducesCrossEntropyTrajectory) {
  // With one-hot labels the forward KL and soft cross entropy have the same
  // logit gradients, so whole training trajectories coincide.
  SynthDataset data = refinery::test::tiny_synth(96, 24);
  StageConfig ce = gt_stage(data, 55, 3);
  ce.loss = LossKind::CrossEntropySoft;
  StageConfig kl = gt_stage(data, 55, 3);
  kl.loss = LossKind::KlLabelToOutput;
  const StageResult a = train_stage(ce, nullptr, data.train, data.val);
  const StageResult b = train_stage(kl, nullptr, data.train, data.val);
  EXPECT_LE(max_param_difference(a.student, b.student), 1e-6f);
}

TEST(TrainStage, TeacherStaysImmutable) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const StageResult first = train_stage(gt_stage(data, 5), nullptr, data.train, data.val);
  Classifier teacher = first.student;
  teacher.frozen = true;
  const std::string hash_before = model_hash(teacher);

  StageConfig second = gt_stage(data, 6);
  second.stage_index = 2;
  second.provider = ProviderKind::SoftDynamic;
  second.loss = LossKind::KlLabelToOutput;
  const StageResult result = train_stage(second, &teacher, data.train, data.val);

  EXPECT_EQ(model_hash(teacher), hash_before);
  EXPECT_EQ(result.telemetry.teacher_hash_before, hash_before);
  EXPECT_EQ(result.telemetry.teacher_hash_after, hash_before);
  EXPECT_EQ(result.telemetry.teacher_stat_writes, 0u);
}

TEST(TrainStage, SoftDynamicStageNeverReadsTrainingHardLabels) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const StageResult first = train_stage(gt_stage(data, 5), nullptr, data.train, data.val);
  Classifier teacher = first.student;
  teacher.frozen = true;

  StageConfig second = gt_stage(data, 7);
  second.stage_index = 2;
  second.provider = ProviderKind::SoftDynamic;
  second.loss = LossKind::KlLabelToOutput;
  const StageResult result = train_stage(second, &teacher, data.train, data.val);

  EXPECT_EQ(result.telemetry.train_hard_label_reads, 0u);
  EXPECT_GT(result.telemetry.labels.generations, 0u);
  EXPECT_EQ(result.telemetry.labels.generations,
            result.telemetry.labels.train_mode_generations);
}

TEST(TrainStage, GroundTruthStageDoesReadHardLabels) {
  SynthDataset data = refinery::test::tiny_synth(40, 10);
  const StageResult r = train_stage(gt_stage(data, 8), nullptr, data.train, data.val);
  EXPECT_GT(r.telemetry.train_hard_label_reads, 0u);
}

TEST(TrainStage, SelfConsistentTeacherHoldsStudentStill) {
  // Teacher identical to the student it labels: the KL loss starts at its
  // global minimum, gradients vanish, parameters stay put (weight decay off).
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  StageConfig warm = gt_stage(data, 9, 2);
  const StageResult first = train_stage(warm, nullptr, data.train, data.val);

  Classifier teacher = first.student;
  teacher.frozen = true;

  StageConfig self_stage = gt_stage(data, 10, 1);
  self_stage.stage_index = 2;
  self_stage.provider = ProviderKind::SoftDynamic;
  self_stage.loss = LossKind::KlLabelToOutput;
  self_stage.schedule.weight_decay = 0.0;
  self_stage.schedule.momentum = 0.0;
  self_stage.init = InitMode::FromCheckpoint;
  self_stage.init_from = first.student;
  self_stage.eval_every = 1;
  const StageResult r = train_stage(self_stage, &teacher, data.train, data.val);

  ASSERT_FALSE(r.metrics.epochs.empty());
  EXPECT_LE(std::fabs(r.metrics.epochs.front().train_loss), 1e-6);
  EXPECT_LE(max_param_difference(r.student, first.student), 1e-7f);
}

TEST(TrainStage, AdversarialStageRuns) {
  SynthDataset data = refinery::test::tiny_synth(48, 12);
  const StageResult first = train_stage(gt_stage(data, 11), nullptr, data.train, data.val);
  Classifier teacher = first.student;
  teacher.frozen = true;

  StageConfig adv = gt_stage(data, 12, 2);
  adv.stage_index = 2;
  adv.provider = ProviderKind::SoftDynamic;
  adv.loss = LossKind::KlLabelToOutput;
  adv.adversarial = AdversarialConfig{};
  adv.adversarial->eta = 1.0;
  adv.init = InitMode::FromCheckpoint;
  adv.init_from = first.student;
  const StageResult r = train_stage(adv, &teacher, data.train, data.val);
  EXPECT_EQ(model_hash(teacher), model_hash(first.student));
  EXPECT_TRUE(r.student.arch.name == "smallnet");
  EXPECT_GT(r.telemetry.labels.generations, 0u);
}

TEST(RunChain, TwoStageSelfRefinementPersistseverything) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const std::string out = refinery::test::scratch_dir("chain");

  ChainConfig chain;
  chain.out_dir = out;
  chain.seed = 31;
  chain.quiet = true;
  ChainStageSpec s1;
  s1.arch = "smallnet";
  s1.provider = ProviderKind::GroundTruth;
  s1.loss = LossKind::CrossEntropySoft;
  s1.schedule = tiny_schedule(0, 2);
  s1.eval_every = 2;
  ChainStageSpec s2 = s1;
  s2.provider = ProviderKind::SoftDynamic;
  s2.loss = LossKind::KlLabelToOutput;
  chain.stages = {s1, s2};

  const ChainResult result = run_chain(chain, data.train, data.val);
  ASSERT_EQ(result.stages.size(), 2u);
  EXPECT_TRUE(fs::exists(out + "/stage_1/checkpoint.ckpt"));
  EXPECT_TRUE(fs::exists(out + "/stage_2/checkpoint.ckpt"));
  EXPECT_TRUE(fs::exists(out + "/metrics.jsonl"));
  EXPECT_TRUE(fs::exists(out + "/chain_manifest.json"));
  EXPECT_TRUE(fs::exists(out + "/stage_1/per_category.csv"));

  // Manifest round-trips byte-identically through parse + re-dump.
  const std::string manifest_text = read_text_file(result.manifest_path);
  const nlohmann::json manifest = nlohmann::json::parse(manifest_text);
  EXPECT_EQ(manifest.dump(2) + "\n", manifest_text);
  EXPECT_EQ(manifest.at("stages").size(), 2u);
  EXPECT_EQ(manifest.at("stages")[1].at("status"), "completed");
  EXPECT_EQ(manifest.at("stages")[1].at("telemetry").at("train_hard_label_reads"),
            0u);

  // Metrics file round-trips through the reader/writer pair.
  const std::string metrics_text = read_text_file(out + "/metrics.jsonl");
  const auto records = metrics_from_jsonl(metrics_text);
  ASSERT_EQ(records.size(), 2u);
  std::string rewritten;
  for (const MetricsRecord& r : records) rewritten += metrics_to_jsonl(r);
  EXPECT_EQ(rewritten, metrics_text);

  // Recorded hashes match the files on disk.
  EXPECT_EQ(manifest.at("stages")[0].at("sha256"),
            sha256_file(out + "/stage_1/checkpoint.ckpt"));
}

TEST(RunChain, RerunSkipsCompletedStages) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const std::string out = refinery::test::scratch_dir("chain_resume");

  ChainConfig chain;
  chain.out_dir = out;
  chain.seed = 32;
  chain.quiet = true;
  ChainStageSpec s1;
  s1.arch = "smallnet";
  s1.provider = ProviderKind::GroundTruth;
  s1.loss = LossKind::CrossEntropySoft;
  s1.schedule = tiny_schedule(0, 2);
  s1.eval_every = 2;
  chain.stages = {s1};

  const ChainResult first = run_chain(chain, data.train, data.val);
  ASSERT_FALSE(first.stages[0].skipped);
  const std::string ckpt_bytes =
      read_text_file(out + "/stage_1/checkpoint.ckpt");

  const ChainResult second = run_chain(chain, data.train, data.val);
  EXPECT_TRUE(second.stages[0].skipped);
  EXPECT_EQ(read_text_file(out + "/stage_1/checkpoint.ckpt"), ckpt_bytes);

  // Changing the config invalidates the resume.
  chain.stages[0].schedule.epochs = 3;
  const ChainResult third = run_chain(chain, data.train, data.val);
  EXPECT_FALSE(third.stages[0].skipped);
}

TEST(RunChain, IdenticalSeedsGiveBitIdenticalChainCheckpoints) {
  SynthDataset data = refinery::test::tiny_synth(64, 16);
  const std::string out_a = refinery::test::scratch_dir("chain_det_a");
  const std::string out_b = refinery::test::scratch_dir("chain_det_b");

  ChainConfig chain;
  chain.seed = 33;
  chain.quiet = true;
  ChainStageSpec s1;
  s1.arch = "smallnet";
  s1.provider = ProviderKind::GroundTruth;
  s1.loss = LossKind::CrossEntropySoft;
  s1.schedule = tiny_schedule(0, 2);
  s1.eval_every = 2;
  ChainStageSpec s2 = s1;
  s2.provider = ProviderKind::HardDynamic;
  chain.stages = {s1, s2};

  chain.out_dir = out_a;
  run_chain(chain, data.train, data.val);
  chain.out_dir = out_b;
  run_chain(chain, data.train, data.val);

  for (const char* rel :
       {"/stage_1/checkpoint.ckpt", "/stage_2/checkpoint.ckpt"})
    EXPECT_EQ(read_text_file(out_a + rel), read_text_file(out_b + rel));
}

TEST(RunChain, SoftStaticStageWritesLabelCache) {
  SynthDataset data = refinery::test::tiny_synth(48, 12);
  const std::string out = refinery::test::scratch_dir("chain_cache");

  ChainConfig chain;
  chain.out_dir = out;
  chain.seed = 34;
  chain.quiet = true;
  ChainStageSpec s1;
  s1.arch = "smallnet";
  s1.provider = ProviderKind::GroundTruth;
  s1.loss = LossKind::CrossEntropySoft;
  s1.schedule = tiny_schedule(0, 2);
  s1.eval_every = 2;
  ChainStageSpec s2 = s1;
  s2.provider = ProviderKind::SoftStatic;
  s2.loss = LossKind::KlLabelToOutput;
  chain.stages = {s1, s2};
  run_chain(chain, data.train, data.val);

  bool found_cache = false;
  for (const auto& entry : fs::directory_iterator(out + "/stage_2"))
    if (entry.path().extension() == ".lrlc") found_cache = true;
  EXPECT_TRUE(found_cache);
}

TEST(RunChain, FailedStageIsRecordedAndPartialResultsPersist) {
  SynthDataset data = refinery::test::tiny_synth(48, 12);
  const std::string out = refinery::test::scratch_dir("chain_fail");

  // A teacher checkpoint with the wrong class count trips stage-2
  // validation after stage 1 completed.
  Rng rng(35);
  Classifier wrong = make_classifier(smallnet_arch(7), rng);
  const std::string wrong_path = out + "/wrong.ckpt";
  fs::create_directories(out);
  save_checkpoint(wrong, wrong_path);

  ChainConfig chain;
  chain.out_dir = out;
  chain.seed = 36;
  chain.quiet = true;
  ChainStageSpec s1;
  s1.arch = "smallnet";
  s1.provider = ProviderKind::GroundTruth;
  s1.loss = LossKind::CrossEntropySoft;
  s1.schedule = tiny_schedule(0, 2);
  s1.eval_every = 2;
  ChainStageSpec s2 = s1;
  s2.provider = ProviderKind::SoftDynamic;
  s2.teacher_checkpoint = wrong_path;
  chain.stages = {s1, s2};

  EXPECT_THROW(run_chain(chain, data.train, data.val), ConfigError);
  EXPECT_TRUE(fs::exists(out + "/stage_1/checkpoint.ckpt"));
  const nlohmann::json manifest =
      nlohmann::json::parse(read_text_file(out + "/chain_manifest.json"));
  EXPECT_EQ(manifest.at("stages")[0].at("status"), "completed");
  EXPECT_EQ(manifest.at("stages")[1].at("status"), "failed");
}

TEST(RunChain, CategoryTaxonomyStageNeedsNoTeacher) {
  SynthDataset data = refinery::test::tiny_synth(48, 12);
  const std::string out = refinery::test::scratch_dir("chain_tax");
  const TaxonomyTree tree = synth_taxonomy();
  std::vector<int> leaves;
  for (const std::string& name : synth_class_names())
    leaves.push_back(tree.require(name));

  ChainConfig chain;
  chain.out_dir = out;
  chain.seed = 37;
  chain.quiet = true;
  ChainStageSpec s1;
  s1.arch = "smallnet";
  s1.provider = ProviderKind::CategoryTaxonomy;
  s1.loss = LossKind::KlLabelToOutput;
  s1.schedule = tiny_schedule(0, 2);
  s1.eval_every = 2;
  chain.stages = {s1};

  const ChainResult r = run_chain(chain, data.train, data.val, &tree, &leaves);
  EXPECT_TRUE(fs::exists(r.stages[0].checkpoint_path));
}
