#include <gtest/gtest.h>

#include <cmath>

#include "refinery/adversarial.hpp"
#include "refinery/checkpoint.hpp"
#include "refinery/train.hpp"
#include "test_util.hpp"

using namespace refinery;
using refinery::test::micronet_arch;
using refinery::test::random_tensor;

namespace {

NormStats unit_norm() {
  NormStats n;
  n.mean.assign(3, 0.0f);
  n.std_dev.assign(3, 1.0f);
  return n;
}

double batch_kl(Classifier& teacher, Classifier& student, const Tensor& batch) {
  const auto labels = generate_labels(teacher, batch);
  const bool frozen = student.frozen;
  student.frozen = true;
  const Tensor logits = forward(student, batch, BnMode::Train);
  student.frozen = frozen;
  const std::size_t k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    const std::vector<double> q = softmax_row(logits.data.data() + i * k, k);
    LabelVector qv;
    qv.probs.assign(q.begin(), q.end());
    total += kl_label_to_output(labels[i], qv);
  }
  return total;
}

} // namespace

TEST(Jitter, ZeroEtaIsBitExactIdentity) {
  Rng rng(21);
  Classifier teacher = make_classifier(micronet_arch(4), rng);
  teacher.frozen = true;
  Classifier student = make_classifier(micronet_arch(4), rng);
  const Tensor batch = random_tensor({3, 3, 8, 8}, rng);
  AdversarialConfig cfg;
  cfg.eta = 0.0;
  cfg.clip = ClipMode::None;
  const Tensor out = jitter(teacher, student, batch, cfg, nullptr);
  EXPECT_EQ(out.data, batch.data);
}

TEST(Jitter, TeacherEqualsStudentIsNoOp) {
  Rng rng(22);
  Classifier teacher = make_classifier(micronet_arch(4), rng);
  teacher.frozen = true;
  Classifier student = teacher; // identical parameters
  student.frozen = false;
  const Tensor batch = random_tensor({4, 3, 8, 8}, rng);
  AdversarialConfig cfg;
  cfg.eta = 1.0;
  cfg.clip = ClipMode::None;
  const Tensor out = jitter(teacher, student, batch, cfg, nullptr);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i)
    max_diff = std::max(max_diff,
                        std::fabs(double(out.data[i]) - batch.data[i]));
  EXPECT_LE(max_diff, 1e-5);
}

TEST(Jitter, NeverMutatesModelParameters) {
  Rng rng(23);
  Classifier teacher = make_classifier(micronet_arch(4), rng);
  teacher.frozen = true;
  Classifier student = make_classifier(micronet_arch(4), rng);
  const std::string teacher_hash = model_hash(teacher);
  const std::string student_hash = model_hash(student);
  AdversarialConfig cfg;
  cfg.eta = 1.0;
  cfg.clip = ClipMode::None;
  jitter(teacher, student, random_tensor({4, 3, 8, 8}, rng), cfg, nullptr);
  EXPECT_EQ(model_hash(teacher), teacher_hash);
  EXPECT_EQ(model_hash(student), student_hash);
  EXPECT_FALSE(student.frozen);
}

TEST(Jitter, SmallStepIncreasesTeacherStudentKl) {
  // Independently initialized teacher/student disagree; one small ascent
  // step along the input gradient must increase the batch KL almost always.
  Rng rng(24);
  Classifier teacher = make_classifier(micronet_arch(4), rng);
  teacher.frozen = true;
  Classifier student = make_classifier(micronet_arch(4), rng);
  AdversarialConfig cfg;
  cfg.eta = 1e-3;
  cfg.clip = ClipMode::None;
  int increased = 0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) {
    const Tensor batch = random_tensor({4, 3, 8, 8}, rng, 0.7f);
    const double before = batch_kl(teacher, student, batch);
    const Tensor jittered = jitter(teacher, student, batch, cfg, nullptr);
    const double after = batch_kl(teacher, student, jittered);
    if (after >= before) ++increased;
  }
  EXPECT_GE(increased, static_cast<int>(trials * 0.95));
}

TEST(Jitter, InputRangeClipBoundsOutput) {
  Rng rng(25);
  Classifier teacher = make_classifier(micronet_arch(4), rng);
  teacher.frozen = true;
  Classifier student = make_classifier(micronet_arch(4), rng);
  NormStats norm = unit_norm();
  AdversarialConfig cfg;
  cfg.eta = 50.0; // exaggerate so clipping matters
  cfg.clip = ClipMode::InputRange;
  Tensor batch = random_tensor({4, 3, 8, 8}, rng, 0.3f);
  for (float& v : batch.data) v = std::clamp(v, 0.0f, 1.0f);
  const Tensor out = jitter(teacher, student, batch, cfg, &norm);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t p = 0; p < 64; ++p) {
        const float v = out.data[(s * 3 + c) * 64 + p];
        EXPECT_GE(v, norm.lo(c));
        EXPECT_LE(v, norm.hi(c));
      }
}

TEST(ComposeBatch, InterleavesPairs) {
  Rng rng(26);
  const Tensor nat = random_tensor({1, 3, 4, 4}, rng);
  const Tensor adv = random_tensor({1, 3, 4, 4}, rng);
  const Tensor out = compose_batch(nat, adv);
  ASSERT_EQ(out.dim(0), 2u);
  const std::size_t row = nat.size();
  EXPECT_TRUE(std::equal(nat.data.begin(), nat.data.end(), out.data.begin()));
  EXPECT_TRUE(std::equal(adv.data.begin(), adv.data.end(),
                         out.data.begin() + row));
}

TEST(ComposeBatch, PureReorderingOfRows) {
  Rng rng(27);
  const Tensor nat = random_tensor({3, 2, 2, 2}, rng);
  const Tensor adv = random_tensor({3, 2, 2, 2}, rng);
  const Tensor out = compose_batch(nat, adv);
  ASSERT_EQ(out.dim(0), 6u);
  const std::size_t row = nat.size() / 3;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::equal(nat.data.begin() + i * row,
                           nat.data.begin() + (i + 1) * row,
                           out.data.begin() + (2 * i) * row));
    EXPECT_TRUE(std::equal(adv.data.begin() + i * row,
                           adv.data.begin() + (i + 1) * row,
                           out.data.begin() + (2 * i + 1) * row));
  }
}

TEST(ComposeBatch, ShapeMismatchRejected) {
  Rng rng(28);
  const Tensor nat = random_tensor({2, 3, 4, 4}, rng);
  const Tensor adv = random_tensor({3, 3, 4, 4}, rng);
  EXPECT_THROW(compose_batch(nat, adv), InvalidInputError);
}
