#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "refinery/checkpoint.hpp"
#include "refinery/classifier.hpp"
#include "refinery/layers.hpp"
#include "test_util.hpp"

using namespace refinery;
using refinery::test::fd_check_model;
using refinery::test::micronet_arch;
using refinery::test::random_tensor;

TEST(Softmax, UniformForEqualLogits) {
  const Tensor out = softmax(Tensor::from({1, 2}, {0.0f, 0.0f}));
  EXPECT_FLOAT_EQ(out.data[0], 0.5f);
  EXPECT_FLOAT_EQ(out.data[1], 0.5f);
}

TEST(Softmax, ClosedFormRatio) {
  // softmax(ln 1, ln 3) = (1/4, 3/4)
  const Tensor out =
      softmax(Tensor::from({1, 2}, {0.0f, std::log(3.0f)}));
  EXPECT_NEAR(out.data[0], 0.25f, 1e-6);
  EXPECT_NEAR(out.data[1], 0.75f, 1e-6);
}

TEST(Softmax, MaxSubtractionPreventsOverflow) {
  const Tensor out = softmax(Tensor::from({1, 2}, {1000.0f, 0.0f}));
  EXPECT_TRUE(out.all_finite());
  EXPECT_NEAR(out.data[0], 1.0f, 1e-6);
  EXPECT_NEAR(out.data[1], 0.0f, 1e-6);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + static_cast<std::size_t>(rng() % 60);
    const Tensor logits = random_tensor({4, k}, rng, 5.0f);
    const Tensor probs = softmax(logits);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        EXPECT_GE(probs.at2(r, c), 0.0f);
        sum += probs.at2(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, RejectsNonFinite) {
  Tensor bad = Tensor::from({1, 2}, {0.0f, std::numeric_limits<float>::infinity()});
  EXPECT_THROW(softmax(bad), InvalidInputError);
}

TEST(FullyConnected, IdentityWeights) {
  const Tensor x = Tensor::from({1, 2}, {1.0f, 2.0f});
  const Tensor w = Tensor::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  const Tensor b = Tensor::from({2}, {0.0f, 0.0f});
  const Tensor y = fc_forward(x, w, b);
  EXPECT_FLOAT_EQ(y.data[0], 1.0f);
  EXPECT_FLOAT_EQ(y.data[1], 2.0f);
}

TEST(FullyConnected, InputGradIsWTransposedUpstream) {
  Rng rng(7);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({2, 4}, rng);
  const Tensor dy = random_tensor({3, 2}, rng);
  Tensor dw, db, dx;
  fc_backward(x, w, dy, dw, db, &dx);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      float expect = 0.0f;
      for (std::size_t o = 0; o < 2; ++o) expect += w.at2(o, i) * dy.at2(n, o);
      EXPECT_NEAR(dx.at2(n, i), expect, 1e-5);
    }
}

TEST(BatchNorm, ConstantFeatureNormalizesToZero) {
  for (float v : {-3.0f, 0.0f, 42.5f}) {
    const Tensor x = Tensor::full({2, 1, 2, 2}, v);
    const Tensor gamma = Tensor::full({1}, 1.0f);
    const Tensor beta = Tensor::zeros({1});
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0f);
    const Tensor y = batchnorm_forward(x, gamma, beta, rm, rv, kBnMomentum,
                                       kBnEpsilon, BnMode::Train, false, nullptr);
    for (float o : y.data) EXPECT_FLOAT_EQ(o, 0.0f);
  }
}

TEST(Conv3x3, AllOnesKernelCenterSum) {
  // 3x3 ones kernel over a 3x3 ones patch: the fully-covered center is 9.
  const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  const Tensor b = Tensor::zeros({1});
  const Tensor y = conv3x3_forward(x, w, b, nullptr);
  EXPECT_FLOAT_EQ(y.at4(0, 0, 1, 1), 9.0f);
  EXPECT_FLOAT_EQ(y.at4(0, 0, 0, 0), 4.0f); // zero padding clips the corner
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(99);
  Classifier model = make_classifier(micronet_arch(), rng);
  model.frozen = true;
  const Tensor batch = random_tensor({2, 3, 8, 8}, rng);
  ForwardState state;
  forward(model, batch, BnMode::Train, &state);
  Tensor input_grad;
  const Gradients grads =
      backward(model, state, Tensor::zeros({2, 3}), &input_grad);
  for (const LayerParams& g : grads.layers) {
    for (float v : g.weight.data) EXPECT_FLOAT_EQ(v, 0.0f);
    for (float v : g.bias.data) EXPECT_FLOAT_EQ(v, 0.0f);
  }
  for (float v : input_grad.data) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(Backward, RequiresCachedForward) {
  Rng rng(1);
  Classifier model = make_classifier(micronet_arch(), rng);
  ForwardState state; // never filled
  EXPECT_THROW(backward(model, state, Tensor::zeros({2, 3})), ProtocolError);
}

TEST(Backward, MicronetMatchesFiniteDifferencesExhaustively) {
  // Every layer type appears in this network; every parameter and a dense
  // subsample of input coordinates are compared against central differences
  // of the double-precision reference network.
  Rng rng(2024);
  Classifier model = make_classifier(micronet_arch(), rng);
  const Tensor batch = random_tensor({4, 3, 8, 8}, rng);
  const Tensor probe = random_tensor({4, 3}, rng);
  const auto result = fd_check_model(model, batch, probe, 1e-3f, 1);
  EXPECT_LE(result.worst, 1e-3);
  EXPECT_LE(result.forward_gap, 1e-4);
  EXPECT_GT(result.checked, 400u);
  // Kink masking should only ever skip a small fraction of coordinates.
  EXPECT_LE(result.masked, result.checked / 10);
}

TEST(Forward, TrainModeRequiresTwoSamples) {
  Rng rng(5);
  Classifier model = make_classifier(micronet_arch(), rng);
  const Tensor single = random_tensor({1, 3, 8, 8}, rng);
  EXPECT_THROW(forward(model, single, BnMode::Train), DegenerateBatchError);
  EXPECT_NO_THROW(forward(model, single, BnMode::Eval));
}

TEST(Forward, RejectsWrongSpatialSize) {
  Rng rng(5);
  Classifier model = make_classifier(micronet_arch(), rng);
  const Tensor wrong = random_tensor({2, 3, 16, 16}, rng);
  EXPECT_THROW(forward(model, wrong, BnMode::Eval), InvalidInputError);
}

TEST(Forward, EvalIsPure) {
  Rng rng(6);
  Classifier model = make_classifier(micronet_arch(), rng);
  const Tensor batch = random_tensor({3, 3, 8, 8}, rng);
  const Tensor a = forward(model, batch, BnMode::Eval);
  const Tensor b = forward(model, batch, BnMode::Eval);
  EXPECT_EQ(a.data, b.data);
}

TEST(Forward, FrozenModelKeepsRunningStatisticsBitIdentical) {
  Rng rng(8);
  Classifier model = make_classifier(micronet_arch(), rng);
  model.frozen = true;
  std::vector<std::vector<float>> before;
  for (const LayerParams& p : model.params) {
    before.push_back(p.running_mean.data);
    before.push_back(p.running_var.data);
  }
  forward(model, random_tensor({4, 3, 8, 8}, rng), BnMode::Train);
  std::size_t i = 0;
  for (const LayerParams& p : model.params) {
    EXPECT_EQ(before[i++], p.running_mean.data);
    EXPECT_EQ(before[i++], p.running_var.data);
  }
  EXPECT_EQ(model.bn_stat_writes, 0u);
}

TEST(Forward, TrainingModelUpdatesRunningStatistics) {
  Rng rng(8);
  Classifier model = make_classifier(micronet_arch(), rng);
  const auto before = model.params[1].running_mean.data;
  forward(model, random_tensor({4, 3, 8, 8}, rng), BnMode::Train);
  EXPECT_NE(before, model.params[1].running_mean.data);
  EXPECT_GT(model.bn_stat_writes, 0u);
}

TEST(Sgd, ZeroLearningRateLeavesParamsUnchanged) {
  Rng rng(3);
  Classifier model = make_classifier(micronet_arch(), rng);
  Classifier copy = model;
  Gradients grads;
  grads.layers.resize(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (model.params[i].weight.size())
      grads.layers[i].weight = random_tensor(model.params[i].weight.shape, rng);
    if (model.params[i].bias.size())
      grads.layers[i].bias = random_tensor(model.params[i].bias.shape, rng);
  }
  SgdState state;
  sgd_step(model, grads, {0.0, 0.9, 5e-4}, state);
  EXPECT_FLOAT_EQ(max_param_difference(model, copy), 0.0f);
}

TEST(Sgd, PlainStepDefinition) {
  // w=1, grad=2, lr=0.1, no momentum/decay -> w = 0.8
  ClassifierArch arch = micronet_arch();
  Rng rng(4);
  Classifier model = make_classifier(arch, rng);
  model.params.back().weight.data[0] = 1.0f;
  Gradients grads;
  grads.layers.resize(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    grads.layers[i].weight = Tensor(model.params[i].weight.shape);
    grads.layers[i].bias = Tensor(model.params[i].bias.shape);
  }
  grads.layers.back().weight.data[0] = 2.0f;
  SgdState state;
  sgd_step(model, grads, {0.1, 0.0, 0.0}, state);
  EXPECT_NEAR(model.params.back().weight.data[0], 0.8f, 1e-7);
}

TEST(Sgd, WeightDecayPullsTowardZero) {
  // w=1, grad=0, lr=0.1, wd=0.1 -> w = 1 - 0.1*(0 + 0.1*1) = 0.99
  ClassifierArch arch = micronet_arch();
  Rng rng(4);
  Classifier model = make_classifier(arch, rng);
  model.params.back().weight.data[0] = 1.0f;
  Gradients grads;
  grads.layers.resize(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    grads.layers[i].weight = Tensor(model.params[i].weight.shape);
    grads.layers[i].bias = Tensor(model.params[i].bias.shape);
  }
  SgdState state;
  sgd_step(model, grads, {0.1, 0.0, 0.1}, state);
  EXPECT_NEAR(model.params.back().weight.data[0], 0.99f, 1e-7);
}

TEST(Init, SameSeedGivesIdenticalParameters) {
  Rng a(42), b(42);
  const Classifier m1 = make_classifier(smallnet_arch(10), a);
  const Classifier m2 = make_classifier(smallnet_arch(10), b);
  EXPECT_FLOAT_EQ(max_param_difference(m1, m2), 0.0f);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  namespace fs = std::filesystem;
  const std::string dir = refinery::test::scratch_dir("checkpoint");
  Rng rng(77);
  Classifier model = make_classifier(smallnet_arch(10), rng);
  // Make running statistics non-trivial before saving.
  forward(model, random_tensor({4, 3, 32, 32}, rng), BnMode::Train);

  const std::string p1 = dir + "/a.ckpt";
  const std::string p2 = dir + "/b.ckpt";
  save_checkpoint(model, p1);
  Classifier loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  EXPECT_EQ(read_text_file(p1), read_text_file(p2));
  EXPECT_EQ(model_hash(model), model_hash(loaded));
  EXPECT_EQ(sha256_file(p1), sha256_file(p2));
}

TEST(Checkpoint, CorruptMagicNamesOffset) {
  const std::string dir = refinery::test::scratch_dir("checkpoint_bad");
  Rng rng(78);
  Classifier model = make_classifier(smallnet_arch(4), rng);
  const std::string path = dir + "/bad.ckpt";
  save_checkpoint(model, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
}

TEST(Arch, ValidatesConvBnReluPattern) {
  ClassifierArch broken = micronet_arch();
  broken.layers.erase(broken.layers.begin() + 1); // drop the first batchnorm
  EXPECT_THROW(broken.validate(), ConfigError);
}

TEST(Arch, BuiltinsAreWellFormed) {
  EXPECT_NO_THROW(smallnet_arch(10).validate());
  EXPECT_NO_THROW(bignet_arch(10).validate());
  EXPECT_EQ(smallnet_arch(10).layers.back().out, 10u);
}
