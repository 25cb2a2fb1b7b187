#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tbnet/training.hpp"

using namespace tbnet;
namespace fs = std::filesystem;

namespace {

struct ScalarAdam {
  double m = 0, v = 0, theta;
  int t = 0;
  explicit ScalarAdam(double start) : theta(start) {}
  void step(double g, double lr = 1e-3, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
  }
};

LabeledSet synthetic_set(std::size_t n_per_class, std::size_t size, std::uint64_t seed) {
  const auto s = gen_synthetic(n_per_class, size, seed);
  LabeledSet set;
  set.resolution = size;
  for (std::size_t i = 0; i < s.images.size(); ++i) set.add(s.images[i], s.labels[i]);
  return set;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter<double> p("w", Tensor<double>({3}, {1, 2, 3}));
  std::vector<Parameter<double>*> params{&p};
  AdamState<double> state(params);
  adam_step<double>(params, state, AdamHyper{});
  EXPECT_EQ(p.value, Tensor<double>({3}, {1, 2, 3}));
}

TEST(Adam, FirstStepIsLearningRate) {
  Parameter<double> p("w", Tensor<double>({1}, {0.0}));
  p.grad[0] = 1.0;
  std::vector<Parameter<double>*> params{&p};
  AdamState<double> state(params);
  adam_step<double>(params, state, AdamHyper{});
  EXPECT_NEAR(p.value[0], -0.001, 1e-10);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_EQ(state.step(), 1u);
}

TEST(Adam, MatchesScalarOracleOverTenSteps) {
  for (double g : {0.5, -3.0, 1e-4}) {
    Parameter<double> p("w", Tensor<double>({1}, {0.25}));
    std::vector<Parameter<double>*> params{&p};
    AdamState<double> state(params);
    ScalarAdam oracle(0.25);
    for (int k = 0; k < 10; ++k) {
      p.grad[0] = g;
      adam_step<double>(params, state, AdamHyper{});
      oracle.step(g);
      EXPECT_NEAR(p.value[0], oracle.theta, 1e-12);
    }
  }
}

TEST(Adam, FirstStepMagnitudeIsScaleInvariant) {
  for (double g = 1e-6; g <= 1e6 * 1.0001; g *= 10) {
    Parameter<double> p("w", Tensor<double>({1}, {0.0}));
    p.grad[0] = g;
    std::vector<Parameter<double>*> params{&p};
    AdamState<double> state(params);
    adam_step<double>(params, state, AdamHyper{});
    EXPECT_NEAR(std::abs(p.value[0]), 1e-3, 1e-3 * 0.01 + 1e-11) << "g=" << g;
  }
}

TEST(Adam, InvalidHyperparameters) {
  AdamHyper h;
  h.beta1 = 1.0;
  EXPECT_THROW(h.validate(), PreconditionError);
  h = AdamHyper{};
  h.learning_rate = 0;
  EXPECT_THROW(h.validate(), PreconditionError);
}

TEST(BinaryCrossEntropy, KnownValues) {
  const std::vector<double> half{0.5}, one{1.0}, zero{0.0};
  EXPECT_NEAR(binary_cross_entropy(half, one), std::log(2.0), 1e-9);
  EXPECT_NEAR(binary_cross_entropy(half, zero), std::log(2.0), 1e-9);
  EXPECT_NEAR(binary_cross_entropy(std::vector<double>{0.9, 0.2}, std::vector<double>{1, 0}), 0.164252, 1e-6);
  EXPECT_LT(binary_cross_entropy(std::vector<double>{1.0, 0.0}, std::vector<double>{1, 0}), 1e-11);
  EXPECT_THROW(binary_cross_entropy(std::vector<double>{}, std::vector<double>{}), PreconditionError);
}

TEST(BatchLoss, AgreesWithBinaryFormForTwoClasses) {
  const Tensor<double> logits({2, 2}, {0.3, 1.1, 2.0, -0.5});
  const std::vector<int> labels{1, 0};
  std::vector<double> p_tb, target{1, 0};
  const auto p = softmax(logits);
  p_tb = {p[1], p[3]};
  EXPECT_NEAR(batch_loss(logits, labels), binary_cross_entropy(p_tb, target), 1e-12);
}

TEST(Trainer, StepsAndRecordsPerEpoch) {
  const auto train_set = synthetic_set(500, 16, 1);
  const auto val_set = synthetic_set(5, 16, 2);
  TrainConfig cfg;
  cfg.model.resolution = 16;
  Trainer trainer(cfg, train_set, val_set);
  EXPECT_EQ(trainer.epoch_batches(0).size(), 20u);

  TrainConfig small = cfg;
  small.epochs = 10;
  small.batch_size = 4;
  const auto t = synthetic_set(5, 16, 3);
  const auto r = train(small, t, val_set);
  EXPECT_EQ(r.report.epochs.size(), 10u);
  EXPECT_EQ(r.report.steps_per_epoch, 3u);  // 4 + 4 + 2
  EXPECT_EQ(r.report.epochs.back().epoch, 10u);
}

TEST(Trainer, TrailingSingletonBatchIsDropped) {
  const auto t = synthetic_set(5, 16, 3);
  const auto v = synthetic_set(1, 16, 4);
  TrainConfig cfg;
  cfg.model.resolution = 16;
  cfg.batch_size = 3;
  Trainer trainer(cfg, t, v);
  const auto batches = trainer.epoch_batches(0);
  ASSERT_EQ(batches.size(), 3u);
  for (const auto& b : batches) EXPECT_EQ(b.size(), 3u);
}

TEST(Trainer, DeterministicGivenSeed) {
  const auto t = synthetic_set(6, 16, 5);
  const auto v = synthetic_set(2, 16, 6);
  TrainConfig cfg;
  cfg.model.resolution = 16;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.record_time = false;
  const auto a = train(cfg, t, v);
  const auto b = train(cfg, t, v);
  EXPECT_EQ(curves_to_csv(a.report), curves_to_csv(b.report));
  EXPECT_EQ(a.report.step_losses, b.report.step_losses);
}

TEST(Trainer, RejectsEmptyOrMismatchedSplits) {
  const auto t = synthetic_set(2, 16, 5);
  LabeledSet empty;
  empty.resolution = 16;
  TrainConfig cfg;
  cfg.model.resolution = 16;
  EXPECT_THROW(Trainer(cfg, empty, t), PreconditionError);
  EXPECT_THROW(Trainer(cfg, t, empty), PreconditionError);
  cfg.model.resolution = 32;
  EXPECT_THROW(Trainer(cfg, t, t), PreconditionError);
}

TEST(Evaluate, AccuracyAndConfusion) {
  // A linear model that reads one pixel: logit_TB = x, logit_Normal = 0.5.
  Network<float> net("probe", {1, 1, 1}, 2);
  std::mt19937_64 rng(1);
  auto fc = std::make_unique<Linear<float>>("fc", 1, 2, rng);
  fc->weight().value = Tensor<float>({2, 1}, {0.0f, 1.0f});
  fc->bias().value = Tensor<float>({2}, {0.5f, 0.0f});
  net.add(std::move(fc));
  LabeledSet set;
  set.resolution = 1;
  set.add(GrayImage(1, 1, 1.0), Label::TB);
  set.add(GrayImage(1, 1, 0.0), Label::Normal);
  set.add(GrayImage(1, 1, 0.9), Label::TB);
  set.add(GrayImage(1, 1, 0.1), Label::Normal);
  auto r = evaluate(net, set, 3);
  EXPECT_DOUBLE_EQ(r.accuracy, 100.0);
  EXPECT_EQ(r.true_positive, 2u);
  EXPECT_EQ(r.true_negative, 2u);

  set.labels = {0, 1, 1, 0};  // flip the first pair
  r = evaluate(net, set, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 50.0);
  EXPECT_EQ(r.false_positive, 1u);
  EXPECT_EQ(r.false_negative, 1u);
  EXPECT_EQ(r.total(), 4u);
  EXPECT_EQ(format_accuracy(65.771812), "65.77181");
}

TEST(Curves, LineCountAndRoundTrip) {
  TrainReport report;
  for (std::size_t e = 1; e <= 10; ++e) report.epochs.push_back({e, 1.0 / static_cast<double>(e), 50.0 + e, 0.0});
  const auto csv = curves_to_csv(report);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  std::istringstream in(csv);
  const auto back = parse_curves(in);
  ASSERT_EQ(back.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(back[i].epoch, report.epochs[i].epoch);
    EXPECT_NEAR(back[i].train_loss, report.epochs[i].train_loss, 1e-9);
  }
  EXPECT_THROW(export_curves(TrainReport{}, fs::temp_directory_path() / "tbnet_empty_curves.csv"), PreconditionError);
  std::istringstream bad("epoch,loss\n");
  EXPECT_THROW(parse_curves(bad), DecodeError);
}

TEST(LoadSplit, UnreadableImageNamesPath) {
  DatasetManifest m;
  m.records = {{"does/not/exist.pgm", Label::TB, Provenance::Original, Split::Train}};
  try {
    load_split(m, Split::Train, 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("does/not/exist.pgm"), std::string::npos);
  }
}
