#include <gtest/gtest.h>

#include <fstream>

#include "streetcam/checkpoint.hpp"
#include "streetcam/errors.hpp"
#include "streetcam/synthetic.hpp"
#include "streetcam/trainer.hpp"

#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace streetcam;
using streetcam::fixtures::TempDir;

namespace {

struct Bench {
  SyntheticCorpus corpus;
  InMemoryImageSource images;
  DatasetSplit split;
  BackboneConfig backbone;
};

Bench small_bench(std::uint64_t seed = 3, int images = 40, int comparisons = 200) {
  Bench b;
  SyntheticConfig config;
  config.images = images;
  config.side = 32;
  config.comparisons = comparisons;
  config.seed = seed;
  config.max_rect = 24;
  b.corpus = make_synthetic_corpus(config);
  PreprocessConfig preprocessing;
  preprocessing.side = 32;
  b.images = preprocess_all(b.corpus, preprocessing);
  b.split = split(b.corpus.comparisons, {0.8, 0.1, 0.1}, seed);
  b.backbone.kind = BackboneKind::tiny_conv;
  b.backbone.input_side = 32;
  b.backbone.tiny = {4, 6, 3};
  return b;
}

std::vector<torch::Tensor> snapshot(const ScoringModel& model) {
  std::vector<torch::Tensor> out;
  for (const auto& p : model.backbone().parameters()) out.push_back(p.detach().clone());
  return out;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto bad = ok;
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = ok;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = ok;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(parse_optimizer_kind("rmsprop"), ValidationError);

  nlohmann::json j = ok;
  EXPECT_EQ(j.at("learning_rate"), 1e-3);
  EXPECT_EQ(j.at("optimizer"), "sgd");
  EXPECT_EQ(j.get<TrainConfig>().momentum, 0.9);
}

TEST(Train, ZeroLearningRateLeavesParametersBitwiseUnchanged) {
  auto b = small_bench();
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 1);
  const auto before = snapshot(model);
  DatasetSplit two{{b.split.train[0], b.split.train[1]}, b.split.validation, {}, 0, 0};
  TrainConfig config;
  config.learning_rate = 0.0;
  config.epochs = 1;
  const auto report = train(model, two, config, b.images);
  ASSERT_EQ(report.epochs.size(), 1u);
  EXPECT_TRUE(std::isfinite(report.epochs[0].train_loss));
  const auto after = snapshot(model);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i], after[i]));
}

TEST(Train, RunsExactlyTheConfiguredEpochs) {
  auto b = small_bench();
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 1);
  TrainConfig config;
  config.epochs = 3;
  int callbacks = 0;
  TrainOptions options;
  options.on_epoch = [&](const EpochEntry& e) { EXPECT_EQ(e.epoch, ++callbacks); };
  const auto report = train(model, b.split, config, b.images, options);
  EXPECT_EQ(report.epochs.size(), 3u);
  EXPECT_EQ(callbacks, 3);
  EXPECT_TRUE(report.test_accuracy.has_value());
  EXPECT_GE(report.best_epoch, 1);
  EXPECT_LE(report.best_epoch, 3);
  // Best epoch is the first epoch reaching the maximum validation accuracy.
  double best = -1.0;
  int first = 0;
  for (const auto& e : report.epochs) {
    if (e.validation_accuracy > best) best = e.validation_accuracy, first = e.epoch;
  }
  EXPECT_EQ(report.best_epoch, first);
  EXPECT_EQ(report.best_validation_accuracy, best);
  // The model ends holding the best parameters.
  EXPECT_EQ(evaluate(model, b.split.validation, b.images), best);
}

TEST(Train, AttributeMismatchAndEmptySplitsAreErrors) {
  auto b = small_bench();
  ScoringModel model(b.backbone, PerceptualAttribute::wealthy, 1);
  TrainConfig config;
  config.epochs = 1;
  EXPECT_THROW(train(model, b.split, config, b.images), ValidationError);
  ScoringModel safety(b.backbone, PerceptualAttribute::safety, 1);
  DatasetSplit empty{{}, b.split.validation, {}, 0, 0};
  EXPECT_THROW(train(safety, empty, config, b.images), ValidationError);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostic) {
  auto b = small_bench();
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 1);
  {
    torch::NoGradGuard no_grad;
    model.backbone().parameters()[0].fill_(std::numeric_limits<float>::quiet_NaN());
  }
  TrainConfig config;
  config.epochs = 2;
  try {
    train(model, b.split, config, b.images);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, DeterministicGivenSeed) {
  auto b = small_bench();
  TrainConfig config;
  config.epochs = 2;
  config.seed = 77;
  ScoringModel m1(b.backbone, PerceptualAttribute::safety, 5), m2(b.backbone, PerceptualAttribute::safety, 5);
  const auto r1 = train(m1, b.split, config, b.images);
  const auto r2 = train(m2, b.split, config, b.images);
  for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
    EXPECT_EQ(r1.epochs[i].train_loss, r2.epochs[i].train_loss);
    EXPECT_EQ(r1.epochs[i].validation_accuracy, r2.epochs[i].validation_accuracy);
  }
  const auto p1 = snapshot(m1), p2 = snapshot(m2);
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_TRUE(torch::equal(p1[i], p2[i]));
}

TEST(Train, SingleBatchLossDoesNotIncreaseEarly) {
  auto b = small_bench(11, 40, 120);
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 2);
  TrainConfig config;
  config.epochs = 3;
  config.shuffle = false;
  config.batch_size = static_cast<int>(b.split.train.size());
  const auto report = train(model, b.split, config, b.images);
  EXPECT_LE(report.epochs[1].train_loss, report.epochs[0].train_loss);
  EXPECT_LE(report.epochs[2].train_loss, report.epochs[1].train_loss);
}

TEST(Train, FrozenBackboneOnlyMovesTheHead) {
  auto b = small_bench();
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 1);
  const auto before = model.backbone().named_parameters().values();
  std::vector<torch::Tensor> copies;
  for (const auto& p : before) copies.push_back(p.detach().clone());
  TrainConfig config;
  config.epochs = 1;
  config.freeze_backbone = true;
  train(model, b.split, config, b.images);
  const auto after = model.backbone().named_parameters();
  std::size_t i = 0;
  for (const auto& item : after) {
    const bool head = item.key().rfind("head.", 0) == 0;
    if (!head) EXPECT_TRUE(torch::equal(item.value(), copies[i])) << item.key();
    ++i;
  }
}

TEST(Evaluate, DoesNotMutateModel) {
  auto b = small_bench();
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 1);
  const auto before = snapshot(model);
  const auto first = evaluate(model, b.split.test, b.images);
  EXPECT_EQ(evaluate(model, b.split.test, b.images), first);
  const auto after = snapshot(model);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i], after[i]));
  EXPECT_FALSE(model.backbone().is_training());
}

TEST(Checkpoint, RoundTripReproducesValidationAccuracy) {
  auto b = small_bench();
  TempDir dir;
  ScoringModel model(b.backbone, PerceptualAttribute::safety, 1);
  TrainConfig config;
  config.epochs = 2;
  TrainOptions options;
  options.output = dir.path();
  options.preprocessing.side = 32;
  const auto report = train(model, b.split, config, b.images, options);
  EXPECT_EQ(report.best_checkpoint, dir / "checkpoint");
  ASSERT_TRUE(fs::exists(dir / "train_report.json"));
  const auto json = nlohmann::json::parse(std::ifstream(dir / "train_report.json"));
  EXPECT_EQ(json.at("epochs").size(), 2u);

  const auto loaded = load_checkpoint(report.best_checkpoint);
  EXPECT_EQ(loaded.model.attribute(), PerceptualAttribute::safety);
  EXPECT_EQ(loaded.epoch, report.best_epoch);
  EXPECT_EQ(loaded.preprocessing.side, 32);
  EXPECT_EQ(loaded.training.at("learning_rate"), 1e-3);
  EXPECT_EQ(evaluate(loaded.model, b.split.validation, b.images), report.best_validation_accuracy);
  EXPECT_EQ(checkpoint_reference(loaded), "tiny_conv-safety-" + dir.path().filename().string());
}

TEST(Checkpoint, SaveLoadDoublePrecisionTransformer) {
  TempDir dir;
  auto model = fixtures::transformer_fixture(3);
  save_checkpoint(model, PreprocessConfig{}, nlohmann::json::object(), 4, dir / "vit");
  const auto loaded = load_checkpoint(dir / "vit");
  EXPECT_EQ(loaded.model.dtype(), torch::kDouble);
  EXPECT_EQ(loaded.model.kind(), BackboneKind::attention_transformer);
  const auto x = torch::randn({2, 3, 16, 16}, torch::kDouble);
  EXPECT_TRUE(torch::equal(model.score_batch(x), loaded.model.score_batch(x)));
  EXPECT_THROW(load_checkpoint(dir / "nothing"), NotFoundError);
}
