#include <gtest/gtest.h>

#include <fstream>

#include "streetcam/checkpoint.hpp"
#include "streetcam/errors.hpp"

#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace streetcam;

namespace {

// Written by tests/fixtures/make_torchvision_fixture.py before this suite runs.
const fs::path kFixture = STREETCAM_TORCHVISION_FIXTURE;

c10::Dict<c10::IValue, c10::IValue> read_dict(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return torch::pickle_load(bytes).toGenericDict();
}

void expect_matches_torchvision(ScoringModel& model, const std::string& name, std::size_t expected_tensors) {
  const auto weights = kFixture / (name + "_weights.pt");
  if (!fs::exists(weights)) GTEST_SKIP() << "torchvision fixture not generated";
  model.to(torch::kDouble);
  const auto report = import_weights(model.backbone(), weights);
  EXPECT_TRUE(report.missing.empty()) << join(report.missing);
  EXPECT_TRUE(report.unexpected.empty()) << join(report.unexpected);
  EXPECT_EQ(report.loaded.size(), expected_tensors);

  const auto io = read_dict(kFixture / (name + "_io.pt"));
  const auto input = io.at("input").toTensor();
  const auto expected = io.at("score").toTensor();
  const auto actual = model.score_batch(input);
  EXPECT_TRUE(torch::allclose(actual, expected, 1e-9, 1e-9)) << actual << "\nvs\n" << expected;
}

}  // namespace

TEST(ImportWeights, ResNet18MatchesTorchvision) {
  BackboneConfig config;
  config.kind = BackboneKind::conv_residual;
  config.input_side = 64;
  config.residual.depth = 18;
  ScoringModel model(config, PerceptualAttribute::safety);
  // 62 parameters + 60 BatchNorm buffers; num_batches_tracked is a buffer too.
  expect_matches_torchvision(model, "resnet18", model.backbone().named_parameters().size() +
                                                    model.backbone().named_buffers().size());
}

TEST(ImportWeights, VisionTransformerMatchesTorchvision) {
  BackboneConfig config;
  config.kind = BackboneKind::attention_transformer;
  config.input_side = 32;
  config.transformer = {8, 16, 2, 2, 4};
  ScoringModel model(config, PerceptualAttribute::safety);
  expect_matches_torchvision(model, "vit", model.backbone().named_parameters().size());
}

TEST(ImportWeights, ReportsMissingUnexpectedAndShapeErrors) {
  fixtures::TempDir dir;
  auto model = fixtures::tiny_fixture(4, 1, 2, 3);
  c10::Dict<std::string, torch::Tensor> dict;
  dict.insert("conv1.weight", torch::ones({2, 3, 3, 3}));
  dict.insert("extra", torch::zeros({1}));
  auto bytes = torch::pickle_save(c10::IValue(dict));
  std::ofstream(dir / "w.pt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  const auto report = import_weights(model.backbone(), dir / "w.pt");
  EXPECT_EQ(report.loaded, std::vector<std::string>{"conv1.weight"});
  EXPECT_EQ(report.unexpected, std::vector<std::string>{"extra"});
  EXPECT_EQ(report.missing.size(), 5u);
  EXPECT_TRUE(torch::equal(fixtures::as_tiny(model).conv1->weight, torch::ones({2, 3, 3, 3}, torch::kDouble)));

  c10::Dict<std::string, torch::Tensor> wrong;
  wrong.insert("conv1.weight", torch::ones({2, 3, 5, 5}));
  bytes = torch::pickle_save(c10::IValue(wrong));
  std::ofstream(dir / "bad.pt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(import_weights(model.backbone(), dir / "bad.pt"), ValidationError);
  EXPECT_THROW(import_weights(model.backbone(), dir / "none.pt"), NotFoundError);
}
