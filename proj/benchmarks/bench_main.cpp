#include <random>

#include <benchmark/benchmark.h>

#include "streetcam/analysis.hpp"
#include "streetcam/ranking_model.hpp"
#include "streetcam/saliency.hpp"

namespace {

using namespace streetcam;

ScoringModel tiny_model(int side) {
  BackboneConfig config;
  config.kind = BackboneKind::tiny_conv;
  config.input_side = side;
  return ScoringModel(config, PerceptualAttribute::safety, 1);
}

void BM_RankingLoss(benchmark::State& state) {
  const auto n = state.range(0);
  torch::manual_seed(0);
  auto left = torch::randn({n});
  auto right = torch::randn({n});
  auto y = torch::where(torch::rand({n}) > 0.5, 1.0, -1.0).to(torch::kFloat32);
  for (auto _ : state) benchmark::DoNotOptimize(ranking_loss(left, right, y).item<double>());
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_RankingLoss)->Arg(32)->Arg(1024)->Arg(65536);

void BM_ScoreBatch(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto model = tiny_model(side);
  auto batch = torch::randn({32, 3, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(model.score_batch(batch));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ScoreBatch)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GradCam(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto model = tiny_model(side);
  auto image = torch::randn({3, side, side});
  for (auto _ : state) {
    auto cap = capture(model, image, TargetSign::positive);
    benchmark::DoNotOptimize(gradcam(cap));
  }
}
BENCHMARK(BM_GradCam)->Arg(64)->Arg(224)->Unit(benchmark::kMillisecond);

void BM_Rollout(benchmark::State& state) {
  const auto tokens = state.range(0);
  torch::manual_seed(0);
  std::vector<torch::Tensor> attention;
  for (int layer = 0; layer < 12; ++layer) {
    attention.push_back(torch::softmax(torch::randn({6, tokens, tokens}), -1));
  }
  for (auto _ : state) benchmark::DoNotOptimize(rollout(attention));
}
BENCHMARK(BM_Rollout)->Arg(50)->Arg(197)->Unit(benchmark::kMicrosecond);

void BM_Tally(benchmark::State& state) {
  const auto n = state.range(0);
  std::mt19937 rng(7);
  const std::vector<std::string> labels{"tree", "car", "fence", "graffiti", "sidewalk", "window", "sky", "wall"};
  std::vector<AnnotationRecord> records;
  for (int64_t i = 0; i < n; ++i) {
    AnnotationRecord r;
    r.task_id = "t" + std::to_string(i);
    r.image_id = "img" + std::to_string(i % 100);
    r.attribute = static_cast<PerceptualAttribute>(rng() % 3);
    r.polarity = rng() % 2 ? Polarity::high : Polarity::low;
    r.model = "m";
    r.annotator_id = "a" + std::to_string(i % 5);
    for (int j = 0; j < 3; ++j) r.labels.insert(labels[rng() % labels.size()]);
    records.push_back(std::move(r));
  }
  for (auto _ : state) benchmark::DoNotOptimize(tally(records));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Tally)->Arg(1000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
