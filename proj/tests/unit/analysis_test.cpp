#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "streetcam/analysis.hpp"
#include "streetcam/errors.hpp"

#include "test_util.hpp"

using namespace streetcam;
using A = PerceptualAttribute;
using P = Polarity;

namespace {

AnnotationRecord rec(const std::string& image, std::set<std::string> labels, A attribute = A::safety,
                     P polarity = P::high, const std::string& annotator = "ann") {
  return {"t-" + image, image, attribute, polarity, "m", annotator, std::move(labels), "2026-01-01T00:00:00Z"};
}

std::vector<std::string> order(const RankedCorpus& r) {
  std::vector<std::string> ids;
  for (const auto& e : r.entries) ids.push_back(e.image_id);
  return ids;
}

}  // namespace

TEST(Rank, DescendingWithLexicographicTies) {
  EXPECT_EQ(order(rank_scores({{"a", 3}, {"b", 1}, {"c", 2}}, A::safety, "m")),
            (std::vector<std::string>{"a", "c", "b"}));
  EXPECT_EQ(order(rank_scores({{"b", 1}, {"a", 1}}, A::safety, "m")), (std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(rank_scores({}, A::safety, "m"), ValidationError);
}

TEST(Extremes, TopAndBottomExcludeTheMiddle) {
  const auto ranked = rank_scores({{"a", 5}, {"b", 4}, {"c", 3}, {"d", 2}, {"e", 1}}, A::safety, "m");
  const auto ext = extremes(ranked, 2);
  ASSERT_EQ(ext.top.size(), 2u);
  EXPECT_EQ(ext.top[0].image_id, "a");
  EXPECT_EQ(ext.top[1].image_id, "b");
  EXPECT_EQ(ext.bottom[0].image_id, "d");
  EXPECT_EQ(ext.bottom[1].image_id, "e");
  const auto none = extremes(ranked, 0);
  EXPECT_TRUE(none.top.empty() && none.bottom.empty());
  EXPECT_THROW(extremes(ranked, 3), ValidationError);
  EXPECT_THROW(extremes(ranked, -1), ValidationError);
}

TEST(Extremes, FiftyOfTwoHundredShape) {
  ScoreTable scores;
  for (int i = 0; i < 100; ++i) scores["img" + std::to_string(i)] = i * 0.5;
  const auto ext = extremes(rank_scores(scores, A::depressing, "m"), 50);
  EXPECT_EQ(ext.top.size(), 50u);
  EXPECT_EQ(ext.bottom.size(), 50u);
  EXPECT_EQ(ext.top.back().image_id, "img50");
  EXPECT_EQ(ext.bottom.front().image_id, "img49");
}

TEST(RankedCorpus, JsonRoundTrip) {
  const auto ranked = rank_scores({{"x", 0.25}, {"y", -1.5}}, A::wealthy, "model-a");
  const nlohmann::json j = ranked;
  const auto back = j.get<RankedCorpus>();
  EXPECT_EQ(back.attribute, A::wealthy);
  EXPECT_EQ(back.model, "model-a");
  EXPECT_EQ(back.entries, ranked.entries);
}

TEST(Labels, NormalisedToLowercaseSingleSpaced) {
  EXPECT_EQ(normalize_label("  Power   Cable "), "power cable");
  EXPECT_EQ(normalize_labels({"Tree", "tree ", "car", "  "}), (std::set<std::string>{"tree", "car"}));
}

TEST(Tally, CountsEachLabelOncePerImage) {
  const auto result = tally({rec("img1", {"tree", "car"}), rec("img2", {"tree"})});
  ASSERT_EQ(result.tables.size(), 1u);
  EXPECT_EQ(result.tables[0].images, 2);
  EXPECT_EQ(result.tables[0].rows, (std::vector<TallyRow>{{"tree", 2}, {"car", 1}}));
  EXPECT_TRUE(result.warnings.empty());

  // Two records for the same image still count it once.
  const auto dup = tally({rec("img1", {"tree"}), rec("img1", {"tree", "wall"})});
  EXPECT_EQ(dup.tables[0].rows, (std::vector<TallyRow>{{"tree", 1}, {"wall", 1}}));
  EXPECT_EQ(dup.tables[0].images, 1);

  EXPECT_TRUE(tally({}).tables.empty());
}

TEST(Tally, SeparatesKeysAndWarnsOnSeveralAnnotators) {
  const auto result = tally({rec("i1", {"tree"}, A::safety, P::high, "ann1"),
                             rec("i2", {"tree"}, A::safety, P::high, "ann2"),
                             rec("i3", {"car"}, A::safety, P::low, "ann1")});
  ASSERT_EQ(result.tables.size(), 2u);
  EXPECT_EQ(result.tables[0].polarity, P::high);
  EXPECT_EQ(result.tables[1].polarity, P::low);
  ASSERT_EQ(result.warnings.size(), 1u);
}

TEST(Records, JsonValidation) {
  const auto r = rec("img1", {"car", "tree"});
  const nlohmann::json j = r;
  EXPECT_EQ(j.get<AnnotationRecord>(), r);

  auto duplicate = j;
  duplicate["labels"] = {"tree", "tree"};
  EXPECT_THROW(duplicate.get<AnnotationRecord>(), ValidationError);
  auto unnormalised = j;
  unnormalised["labels"] = {"Tree"};
  EXPECT_THROW(unnormalised.get<AnnotationRecord>(), ValidationError);
}

TEST(Remap, MergesSynonymsAndDeduplicates) {
  fixtures::TempDir dir;
  std::ofstream(dir / "syn.csv") << "from,to\nLamp Post,street light\nstreetlight,street light\n";
  const auto mapping = load_label_mapping(dir / "syn.csv");
  EXPECT_EQ(mapping.at("lamp post"), "street light");
  const auto remapped = remap_labels({rec("i", {"lamp post", "streetlight", "tree"})}, mapping);
  EXPECT_EQ(remapped[0].labels, (std::set<std::string>{"street light", "tree"}));
}

TEST(HeatmapStats, FractionsAndComponents) {
  Grid zero(10, 10, 0.0), one(10, 10, 1.0), blocks(10, 10, 0.0);
  EXPECT_EQ(heatmap_stats(zero).activated_fraction, 0.0);
  EXPECT_EQ(heatmap_stats(zero).component_count, 0);
  EXPECT_EQ(heatmap_stats(one).activated_fraction, 1.0);
  EXPECT_EQ(heatmap_stats(one).component_count, 1);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      blocks.at(1 + r, 1 + c) = 1.0;
      blocks.at(6 + r, 6 + c) = 1.0;
    }
  }
  const auto stats = heatmap_stats(blocks);
  EXPECT_DOUBLE_EQ(stats.activated_fraction, 0.08);
  EXPECT_EQ(stats.component_count, 2);
  // Diagonal neighbours are separate under 4-connectivity.
  Grid diagonal(2, 2, 0.0);
  diagonal.at(0, 0) = diagonal.at(1, 1) = 1.0;
  EXPECT_EQ(heatmap_stats(diagonal).component_count, 2);
  EXPECT_THROW(heatmap_stats(one, 1.0), ValidationError);
  EXPECT_THROW(heatmap_stats(one, 0.0), ValidationError);
}

TEST(Export, CsvAndMarkdown) {
  const TallyTable table{A::safety, P::high, "tiny", 2, {{"tree", 2}, {"car", 1}}};
  EXPECT_EQ(export_table(table, TableFormat::csv), "object,count\ntree,2\ncar,1\n");
  EXPECT_EQ(export_table({A::safety, P::low, "tiny", 0, {}}, TableFormat::csv), "object,count\n");
  EXPECT_EQ(export_table(table, TableFormat::markdown), "| Safety + | count |\n|---|--:|\n| tree | 2 |\n| car | 1 |\n");
  EXPECT_EQ(table_filename(table, TableFormat::markdown), "safety_high_tiny.md");
  EXPECT_EQ(parse_table_format("csv"), TableFormat::csv);
  EXPECT_THROW(parse_table_format("xlsx"), ValidationError);

  const TallyTable quoted{A::safety, P::high, "tiny", 1, {{"sign, \"stop\"", 1}}};
  EXPECT_EQ(export_table(quoted, TableFormat::csv), "object,count\n\"sign, \"\"stop\"\"\",1\n");

  fixtures::TempDir dir;
  const auto paths = write_tables({{table}, {}}, dir / "out", TableFormat::csv);
  ASSERT_EQ(paths.size(), 1u);
  std::ifstream in(paths[0]);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, "object,count\ntree,2\ncar,1\n");
}

TEST(Export, LayoutHasSixBlocksInAttributeOrder) {
  const std::vector<TallyTable> tables{{A::safety, P::high, "m", 1, {{"tree", 1}}},
                                       {A::wealthy, P::low, "m", 1, {{"car", 1}}},
                                       {A::safety, P::high, "other", 1, {{"bus", 1}}}};
  const auto layout = export_layout(tables, "m");
  EXPECT_EQ(layout,
            "| Depressing + | count | Depressing - | count | Safety + | count | Safety - | count | Wealthy + | count | Wealthy - | count |\n"
            "|---|--:|---|--:|---|--:|---|--:|---|--:|---|--:|\n"
            "|  |  |  |  | tree | 1 |  |  |  |  | car | 1 |\n");
}

TEST(Properties, RankMatchesSortOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> value(0, 300);  // plenty of ties
  ScoreTable scores;
  std::vector<std::pair<double, std::string>> oracle;
  for (int i = 0; i < 1000; ++i) {
    const auto id = "im" + std::to_string(rng() % 100000);
    if (scores.count(id)) continue;
    scores[id] = value(rng) / 7.0;
    oracle.emplace_back(-scores[id], id);
  }
  std::sort(oracle.begin(), oracle.end());
  const auto ranked = rank_scores(scores, A::boring, "m");
  ASSERT_EQ(ranked.entries.size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_EQ(ranked.entries[i].image_id, oracle[i].second);
}

TEST(Properties, TallyCountsBoundedByImages) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> vocabulary{"tree", "car", "wall", "sky", "bus"};
  std::vector<AnnotationRecord> records;
  for (int i = 0; i < 200; ++i) {
    std::set<std::string> labels;
    for (int j = 0; j < 3; ++j) labels.insert(vocabulary[rng() % vocabulary.size()]);
    records.push_back(rec("img" + std::to_string(rng() % 30), labels, kAllAttributes[rng() % 3],
                          rng() % 2 ? P::high : P::low));
  }
  for (const auto& table : tally(records).tables) {
    for (const auto& row : table.rows) {
      EXPECT_GT(row.count, 0);
      EXPECT_LE(row.count, table.images);
    }
  }
}

TEST(Properties, ActivatedFractionMonotoneInThreshold) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid grid(16, 16);
  for (auto& v : grid.values) v = u(rng);
  double previous = 1.0;
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const double f = heatmap_stats(grid, t).activated_fraction;
    EXPECT_LE(f, previous);
    previous = f;
  }
}
