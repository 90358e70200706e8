#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "streetcam/attribute.hpp"
#include "streetcam/ranking_model.hpp"
#include "streetcam/saliency.hpp"

namespace streetcam {

struct RankedEntry {
  std::string image_id;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

// Descending by score; equal scores ordered by image_id ascending.
struct RankedCorpus {
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  std::string model;
  std::vector<RankedEntry> entries;
};

RankedCorpus rank_scores(const ScoreTable& scores, PerceptualAttribute attribute, std::string model);
RankedCorpus rank_corpus(const ScoringModel& model, const std::vector<std::string>& image_ids,
                         const ImageSource& images, std::string model_reference);

struct Extremes {
  std::vector<RankedEntry> top;     // first k, highest first
  std::vector<RankedEntry> bottom;  // last k, in ranked (descending) order
};

// Throws ValidationError when 2k exceeds the corpus size.
Extremes extremes(const RankedCorpus& ranked, int k = 50);

void to_json(nlohmann::json& j, const RankedCorpus& r);
void from_json(const nlohmann::json& j, RankedCorpus& r);

// Trim, ASCII-lowercase, collapse internal whitespace runs to one space.
std::string normalize_label(std::string_view label);
// Normalises, drops empties, deduplicates.
std::set<std::string> normalize_labels(const std::vector<std::string>& labels);

struct AnnotationRecord {
  std::string task_id;
  std::string image_id;
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  Polarity polarity = Polarity::high;
  std::string model;
  std::string annotator_id;
  std::set<std::string> labels;  // an object is counted at most once per image
  std::string timestamp;         // ISO-8601 UTC
  bool operator==(const AnnotationRecord&) const = default;
};

void to_json(nlohmann::json& j, const AnnotationRecord& r);
// Rejects duplicate or non-normalised labels with ValidationError.
void from_json(const nlohmann::json& j, AnnotationRecord& r);

struct TallyKey {
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  Polarity polarity = Polarity::high;
  std::string model;
  auto operator<=>(const TallyKey&) const = default;
};

struct TallyRow {
  std::string label;
  int count = 0;
  bool operator==(const TallyRow&) const = default;
};

struct TallyTable {
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  Polarity polarity = Polarity::high;
  std::string model;
  int images = 0;  // distinct images annotated for this key
  std::vector<TallyRow> rows;  // count descending, then label ascending
  bool operator==(const TallyTable&) const = default;
};

struct TallyResult {
  std::vector<TallyTable> tables;  // ordered by (attribute, polarity, model)
  std::vector<std::string> warnings;
};

// Count of label l = number of distinct images whose records contain l.
TallyResult tally(const std::vector<AnnotationRecord>& records);

void to_json(nlohmann::json& j, const TallyTable& t);
void to_json(nlohmann::json& j, const TallyResult& r);

// Rewrites labels through a {from: to} map (both sides normalised) and
// re-deduplicates. Used for post-hoc synonym merging.
std::vector<AnnotationRecord> remap_labels(const std::vector<AnnotationRecord>& records,
                                           const std::map<std::string, std::string>& mapping);
// Two-column `from,to` CSV.
std::map<std::string, std::string> load_label_mapping(const std::filesystem::path& path);

struct HeatmapStats {
  std::string image_id;
  SaliencyMethod method = SaliencyMethod::gradcam;
  double threshold = 0.5;
  double activated_fraction = 0.0;  // pixels >= threshold
  int component_count = 0;          // 4-connected regions of those pixels
};

HeatmapStats heatmap_stats(const Grid& grid, double threshold = 0.5);
HeatmapStats heatmap_stats(const SaliencyMap& map, double threshold = 0.5);

enum class TableFormat { csv, markdown };

TableFormat parse_table_format(const std::string& name);
std::string extension(TableFormat format);

// One table as `object,count` CSV or a two-column Markdown table.
std::string export_table(const TallyTable& table, TableFormat format);
// `{attribute}_{polarity}_{model}.{ext}`
std::string table_filename(const TallyTable& table, TableFormat format);

// Side-by-side Markdown layout: one (object, count) column pair per
// attribute x {+,-}, attributes in the given order, rows padded with blanks.
std::string export_layout(const std::vector<TallyTable>& tables, const std::string& model,
                          const std::vector<PerceptualAttribute>& attributes = {
                              PerceptualAttribute::depressing, PerceptualAttribute::safety,
                              PerceptualAttribute::wealthy});

// Writes every table of `result` into `directory`; returns the paths.
std::vector<std::filesystem::path> write_tables(const TallyResult& result,
                                                const std::filesystem::path& directory,
                                                TableFormat format);

}  // namespace streetcam
