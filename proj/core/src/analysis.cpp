#include "streetcam/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "csv.hpp"
#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

RankedCorpus rank_scores(const ScoreTable& scores, PerceptualAttribute attribute, std::string model) {
  if (scores.empty()) throw ValidationError("cannot rank an empty corpus");
  RankedCorpus ranked;
  ranked.attribute = attribute;
  ranked.model = std::move(model);
  ranked.entries.reserve(scores.size());
  for (const auto& [id, score] : scores) {
    if (!std::isfinite(score)) throw ValidationError("non-finite score for image '" + id + "'");
    ranked.entries.push_back({id, score});
  }
  std::sort(ranked.entries.begin(), ranked.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.image_id < b.image_id;
  });
  return ranked;
}

RankedCorpus rank_corpus(const ScoringModel& model, const std::vector<std::string>& image_ids,
                         const ImageSource& images, std::string model_reference) {
  if (image_ids.empty()) throw ValidationError("cannot rank an empty corpus");
  return rank_scores(score_images(model, image_ids, images), model.attribute(),
                     std::move(model_reference));
}

Extremes extremes(const RankedCorpus& ranked, int k) {
  if (k < 0) throw ValidationError("k must be non-negative");
  const auto n = ranked.entries.size();
  if (2 * static_cast<std::size_t>(k) > n) {
    throw ValidationError("need at least 2k = " + std::to_string(2 * k) +
                          " ranked images for k = " + std::to_string(k) + ", corpus has " +
                          std::to_string(n));
  }
  Extremes out;
  out.top.assign(ranked.entries.begin(), ranked.entries.begin() + k);
  out.bottom.assign(ranked.entries.end() - k, ranked.entries.end());
  return out;
}

void to_json(nlohmann::json& j, const RankedCorpus& r) {
  j = {{"attribute", to_string(r.attribute)}, {"model", r.model}, {"ranking", nlohmann::json::array()}};
  for (const auto& e : r.entries) j["ranking"].push_back({{"image_id", e.image_id}, {"score", e.score}});
}

void from_json(const nlohmann::json& j, RankedCorpus& r) {
  r.attribute = parse_attribute(j.at("attribute").get<std::string>());
  r.model = j.at("model").get<std::string>();
  r.entries.clear();
  for (const auto& e : j.at("ranking")) {
    r.entries.push_back({e.at("image_id").get<std::string>(), e.at("score").get<double>()});
  }
}

std::string normalize_label(std::string_view label) {
  std::string out;
  bool pending_space = false;
  for (char ch : label) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

std::set<std::string> normalize_labels(const std::vector<std::string>& labels) {
  std::set<std::string> out;
  for (const auto& label : labels) {
    auto n = normalize_label(label);
    if (!n.empty()) out.insert(std::move(n));
  }
  return out;
}

void to_json(nlohmann::json& j, const AnnotationRecord& r) {
  j = {{"task_id", r.task_id},
       {"image_id", r.image_id},
       {"attribute", to_string(r.attribute)},
       {"polarity", to_string(r.polarity)},
       {"model", r.model},
       {"annotator_id", r.annotator_id},
       {"labels", r.labels},
       {"timestamp", r.timestamp}};
}

void from_json(const nlohmann::json& j, AnnotationRecord& r) {
  r.task_id = j.at("task_id").get<std::string>();
  r.image_id = j.at("image_id").get<std::string>();
  r.attribute = parse_attribute(j.at("attribute").get<std::string>());
  r.polarity = parse_polarity(j.at("polarity").get<std::string>());
  r.model = j.at("model").get<std::string>();
  r.annotator_id = j.at("annotator_id").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  r.labels.clear();
  for (const auto& item : j.at("labels")) {
    auto label = item.get<std::string>();
    if (label.empty() || normalize_label(label) != label) {
      throw ValidationError("record '" + r.task_id + "': label '" + label + "' is not normalised");
    }
    if (!r.labels.insert(label).second) {
      throw ValidationError("record '" + r.task_id + "': label '" + label +
                            "' appears twice (labels are a set)");
    }
  }
}

TallyResult tally(const std::vector<AnnotationRecord>& records) {
  struct Accumulator {
    std::map<std::string, std::set<std::string>> labels_by_image;
    std::set<std::string> annotators;
  };
  std::map<TallyKey, Accumulator> groups;
  for (const auto& r : records) {
    auto& acc = groups[TallyKey{r.attribute, r.polarity, r.model}];
    auto& image_labels = acc.labels_by_image[r.image_id];
    image_labels.insert(r.labels.begin(), r.labels.end());
    acc.annotators.insert(r.annotator_id);
  }

  TallyResult result;
  for (const auto& [key, acc] : groups) {
    TallyTable table;
    table.attribute = key.attribute;
    table.polarity = key.polarity;
    table.model = key.model;
    table.images = static_cast<int>(acc.labels_by_image.size());
    std::map<std::string, int> counts;
    for (const auto& [image, labels] : acc.labels_by_image) {
      for (const auto& label : labels) ++counts[label];
    }
    for (const auto& [label, count] : counts) table.rows.push_back({label, count});
    std::stable_sort(table.rows.begin(), table.rows.end(),
                     [](const TallyRow& a, const TallyRow& b) { return a.count > b.count; });
    result.tables.push_back(std::move(table));
    if (acc.annotators.size() > 1) {
      result.warnings.push_back(
          "aggregating " + std::to_string(acc.annotators.size()) + " annotators for " +
          to_string(key.attribute) + "/" + to_string(key.polarity) + "/" + key.model + ": " +
          join(std::vector<std::string>(acc.annotators.begin(), acc.annotators.end())));
    }
  }
  return result;
}

void to_json(nlohmann::json& j, const TallyTable& t) {
  j = {{"attribute", to_string(t.attribute)},
       {"polarity", to_string(t.polarity)},
       {"model", t.model},
       {"images", t.images},
       {"rows", nlohmann::json::array()}};
  for (const auto& row : t.rows) j["rows"].push_back({{"object", row.label}, {"count", row.count}});
}

void to_json(nlohmann::json& j, const TallyResult& r) {
  j = {{"tables", nlohmann::json::array()}, {"warnings", r.warnings}};
  for (const auto& t : r.tables) j["tables"].push_back(t);
}

std::vector<AnnotationRecord> remap_labels(const std::vector<AnnotationRecord>& records,
                                           const std::map<std::string, std::string>& mapping) {
  std::map<std::string, std::string> normalized;
  for (const auto& [from, to] : mapping) normalized[normalize_label(from)] = normalize_label(to);
  std::vector<AnnotationRecord> out = records;
  for (auto& r : out) {
    std::set<std::string> labels;
    for (const auto& label : r.labels) {
      auto it = normalized.find(label);
      labels.insert(it == normalized.end() ? label : it->second);
    }
    r.labels = std::move(labels);
  }
  return out;
}

std::map<std::string, std::string> load_label_mapping(const fs::path& path) {
  auto table = detail::read_csv(path);
  std::map<std::string, std::string> mapping;
  if (table.header.empty()) return mapping;
  const auto from = table.column("from");
  const auto to = table.column("to");
  for (const auto& row : table.rows) mapping[normalize_label(row[from])] = normalize_label(row[to]);
  return mapping;
}

HeatmapStats heatmap_stats(const Grid& grid, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("heatmap threshold must lie in (0, 1)");
  }
  HeatmapStats stats;
  stats.threshold = threshold;
  if (grid.values.empty()) return stats;
  cv::Mat mask(grid.rows, grid.cols, CV_8U);
  std::size_t active = 0;
  for (int r = 0; r < grid.rows; ++r) {
    auto* row = mask.ptr<unsigned char>(r);
    for (int c = 0; c < grid.cols; ++c) {
      const bool on = grid.at(r, c) >= threshold;
      row[c] = on ? 1 : 0;
      active += on;
    }
  }
  stats.activated_fraction = static_cast<double>(active) / static_cast<double>(grid.values.size());
  cv::Mat labels;
  stats.component_count = cv::connectedComponents(mask, labels, 4, CV_32S) - 1;
  return stats;
}

HeatmapStats heatmap_stats(const SaliencyMap& map, double threshold) {
  auto stats = heatmap_stats(map.upsampled, threshold);
  stats.image_id = map.image_id;
  stats.method = map.method;
  return stats;
}

TableFormat parse_table_format(const std::string& name) {
  if (name == "csv") return TableFormat::csv;
  if (name == "markdown" || name == "md") return TableFormat::markdown;
  throw ValidationError("unknown table format '" + name + "' (expected csv or markdown)");
}

std::string extension(TableFormat format) { return format == TableFormat::csv ? "csv" : "md"; }

namespace {

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

std::string sign_symbol(Polarity p) { return p == Polarity::high ? "+" : "-"; }

}  // namespace

std::string export_table(const TallyTable& table, TableFormat format) {
  std::ostringstream out;
  if (format == TableFormat::csv) {
    out << "object,count\n";
    for (const auto& row : table.rows) out << detail::csv_escape(row.label) << "," << row.count << "\n";
    return out.str();
  }
  out << "| " << display_name(table.attribute) << " " << sign_symbol(table.polarity)
      << " | count |\n|---|--:|\n";
  for (const auto& row : table.rows) out << "| " << md_cell(row.label) << " | " << row.count << " |\n";
  return out.str();
}

std::string table_filename(const TallyTable& table, TableFormat format) {
  std::string model;
  for (char c : table.model) {
    model += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '-';
  }
  return to_string(table.attribute) + "_" + to_string(table.polarity) + "_" + model + "." +
         extension(format);
}

std::string export_layout(const std::vector<TallyTable>& tables, const std::string& model,
                          const std::vector<PerceptualAttribute>& attributes) {
  std::vector<const TallyTable*> blocks;
  std::vector<std::string> headings;
  std::size_t height = 0;
  for (auto attribute : attributes) {
    for (auto polarity : {Polarity::high, Polarity::low}) {
      const TallyTable* found = nullptr;
      for (const auto& t : tables) {
        if (t.attribute == attribute && t.polarity == polarity && t.model == model) found = &t;
      }
      blocks.push_back(found);
      headings.push_back(display_name(attribute) + " " + sign_symbol(polarity));
      if (found) height = std::max(height, found->rows.size());
    }
  }

  std::ostringstream out;
  out << "|";
  for (const auto& h : headings) out << " " << h << " | count |";
  out << "\n|";
  for (std::size_t i = 0; i < headings.size(); ++i) out << "---|--:|";
  out << "\n";
  for (std::size_t r = 0; r < height; ++r) {
    out << "|";
    for (const auto* block : blocks) {
      if (block && r < block->rows.size()) {
        out << " " << md_cell(block->rows[r].label) << " | " << block->rows[r].count << " |";
      } else {
        out << "  |  |";
      }
    }
    out << "\n";
  }
  return out.str();
}

std::vector<fs::path> write_tables(const TallyResult& result, const fs::path& directory,
                                   TableFormat format) {
  fs::create_directories(directory);
  std::vector<fs::path> written;
  for (const auto& table : result.tables) {
    auto path = directory / table_filename(table, format);
    std::ofstream out(path, std::ios::binary);
    out << export_table(table, format);
    if (!out) throw Error("failed to write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace streetcam
