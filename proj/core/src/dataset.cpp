#include "streetcam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "csv.hpp"
#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

Corpus::Corpus(fs::path root, std::vector<ImageRecord> records)
    : root_(std::move(root)), records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, inserted] = index_.emplace(records_[i].image_id, i);
    if (!inserted) throw ValidationError("duplicate image_id '" + records_[i].image_id + "'");
  }
}

const ImageRecord& Corpus::at(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw NotFoundError("unknown image_id '" + image_id + "'");
  return records_[it->second];
}

cv::Mat read_image(const fs::path& path, const std::string& image_id) {
  cv::Mat image = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (image.empty()) {
    throw ImageDecodeError(image_id, "cannot decode image '" + image_id + "' (" + path.string() + ")");
  }
  if (image.depth() != CV_8U) {
    cv::Mat converted;
    double scale = image.depth() == CV_16U ? 1.0 / 257.0 : 1.0;
    image.convertTo(converted, CV_8U, scale);
    image = converted;
  }
  switch (image.channels()) {
    case 3: return image;
    case 1: cv::cvtColor(image, image, cv::COLOR_GRAY2BGR); return image;
    case 4: cv::cvtColor(image, image, cv::COLOR_BGRA2BGR); return image;
    default:
      throw ImageDecodeError(image_id, "image '" + image_id + "' has " +
                                           std::to_string(image.channels()) + " channels");
  }
}

Corpus load_corpus(const fs::path& manifest_path) {
  auto table = detail::read_csv(manifest_path);
  fs::path root = manifest_path.parent_path();
  if (table.header.empty()) return Corpus(root, {});

  const auto id_col = table.column("image_id");
  const auto path_col = table.column("file_path");
  std::optional<std::size_t> city_col;
  if (std::find(table.header.begin(), table.header.end(), "city") != table.header.end()) {
    city_col = table.column("city");
  }

  std::vector<ImageRecord> records;
  std::set<std::string> seen;
  std::vector<std::string> missing;
  for (const auto& row : table.rows) {
    ImageRecord record;
    record.image_id = row[id_col];
    record.file_path = row[path_col];
    if (city_col && !row[*city_col].empty()) record.city = row[*city_col];
    if (record.image_id.empty()) throw ValidationError(manifest_path.string() + ": empty image_id");
    if (!seen.insert(record.image_id).second) {
      throw ValidationError(manifest_path.string() + ": duplicate image_id '" + record.image_id + "'");
    }
    if (!fs::exists(root / record.file_path)) {
      missing.push_back(record.image_id + " (" + (root / record.file_path).string() + ")");
    }
    records.push_back(std::move(record));
  }
  if (!missing.empty()) {
    throw NotFoundError("missing image files: " + join(missing));
  }
  for (auto& record : records) {
    cv::Mat image = read_image(root / record.file_path, record.image_id);
    record.width = image.cols;
    record.height = image.rows;
  }
  return Corpus(std::move(root), std::move(records));
}

namespace {

bool is_no_preference(const std::string& choice) {
  return choice == "equal" || choice == "tie" || choice == "none" || choice == "no preference";
}

}  // namespace

ComparisonLoad load_comparisons(const fs::path& csv_path, const Corpus& corpus) {
  auto table = detail::read_csv(csv_path);
  ComparisonLoad load;
  if (table.header.empty()) return load;
  const auto pair_col = table.column("pair_id");
  const auto left_col = table.column("left_image");
  const auto right_col = table.column("right_image");
  const auto attr_col = table.column("attribute");
  const auto choice_col = table.column("choice");

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.lines[r];
    Comparison c;
    c.pair_id = row[pair_col];
    c.left = row[left_col];
    c.right = row[right_col];
    try {
      c.attribute = parse_attribute(row[attr_col]);
    } catch (const ValidationError& e) {
      throw ValidationError(csv_path.string() + " line " + std::to_string(line) + ": " + e.what());
    }
    const std::string& choice = row[choice_col];
    if (choice == "left") {
      c.outcome = 1;
    } else if (choice == "right") {
      c.outcome = -1;
    } else if (is_no_preference(choice)) {
      load.rejected.push_back({line, "no-preference judgment '" + choice + "' dropped"});
      continue;
    } else {
      throw ValidationError(csv_path.string() + " line " + std::to_string(line) +
                            ": unknown choice '" + choice + "' (expected left or right)");
    }

    std::vector<std::string> unknown;
    if (!corpus.contains(c.left)) unknown.push_back(c.left);
    if (!corpus.contains(c.right) && c.right != c.left) unknown.push_back(c.right);
    if (!unknown.empty()) {
      load.rejected.push_back({line, "unknown image id(s): " + join(unknown)});
      continue;
    }
    if (c.left == c.right) {
      load.rejected.push_back({line, "left and right are the same image '" + c.left + "'"});
      continue;
    }
    load.comparisons.push_back(std::move(c));
  }
  return load;
}

std::string rejection_report_json(const std::vector<Rejection>& rejected) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rejected) out.push_back({{"row", r.row}, {"reason", r.reason}});
  return out.dump(2);
}

namespace {

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

// Part sizes summing to n, each >= 1, each as close to fraction*n as rounding allows.
std::array<std::size_t, 3> part_sizes(std::size_t n, const SplitFractions& f) {
  std::array<double, 3> frac{f.train, f.validation, f.test};
  std::array<std::size_t, 3> sizes{};
  sizes[0] = static_cast<std::size_t>(std::llround(frac[0] * static_cast<double>(n)));
  sizes[1] = static_cast<std::size_t>(std::llround(frac[1] * static_cast<double>(n)));
  sizes[0] = std::min(sizes[0], n);
  sizes[1] = std::min(sizes[1], n - sizes[0]);
  sizes[2] = n - sizes[0] - sizes[1];
  for (auto& s : sizes) {
    if (s == 0) {
      auto largest = std::max_element(sizes.begin(), sizes.end());
      --*largest;
      s = 1;
    }
  }
  return sizes;
}

}  // namespace

DatasetSplit split(const std::vector<Comparison>& comparisons, SplitFractions fractions,
                   std::uint64_t seed, bool by_image) {
  if (fractions.train <= 0 || fractions.validation <= 0 || fractions.test <= 0) {
    throw ValidationError("split fractions must all be positive");
  }
  if (std::abs(fractions.train + fractions.validation + fractions.test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  if (comparisons.size() < 3) {
    throw ValidationError("need at least 3 comparisons to populate train/validation/test, got " +
                          std::to_string(comparisons.size()));
  }

  DatasetSplit out;
  out.seed = seed;
  if (!by_image) {
    std::vector<std::size_t> order(comparisons.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, seed);
    auto sizes = part_sizes(order.size(), fractions);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& c = comparisons[order[i]];
      if (i < sizes[0]) {
        out.train.push_back(c);
      } else if (i < sizes[0] + sizes[1]) {
        out.validation.push_back(c);
      } else {
        out.test.push_back(c);
      }
    }
    return out;
  }

  std::set<std::string> unique_images;
  for (const auto& c : comparisons) {
    unique_images.insert(c.left);
    unique_images.insert(c.right);
  }
  std::vector<std::string> images(unique_images.begin(), unique_images.end());
  seeded_shuffle(images, seed);
  auto sizes = part_sizes(images.size(), fractions);
  std::unordered_map<std::string, int> part;
  for (std::size_t i = 0; i < images.size(); ++i) {
    part[images[i]] = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);
  }
  for (const auto& c : comparisons) {
    int p = part[c.left];
    if (p != part[c.right]) {
      ++out.dropped;
      continue;
    }
    (p == 0 ? out.train : p == 1 ? out.validation : out.test).push_back(c);
  }
  return out;
}

PreprocessedImage preprocess(const cv::Mat& bgr, const PreprocessConfig& config) {
  if (config.side <= 0) throw ValidationError("preprocess side must be positive");
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    throw ValidationError("preprocess expects an 8-bit 3-channel image");
  }
  cv::Mat resized;
  if (bgr.rows == config.side && bgr.cols == config.side) {
    resized = bgr;
  } else {
    cv::resize(bgr, resized, cv::Size(config.side, config.side), 0, 0, cv::INTER_LINEAR);
  }
  const int side = config.side;
  auto tensor = torch::empty({3, side, side}, torch::kFloat32);
  auto acc = tensor.accessor<float, 3>();
  for (int y = 0; y < side; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        // OpenCV stores BGR; the tensor is RGB.
        float v = static_cast<float>(row[x][2 - c]) / 255.0f;
        acc[c][y][x] = (v - config.mean[c]) / config.std[c];
      }
    }
  }
  return {tensor, config};
}

PreprocessedImage preprocess(const Corpus& corpus, const ImageRecord& record,
                             const PreprocessConfig& config) {
  return preprocess(read_image(corpus.resolve(record), record.image_id), config);
}

torch::Tensor ImageSource::batch(const std::vector<std::string>& image_ids) const {
  std::vector<torch::Tensor> tensors;
  tensors.reserve(image_ids.size());
  for (const auto& id : image_ids) tensors.push_back(tensor(id));
  return torch::stack(tensors);
}

void InMemoryImageSource::add(const std::string& image_id, torch::Tensor tensor) {
  tensors_[image_id] = std::move(tensor);
}

torch::Tensor InMemoryImageSource::tensor(const std::string& image_id) const {
  auto it = tensors_.find(image_id);
  if (it == tensors_.end()) throw NotFoundError("no tensor for image '" + image_id + "'");
  return it->second;
}

CorpusImageSource::CorpusImageSource(const Corpus& corpus, PreprocessConfig config, bool cache)
    : corpus_(corpus), config_(config), cache_(cache) {}

torch::Tensor CorpusImageSource::tensor(const std::string& image_id) const {
  if (cache_) {
    std::lock_guard lock(mutex_);
    auto it = memo_.find(image_id);
    if (it != memo_.end()) return it->second;
  }
  auto t = preprocess(corpus_, corpus_.at(image_id), config_).tensor;
  if (cache_) {
    std::lock_guard lock(mutex_);
    memo_.emplace(image_id, t);
  }
  return t;
}

}  // namespace streetcam
