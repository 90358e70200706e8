#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <opencv2/core.hpp>

#include "streetcam/attribute.hpp"

namespace streetcam {

struct ImageRecord {
  std::string image_id;
  std::filesystem::path file_path;  // relative to the corpus root
  std::optional<std::string> city;
  int width = 0;
  int height = 0;
};

// The image set of a study. `root` is the directory the manifest lives in;
// every record's file_path resolves against it.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::filesystem::path root, std::vector<ImageRecord> records);

  const std::vector<ImageRecord>& records() const { return records_; }
  const std::filesystem::path& root() const { return root_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& image_id) const { return index_.count(image_id) != 0; }
  // Throws NotFoundError.
  const ImageRecord& at(const std::string& image_id) const;
  std::filesystem::path resolve(const ImageRecord& record) const { return root_ / record.file_path; }

 private:
  std::filesystem::path root_;
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Reads an `image_id,file_path,city` manifest. Every referenced file must
// decode; width/height are filled from the decoded image.
Corpus load_corpus(const std::filesystem::path& manifest_path);

// One crowdsourced judgment. outcome is +1 when `left` was preferred and -1
// when `right` was.
struct Comparison {
  std::string pair_id;
  std::string left;
  std::string right;
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  int outcome = 1;

  bool operator==(const Comparison&) const = default;
};

struct Rejection {
  std::size_t row = 0;  // line number in the source CSV
  std::string reason;
};

struct ComparisonLoad {
  std::vector<Comparison> comparisons;
  std::vector<Rejection> rejected;
};

// Reads a `pair_id,left_image,right_image,attribute,choice` file. Rows naming
// unknown images, self-comparisons and no-preference judgments are rejected
// into the report; an unknown attribute or choice aborts the load.
ComparisonLoad load_comparisons(const std::filesystem::path& csv_path, const Corpus& corpus);

// Rejection report as a JSON list of {row, reason}.
std::string rejection_report_json(const std::vector<Rejection>& rejected);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<Comparison> train;
  std::vector<Comparison> validation;
  std::vector<Comparison> test;
  std::uint64_t seed = 0;
  // Comparisons discarded by strict by-image splitting (always 0 otherwise).
  std::size_t dropped = 0;
};

// Deterministic shuffle-and-cut partition by comparison. With `by_image` the
// image set is partitioned instead and comparisons whose endpoints land in
// different parts are dropped, so no image is shared across parts.
DatasetSplit split(const std::vector<Comparison>& comparisons, SplitFractions fractions,
                   std::uint64_t seed, bool by_image = false);

struct PreprocessConfig {
  int side = 224;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

struct PreprocessedImage {
  torch::Tensor tensor;  // float32 (3, side, side), RGB
  PreprocessConfig normalization;
};

// Resize to side x side (bilinear, aspect not preserved), scale to [0,1],
// normalise per channel. `bgr` is an 8-bit 3-channel OpenCV image.
PreprocessedImage preprocess(const cv::Mat& bgr, const PreprocessConfig& config);
// Throws ImageDecodeError carrying the image id for unreadable files.
PreprocessedImage preprocess(const Corpus& corpus, const ImageRecord& record,
                             const PreprocessConfig& config);

// Reads an image as 8-bit BGR; throws ImageDecodeError(image_id, ...).
cv::Mat read_image(const std::filesystem::path& path, const std::string& image_id);

// Supplies preprocessed tensors by image id to training, ranking and saliency.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual torch::Tensor tensor(const std::string& image_id) const = 0;
  torch::Tensor batch(const std::vector<std::string>& image_ids) const;
};

class InMemoryImageSource : public ImageSource {
 public:
  void add(const std::string& image_id, torch::Tensor tensor);
  torch::Tensor tensor(const std::string& image_id) const override;
  std::size_t size() const { return tensors_.size(); }

 private:
  std::unordered_map<std::string, torch::Tensor> tensors_;
};

// Lazily decodes and preprocesses corpus images, memoising the result.
class CorpusImageSource : public ImageSource {
 public:
  CorpusImageSource(const Corpus& corpus, PreprocessConfig config, bool cache = true);
  torch::Tensor tensor(const std::string& image_id) const override;
  const PreprocessConfig& config() const { return config_; }

 private:
  const Corpus& corpus_;
  PreprocessConfig config_;
  bool cache_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, torch::Tensor> memo_;
};

}  // namespace streetcam
