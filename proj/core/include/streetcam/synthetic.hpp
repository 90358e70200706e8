#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "streetcam/dataset.hpp"

namespace streetcam {

// Brightness-ranked benchmark corpus: each image is uniform noise in
// [0, noise_max) with one white axis-aligned rectangle, and its latent score
// is the rectangle's area. Comparisons are noiseless: the larger rectangle
// always wins, and pairs of equal area are never drawn.
struct SyntheticConfig {
  int images = 200;
  int side = 64;
  int comparisons = 2000;
  std::uint64_t seed = 0;
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  int min_rect = 6;
  int max_rect = 40;
  int noise_max = 128;
};

struct SyntheticImage {
  std::string image_id;
  cv::Mat bgr;
  cv::Rect rect;
  double latent = 0.0;
};

struct SyntheticCorpus {
  std::vector<SyntheticImage> images;
  std::vector<Comparison> comparisons;

  // rows x cols mask with 1 inside the rectangle.
  cv::Mat mask(std::size_t index) const;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config);

// Writes manifest.csv, images/<id>.png, comparisons.csv and latent.csv
// (image_id,latent,x,y,width,height) under `directory`.
void write_synthetic_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& directory);

InMemoryImageSource preprocess_all(const SyntheticCorpus& corpus, const PreprocessConfig& config);

}  // namespace streetcam
