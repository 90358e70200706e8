#include "streetcam/synthetic.hpp"

#include <fstream>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

cv::Mat SyntheticCorpus::mask(std::size_t index) const {
  const auto& image = images.at(index);
  cv::Mat m = cv::Mat::zeros(image.bgr.rows, image.bgr.cols, CV_8U);
  m(image.rect).setTo(1);
  return m;
}

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config) {
  if (config.images < 2) throw ValidationError("synthetic corpus needs at least 2 images");
  if (config.min_rect < 1 || config.max_rect < config.min_rect || config.max_rect > config.side) {
    throw ValidationError("synthetic rectangle bounds must satisfy 1 <= min <= max <= side");
  }
  if (config.noise_max < 1 || config.noise_max > 255) {
    throw ValidationError("noise_max must be in [1, 255]");
  }
  std::mt19937_64 rng(config.seed);
  auto uniform = [&rng](int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };

  SyntheticCorpus corpus;
  corpus.images.reserve(config.images);
  for (int i = 0; i < config.images; ++i) {
    SyntheticImage image;
    char id[32];
    std::snprintf(id, sizeof(id), "syn%04d", i);
    image.image_id = id;
    image.bgr = cv::Mat(config.side, config.side, CV_8UC3);
    for (int y = 0; y < config.side; ++y) {
      auto* row = image.bgr.ptr<cv::Vec3b>(y);
      for (int x = 0; x < config.side; ++x) {
        for (int c = 0; c < 3; ++c) row[x][c] = static_cast<unsigned char>(rng() % config.noise_max);
      }
    }
    const int w = uniform(config.min_rect, config.max_rect);
    const int h = uniform(config.min_rect, config.max_rect);
    image.rect = cv::Rect(uniform(0, config.side - w), uniform(0, config.side - h), w, h);
    image.bgr(image.rect).setTo(cv::Scalar(255, 255, 255));
    image.latent = static_cast<double>(w) * h;
    corpus.images.push_back(std::move(image));
  }

  int attempts = 0;
  while (static_cast<int>(corpus.comparisons.size()) < config.comparisons) {
    if (++attempts > config.comparisons * 100) {
      throw ValidationError("could not draw enough comparisons with distinct latent scores");
    }
    const auto a = static_cast<std::size_t>(uniform(0, config.images - 1));
    const auto b = static_cast<std::size_t>(uniform(0, config.images - 1));
    if (a == b || corpus.images[a].latent == corpus.images[b].latent) continue;
    Comparison c;
    c.pair_id = "p" + std::to_string(corpus.comparisons.size());
    c.left = corpus.images[a].image_id;
    c.right = corpus.images[b].image_id;
    c.attribute = config.attribute;
    c.outcome = corpus.images[a].latent > corpus.images[b].latent ? 1 : -1;
    corpus.comparisons.push_back(std::move(c));
  }
  return corpus;
}

void write_synthetic_corpus(const SyntheticCorpus& corpus, const fs::path& directory) {
  fs::create_directories(directory / "images");
  std::ofstream manifest(directory / "manifest.csv");
  std::ofstream latent(directory / "latent.csv");
  manifest << "image_id,file_path,city\n";
  latent << "image_id,latent,x,y,width,height\n";
  for (const auto& image : corpus.images) {
    const auto relative = fs::path("images") / (image.image_id + ".png");
    if (!cv::imwrite((directory / relative).string(), image.bgr)) {
      throw Error("failed to write " + (directory / relative).string());
    }
    manifest << image.image_id << "," << relative.string() << ",synthetic\n";
    latent << image.image_id << "," << image.latent << "," << image.rect.x << "," << image.rect.y << ","
           << image.rect.width << "," << image.rect.height << "\n";
  }
  std::ofstream comparisons(directory / "comparisons.csv");
  comparisons << "pair_id,left_image,right_image,attribute,choice\n";
  for (const auto& c : corpus.comparisons) {
    comparisons << c.pair_id << "," << c.left << "," << c.right << "," << to_string(c.attribute) << ","
                << (c.outcome == 1 ? "left" : "right") << "\n";
  }
  if (!manifest || !latent || !comparisons) throw Error("failed writing synthetic corpus");
}

InMemoryImageSource preprocess_all(const SyntheticCorpus& corpus, const PreprocessConfig& config) {
  InMemoryImageSource source;
  for (const auto& image : corpus.images) source.add(image.image_id, preprocess(image.bgr, config).tensor);
  return source;
}

}  // namespace streetcam
