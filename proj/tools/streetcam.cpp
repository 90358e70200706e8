#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>

#include "streetcam/analysis.hpp"
#include "streetcam/annotation_service.hpp"
#include "streetcam/annotation_store.hpp"
#include "streetcam/checkpoint.hpp"
#include "streetcam/errors.hpp"
#include "streetcam/http_server.hpp"
#include "streetcam/run.hpp"
#include "streetcam/synthetic.hpp"
#include "streetcam/trainer.hpp"

namespace fs = std::filesystem;
using namespace streetcam;
using json = nlohmann::json;

namespace {

// --images accepts a directory holding manifest.csv or the manifest itself.
fs::path manifest_path(const fs::path& images) {
  return fs::is_directory(images) ? images / "manifest.csv" : images;
}

void write_json_file(const fs::path& path, const json& value) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << value.dump(2) << "\n";
  if (!out) throw Error("failed to write " + path.string());
}

std::vector<std::string> split_list(const std::vector<std::string>& values) {
  std::vector<std::string> out;
  for (const auto& v : values) {
    std::stringstream s(v);
    std::string item;
    while (std::getline(s, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  SyntheticConfig config;
  std::string attribute = "safety";
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* cmd = app.add_subcommand("synth", "Write the brightness-rectangle benchmark corpus");
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--images", a.config.images, "Number of images")->capture_default_str();
  cmd->add_option("--side", a.config.side, "Image side in pixels")->capture_default_str();
  cmd->add_option("--comparisons", a.config.comparisons, "Number of comparisons")->capture_default_str();
  cmd->add_option("--seed", a.config.seed, "Random seed")->capture_default_str();
  cmd->add_option("--attribute", a.attribute, "Attribute written into comparisons.csv")->capture_default_str();
  auto* max_rect = cmd->add_option("--max-rect", a.config.max_rect, "Largest rectangle side")->capture_default_str();
  cmd->add_option("--min-rect", a.config.min_rect, "Smallest rectangle side")->capture_default_str();
  cmd->callback([&a, max_rect] {
    // Keep the default rectangle range usable for small images.
    if (max_rect->count() == 0) a.config.max_rect = std::min(a.config.max_rect, a.config.side * 5 / 8);
    a.config.attribute = parse_attribute(a.attribute);
    write_synthetic_corpus(make_synthetic_corpus(a.config), a.out);
    std::cout << "wrote " << a.config.images << " images and " << a.config.comparisons << " comparisons to "
              << a.out << "\n";
  });
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path comparisons, images, out;
  std::optional<fs::path> weights;
  std::string attribute, backbone = "conv_residual", optimizer = "sgd";
  TrainConfig config;
  int side = 224;
  int resnet_depth = 50;
  TransformerConfig vit;
  bool from_scratch = false, no_shuffle = false, by_image = false;
  std::vector<double> fractions{0.8, 0.1, 0.1};
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train a scoring model on pairwise comparisons");
  cmd->add_option("--comparisons", a.comparisons, "pair_id,left_image,right_image,attribute,choice CSV")->required();
  cmd->add_option("--images", a.images, "Image directory with manifest.csv, or the manifest")->required();
  cmd->add_option("--attribute", a.attribute, "Perceptual attribute to train")->required();
  cmd->add_option("--backbone", a.backbone, "conv_residual, attention_transformer or tiny_conv")->capture_default_str();
  cmd->add_option("--epochs", a.config.epochs)->capture_default_str();
  cmd->add_option("--lr", a.config.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--seed", a.config.seed)->capture_default_str();
  cmd->add_option("--out", a.out, "Output directory (checkpoint/, train_report.json)")->required();
  cmd->add_option("--batch-size", a.config.batch_size)->capture_default_str();
  cmd->add_option("--optimizer", a.optimizer, "sgd or adam")->capture_default_str();
  cmd->add_option("--momentum", a.config.momentum)->capture_default_str();
  cmd->add_option("--weight-decay", a.config.weight_decay)->capture_default_str();
  cmd->add_option("--margin", a.config.margin, "Ranking-loss margin")->capture_default_str();
  cmd->add_option("--side", a.side, "Input side after resizing")->capture_default_str();
  cmd->add_option("--resnet-depth", a.resnet_depth, "18, 34, 50, 101 or 152")->capture_default_str();
  cmd->add_option("--vit-patch", a.vit.patch)->capture_default_str();
  cmd->add_option("--vit-dim", a.vit.dim)->capture_default_str();
  cmd->add_option("--vit-depth", a.vit.depth)->capture_default_str();
  cmd->add_option("--vit-heads", a.vit.heads)->capture_default_str();
  cmd->add_option("--split", a.fractions, "train validation test fractions")->expected(3)->capture_default_str();
  cmd->add_flag("--by-image", a.by_image, "Split images instead of comparisons");
  cmd->add_option("--weights", a.weights, "Pretrained weights from convert_torchvision_weights.py");
  cmd->add_flag("--from-scratch", a.from_scratch, "Train from random initialisation");
  cmd->add_flag("--freeze-backbone", a.config.freeze_backbone, "Train only the scalar head");
  cmd->add_flag("--no-shuffle", a.no_shuffle, "Keep comparison order fixed");
  cmd->callback([&a] {
    const auto attribute = parse_attribute(a.attribute);
    a.config.optimizer = parse_optimizer_kind(a.optimizer);
    a.config.shuffle = !a.no_shuffle;

    BackboneConfig backbone;
    backbone.kind = parse_backbone_kind(a.backbone);
    backbone.input_side = a.side;
    backbone.residual.depth = a.resnet_depth;
    backbone.transformer = a.vit;

    const bool pretrainable = backbone.kind != BackboneKind::tiny_conv;
    if (pretrainable && !a.weights && !a.from_scratch) {
      throw ValidationError("backbone " + a.backbone +
                            " starts from pretrained weights: pass --weights FILE (see "
                            "tools/convert_torchvision_weights.py) or --from-scratch");
    }
    if (a.weights && a.from_scratch) throw ValidationError("--weights and --from-scratch are exclusive");
    a.config.pretrained = a.weights.has_value();
    a.config.validate();

    const auto corpus = load_corpus(manifest_path(a.images));
    const auto load = load_comparisons(a.comparisons, corpus);
    fs::create_directories(a.out);
    {
      std::ofstream report(a.out / "rejected.json");
      report << rejection_report_json(load.rejected) << "\n";
    }
    if (!load.rejected.empty()) {
      std::cerr << load.rejected.size() << " comparison rows rejected, see " << (a.out / "rejected.json") << "\n";
    }
    std::vector<Comparison> selected;
    for (const auto& c : load.comparisons) {
      if (c.attribute == attribute) selected.push_back(c);
    }
    const auto parts = split(selected, {a.fractions[0], a.fractions[1], a.fractions[2]}, a.config.seed, a.by_image);
    std::cerr << "comparisons: " << parts.train.size() << " train, " << parts.validation.size() << " validation, "
              << parts.test.size() << " test";
    if (parts.dropped) std::cerr << " (" << parts.dropped << " dropped by the image split)";
    std::cerr << "\n";

    ScoringModel model(backbone, attribute, a.config.seed);
    if (a.weights) {
      const auto imported = import_weights(model.backbone(), *a.weights);
      std::cerr << "imported " << imported.loaded.size() << " tensors from " << *a.weights;
      if (!imported.missing.empty()) std::cerr << "; left at initialisation: " << join(imported.missing);
      std::cerr << "\n";
    }

    PreprocessConfig preprocessing;
    preprocessing.side = a.side;
    CorpusImageSource images(corpus, preprocessing);
    TrainOptions options;
    options.output = a.out;
    options.preprocessing = preprocessing;
    options.on_epoch = [&a](const EpochEntry& e) {
      std::cerr << "epoch " << e.epoch << "/" << a.config.epochs << "  loss " << std::setprecision(6) << e.train_loss
                << "  validation accuracy " << e.validation_accuracy << "  (" << std::setprecision(3)
                << e.wall_seconds << "s)\n";
    };
    const auto report = train(model, parts, a.config, images, options);
    std::cout << "best epoch " << report.best_epoch << ", validation accuracy " << report.best_validation_accuracy;
    if (report.test_accuracy) std::cout << ", test accuracy " << *report.test_accuracy;
    std::cout << "\ncheckpoint: " << report.best_checkpoint.string() << "\n";
  });
}

// ---------------------------------------------------------------------------

struct RankArgs {
  fs::path checkpoint, images, out;
  int k = 50;
  std::string run_id, method = "gradcam";
  int batch_size = 32;
};

void add_rank(CLI::App& app, RankArgs& a) {
  auto* cmd = app.add_subcommand("rank", "Score a corpus and record its top/bottom k in a run directory");
  cmd->add_option("--checkpoint", a.checkpoint)->required();
  cmd->add_option("--images", a.images, "Image directory with manifest.csv, or the manifest")->required();
  cmd->add_option("--k", a.k, "Images per extreme")->capture_default_str();
  cmd->add_option("--out", a.out, "Run directory")->required();
  cmd->add_option("--run-id", a.run_id, "Run id (default: directory name)");
  cmd->add_option("--method", a.method, "Saliency method the run will use")->capture_default_str();
  cmd->add_option("--batch-size", a.batch_size)->capture_default_str();
  cmd->callback([&a] {
    const auto checkpoint = load_checkpoint(a.checkpoint);
    const auto reference = checkpoint_reference(checkpoint);
    const auto corpus = load_corpus(manifest_path(a.images));
    CorpusImageSource images(corpus, checkpoint.preprocessing);
    std::vector<std::string> ids;
    for (const auto& r : corpus.records()) ids.push_back(r.image_id);
    const auto ranked = rank_scores(score_images(checkpoint.model, ids, images, a.batch_size),
                                    checkpoint.model.attribute(), reference);
    const auto ext = extremes(ranked, a.k);
    const auto attribute = to_string(checkpoint.model.attribute());
    write_json_file(a.out / "ranked" / (attribute + ".json"), ranked);

    RunAttribute entry;
    entry.attribute = checkpoint.model.attribute();
    entry.model = reference;
    entry.checkpoint = fs::absolute(a.checkpoint).string();
    entry.extremes = ext;
    const auto run_id = a.run_id.empty() ? fs::absolute(a.out).lexically_normal().filename().string() : a.run_id;
    upsert_run_attribute(a.out, run_id, parse_saliency_method(a.method), a.k, entry);
    std::cout << "ranked " << ranked.entries.size() << " images for " << attribute << "; top/bottom " << a.k
              << " written to " << (a.out / "extremes" / (attribute + ".json")).string() << "\n";
  });
}

// ---------------------------------------------------------------------------

struct ExplainArgs {
  fs::path checkpoint;
  std::vector<std::string> images;
  std::optional<fs::path> manifest, run, out;
  std::string method = "gradcam";
  std::optional<std::string> sign, layer;
  double alpha = 0.5;
};

struct Rendered {
  fs::path overlay;
};

void render_one(const ScoringModel& model, const PreprocessConfig& preprocessing, const std::string& reference,
                const std::string& image_id, const fs::path& image_path, SaliencyMethod method, TargetSign sign,
                const std::optional<std::string>& layer, double alpha, const fs::path& dir) {
  const auto original = read_image(image_path, image_id);
  CaptureOptions options;
  options.image_id = image_id;
  options.layer = layer;
  const auto cap = capture(model, preprocess(original, preprocessing).tensor.to(model.dtype()), sign, options);
  const auto map = explain(model, cap, method);
  fs::create_directories(dir);
  cv::imwrite((dir / kOriginalFilename).string(), original);
  cv::imwrite((dir / overlay_filename(method, sign)).string(), render_overlay(map, original, alpha));
  write_heatmap_png(map, dir / heatmap_filename(method, sign));
  write_sidecar_json(map, reference, dir / sidecar_filename(method, sign));
}

void add_explain(CLI::App& app, ExplainArgs& a) {
  auto* cmd = app.add_subcommand("explain", "Render saliency overlays, heatmaps and sidecars");
  cmd->add_option("--checkpoint", a.checkpoint)->required();
  cmd->add_option("--images", a.images, "Image ids (with --manifest) or image files; comma separated or repeated");
  cmd->add_option("--manifest", a.manifest, "Corpus manifest or its directory");
  cmd->add_option("--run", a.run, "Render every extreme image of this run for the checkpoint's attribute");
  cmd->add_option("--method", a.method, "gradcam, eigencam, ablationcam or attention_rollout")->capture_default_str();
  cmd->add_option("--sign", a.sign, "positive or negative (default positive; in --run mode by polarity)");
  cmd->add_option("--layer", a.layer, "Capture layer (default: the backbone's designated layer)");
  cmd->add_option("--alpha", a.alpha, "Overlay opacity in [0,1]")->capture_default_str();
  cmd->add_option("--out", a.out, "Output directory (one sub-directory per image)");
  cmd->callback([&a] {
    const auto checkpoint = load_checkpoint(a.checkpoint);
    const auto reference = checkpoint_reference(checkpoint);
    const auto method = parse_saliency_method(a.method);
    const auto forced_sign = a.sign ? std::optional(parse_target_sign(*a.sign)) : std::nullopt;
    const auto& model = checkpoint.model;
    if (method == SaliencyMethod::attention_rollout && !model.backbone().token_based()) {
      throw UnsupportedError("attention_rollout needs a transformer checkpoint");
    }
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw ValidationError("--alpha must be in [0,1]");

    if (a.run) {
      if (!a.manifest) throw ValidationError("--run needs --manifest to locate the images");
      const auto corpus = load_corpus(manifest_path(*a.manifest));
      const auto run = load_run(*a.run);
      if (run.method != method) {
        throw ValidationError("run " + a.run->string() + " uses method " + to_string(run.method));
      }
      int rendered = 0;
      for (const auto& entry : run.attributes) {
        if (entry.attribute != model.attribute()) continue;
        for (auto polarity : {Polarity::high, Polarity::low}) {
          const auto sign = forced_sign.value_or(sign_for(polarity));
          for (const auto& e : polarity == Polarity::high ? entry.extremes.top : entry.extremes.bottom) {
            const auto& record = corpus.at(e.image_id);
            render_one(model, checkpoint.preprocessing, reference, e.image_id, corpus.resolve(record), method, sign,
                       a.layer, a.alpha, saliency_dir(*a.run, entry.attribute, e.image_id));
            ++rendered;
          }
        }
      }
      if (rendered == 0) {
        throw NotFoundError("run has no extremes for attribute " + to_string(model.attribute()));
      }
      std::cout << "rendered " << rendered << " images into " << (*a.run / "saliency").string() << "\n";
      return;
    }

    if (!a.out) throw ValidationError("--out is required unless --run is given");
    const auto items = split_list(a.images);
    if (items.empty()) throw ValidationError("--images names no images");
    std::optional<Corpus> corpus;
    if (a.manifest) corpus = load_corpus(manifest_path(*a.manifest));
    const auto sign = forced_sign.value_or(TargetSign::positive);
    for (const auto& item : items) {
      const auto id = corpus ? item : fs::path(item).stem().string();
      const auto path = corpus ? corpus->resolve(corpus->at(item)) : fs::path(item);
      render_one(model, checkpoint.preprocessing, reference, id, path, method, sign, a.layer, a.alpha, *a.out / id);
    }
    std::cout << "rendered " << items.size() << " images into " << a.out->string() << "\n";
  });
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  fs::path run;
  double threshold = 0.5;
  std::optional<fs::path> out;
};

void add_stats(CLI::App& app, StatsArgs& a) {
  auto* cmd = app.add_subcommand("stats", "Activated fraction and region count of every heatmap in a run");
  cmd->add_option("--run", a.run)->required();
  cmd->add_option("--threshold", a.threshold)->capture_default_str();
  cmd->add_option("--out", a.out, "CSV file (default: stdout)");
  cmd->callback([&a] {
    std::ostringstream csv;
    csv << "attribute,image_id,method,sign,threshold,activated_fraction,component_count\n";
    std::vector<fs::path> heatmaps;
    const auto root = a.run / "saliency";
    if (!fs::exists(root)) throw NotFoundError("no saliency directory in " + a.run.string());
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      const auto name = entry.path().filename().string();
      if (entry.is_regular_file() && name.ends_with("_heatmap.png")) heatmaps.push_back(entry.path());
    }
    std::sort(heatmaps.begin(), heatmaps.end());
    for (const auto& path : heatmaps) {
      const auto png = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
      if (png.empty()) throw ImageDecodeError(path.parent_path().filename().string(), "cannot read " + path.string());
      Grid grid(png.rows, png.cols);
      for (int r = 0; r < png.rows; ++r) {
        for (int c = 0; c < png.cols; ++c) grid.at(r, c) = png.at<unsigned char>(r, c) / 255.0;
      }
      const auto stats = heatmap_stats(grid, a.threshold);
      // <method>_<sign>_heatmap.png
      const auto stem = path.filename().string().substr(0, path.filename().string().size() - 12);
      const auto cut = stem.rfind('_');
      csv << path.parent_path().parent_path().filename().string() << "," << path.parent_path().filename().string()
          << "," << stem.substr(0, cut) << "," << stem.substr(cut + 1) << "," << a.threshold << ","
          << stats.activated_fraction << "," << stats.component_count << "\n";
    }
    if (a.out) {
      std::ofstream(*a.out) << csv.str();
    } else {
      std::cout << csv.str();
    }
  });
}

// ---------------------------------------------------------------------------

struct TallyArgs {
  fs::path store, out;
  std::string format = "csv";
  std::optional<fs::path> synonyms;
};

void add_tally(CLI::App& app, TallyArgs& a) {
  auto* cmd = app.add_subcommand("tally", "Aggregate annotations into object-count tables");
  cmd->add_option("--store", a.store, "annotations.jsonl (or a run directory)")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--format", a.format, "csv or markdown")->capture_default_str();
  cmd->add_option("--synonyms", a.synonyms, "from,to CSV of label merges");
  cmd->callback([&a] {
    const auto format = parse_table_format(a.format);
    const auto path = fs::is_directory(a.store) ? store_path(a.store) : a.store;
    auto records = replay_store(path);
    if (a.synonyms) records = remap_labels(records, load_label_mapping(*a.synonyms));
    const auto result = tally(records);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    const auto written = write_tables(result, a.out, format);
    if (format == TableFormat::markdown) {
      std::set<std::string> models;
      for (const auto& t : result.tables) models.insert(t.model);
      for (const auto& model : models) {
        std::ofstream(a.out / ("layout_" + model + ".md")) << export_layout(result.tables, model);
      }
    }
    std::cout << "wrote " << written.size() << " tables from " << records.size() << " records to "
              << a.out.string() << "\n";
  });
}

// ---------------------------------------------------------------------------

AnnotationHttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

struct ServeArgs {
  fs::path run;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> ui;
};

void add_serve(CLI::App& app, ServeArgs& a) {
  auto* cmd = app.add_subcommand("serve", "Serve annotation sessions for a run over HTTP");
  cmd->add_option("--run", a.run)->required();
  cmd->add_option("--port", a.port)->capture_default_str();
  cmd->add_option("--host", a.host)->capture_default_str();
  cmd->add_option("--ui", a.ui, "Static directory served at /");
  cmd->callback([&a] {
    AnnotationService service(load_run(a.run));
    build_tasks(service.run());  // fail fast on missing overlays
    AnnotationHttpServer server(service, a.ui);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "serving run " << service.run().run_id << " on http://" << a.host << ":" << a.port << "\n"
              << std::flush;
    if (!server.listen(a.host, a.port)) {
      g_server = nullptr;
      throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
    }
    g_server = nullptr;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perceptual street-scene scoring, saliency and annotation"};
  app.require_subcommand(1);
  SynthArgs synth;
  TrainArgs train_args;
  RankArgs rank;
  ExplainArgs explain_args;
  StatsArgs stats;
  TallyArgs tally_args;
  ServeArgs serve;
  add_synth(app, synth);
  add_train(app, train_args);
  add_rank(app, rank);
  add_explain(app, explain_args);
  add_stats(app, stats);
  add_tally(app, tally_args);
  add_serve(app, serve);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
