#include "streetcam/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

#include "streetcam/checkpoint.hpp"
#include "streetcam/errors.hpp"

namespace streetcam {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be a finite non-negative number");
  }
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
       {"batch_size", c.batch_size},       {"seed", c.seed},
       {"pretrained", c.pretrained},       {"optimizer", to_string(c.optimizer)},
       {"momentum", c.momentum},           {"weight_decay", c.weight_decay},
       {"margin", c.margin},               {"shuffle", c.shuffle},
       {"freeze_backbone", c.freeze_backbone}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.pretrained = j.value("pretrained", d.pretrained);
  c.optimizer = parse_optimizer_kind(j.value("optimizer", to_string(d.optimizer)));
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.margin = j.value("margin", d.margin);
  c.shuffle = j.value("shuffle", d.shuffle);
  c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"validation_accuracy", e.validation_accuracy},
                           {"wall_seconds", e.wall_seconds}});
  }
  j["best_epoch"] = r.best_epoch;
  j["best_validation_accuracy"] = r.best_validation_accuracy;
  j["test_accuracy"] = r.test_accuracy ? nlohmann::json(*r.test_accuracy) : nlohmann::json(nullptr);
  j["best_checkpoint"] = r.best_checkpoint.string();
}

namespace {

void check_attribute(const ScoringModel& model, const std::vector<Comparison>& comparisons) {
  for (const auto& c : comparisons) {
    if (c.attribute != model.attribute()) {
      throw ValidationError("comparison '" + c.pair_id + "' is for attribute '" +
                            to_string(c.attribute) + "' but the model scores '" +
                            to_string(model.attribute()) + "'");
    }
  }
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& config,
                                                        std::vector<torch::Tensor> params) {
  if (config.optimizer == OptimizerKind::adam) {
    return std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
  }
  return std::make_unique<torch::optim::SGD>(
      params, torch::optim::SGDOptions(config.learning_rate)
                  .momentum(config.momentum)
                  .weight_decay(config.weight_decay));
}

using StateDict = std::vector<std::pair<std::string, torch::Tensor>>;

StateDict snapshot(const Backbone& backbone) {
  StateDict state;
  for (const auto& p : backbone.named_parameters()) state.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : backbone.named_buffers()) state.emplace_back(b.key(), b.value().detach().clone());
  return state;
}

void restore(Backbone& backbone, const StateDict& state) {
  torch::NoGradGuard no_grad;
  auto params = backbone.named_parameters();
  auto buffers = backbone.named_buffers();
  for (const auto& [name, tensor] : state) {
    if (auto* p = params.find(name)) {
      p->copy_(tensor);
    } else if (auto* b = buffers.find(name)) {
      b->copy_(tensor);
    }
  }
}

// Restores the module's train/eval flag on scope exit.
class ModeGuard {
 public:
  explicit ModeGuard(Backbone& backbone) : backbone_(backbone), training_(backbone.is_training()) {}
  ~ModeGuard() { backbone_.train(training_); }

 private:
  Backbone& backbone_;
  bool training_;
};

}  // namespace

double evaluate(const ScoringModel& model, const std::vector<Comparison>& comparisons,
                const ImageSource& images) {
  ModeGuard guard(model.backbone());
  model.backbone().eval();
  return pairwise_accuracy(model, comparisons, images);
}

TrainReport train(ScoringModel& model, const DatasetSplit& split, const TrainConfig& config,
                  const ImageSource& images, const TrainOptions& options) {
  config.validate();
  if (split.train.empty()) throw ValidationError("training split is empty");
  if (split.validation.empty()) throw ValidationError("validation split is empty");
  check_attribute(model, split.train);
  check_attribute(model, split.validation);
  check_attribute(model, split.test);

  using Clock = std::chrono::steady_clock;
  auto& backbone = model.backbone();
  torch::manual_seed(config.seed);

  std::vector<torch::Tensor> trainable;
  for (auto& p : backbone.named_parameters()) {
    const bool head = p.key().rfind("head.", 0) == 0;
    p.value().set_requires_grad(head || !config.freeze_backbone);
    if (p.value().requires_grad()) trainable.push_back(p.value());
  }
  auto optimizer = make_optimizer(config, trainable);

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const nlohmann::json training_json = config;
  TrainReport report;
  StateDict best_state;
  std::optional<std::filesystem::path> checkpoint_dir;
  if (options.output) checkpoint_dir = *options.output / "checkpoint";

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = Clock::now();
    if (config.shuffle) {
      std::mt19937_64 rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    }

    backbone.train();
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::string> ids;
      std::unordered_map<std::string, int64_t> slot;
      std::vector<int64_t> left_index, right_index;
      std::vector<float> outcomes;
      for (std::size_t i = start; i < end; ++i) {
        const auto& c = split.train[order[i]];
        for (const auto* id : {&c.left, &c.right}) {
          if (slot.emplace(*id, static_cast<int64_t>(ids.size())).second) ids.push_back(*id);
        }
        left_index.push_back(slot[c.left]);
        right_index.push_back(slot[c.right]);
        outcomes.push_back(static_cast<float>(c.outcome));
      }

      auto batch = images.batch(ids).to(model.dtype());
      auto scores = backbone.forward(batch);
      auto f_left = scores.index_select(0, torch::tensor(left_index, torch::kLong));
      auto f_right = scores.index_select(0, torch::tensor(right_index, torch::kLong));
      auto y = torch::tensor(outcomes).to(model.dtype());
      auto loss = ranking_loss(f_left, f_right, y, config.margin);

      const double loss_value = loss.item<double>();
      if (!std::isfinite(loss_value)) {
        throw NonFiniteLossError("non-finite ranking loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at comparison " + std::to_string(start) +
                                 " (pair '" + split.train[order[start]].pair_id +
                                 "'); lower the learning rate or inspect the inputs");
      }
      optimizer->zero_grad();
      loss.backward();
      optimizer->step();
      loss_sum += loss_value * static_cast<double>(end - start);
    }

    backbone.eval();
    EpochEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    entry.validation_accuracy = pairwise_accuracy(model, split.validation, images);
    entry.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    report.epochs.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);

    if (report.best_epoch == 0 || entry.validation_accuracy > report.best_validation_accuracy) {
      report.best_epoch = epoch;
      report.best_validation_accuracy = entry.validation_accuracy;
      best_state = snapshot(backbone);
      if (checkpoint_dir) {
        save_checkpoint(model, options.preprocessing, training_json, epoch, *checkpoint_dir);
      }
    }
  }

  restore(backbone, best_state);
  for (auto& p : backbone.parameters()) p.set_requires_grad(true);
  backbone.eval();
  if (!split.test.empty()) report.test_accuracy = pairwise_accuracy(model, split.test, images);
  if (checkpoint_dir) {
    report.best_checkpoint = *checkpoint_dir;
    std::ofstream out(*options.output / "train_report.json");
    out << nlohmann::json(report).dump(2) << "\n";
  }
  return report;
}

}  // namespace streetcam
