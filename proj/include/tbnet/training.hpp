#pragma once

// Adam, the cross-entropy objective, the epoch loop, evaluation and
// loss-curve export.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tbnet/checkpoint.hpp"
#include "tbnet/dataset.hpp"
#include "tbnet/error.hpp"
#include "tbnet/imaging.hpp"
#include "tbnet/layers.hpp"
#include "tbnet/models.hpp"
#include "tbnet/network.hpp"

namespace tbnet {

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw PreconditionError("Adam: learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw PreconditionError("Adam: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw PreconditionError("Adam: beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw PreconditionError("Adam: epsilon must be > 0");
  }
};

/// First/second moment accumulators per parameter, plus the shared step count.
template <typename T>
class AdamState {
 public:
  explicit AdamState(std::span<Parameter<T>* const> params) {
    for (const auto* p : params) {
      first_.emplace_back(p->value.shape());
      second_.emplace_back(p->value.shape());
    }
  }

  std::uint64_t step() const { return t_; }
  std::size_t size() const { return first_.size(); }
  const Tensor<T>& first_moment(std::size_t i) const { return first_.at(i); }
  const Tensor<T>& second_moment(std::size_t i) const { return second_.at(i); }

  template <typename U>
  friend void adam_step(std::span<Parameter<U>* const> params, AdamState<U>& state, const AdamHyper& hyper);

 private:
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
  std::uint64_t t_ = 0;
};

/// One bias-corrected Adam update of every parameter; clears the gradients.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, const AdamHyper& hyper) {
  hyper.validate();
  if (params.size() != state.first_.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                     std::to_string(state.first_.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (p->grad.size() == 0 && p->value.size() != 0) throw PreconditionError("adam_step: missing gradient for " + p->name);
    if (p->grad.shape() != p->value.shape() || state.first_[i].shape() != p->value.shape())
      throw ShapeError("adam_step: shape mismatch for " + p->name);
  }
  ++state.t_;
  const double t = static_cast<double>(state.t_);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    auto& m = state.first_[i];
    auto& v = state.second_[i];
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const double g = p->grad[j];
      const double mj = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
      const double vj = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      p->value[j] = static_cast<T>(p->value[j] - hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon));
    }
    p->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Objective

/// Mean binary cross-entropy of predicted TB probabilities against targets,
/// with probabilities clamped to [1e-12, 1 - 1e-12].
inline double binary_cross_entropy(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.empty()) throw PreconditionError("binary_cross_entropy: empty batch");
  if (predicted.size() != target.size()) throw ShapeError("binary_cross_entropy: size mismatch");
  constexpr double kClamp = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double p = std::clamp(predicted[i], kClamp, 1.0 - kClamp);
    total += target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return -total / static_cast<double>(predicted.size());
}

/// Mean cross-entropy of a batch of logits; for two classes this equals the
/// binary form with the predicted TB probability softmax(logits)[1].
template <typename T>
double batch_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() == 2 && logits.dim(0) == 0) throw PreconditionError("batch_loss: empty batch");
  return softmax_cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// Data

/// Images resized to a square resolution, stored contiguously as float.
struct LabeledSet {
  std::size_t resolution = 0;
  std::vector<float> pixels;  // n * resolution * resolution
  std::vector<int> labels;
  std::vector<std::string> paths;

  std::size_t size() const { return labels.size(); }

  void add(const GrayImage& img, Label label, std::string path = {}) {
    const GrayImage r = resize_bilinear(img, resolution, resolution);
    pixels.insert(pixels.end(), r.pixels().begin(), r.pixels().end());
    labels.push_back(static_cast<int>(label));
    paths.push_back(std::move(path));
  }

  Tensor<float> batch(std::span<const std::size_t> indices) const {
    const std::size_t px = resolution * resolution;
    Tensor<float> t({indices.size(), 1, resolution, resolution});
    for (std::size_t b = 0; b < indices.size(); ++b)
      std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[b] * px), px, t.data() + b * px);
    return t;
  }

  std::vector<int> batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels[i]);
    return out;
  }
};

/// Resolves a manifest path: as written, else relative to the manifest's directory.
inline std::filesystem::path resolve_sample_path(const std::string& path, const std::filesystem::path& base_dir) {
  std::filesystem::path p(path);
  if (p.is_absolute() || std::filesystem::exists(p) || base_dir.empty()) return p;
  return base_dir / p;
}

inline LabeledSet load_split(const DatasetManifest& manifest, Split which, std::size_t resolution,
                             const std::filesystem::path& base_dir = {}) {
  LabeledSet set;
  set.resolution = resolution;
  for (const auto& r : manifest.records) {
    if (r.split != which) continue;
    const auto path = resolve_sample_path(r.path, base_dir);
    GrayImage img;
    try {
      img = read_pgm(path);
    } catch (const Error& e) {
      throw Error(std::string("unreadable image ") + r.path + ": " + e.what());
    }
    set.add(img, r.label, r.path);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  AdamHyper hyper;
  CaseId case_id = CaseId::Original;
  ModelConfig model;
  /// When false, EpochRecord::seconds is 0 so curve files are byte-reproducible.
  bool record_time = true;

  void validate() const {
    if (batch_size < 2) throw PreconditionError("TrainConfig: batch size must be >= 2 (batch norm)");
    if (epochs < 1) throw PreconditionError("TrainConfig: epochs must be >= 1");
    hyper.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t steps_per_epoch = 0;
  std::vector<double> step_losses;
};

struct EvalResult {
  double accuracy = 0.0;  // percent
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t true_negative = 0;
  std::size_t false_negative = 0;

  std::size_t total() const { return true_positive + false_positive + true_negative + false_negative; }
};

/// Eval-mode accuracy and confusion counts, TB (class 1) positive.
template <typename T>
EvalResult evaluate(Network<T>& net, const LabeledSet& set, std::size_t batch_size = 50) {
  if (set.size() == 0) throw PreconditionError("evaluate: empty set");
  EvalResult r;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
    const auto x = set.batch(idx);
    const auto pred = predict(net.forward(x.template cast<T>(), Mode::Eval));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const bool truth_tb = set.labels[idx[b]] == static_cast<int>(Label::TB);
      const bool pred_tb = pred[b] == static_cast<int>(Label::TB);
      if (truth_tb && pred_tb) ++r.true_positive;
      else if (!truth_tb && pred_tb) ++r.false_positive;
      else if (!truth_tb && !pred_tb) ++r.true_negative;
      else ++r.false_negative;
    }
  }
  r.accuracy = 100.0 * static_cast<double>(r.true_positive + r.true_negative) / static_cast<double>(r.total());
  return r;
}

/// Owns a float network and its optimizer state for one training run.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const LabeledSet& train, const LabeledSet& val)
      : config_(config), train_(train), val_(val), net_(build_model<float>(config.model, config.seed)),
        params_(net_.parameters()), adam_(params_) {
    config_.validate();
    if (train_.size() == 0) throw PreconditionError("train: empty training split");
    if (val_.size() == 0) throw PreconditionError("train: empty validation split");
    if (train_.resolution != config_.model.resolution || val_.resolution != config_.model.resolution)
      throw PreconditionError("train: image resolution differs from the model input");
  }

  Network<float>& network() { return net_; }
  const AdamState<float>& optimizer() const { return adam_; }

  /// Batches for one epoch: seeded shuffle, trailing batch kept only if it has >= 2 samples.
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch_index) const {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config_.seed + epoch_index);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t end = std::min(order.size(), start + config_.batch_size);
      if (end - start < 2) break;
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }

  /// Forward, loss, backward and one Adam update on the given samples.
  double train_step(std::span<const std::size_t> indices) {
    const auto x = train_.batch(indices);
    const auto y = train_.batch_labels(indices);
    net_.zero_grad();
    Tensor<float> dlogits;
    const double loss = softmax_cross_entropy(net_.forward(x, Mode::Train), y, &dlogits);
    net_.backward(dlogits);
    adam_step<float>(params_, adam_, config_.hyper);
    return loss;
  }

  EpochRecord run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = epoch_batches(epoch_);
    double weighted = 0.0;
    std::size_t seen = 0;
    for (const auto& b : batches) {
      const double loss = train_step(b);
      step_losses_.push_back(loss);
      weighted += loss * static_cast<double>(b.size());
      seen += b.size();
    }
    EpochRecord rec;
    rec.epoch = ++epoch_;
    rec.train_loss = seen ? weighted / static_cast<double>(seen) : 0.0;
    rec.val_accuracy = evaluate(net_, val_, config_.batch_size).accuracy;
    if (config_.record_time)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  const std::vector<double>& step_losses() const { return step_losses_; }

 private:
  TrainConfig config_;
  const LabeledSet& train_;
  const LabeledSet& val_;
  Network<float> net_;
  std::vector<Parameter<float>*> params_;
  AdamState<float> adam_;
  std::size_t epoch_ = 0;
  std::vector<double> step_losses_;
};

struct TrainResult {
  TrainReport report;
  Network<float> network;
};

inline TrainResult train(const TrainConfig& config, const LabeledSet& train_set, const LabeledSet& val_set) {
  Trainer trainer(config, train_set, val_set);
  TrainReport report;
  report.steps_per_epoch = trainer.epoch_batches(0).size();
  for (std::size_t e = 0; e < config.epochs; ++e) report.epochs.push_back(trainer.run_epoch());
  report.step_losses = trainer.step_losses();
  return TrainResult{std::move(report), std::move(trainer.network())};
}

// ---------------------------------------------------------------------------
// Curves CSV: epoch,train_loss,val_accuracy,seconds

inline constexpr std::string_view kCurvesHeader = "epoch,train_loss,val_accuracy,seconds";

inline std::string curves_to_csv(const TrainReport& report) {
  std::string out(kCurvesHeader);
  out += '\n';
  char line[128];
  for (const auto& e : report.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.9f,%.9f,%.9f\n", e.epoch, e.train_loss, e.val_accuracy, e.seconds);
    out += line;
  }
  return out;
}

inline void export_curves(const TrainReport& report, const std::filesystem::path& dest) {
  if (report.epochs.empty()) throw PreconditionError("export_curves: empty report");
  std::ofstream out(dest, std::ios::binary);
  if (!out) throw Error("cannot write curves " + dest.string());
  out << curves_to_csv(report);
  if (!out) throw Error("short write to " + dest.string());
}

inline std::vector<EpochRecord> parse_curves(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader) throw DecodeError("curves line 1: bad header");
  std::vector<EpochRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EpochRecord r;
    char trailing = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf%c", &r.epoch, &r.train_loss, &r.val_accuracy, &r.seconds,
                    &trailing) != 4)
      throw DecodeError("curves line " + std::to_string(line_no) + ": malformed row");
    out.push_back(r);
  }
  return out;
}

/// Accuracy with five decimals, e.g. "65.77181".
inline std::string format_accuracy(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", percent);
  return buf;
}

}  // namespace tbnet
