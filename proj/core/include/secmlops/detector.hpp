#pragma once

// Center-heatmap pedestrian detector. A 3x3 conv stem runs at pixel
// resolution, is average-pooled by the downsample factor, passes through a
// stack of 3x3 neck convs on the pooled grid, and feeds three 1x1 heads: center logit,
// log-height, and a 2-channel (row, col) pixel offset from the cell origin.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "secmlops/diffnet.hpp"
#include "secmlops/metrics.hpp"
#include "secmlops/synthdata.hpp"

namespace secmlops::detector {

using diffnet::Tensor;
using metrics::Detection;
using synthdata::PedestrianGT;
using synthdata::Scene;

struct DetectorConfig {
  int height = 64;
  int width = 128;
  int channels = 8;       // stem width C
  int neck_channels = 8;  // 0 disables the pooled-grid neck
  int neck_layers = 1;    // stacked 3x3 convs on the pooled grid
  int downsample = 4;     // r
  double positive_weight = 1.0;  // BCE weight of GT center cells
  // Positive region: cells whose center lies within center_fraction/2 of the
  // box height (rows) and width (cols) from the GT center, plus the cell
  // containing the center. 0 keeps only the containing cell.
  double center_fraction = 0.0;
  // Cells adjacent to a positive region get zero BCE weight and regress the GT box.
  bool center_neighborhood = false;

  int grid_height() const { return height / downsample; }
  int grid_width() const { return width / downsample; }
  void validate() const;
  bool operator==(const DetectorConfig&) const = default;
};

struct DetectorModel {
  DetectorConfig config;
  diffnet::ParamSet params;
  bool operator==(const DetectorModel&) const = default;
};

// He-initialized stem/neck; heads start with small weights, a center bias of
// -4 (prior ~0.018) and a log-height bias of ln(16).
DetectorModel make_model(const DetectorConfig& config, std::uint64_t seed);

struct DetectorOutput {
  Tensor center_logits;  // [1, h, w]
  Tensor log_height;     // [1, h, w]
  Tensor offset;         // [2, h, w]
};

struct ForwardGraph {
  diffnet::Var input;
  diffnet::ParamVars params;
  diffnet::Var center;
  diffnet::Var log_height;
  diffnet::Var offset;
};

// Records the forward pass. The input is a [1,H,W] tensor.
ForwardGraph build_forward(diffnet::Tape& tape, const DetectorModel& model, const Tensor& input,
                           bool input_grad, bool param_grad);

Tensor scene_tensor(const Scene& scene);
DetectorOutput forward(const DetectorModel& model, const Scene& scene);
DetectorOutput forward(const DetectorModel& model, const Tensor& input);

struct Targets {
  Tensor center;         // [1,h,w] 1 at GT center cells
  Tensor center_weight;  // [1,h,w] 0 inside ignore-flagged boxes
  Tensor log_height;     // [1,h,w]
  Tensor offset;         // [2,h,w] pixels from the cell origin
  Tensor positive;       // [1,h,w] cells carrying regression targets
  Tensor positive2;      // [2,h,w]
};

// Throws Error(kCenterOutsideGrid).
Targets make_targets(const DetectorConfig& config, std::span<const PedestrianGT> gts);

struct LossVars {
  diffnet::Var total;
  diffnet::Var cls;
  diffnet::Var height;
  diffnet::Var offset;
};

LossVars build_loss(diffnet::Tape& tape, const ForwardGraph& graph, const Targets& targets,
                    double lambda_reg = 1.0);

struct LossBreakdown {
  double total = 0;
  double cls = 0;
  double height = 0;
  double offset = 0;
};

// Evaluates L = L_cls + lambda_reg * (L1 height + L1 offset) on an output.
LossBreakdown loss(const DetectorOutput& output, std::span<const PedestrianGT> gts,
                   const DetectorConfig& config, double lambda_reg = 1.0);

struct DecodeOptions {
  double score_threshold = 0.5;
  double nms_iou = 0.5;
  std::size_t max_candidates = 0;  // 0 = unlimited; otherwise top-k before NMS
};

std::vector<Detection> decode(const DetectorOutput& output, int downsample, const DecodeOptions& options = {});

// Greedy NMS by descending score; drops boxes with IoU > iou against a kept box.
std::vector<Detection> nms(std::vector<Detection> candidates, double iou);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 0.5;
  bool cosine_schedule = false;  // lr decays from learning_rate to 0 over the epochs
  double momentum = 0.0;         // heavy-ball; 0 is plain SGD
  std::optional<int> patience;  // early stopping; unset = run every epoch
  std::uint64_t seed = 0;
  double lambda_reg = 1.0;
  metrics::Preset preset = metrics::Preset::kDesk;

  double epoch_learning_rate(int epoch) const;  // 1-based epoch
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_lamr = 1;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;      // minimal val laMR, earliest on ties
  int selected_epoch = 0;  // epoch whose parameters were returned
  std::string stop_reason;  // "max-epochs" | "patience-exhausted"
  bool operator==(const TrainHistory&) const = default;
};

struct Sample {
  Scene scene;
  std::vector<PedestrianGT> gts;
};

struct TrainHooks {
  // Rewrites a mini-batch before the step (CutMix).
  std::function<void(std::vector<Sample>& batch)> augment;
  // Replaces a sample's input before the gradient (adversarial training).
  std::function<Tensor(const DetectorModel& model, const Sample& sample)> perturb;
  // Overrides the validation metric; lower is better.
  std::function<double(const DetectorModel& model, int epoch)> validation_metric;
};

struct TrainResult {
  DetectorModel model;
  TrainHistory history;
};

// Mini-batch SGD over dataset.split.train, validation laMR over
// dataset.split.val after every epoch. Throws Error(kEmptySplit),
// Error(kDiverged).
TrainResult train(const DetectorModel& init, const synthdata::Dataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Parameter gradient of the mean batch loss; also returns the mean loss.
double batch_gradient(const DetectorModel& model, std::span<const Sample> batch, double lambda_reg,
                      diffnet::ParamGrads& grads, const TrainHooks* hooks = nullptr);

struct DistillSpec {
  double alpha = 0.5;   // EMA smoothing: teacher <- alpha*student + (1-alpha)*teacher
  double weight = 1.0;  // lambda_d on the logit-matching MSE
  int refine_epochs = 2;
  double lr_scale = 0.1;  // refinement steps use lr_scale * learning_rate, no momentum
  void validate() const;
  bool operator==(const DistillSpec&) const = default;
};

void ema_update(diffnet::ParamSet& teacher, const diffnet::ParamSet& student, double alpha);

// Teacher starts as the student; after every student step the teacher is
// EMA-updated. Returns the teacher. Throws Error(kAlphaOutOfRange).
DetectorModel distill(const DetectorModel& student, const synthdata::Dataset& dataset, const DistillSpec& spec,
                      const TrainConfig& config);

void to_json(nlohmann::json& j, const DetectorConfig& c);
void from_json(const nlohmann::json& j, DetectorConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const DistillSpec& s);
void from_json(const nlohmann::json& j, DistillSpec& s);
void to_json(nlohmann::json& j, const TrainHistory& h);
void from_json(const nlohmann::json& j, TrainHistory& h);

// Checkpoint plus detector config: <stem>.json/.bin and <stem>.detector.json.
void save_model(const DetectorModel& model, const std::filesystem::path& stem);
DetectorModel load_model(const std::filesystem::path& stem);

}  // namespace secmlops::detector
