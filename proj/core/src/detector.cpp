#include "secmlops/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "secmlops/error.hpp"
#include "secmlops/rng.hpp"

namespace secmlops::detector {

using diffnet::ParamSet;
using diffnet::Tape;
using diffnet::Var;

void DetectorConfig::validate() const {
  if (downsample < 1 || height % downsample != 0 || width % downsample != 0)
    throw Error(ErrorKind::kInvalidConfig, "scene dimensions must be divisible by the downsample factor");
  if (channels < 1 || neck_channels < 0 || neck_layers < 1) throw Error(ErrorKind::kInvalidConfig, "invalid channel counts");
}

namespace {

Tensor random_normal(diffnet::Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

int feature_channels(const DetectorConfig& c) { return c.neck_channels > 0 ? c.neck_channels : c.channels; }

std::string neck_name(int layer, const char* suffix) {
  return (layer == 0 ? std::string("neck") : "neck" + std::to_string(layer + 1)) + suffix;
}

}  // namespace

DetectorModel make_model(const DetectorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, streams::kInit);
  DetectorModel model;
  model.config = config;
  const int C = config.channels;
  const int F = feature_channels(config);
  model.params.add("stem.w", random_normal({C, 1, 3, 3}, std::sqrt(2.0 / 9.0), rng));
  model.params.add("stem.b", Tensor({C}, 0.0));
  if (config.neck_channels > 0) {
    for (int layer = 0; layer < config.neck_layers; ++layer) {
      const int in = layer == 0 ? C : F;
      model.params.add(neck_name(layer, ".w"), random_normal({F, in, 3, 3}, std::sqrt(2.0 / (9.0 * in)), rng));
      model.params.add(neck_name(layer, ".b"), Tensor({F}, 0.0));
    }
  }
  model.params.add("center.w", random_normal({1, F}, 0.01, rng));
  model.params.add("center.b", Tensor({1}, -4.0));
  model.params.add("height.w", random_normal({1, F}, 0.01, rng));
  model.params.add("height.b", Tensor({1}, std::log(16.0)));
  model.params.add("offset.w", random_normal({2, F}, 0.01, rng));
  model.params.add("offset.b", Tensor({2}, 0.0));
  return model;
}

ForwardGraph build_forward(Tape& tape, const DetectorModel& model, const Tensor& input, bool input_grad,
                           bool param_grad) {
  const DetectorConfig& cfg = model.config;
  if (input.shape() != diffnet::Shape{1, cfg.height, cfg.width}) {
    throw Error(ErrorKind::kShapeMismatch, "detector input " + diffnet::shape_string(input.shape()) +
                                               " does not match model " + std::to_string(cfg.height) + "x" +
                                               std::to_string(cfg.width));
  }
  ForwardGraph g;
  g.input = tape.leaf(input, input_grad);
  for (const auto& [name, t] : model.params.tensors()) g.params.emplace(name, tape.leaf(t, param_grad));
  const auto& p = g.params;
  Var features = tape.relu(tape.conv3x3(g.input, p.at("stem.w"), p.at("stem.b")));
  features = tape.avg_pool(features, cfg.downsample);
  if (cfg.neck_channels > 0) {
    for (int layer = 0; layer < cfg.neck_layers; ++layer)
      features = tape.relu(tape.conv3x3(features, p.at(neck_name(layer, ".w")), p.at(neck_name(layer, ".b"))));
  }
  g.center = tape.affine(features, p.at("center.w"), p.at("center.b"));
  g.log_height = tape.affine(features, p.at("height.w"), p.at("height.b"));
  g.offset = tape.affine(features, p.at("offset.w"), p.at("offset.b"));
  return g;
}

Tensor scene_tensor(const Scene& scene) { return Tensor({1, scene.height, scene.width}, scene.pixels); }

DetectorOutput forward(const DetectorModel& model, const Tensor& input) {
  Tape tape;
  const ForwardGraph g = build_forward(tape, model, input, false, false);
  return {tape.value(g.center), tape.value(g.log_height), tape.value(g.offset)};
}

DetectorOutput forward(const DetectorModel& model, const Scene& scene) { return forward(model, scene_tensor(scene)); }

Targets make_targets(const DetectorConfig& config, std::span<const PedestrianGT> gts) {
  const int h = config.grid_height(), w = config.grid_width(), r = config.downsample;
  Targets t{Tensor({1, h, w}, 0.0), Tensor({1, h, w}, 1.0), Tensor({1, h, w}, 0.0),
            Tensor({2, h, w}, 0.0), Tensor({1, h, w}, 0.0), Tensor({2, h, w}, 0.0)};
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  auto cell_of = [&](const PedestrianGT& gt) {
    const int cr = static_cast<int>(std::floor(gt.center_row / r));
    const int cc = static_cast<int>(std::floor(gt.center_col / r));
    if (cr < 0 || cr >= h || cc < 0 || cc >= w) {
      throw Error(ErrorKind::kCenterOutsideGrid, "GT center (" + std::to_string(gt.center_row) + ", " +
                                                     std::to_string(gt.center_col) + ") outside the output grid");
    }
    return std::pair{cr, cc};
  };

  for (const PedestrianGT& gt : gts) {
    cell_of(gt);
    if (!gt.ignore) continue;
    const synthdata::Box b = gt.box();
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const synthdata::Box cell{double(i * r), double(j * r), double((i + 1) * r), double((j + 1) * r)};
        if (synthdata::intersection_area(cell, b) > 0) t.center_weight[static_cast<std::size_t>(i) * w + j] = 0.0;
      }
    }
  }
  auto assign = [&](const PedestrianGT& gt, int i, int j) {
    const std::size_t idx = static_cast<std::size_t>(i) * w + j;
    t.log_height[idx] = std::log(gt.height);
    t.offset[idx] = gt.center_row - i * r;
    t.offset[plane + idx] = gt.center_col - j * r;
    t.positive[idx] = 1.0;
    t.positive2[idx] = 1.0;
    t.positive2[plane + idx] = 1.0;
  };
  std::vector<std::pair<const PedestrianGT*, std::vector<std::size_t>>> regions;
  for (const PedestrianGT& gt : gts) {
    if (gt.ignore) continue;
    const auto [cr, cc] = cell_of(gt);
    std::vector<std::size_t> region;
    const double half_h = 0.5 * config.center_fraction * gt.height, half_w = 0.5 * config.center_fraction * gt.width;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const bool inside = (i == cr && j == cc) || (std::abs((i + 0.5) * r - gt.center_row) <= half_h &&
                                                     std::abs((j + 0.5) * r - gt.center_col) <= half_w);
        const std::size_t idx = static_cast<std::size_t>(i) * w + j;
        if (!inside || t.center[idx] != 0) continue;
        t.center[idx] = 1.0;
        t.center_weight[idx] = config.positive_weight;
        assign(gt, i, j);
        region.push_back(idx);
      }
    }
    regions.push_back({&gt, std::move(region)});
  }
  if (config.center_neighborhood) {
    for (const auto& [gt, region] : regions) {
      for (const std::size_t idx : region) {
        const int ci = static_cast<int>(idx) / w, cj = static_cast<int>(idx) % w;
        for (int i = std::max(0, ci - 1); i <= std::min(h - 1, ci + 1); ++i) {
          for (int j = std::max(0, cj - 1); j <= std::min(w - 1, cj + 1); ++j) {
            const std::size_t n = static_cast<std::size_t>(i) * w + j;
            if (t.center[n] != 0) continue;
            t.center_weight[n] = 0.0;
            if (t.positive[n] == 0) assign(*gt, i, j);
          }
        }
      }
    }
  }
  return t;
}

LossVars build_loss(Tape& tape, const ForwardGraph& graph, const Targets& targets, double lambda_reg) {
  LossVars l;
  l.cls = tape.bce_with_logits(graph.center, targets.center, targets.center_weight);
  l.height = tape.l1_loss(graph.log_height, targets.log_height, targets.positive);
  l.offset = tape.l1_loss(graph.offset, targets.offset, targets.positive2);
  const Var reg = tape.add(l.height, l.offset);
  l.total = tape.add(l.cls, tape.mul(reg, tape.constant(Tensor::scalar(lambda_reg))));
  return l;
}

LossBreakdown loss(const DetectorOutput& output, std::span<const PedestrianGT> gts, const DetectorConfig& config,
                   double lambda_reg) {
  Tape tape;
  ForwardGraph g;
  g.center = tape.constant(output.center_logits);
  g.log_height = tape.constant(output.log_height);
  g.offset = tape.constant(output.offset);
  const LossVars l = build_loss(tape, g, make_targets(config, gts), lambda_reg);
  return {tape.value(l.total).item(), tape.value(l.cls).item(), tape.value(l.height).item(),
          tape.value(l.offset).item()};
}

std::vector<Detection> nms(std::vector<Detection> candidates, double iou) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  std::vector<synthdata::Box> kept_boxes;
  for (const Detection& d : candidates) {
    const synthdata::Box b = d.box();
    const bool suppressed = std::any_of(kept_boxes.begin(), kept_boxes.end(),
                                        [&](const synthdata::Box& k) { return synthdata::iou(b, k) > iou; });
    if (suppressed) continue;
    kept.push_back(d);
    kept_boxes.push_back(b);
  }
  return kept;
}

std::vector<Detection> decode(const DetectorOutput& output, int downsample, const DecodeOptions& options) {
  const Tensor& logits = output.center_logits;
  const int h = logits.dim(1), w = logits.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Detection> candidates;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * w + j;
      const double z = logits[idx];
      const double score = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      if (score < options.score_threshold) continue;
      Detection d;
      d.center_row = i * downsample + output.offset[idx];
      d.center_col = j * downsample + output.offset[plane + idx];
      d.height = std::exp(output.log_height[idx]);
      d.width = synthdata::kPedestrianAspect * d.height;
      d.score = score;
      candidates.push_back(d);
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (options.max_candidates > 0 && candidates.size() > options.max_candidates)
    candidates.resize(options.max_candidates);
  return nms(std::move(candidates), options.nms_iou);
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || !(learning_rate > 0) || (patience && *patience < 1) ||
      !(momentum >= 0 && momentum < 1))
    throw Error(ErrorKind::kInvalidConfig, "train config requires epochs >= 1, batch >= 1, lr > 0, patience >= 1");
}

double TrainConfig::epoch_learning_rate(int epoch) const {
  if (!cosine_schedule) return learning_rate;
  return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * (epoch - 1) / epochs));
}

double batch_gradient(const DetectorModel& model, std::span<const Sample> batch, double lambda_reg,
                      diffnet::ParamGrads& grads, const TrainHooks* hooks) {
  grads.clear();
  double total = 0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const Sample& sample : batch) {
    const Tensor input = (hooks && hooks->perturb) ? hooks->perturb(model, sample) : scene_tensor(sample.scene);
    Tape tape;
    const ForwardGraph g = build_forward(tape, model, input, false, true);
    const LossVars l = build_loss(tape, g, make_targets(model.config, sample.gts), lambda_reg);
    const double value = tape.value(l.total).item();
    if (!std::isfinite(value)) throw Error(ErrorKind::kDiverged, "non-finite training loss");
    tape.backward(l.total);
    diffnet::accumulate(grads, diffnet::collect_gradients(tape, g.params), scale);
    total += value;
  }
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw Error(ErrorKind::kDiverged, "non-finite gradient for " + name);
  }
  return total * scale;
}

namespace {

std::vector<Sample> make_batch(const synthdata::Dataset& ds, std::span<const int> ids) {
  std::vector<Sample> batch;
  batch.reserve(ids.size());
  for (int id : ids) batch.push_back({ds.scene(id), ds.gts(id)});
  return batch;
}

}  // namespace

TrainResult train(const DetectorModel& init, const synthdata::Dataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (dataset.split.train.empty()) throw Error(ErrorKind::kEmptySplit, "train split is empty");
  if (dataset.split.val.empty() && !hooks.validation_metric)
    throw Error(ErrorKind::kEmptySplit, "validation split is empty");

  TrainResult result{init, {}};
  DetectorModel& model = result.model;
  TrainHistory& history = result.history;
  Rng shuffle_rng(config.seed, streams::kShuffle);
  std::vector<int> order = dataset.split.train;
  metrics::EvaluateOptions eval_options;
  eval_options.preset = config.preset;

  ParamSet best_params = model.params;
  double best_metric = HUGE_VAL;
  int since_best = 0;
  history.stop_reason = "max-epochs";

  diffnet::ParamGrads grads;
  diffnet::ParamGrads velocity;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Sample> batch = make_batch(dataset, std::span(order).subspan(start, end - start));
      if (hooks.augment) hooks.augment(batch);
      const double batch_loss = batch_gradient(model, batch, config.lambda_reg, grads, &hooks);
      if (config.momentum > 0) {
        for (auto& [name, v] : velocity)
          for (double& x : v.values()) x *= config.momentum;
        diffnet::accumulate(velocity, grads);
        diffnet::sgd_step(model.params, velocity, config.epoch_learning_rate(epoch));
      } else {
        diffnet::sgd_step(model.params, grads, config.epoch_learning_rate(epoch));
      }
      loss_sum += batch_loss * static_cast<double>(batch.size());
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.val_lamr = hooks.validation_metric ? hooks.validation_metric(model, epoch)
                                              : metrics::validation_lamr(model, dataset, dataset.split.val, eval_options);
    history.epochs.push_back(record);

    if (record.val_lamr < best_metric) {
      best_metric = record.val_lamr;
      history.best_epoch = epoch;
      best_params = model.params;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (config.patience && since_best >= *config.patience) {
      history.stop_reason = "patience-exhausted";
      break;
    }
  }
  if (config.patience) {
    model.params = std::move(best_params);
    history.selected_epoch = history.best_epoch;
  } else {
    history.selected_epoch = history.epochs.back().epoch;
  }
  return result;
}

void DistillSpec::validate() const {
  if (!(alpha > 0 && alpha <= 1)) throw Error(ErrorKind::kAlphaOutOfRange, "smoothing alpha must lie in (0,1]");
  if (!(weight >= 0) || refine_epochs < 0 || !(lr_scale > 0)) throw Error(ErrorKind::kInvalidConfig, "invalid distillation spec");
}

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (!(alpha > 0 && alpha <= 1)) throw Error(ErrorKind::kAlphaOutOfRange, "smoothing alpha must lie in (0,1]");
  for (const auto& [name, s] : student.tensors()) {
    auto t = teacher.mutable_data(name);
    if (t.size() != s.size()) throw Error(ErrorKind::kShapeMismatch, "teacher/student mismatch at " + name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * s[i] + (1.0 - alpha) * t[i];
  }
}

DetectorModel distill(const DetectorModel& student_in, const synthdata::Dataset& dataset, const DistillSpec& spec,
                      const TrainConfig& config) {
  spec.validate();
  config.validate();
  DetectorModel student = student_in;
  DetectorModel teacher = student_in;
  if (spec.refine_epochs == 0) return teacher;
  if (dataset.split.train.empty()) throw Error(ErrorKind::kEmptySplit, "train split is empty");

  Rng shuffle_rng(config.seed, streams::kShuffle + 1);
  std::vector<int> order = dataset.split.train;
  diffnet::ParamGrads grads;
  for (int epoch = 0; epoch < spec.refine_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<Sample> batch = make_batch(dataset, std::span(order).subspan(start, end - start));
      grads.clear();
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (const Sample& sample : batch) {
        const Tensor input = scene_tensor(sample.scene);
        const Tensor teacher_logits = forward(teacher, input).center_logits;
        Tape tape;
        const ForwardGraph g = build_forward(tape, student, input, false, true);
        const LossVars task = build_loss(tape, g, make_targets(student.config, sample.gts), config.lambda_reg);
        Tensor negated = teacher_logits;
        for (double& v : negated.values()) v = -v;
        const Var diff = tape.add(g.center, tape.constant(std::move(negated)));
        const Var mse = tape.mean(tape.mul(diff, diff));
        const Var total = tape.add(task.total, tape.mul(mse, tape.constant(Tensor::scalar(spec.weight))));
        if (!std::isfinite(tape.value(total).item())) throw Error(ErrorKind::kDiverged, "non-finite distillation loss");
        tape.backward(total);
        diffnet::accumulate(grads, diffnet::collect_gradients(tape, g.params), scale);
      }
      diffnet::sgd_step(student.params, grads, spec.lr_scale * config.learning_rate);
      ema_update(teacher.params, student.params, spec.alpha);
    }
  }
  teacher.params.set_step(student.params.step());
  return teacher;
}

void to_json(nlohmann::json& j, const DetectorConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"channels", c.channels},
                     {"neck_channels", c.neck_channels},
                     {"neck_layers", c.neck_layers},
                     {"downsample", c.downsample},
                     {"positive_weight", c.positive_weight},
                     {"center_fraction", c.center_fraction},
                     {"center_neighborhood", c.center_neighborhood}};
}

void from_json(const nlohmann::json& j, DetectorConfig& c) {
  if (j.contains("height")) j.at("height").get_to(c.height);
  if (j.contains("width")) j.at("width").get_to(c.width);
  if (j.contains("channels")) j.at("channels").get_to(c.channels);
  if (j.contains("neck_channels")) j.at("neck_channels").get_to(c.neck_channels);
  if (j.contains("neck_layers")) j.at("neck_layers").get_to(c.neck_layers);
  if (j.contains("downsample")) j.at("downsample").get_to(c.downsample);
  if (j.contains("positive_weight")) j.at("positive_weight").get_to(c.positive_weight);
  if (j.contains("center_fraction")) j.at("center_fraction").get_to(c.center_fraction);
  if (j.contains("center_neighborhood")) j.at("center_neighborhood").get_to(c.center_neighborhood);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"cosine_schedule", c.cosine_schedule},
                     {"momentum", c.momentum},
                     {"patience", c.patience ? nlohmann::json(*c.patience) : nlohmann::json(nullptr)},
                     {"seed", c.seed},
                     {"lambda_reg", c.lambda_reg},
                     {"preset", std::string(metrics::to_string(c.preset))}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
  if (j.contains("cosine_schedule")) j.at("cosine_schedule").get_to(c.cosine_schedule);
  if (j.contains("momentum")) j.at("momentum").get_to(c.momentum);
  if (j.contains("patience")) {
    c.patience = j.at("patience").is_null() ? std::nullopt : std::optional<int>(j.at("patience").get<int>());
  }
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("lambda_reg")) j.at("lambda_reg").get_to(c.lambda_reg);
  if (j.contains("preset")) c.preset = metrics::parse_preset(j.at("preset").get<std::string>());
}

void to_json(nlohmann::json& j, const DistillSpec& s) {
  j = nlohmann::json{
      {"alpha", s.alpha}, {"weight", s.weight}, {"refine_epochs", s.refine_epochs}, {"lr_scale", s.lr_scale}};
}

void from_json(const nlohmann::json& j, DistillSpec& s) {
  if (j.contains("alpha")) j.at("alpha").get_to(s.alpha);
  if (j.contains("weight")) j.at("weight").get_to(s.weight);
  if (j.contains("refine_epochs")) j.at("refine_epochs").get_to(s.refine_epochs);
  if (j.contains("lr_scale")) j.at("lr_scale").get_to(s.lr_scale);
}

void to_json(nlohmann::json& j, const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_lamr", e.val_lamr}});
  j = nlohmann::json{{"epochs", std::move(epochs)},
                     {"best_epoch", h.best_epoch},
                     {"selected_epoch", h.selected_epoch},
                     {"stop_reason", h.stop_reason}};
}

void from_json(const nlohmann::json& j, TrainHistory& h) {
  h.epochs.clear();
  for (const auto& e : j.at("epochs"))
    h.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_lamr").get<double>()});
  j.at("best_epoch").get_to(h.best_epoch);
  j.at("selected_epoch").get_to(h.selected_epoch);
  j.at("stop_reason").get_to(h.stop_reason);
}

void save_model(const DetectorModel& model, const std::filesystem::path& stem) {
  diffnet::save_checkpoint(model.params, stem);
  std::ofstream out(stem.string() + ".detector.json", std::ios::trunc);
  out << nlohmann::json(model.config).dump(1) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "cannot write detector config for " + stem.string());
}

DetectorModel load_model(const std::filesystem::path& stem) {
  std::ifstream in(stem.string() + ".detector.json");
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + stem.string() + ".detector.json");
  DetectorModel model;
  try {
    model.config = nlohmann::json::parse(in).get<DetectorConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("detector config: ") + e.what());
  }
  model.params = diffnet::load_checkpoint(stem);
  return model;
}

}  // namespace secmlops::detector
