#include "secmlops/defenses.hpp"

#include <cmath>
#include <memory>
#include <numeric>

#include "secmlops/error.hpp"

namespace secmlops::defenses {

using detector::TrainConfig;
using detector::TrainHooks;

void CutMixSpec::validate() const {
  if (!(probability >= 0 && probability <= 1)) throw Error(ErrorKind::kInvalidConfig, "cutmix P must lie in [0,1]");
  if (!(beta_a > 0 && beta_b > 0)) throw Error(ErrorKind::kInvalidConfig, "cutmix Beta parameters must be > 0");
  if (fixed_lambda && !(*fixed_lambda >= 0 && *fixed_lambda <= 1))
    throw Error(ErrorKind::kInvalidConfig, "cutmix lambda must lie in [0,1]");
}

void cutmix(std::vector<Sample>& batch, const CutMixSpec& spec, Rng& rng) {
  spec.validate();
  if (batch.size() < 2) throw Error(ErrorKind::kBatchTooSmall, "cutmix needs at least two scenes");
  if (!rng.bernoulli(spec.probability)) return;
  const double lambda = spec.fixed_lambda ? *spec.fixed_lambda : rng.beta(spec.beta_a, spec.beta_b);
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::size_t> partner(batch.size());
  for (std::size_t k = 0; k < order.size(); ++k) partner[order[k]] = order[(k + 1) % order.size()];

  const std::vector<Sample> source = batch;
  const double side = std::sqrt(1.0 - lambda);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& donor = source[partner[i]];
    Sample& target = batch[i];
    const int H = target.scene.height, W = target.scene.width;
    if (donor.scene.height != H || donor.scene.width != W)
      throw Error(ErrorKind::kShapeMismatch, "cutmix scenes differ in size");
    CutMixRect rect;
    rect.height = static_cast<int>(std::lround(H * side));
    rect.width = static_cast<int>(std::lround(W * side));
    if (rect.height == 0 || rect.width == 0) continue;
    rect.top = static_cast<int>(rng.integer(0, H - rect.height));
    rect.left = static_cast<int>(rng.integer(0, W - rect.width));

    for (int r = rect.top; r < rect.top + rect.height; ++r)
      for (int c = rect.left; c < rect.left + rect.width; ++c) target.scene.at(r, c) = donor.scene.at(r, c);
    std::vector<synthdata::PedestrianGT> gts;
    for (const auto& gt : target.gts)
      if (!rect.contains(gt.center_row, gt.center_col)) gts.push_back(gt);
    for (const auto& gt : donor.gts)
      if (rect.contains(gt.center_row, gt.center_col)) gts.push_back(gt);
    target.gts = std::move(gts);
  }
}

std::vector<Sample> cutmix(std::vector<Sample> batch, const CutMixSpec& spec) {
  Rng rng(spec.seed, streams::kCutMix);
  cutmix(batch, spec, rng);
  return batch;
}

DefenseStack DefenseStack::secmlops() {
  DefenseStack s;
  s.cutmix = CutMixSpec{};
  s.adversarial_training = attacks::PgdSpec{0.02, 0.01, 3};
  s.early_stopping = 15;
  s.distillation = detector::DistillSpec{0.5, 1.0, 2};
  return s;
}

std::string DefenseStack::label() const {
  std::string out;
  auto add = [&](bool on, const char* tag) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += tag;
  };
  add(cutmix.has_value(), "CM");
  add(adversarial_training.has_value(), "AT");
  add(early_stopping.has_value(), "ES");
  add(distillation.has_value(), "MD");
  return out.empty() ? "none" : out;
}

void DefenseStack::validate() const {
  if (cutmix) cutmix->validate();
  if (adversarial_training) adversarial_training->validate();
  if (early_stopping && *early_stopping < 1) throw Error(ErrorKind::kInvalidConfig, "patience must be >= 1");
  if (distillation) distillation->validate();
}

detector::TrainResult adversarial_train(const detector::DetectorModel& init, const synthdata::Dataset& dataset,
                                        const TrainConfig& config, const attacks::PgdSpec& pgd, TrainHooks hooks) {
  pgd.validate();
  hooks.perturb = [pgd](const detector::DetectorModel& model, const Sample& sample) {
    const diffnet::Tensor x = detector::scene_tensor(sample.scene);
    if (pgd.epsilon == 0) return x;
    return attacks::pgd(model, x, sample.gts, pgd);
  };
  return detector::train(init, dataset, config, hooks);
}

StackResult apply_stack(const detector::DetectorModel& init, const synthdata::Dataset& dataset,
                        const DefenseStack& stack, const TrainConfig& config, const TrainHooks& extra_hooks) {
  stack.validate();
  TrainConfig train_config = config;
  train_config.patience = stack.early_stopping;

  TrainHooks hooks = extra_hooks;
  if (stack.cutmix) {
    auto rng = std::make_shared<Rng>(stack.cutmix->seed, streams::kCutMix);
    hooks.augment = [spec = *stack.cutmix, rng](std::vector<Sample>& batch) {
      if (batch.size() >= 2) cutmix(batch, spec, *rng);
    };
  }

  StackResult result;
  detector::TrainResult trained = stack.adversarial_training
                                      ? adversarial_train(init, dataset, train_config, *stack.adversarial_training, hooks)
                                      : detector::train(init, dataset, train_config, hooks);
  result.model = std::move(trained.model);
  result.history = std::move(trained.history);
  if (stack.distillation) result.model = detector::distill(result.model, dataset, *stack.distillation, train_config);

  Provenance& p = result.provenance;
  p.stack = stack;
  p.train = train_config;
  if (stack.cutmix) p.order.push_back("cutmix");
  p.order.push_back(stack.adversarial_training ? "adversarial_training" : "standard_training");
  if (stack.early_stopping) p.order.push_back("early_stopping");
  if (stack.distillation) p.order.push_back("distillation");
  p.init_params_digest = diffnet::params_digest(init.params);
  p.model_params_digest = diffnet::params_digest(result.model.params);
  p.epochs_run = static_cast<int>(result.history.epochs.size());
  p.best_epoch = result.history.best_epoch;
  p.selected_epoch = result.history.selected_epoch;
  p.stop_reason = result.history.stop_reason;
  return result;
}

void to_json(nlohmann::json& j, const CutMixSpec& s) {
  j = nlohmann::json{{"probability", s.probability}, {"beta_a", s.beta_a}, {"beta_b", s.beta_b}, {"seed", s.seed}};
  j["fixed_lambda"] = s.fixed_lambda ? nlohmann::json(*s.fixed_lambda) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, CutMixSpec& s) {
  if (j.contains("probability")) j.at("probability").get_to(s.probability);
  if (j.contains("beta_a")) j.at("beta_a").get_to(s.beta_a);
  if (j.contains("beta_b")) j.at("beta_b").get_to(s.beta_b);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
  if (j.contains("fixed_lambda") && !j.at("fixed_lambda").is_null()) s.fixed_lambda = j.at("fixed_lambda").get<double>();
}

namespace {

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
void optional_from(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  out.reset();
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const DefenseStack& s) {
  j = nlohmann::json{{"cutmix", optional_json(s.cutmix)},
                     {"adversarial_training", optional_json(s.adversarial_training)},
                     {"early_stopping", optional_json(s.early_stopping)},
                     {"distillation", optional_json(s.distillation)}};
}

void from_json(const nlohmann::json& j, DefenseStack& s) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "SecMLOps") {
      s = DefenseStack::secmlops();
    } else if (name == "none") {
      s = DefenseStack{};
    } else {
      throw Error(ErrorKind::kInvalidConfig, "unknown defense preset '" + name + "'");
    }
    return;
  }
  optional_from(j, "cutmix", s.cutmix);
  optional_from(j, "adversarial_training", s.adversarial_training);
  optional_from(j, "early_stopping", s.early_stopping);
  optional_from(j, "distillation", s.distillation);
}

void to_json(nlohmann::json& j, const Provenance& p) {
  j = nlohmann::json{{"stack", p.stack},
                     {"train", p.train},
                     {"order", p.order},
                     {"init_params_digest", p.init_params_digest},
                     {"model_params_digest", p.model_params_digest},
                     {"epochs_run", p.epochs_run},
                     {"best_epoch", p.best_epoch},
                     {"selected_epoch", p.selected_epoch},
                     {"stop_reason", p.stop_reason}};
}

void from_json(const nlohmann::json& j, Provenance& p) {
  j.at("stack").get_to(p.stack);
  j.at("train").get_to(p.train);
  j.at("order").get_to(p.order);
  j.at("init_params_digest").get_to(p.init_params_digest);
  j.at("model_params_digest").get_to(p.model_params_digest);
  j.at("epochs_run").get_to(p.epochs_run);
  j.at("best_epoch").get_to(p.best_epoch);
  j.at("selected_epoch").get_to(p.selected_epoch);
  j.at("stop_reason").get_to(p.stop_reason);
}

}  // namespace secmlops::defenses
