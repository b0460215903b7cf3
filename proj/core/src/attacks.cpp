#include "secmlops/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "secmlops/error.hpp"
#include "secmlops/rng.hpp"

namespace secmlops::attacks {

using detector::DetectorModel;
using diffnet::Tape;

void PoisonSpec::validate() const {
  if (!(gamma >= 0 && gamma <= 1)) throw Error(ErrorKind::kInvalidConfig, "poison gamma must lie in [0,1]");
}

void FgsmSpec::validate() const {
  if (!(epsilon >= 0)) throw Error(ErrorKind::kInvalidConfig, "fgsm epsilon must be >= 0");
}

void DeepFoolSpec::validate() const {
  if (!(overshoot >= 0) || max_iterations < 1)
    throw Error(ErrorKind::kInvalidConfig, "deepfool needs overshoot >= 0 and max_iterations >= 1");
}

void PgdSpec::validate() const {
  if (!(epsilon >= 0) || !(step_size > 0) || iterations < 1)
    throw Error(ErrorKind::kInvalidConfig, "pgd needs epsilon >= 0, step_size > 0, iterations >= 1");
}

AttackSpec AttackSpec::make_fgsm(double epsilon) {
  AttackSpec s;
  s.kind = AttackKind::kFgsm;
  s.fgsm.epsilon = epsilon;
  return s;
}

AttackSpec AttackSpec::make_deepfool(double overshoot, int max_iterations) {
  AttackSpec s;
  s.kind = AttackKind::kDeepFool;
  s.deepfool = {overshoot, max_iterations};
  return s;
}

AttackSpec AttackSpec::make_pgd(double epsilon, double step_size, int iterations) {
  AttackSpec s;
  s.kind = AttackKind::kPgd;
  s.pgd = {epsilon, step_size, iterations};
  return s;
}

std::string AttackSpec::label() const {
  char buf[96];
  switch (kind) {
    case AttackKind::kFgsm: std::snprintf(buf, sizeof buf, "fgsm(eps=%g)", fgsm.epsilon); break;
    case AttackKind::kDeepFool: std::snprintf(buf, sizeof buf, "deepfool(xi=%g)", deepfool.overshoot); break;
    case AttackKind::kPgd:
      std::snprintf(buf, sizeof buf, "pgd(eps=%g,alpha=%g,k=%d)", pgd.epsilon, pgd.step_size, pgd.iterations);
      break;
  }
  return buf;
}

double AttackSpec::budget() const {
  switch (kind) {
    case AttackKind::kFgsm: return fgsm.epsilon;
    case AttackKind::kDeepFool: return deepfool.overshoot;
    case AttackKind::kPgd: return pgd.epsilon;
  }
  return 0;
}

void AttackSpec::validate() const {
  switch (kind) {
    case AttackKind::kFgsm: fgsm.validate(); break;
    case AttackKind::kDeepFool: deepfool.validate(); break;
    case AttackKind::kPgd: pgd.validate(); break;
  }
}

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kDeepFool: return "deepfool";
    case AttackKind::kPgd: return "pgd";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "deepfool") return AttackKind::kDeepFool;
  if (name == "pgd") return AttackKind::kPgd;
  throw Error(ErrorKind::kInvalidConfig, "unknown attack kind '" + std::string(name) + "'");
}

std::string chain_label(std::span<const AttackSpec> chain) {
  if (chain.empty()) return "clean";
  std::string out;
  for (const AttackSpec& a : chain) {
    if (!out.empty()) out += '+';
    out += a.label();
  }
  return out;
}

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

Tensor gradient_of(const InputObjective& loss, const Tensor& x) {
  Tensor g;
  loss(x, &g);
  if (g.shape() != x.shape()) throw Error(ErrorKind::kShapeMismatch, "objective gradient shape differs from input");
  if (!g.all_finite()) throw Error(ErrorKind::kNonFiniteGradient, "input gradient is not finite");
  return g;
}

// One signed step from `current`, projected to the ball around `origin` and [0,1].
Tensor signed_step(const Tensor& origin, const Tensor& current, const Tensor& grad, double step, double epsilon) {
  Tensor out = current;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = current[i] + step * sign(grad[i]);
    v = std::clamp(v, origin[i] - epsilon, origin[i] + epsilon);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace

Tensor fgsm(const InputObjective& loss, const Tensor& x, const FgsmSpec& spec) {
  spec.validate();
  if (spec.epsilon == 0) return x;
  return signed_step(x, x, gradient_of(loss, x), spec.epsilon, spec.epsilon);
}

Tensor pgd(const InputObjective& loss, const Tensor& x, const PgdSpec& spec, const IterateCallback& on_iterate) {
  spec.validate();
  Tensor current = x;
  for (int k = 1; k <= spec.iterations; ++k) {
    current = signed_step(x, current, gradient_of(loss, current), spec.step_size, spec.epsilon);
    if (on_iterate) on_iterate(k, current);
  }
  return current;
}

DeepFoolResult deepfool(const InputObjective& f, const Tensor& x, const DeepFoolSpec& spec) {
  spec.validate();
  DeepFoolResult result{x, 0};
  Tensor total(x.shape(), 0.0);
  Tensor current = x;
  Tensor grad;
  double value = f(current, &grad);
  const double start = value;
  while (value > 0 && std::abs(value) > 1e-12 * std::abs(start) && result.iterations < spec.max_iterations) {
    if (!grad.all_finite()) throw Error(ErrorKind::kNonFiniteGradient, "decision gradient is not finite");
    double norm2 = 0;
    for (double g : grad.values()) norm2 += g * g;
    if (norm2 == 0) throw Error(ErrorKind::kZeroGradient, "decision function has zero gradient");
    const double scale = -value / norm2;
    for (std::size_t i = 0; i < total.size(); ++i) {
      total[i] += scale * grad[i];
      current[i] = x[i] + total[i];
    }
    ++result.iterations;
    value = f(current, &grad);
  }
  if (result.iterations == 0) return result;
  for (std::size_t i = 0; i < x.size(); ++i)
    result.adversarial[i] = std::clamp(x[i] + (1.0 + spec.overshoot) * total[i], 0.0, 1.0);
  return result;
}

InputObjective classification_objective(const DetectorModel& model, std::vector<PedestrianGT> gts) {
  auto targets = std::make_shared<detector::Targets>(detector::make_targets(model.config, gts));
  return [&model, targets](const Tensor& x, Tensor* grad) {
    Tape tape;
    const auto graph = detector::build_forward(tape, model, x, grad != nullptr, false);
    const auto l = detector::build_loss(tape, graph, *targets);
    if (grad) {
      tape.backward(l.cls);
      *grad = tape.grad(graph.input);
    }
    return tape.value(l.cls).item();
  };
}

InputObjective center_logit_objective(const DetectorModel& model, int cell_row, int cell_col) {
  const int h = model.config.grid_height(), w = model.config.grid_width();
  if (cell_row < 0 || cell_row >= h || cell_col < 0 || cell_col >= w)
    throw Error(ErrorKind::kCenterOutsideGrid, "target cell outside the output grid");
  const std::size_t idx = static_cast<std::size_t>(cell_row) * w + cell_col;
  const double n = static_cast<double>(h) * w;
  Tensor mask({1, h, w}, 0.0);
  mask[idx] = 1.0;
  return [&model, mask, idx, n](const Tensor& x, Tensor* grad) {
    Tape tape;
    const auto graph = detector::build_forward(tape, model, x, grad != nullptr, false);
    if (grad) {
      const auto picked = tape.mean(tape.mul(graph.center, tape.constant(mask)));
      tape.backward(picked);
      *grad = tape.grad(graph.input);
      for (double& g : grad->values()) g *= n;
    }
    return tape.value(graph.center)[idx];
  };
}

Tensor fgsm(const DetectorModel& model, const Tensor& x, std::span<const PedestrianGT> gts, const FgsmSpec& spec) {
  return fgsm(classification_objective(model, {gts.begin(), gts.end()}), x, spec);
}

Tensor pgd(const DetectorModel& model, const Tensor& x, std::span<const PedestrianGT> gts, const PgdSpec& spec,
           const IterateCallback& on_iterate) {
  return pgd(classification_objective(model, {gts.begin(), gts.end()}), x, spec, on_iterate);
}

DeepFoolResult deepfool(const DetectorModel& model, const Tensor& x, const DeepFoolSpec& spec) {
  const Tensor logits = detector::forward(model, x).center_logits;
  const auto best = std::max_element(logits.values().begin(), logits.values().end());
  if (*best <= 0) throw Error(ErrorKind::kNoPositiveCell, "model detects nothing in the input");
  const auto idx = static_cast<int>(best - logits.values().begin());
  const int w = model.config.grid_width();
  return deepfool(center_logit_objective(model, idx / w, idx % w), x, spec);
}

Tensor apply_chain(const DetectorModel& model, const Tensor& x, std::span<const PedestrianGT> gts,
                   std::span<const AttackSpec> chain) {
  Tensor current = x;
  for (const AttackSpec& attack : chain) {
    switch (attack.kind) {
      case AttackKind::kFgsm: current = fgsm(model, current, gts, attack.fgsm); break;
      case AttackKind::kPgd: current = pgd(model, current, gts, attack.pgd); break;
      case AttackKind::kDeepFool:
        try {
          current = deepfool(model, current, attack.deepfool).adversarial;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kNoPositiveCell) throw;
        }
        break;
    }
  }
  return current;
}

CandidateMap candidate_map(const synthdata::Dataset& dataset, std::span<const int> scene_ids,
                           const synthdata::EdgeParams& params) {
  CandidateMap out;
  for (int id : scene_ids) out.emplace(id, synthdata::extract_adversarial_centers(dataset.scene(id), dataset.gts(id), params));
  return out;
}

PoisonResult poison_labels(const synthdata::Dataset& dataset, const PoisonSpec& spec, const CandidateMap& candidates) {
  spec.validate();
  PoisonResult result{dataset, {}};
  const auto& golden = dataset.split.golden;
  for (int id : dataset.split.train) {
    if (std::find(golden.begin(), golden.end(), id) != golden.end()) continue;
    const auto it = candidates.find(id);
    if (it == candidates.end() || it->second.centers.empty()) continue;
    const auto& centers = it->second.centers;
    Rng rng(synthdata::scene_seed(spec.seed, id), streams::kPoison);
    auto& labels = result.dataset.labels.at(static_cast<std::size_t>(id)).pedestrians;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!rng.bernoulli(spec.gamma)) continue;
      const auto& pick = centers[static_cast<std::size_t>(rng.below(centers.size()))];
      PedestrianGT& gt = labels[i];
      result.manifest.push_back({id, static_cast<int>(i), {gt.center_row, gt.center_col}, pick});
      gt.center_row = pick.first;
      gt.center_col = pick.second;
    }
  }
  return result;
}

void write_adversarial_scene(const synthdata::Scene& scene, const Tensor& adversarial,
                             const std::filesystem::path& file) {
  synthdata::Scene out = scene;
  if (adversarial.size() != out.pixels.size())
    throw Error(ErrorKind::kShapeMismatch, "adversarial tensor does not match the scene");
  out.pixels = adversarial.values();
  synthdata::write_scene_array(out, file, synthdata::kAdversarialMagic);
}

void to_json(nlohmann::json& j, const PoisonSpec& s) { j = nlohmann::json{{"gamma", s.gamma}, {"seed", s.seed}}; }

void from_json(const nlohmann::json& j, PoisonSpec& s) {
  if (j.contains("gamma")) j.at("gamma").get_to(s.gamma);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

void to_json(nlohmann::json& j, const PgdSpec& s) {
  j = nlohmann::json{{"epsilon", s.epsilon}, {"step_size", s.step_size}, {"iterations", s.iterations}};
}

void from_json(const nlohmann::json& j, PgdSpec& s) {
  if (j.contains("epsilon")) j.at("epsilon").get_to(s.epsilon);
  if (j.contains("step_size")) j.at("step_size").get_to(s.step_size);
  if (j.contains("iterations")) j.at("iterations").get_to(s.iterations);
}

void to_json(nlohmann::json& j, const AttackSpec& s) {
  switch (s.kind) {
    case AttackKind::kFgsm: j = nlohmann::json{{"kind", "fgsm"}, {"epsilon", s.fgsm.epsilon}}; break;
    case AttackKind::kDeepFool:
      j = nlohmann::json{
          {"kind", "deepfool"}, {"overshoot", s.deepfool.overshoot}, {"max_iterations", s.deepfool.max_iterations}};
      break;
    case AttackKind::kPgd:
      j = s.pgd;
      j["kind"] = "pgd";
      break;
  }
}

void from_json(const nlohmann::json& j, AttackSpec& s) {
  s = AttackSpec{};
  s.kind = parse_attack_kind(j.at("kind").get<std::string>());
  switch (s.kind) {
    case AttackKind::kFgsm:
      if (j.contains("epsilon")) j.at("epsilon").get_to(s.fgsm.epsilon);
      break;
    case AttackKind::kDeepFool:
      if (j.contains("overshoot")) j.at("overshoot").get_to(s.deepfool.overshoot);
      if (j.contains("max_iterations")) j.at("max_iterations").get_to(s.deepfool.max_iterations);
      break;
    case AttackKind::kPgd: s.pgd = j.get<PgdSpec>(); break;
  }
  s.validate();
}

void to_json(nlohmann::json& j, const LabelFlip& f) {
  j = nlohmann::json{{"scene_id", f.scene_id},
                     {"label_index", f.label_index},
                     {"old_center", {f.old_center.first, f.old_center.second}},
                     {"new_center", {f.new_center.first, f.new_center.second}}};
}

void from_json(const nlohmann::json& j, LabelFlip& f) {
  j.at("scene_id").get_to(f.scene_id);
  j.at("label_index").get_to(f.label_index);
  f.old_center = {j.at("old_center").at(0).get<double>(), j.at("old_center").at(1).get<double>()};
  f.new_center = {j.at("new_center").at(0).get<double>(), j.at("new_center").at(1).get<double>()};
}

}  // namespace secmlops::attacks
