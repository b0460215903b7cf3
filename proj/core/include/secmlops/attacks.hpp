#pragma once

// Training-time label poisoning and inference-time gradient attacks (FGSM,
// DeepFool, PGD). The gradient attacks come in two flavors: a generic form
// over any differentiable scalar objective of the input, and detector
// overloads that plug in the classification loss or a center logit.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "secmlops/detector.hpp"
#include "secmlops/diffnet.hpp"
#include "secmlops/synthdata.hpp"

namespace secmlops::attacks {

using diffnet::Tensor;
using synthdata::PedestrianGT;

struct PoisonSpec {
  double gamma = 0.1;
  std::uint64_t seed = 0;
  void validate() const;
  bool operator==(const PoisonSpec&) const = default;
};

struct FgsmSpec {
  double epsilon = 0.03;
  void validate() const;
  bool operator==(const FgsmSpec&) const = default;
};

struct DeepFoolSpec {
  double overshoot = 0.03;  // xi
  int max_iterations = 50;
  void validate() const;
  bool operator==(const DeepFoolSpec&) const = default;
};

struct PgdSpec {
  double epsilon = 0.02;  // eps^AT
  double step_size = 0.005;
  int iterations = 5;
  void validate() const;
  bool operator==(const PgdSpec&) const = default;
};

enum class AttackKind { kFgsm, kDeepFool, kPgd };

struct AttackSpec {
  AttackKind kind = AttackKind::kFgsm;
  FgsmSpec fgsm;
  DeepFoolSpec deepfool;
  PgdSpec pgd;

  static AttackSpec make_fgsm(double epsilon);
  static AttackSpec make_deepfool(double overshoot, int max_iterations = 50);
  static AttackSpec make_pgd(double epsilon, double step_size, int iterations);

  // "fgsm(eps=0.03)", "deepfool(xi=0.03)", "pgd(eps=0.02,alpha=0.005,k=5)"
  std::string label() const;
  // The budget compared against policy caps: eps for fgsm/pgd, xi for deepfool.
  double budget() const;
  void validate() const;
  bool operator==(const AttackSpec&) const = default;
};

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);
std::string chain_label(std::span<const AttackSpec> chain);

// Scalar objective of the input. When grad is non-null it receives
// d(value)/dx with the shape of x.
using InputObjective = std::function<double(const Tensor& x, Tensor* grad)>;

// x + eps*sign(grad), projected to the eps ball and [0,1].
Tensor fgsm(const InputObjective& loss, const Tensor& x, const FgsmSpec& spec);

using IterateCallback = std::function<void(int k, const Tensor& x_k)>;

// K signed-gradient steps of size step_size, each projected to the eps ball
// around x and to [0,1].
Tensor pgd(const InputObjective& loss, const Tensor& x, const PgdSpec& spec, const IterateCallback& on_iterate = {});

struct DeepFoolResult {
  Tensor adversarial;
  int iterations = 0;
};

// Binary decision function f with the boundary at 0. Steps
// r_i = -f(x_i) grad f / |grad f|^2 until f <= 0 (or |f| falls to 1e-12 of
// its start) or max_iterations; returns clip(x + (1+xi) sum r_i). An input
// with f(x) <= 0 takes zero iterations. Throws Error(kZeroGradient).
DeepFoolResult deepfool(const InputObjective& f, const Tensor& x, const DeepFoolSpec& spec);

// L_cls of the detector with the given labels, as a function of the input.
InputObjective classification_objective(const detector::DetectorModel& model, std::vector<PedestrianGT> gts);
// Center logit of one output cell.
InputObjective center_logit_objective(const detector::DetectorModel& model, int cell_row, int cell_col);

Tensor fgsm(const detector::DetectorModel& model, const Tensor& x, std::span<const PedestrianGT> gts,
            const FgsmSpec& spec);
Tensor pgd(const detector::DetectorModel& model, const Tensor& x, std::span<const PedestrianGT> gts,
           const PgdSpec& spec, const IterateCallback& on_iterate = {});
// Targets the highest center logit of the clean input. Throws
// Error(kNoPositiveCell) when no logit is positive.
DeepFoolResult deepfool(const detector::DetectorModel& model, const Tensor& x, const DeepFoolSpec& spec);

// Applies the chain in order; a DeepFool step on an input without a
// positive cell leaves it unchanged.
Tensor apply_chain(const detector::DetectorModel& model, const Tensor& x, std::span<const PedestrianGT> gts,
                   std::span<const AttackSpec> chain);

struct LabelFlip {
  int scene_id = 0;
  int label_index = 0;
  std::pair<double, double> old_center;
  std::pair<double, double> new_center;
  bool operator==(const LabelFlip&) const = default;
};

struct PoisonResult {
  synthdata::Dataset dataset;
  std::vector<LabelFlip> manifest;
};

using CandidateMap = std::map<int, synthdata::AdvCandidateSet>;

// Edge-feature candidates for the given scenes.
CandidateMap candidate_map(const synthdata::Dataset& dataset, std::span<const int> scene_ids,
                           const synthdata::EdgeParams& params = {});

// Flips label centers in the train split. Each scene draws from its own
// stream so the manifest does not depend on iteration order; every label
// takes a Bernoulli(gamma) draw, and on success a uniformly chosen candidate.
// Golden scenes and scenes without candidates are never touched.
PoisonResult poison_labels(const synthdata::Dataset& dataset, const PoisonSpec& spec, const CandidateMap& candidates);

void write_adversarial_scene(const synthdata::Scene& scene, const Tensor& adversarial,
                             const std::filesystem::path& file);

void to_json(nlohmann::json& j, const PoisonSpec& s);
void from_json(const nlohmann::json& j, PoisonSpec& s);
void to_json(nlohmann::json& j, const PgdSpec& s);
void from_json(const nlohmann::json& j, PgdSpec& s);
void to_json(nlohmann::json& j, const AttackSpec& s);
void from_json(const nlohmann::json& j, AttackSpec& s);
void to_json(nlohmann::json& j, const LabelFlip& f);
void from_json(const nlohmann::json& j, LabelFlip& f);

}  // namespace secmlops::attacks
