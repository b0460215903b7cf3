#pragma once

// Defense stack: CutMix at batch assembly, PGD adversarial training, early
// stopping, and EMA distillation, applied in that fixed order.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "secmlops/attacks.hpp"
#include "secmlops/detector.hpp"
#include "secmlops/rng.hpp"

namespace secmlops::defenses {

using detector::Sample;

struct CutMixSpec {
  double probability = 0.5;  // P
  double beta_a = 1.0;
  double beta_b = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> fixed_lambda;  // bypasses the Beta draw

  void validate() const;
  bool operator==(const CutMixSpec&) const = default;
};

struct CutMixRect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  bool contains(double row, double col) const {
    return row >= top && row < top + height && col >= left && col < left + width;
  }
};

// With probability P draws lambda ~ Beta(a,b) and a cyclic partner order;
// each scene receives a (1-lambda)-area rectangle from its partner at a
// uniform position, along with the partner GTs centered inside it. Own GTs
// centered inside the rectangle are dropped. Throws Error(kBatchTooSmall).
void cutmix(std::vector<Sample>& batch, const CutMixSpec& spec, Rng& rng);
std::vector<Sample> cutmix(std::vector<Sample> batch, const CutMixSpec& spec);

struct DefenseStack {
  std::optional<CutMixSpec> cutmix;
  std::optional<attacks::PgdSpec> adversarial_training;
  std::optional<int> early_stopping;  // patience
  std::optional<detector::DistillSpec> distillation;

  // All four defenses with P=0.5, patience 15, eps^AT=0.02, alpha=0.5.
  static DefenseStack secmlops();
  bool empty() const { return !cutmix && !adversarial_training && !early_stopping && !distillation; }
  // "none" or e.g. "CM+AT+ES+MD".
  std::string label() const;
  void validate() const;
  bool operator==(const DefenseStack&) const = default;
};

// Every input of each mini-batch is replaced by its PGD-perturbed version
// before the step.
detector::TrainResult adversarial_train(const detector::DetectorModel& init, const synthdata::Dataset& dataset,
                                        const detector::TrainConfig& config, const attacks::PgdSpec& pgd,
                                        detector::TrainHooks hooks = {});

struct Provenance {
  DefenseStack stack;
  detector::TrainConfig train;
  std::vector<std::string> order;
  std::string init_params_digest;
  std::string model_params_digest;
  int epochs_run = 0;
  int best_epoch = 0;
  int selected_epoch = 0;
  std::string stop_reason;

  bool operator==(const Provenance&) const = default;
};

struct StackResult {
  detector::DetectorModel model;
  detector::TrainHistory history;
  Provenance provenance;
};

// An early_stopping entry overrides config.patience; without it training
// runs every epoch.
StackResult apply_stack(const detector::DetectorModel& init, const synthdata::Dataset& dataset,
                        const DefenseStack& stack, const detector::TrainConfig& config,
                        const detector::TrainHooks& extra_hooks = {});

void to_json(nlohmann::json& j, const CutMixSpec& s);
void from_json(const nlohmann::json& j, CutMixSpec& s);
void to_json(nlohmann::json& j, const DefenseStack& s);
void from_json(const nlohmann::json& j, DefenseStack& s);
void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);

}  // namespace secmlops::defenses
