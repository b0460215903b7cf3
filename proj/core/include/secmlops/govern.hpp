#pragma once

// Deployment governance: the security gate, golden-set poisoning screen,
// confidence drift monitor, and incident records. The lineage ledger lives
// in ledger.hpp.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "secmlops/attacks.hpp"
#include "secmlops/metrics.hpp"
#include "secmlops/synthdata.hpp"

namespace secmlops::govern {

enum class GateMode {
  kPerAttack,  // every attacked report must clear the ratio
  kAggregate,  // the mean attacked perf must clear it
};

struct GatePolicy {
  double min_perf_ratio = 0.8;
  double max_fgsm_epsilon = 0.03;  // also caps PGD
  double max_deepfool_overshoot = 0.03;
  std::vector<attacks::AttackKind> required{attacks::AttackKind::kFgsm, attacks::AttackKind::kDeepFool};
  GateMode mode = GateMode::kPerAttack;
  std::string subset = "Reasonable";

  void validate() const;
  bool operator==(const GatePolicy&) const = default;
};

struct AttackedReport {
  attacks::AttackSpec attack;
  metrics::MetricReport report;
};

struct GateViolation {
  std::string attack;  // label, or "aggregate"
  double perf = 0;
  double ratio = 0;
  bool operator==(const GateViolation&) const = default;
};

struct GateVerdict {
  bool pass = false;
  double perf_clean = 0;
  std::vector<std::pair<std::string, double>> ratios;  // attack label -> perf_adv / perf_clean
  std::vector<GateViolation> reasons;

  std::string verdict() const { return pass ? "pass" : "fail"; }
};

// perf = 1 - laMR on the policy subset; a missing subset counts as laMR 1.
double performance(const metrics::MetricReport& report, std::string_view subset = "Reasonable");

// Throws Error(kMissingRequiredAttack) or Error(kBudgetExceedsPolicy).
void check_suite(std::span<const attacks::AttackSpec> suite, const GatePolicy& policy);

// Pass iff perf_adv >= min_perf_ratio * perf_clean for every attacked report
// (or for their mean under kAggregate). Runs check_suite first.
GateVerdict evaluate_gate(const metrics::MetricReport& clean, std::span<const AttackedReport> attacked,
                          const GatePolicy& policy);

// Exact two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

struct GoldenStats {
  std::vector<double> distances;  // sorted
  double threshold = 0.25;
  synthdata::EdgeParams edges;
};

inline constexpr std::size_t kMinGoldenLabels = 30;

// Center-to-nearest-edge-pixel distance of every non-ignored label.
std::vector<double> edge_distances(const synthdata::Dataset& dataset, std::span<const int> scene_ids,
                                   const synthdata::EdgeParams& edges = {});

// Throws Error(kGoldenTooSmall) below kMinGoldenLabels labels.
GoldenStats golden_stats(const synthdata::Dataset& dataset, std::span<const int> golden_ids,
                         double threshold = 0.25, const synthdata::EdgeParams& edges = {});

struct ScreenResult {
  bool quarantine = false;
  double ks = 0;
  std::size_t labels = 0;
};

// Throws Error(kEmptySplit) when the incoming scenes hold no labels.
ScreenResult screen_poison(std::span<const double> incoming_distances, const GoldenStats& golden);
ScreenResult screen_poison(const synthdata::Dataset& incoming, std::span<const int> scene_ids,
                           const GoldenStats& golden);

enum class Trigger { kGateFail, kDriftAlert, kPoisonQuarantine, kManual };
enum class Action { kRollback, kSafeMode, kQuarantine };

std::string_view to_string(Trigger t);
std::string_view to_string(Action a);
Trigger parse_trigger(std::string_view s);
Action parse_action(std::string_view s);

// gate-fail -> rollback, drift-alert -> safe-mode, poison-quarantine ->
// quarantine, manual -> rollback.
Action default_action(Trigger t);

struct IncidentRecord {
  std::string timestamp;
  Trigger trigger = Trigger::kManual;
  Action action = Action::kRollback;
  std::optional<std::uint64_t> record_index;
  std::string detail;
  bool operator==(const IncidentRecord&) const = default;
};

// Only manual incidents may override the default action; anything else
// throws Error(kInvalidConfig).
IncidentRecord make_incident(Trigger trigger, std::optional<std::uint64_t> record_index, std::string detail,
                             std::optional<Action> action = std::nullopt, std::string timestamp = {});

// UTC, second resolution: 2026-01-31T12:00:00Z.
std::string utc_timestamp();

inline constexpr int kDriftBins = 20;

struct DriftBaseline {
  std::array<double, kDriftBins> histogram{};  // normalized, bins of width 1/20 on [0,1]
  std::size_t count = 0;
  double threshold = 0.15;
  std::size_t min_window = 200;

  void validate() const;
  bool operator==(const DriftBaseline&) const = default;
};

// Throws Error(kEmptySplit) on no samples, Error(kNonFiniteInput) outside [0,1].
DriftBaseline build_baseline(std::span<const double> confidences, double threshold = 0.15,
                             std::size_t min_window = 200);

struct DriftResult {
  bool alert = false;
  double ks = 0;
  std::optional<IncidentRecord> incident;
};

// KS between the baseline and the window, both binned on the baseline grid.
// An alert carries a drift-alert incident. Throws Error(kWindowTooSmall).
DriftResult drift_check(const DriftBaseline& baseline, std::span<const double> window);

// Tumbling windows of a fixed size fed one confidence at a time.
class DriftMonitor {
 public:
  DriftMonitor(DriftBaseline baseline, std::size_t window_size);
  // Returns a result each time a window fills.
  std::optional<DriftResult> push(double confidence);
  std::size_t pending() const { return window_.size(); }

 private:
  DriftBaseline baseline_;
  std::size_t window_size_;
  std::vector<double> window_;
};

void to_json(nlohmann::json& j, const GatePolicy& p);
void from_json(const nlohmann::json& j, GatePolicy& p);
void to_json(nlohmann::json& j, const GateVerdict& v);
void to_json(nlohmann::json& j, const IncidentRecord& r);
void from_json(const nlohmann::json& j, IncidentRecord& r);
void to_json(nlohmann::json& j, const DriftBaseline& b);
void from_json(const nlohmann::json& j, DriftBaseline& b);

}  // namespace secmlops::govern
