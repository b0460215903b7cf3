#include "secmlops/govern.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <numeric>

#include "secmlops/error.hpp"

namespace secmlops::govern {

using attacks::AttackKind;

void GatePolicy::validate() const {
  if (!(min_perf_ratio > 0 && min_perf_ratio <= 1))
    throw Error(ErrorKind::kInvalidConfig, "min_perf_ratio must lie in (0,1]");
  if (!(max_fgsm_epsilon >= 0) || !(max_deepfool_overshoot >= 0))
    throw Error(ErrorKind::kInvalidConfig, "policy budgets must be >= 0");
}

double performance(const metrics::MetricReport& report, std::string_view subset) {
  const auto it = report.lamr.find(std::string(subset));
  if (it == report.lamr.end() || !it->second) return 0.0;
  return 1.0 - *it->second;
}

namespace {

double policy_cap(const GatePolicy& policy, AttackKind kind) {
  return kind == AttackKind::kDeepFool ? policy.max_deepfool_overshoot : policy.max_fgsm_epsilon;
}

}  // namespace

void check_suite(std::span<const attacks::AttackSpec> suite, const GatePolicy& policy) {
  policy.validate();
  for (AttackKind kind : policy.required) {
    const bool covered =
        std::any_of(suite.begin(), suite.end(), [kind](const attacks::AttackSpec& a) { return a.kind == kind; });
    if (!covered)
      throw Error(ErrorKind::kMissingRequiredAttack, "gate suite lacks " + std::string(attacks::to_string(kind)));
  }
  for (const auto& a : suite) {
    if (a.budget() > policy_cap(policy, a.kind))
      throw Error(ErrorKind::kBudgetExceedsPolicy, a.label() + " exceeds the policy cap");
  }
}

GateVerdict evaluate_gate(const metrics::MetricReport& clean, std::span<const AttackedReport> attacked,
                          const GatePolicy& policy) {
  std::vector<attacks::AttackSpec> suite;
  for (const auto& a : attacked) suite.push_back(a.attack);
  check_suite(suite, policy);

  GateVerdict v;
  v.perf_clean = performance(clean, policy.subset);
  const double bound = policy.min_perf_ratio * v.perf_clean;
  double total = 0;
  for (const auto& a : attacked) {
    const double perf = performance(a.report, policy.subset);
    total += perf;
    const double ratio = v.perf_clean > 0 ? perf / v.perf_clean : 0.0;
    v.ratios.emplace_back(a.attack.label(), ratio);
    if (policy.mode == GateMode::kPerAttack && perf < bound) v.reasons.push_back({a.attack.label(), perf, ratio});
  }
  if (policy.mode == GateMode::kAggregate && !attacked.empty()) {
    const double mean = total / static_cast<double>(attacked.size());
    if (mean < bound) v.reasons.push_back({"aggregate", mean, v.perf_clean > 0 ? mean / v.perf_clean : 0.0});
  }
  v.pass = v.reasons.empty();
  return v;
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::kEmptySplit, "KS needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

std::vector<double> edge_distances(const synthdata::Dataset& dataset, std::span<const int> scene_ids,
                                   const synthdata::EdgeParams& edges) {
  std::vector<double> out;
  for (int id : scene_ids) {
    const auto& scene = dataset.scene(id);
    const auto& gts = dataset.gts(id);
    if (gts.empty()) continue;
    const auto map = synthdata::edge_map(scene, edges);
    for (const auto& gt : gts) {
      if (gt.ignore) continue;
      out.push_back(synthdata::distance_to_nearest_edge(map, scene.height, scene.width, gt.center_row, gt.center_col));
    }
  }
  return out;
}

GoldenStats golden_stats(const synthdata::Dataset& dataset, std::span<const int> golden_ids, double threshold,
                         const synthdata::EdgeParams& edges) {
  if (!(threshold >= 0)) throw Error(ErrorKind::kInvalidConfig, "screen threshold must be >= 0");
  GoldenStats g;
  g.threshold = threshold;
  g.edges = edges;
  g.distances = edge_distances(dataset, golden_ids, edges);
  if (g.distances.size() < kMinGoldenLabels)
    throw Error(ErrorKind::kGoldenTooSmall, "golden set holds " + std::to_string(g.distances.size()) +
                                                " labels, need " + std::to_string(kMinGoldenLabels));
  std::sort(g.distances.begin(), g.distances.end());
  return g;
}

ScreenResult screen_poison(std::span<const double> incoming_distances, const GoldenStats& golden) {
  if (incoming_distances.empty()) throw Error(ErrorKind::kEmptySplit, "no incoming labels to screen");
  if (golden.distances.size() < kMinGoldenLabels) throw Error(ErrorKind::kGoldenTooSmall, "golden stats too small");
  ScreenResult r;
  r.labels = incoming_distances.size();
  r.ks = ks_statistic(incoming_distances, golden.distances);
  r.quarantine = r.ks > golden.threshold;
  return r;
}

ScreenResult screen_poison(const synthdata::Dataset& incoming, std::span<const int> scene_ids,
                           const GoldenStats& golden) {
  const auto d = edge_distances(incoming, scene_ids, golden.edges);
  return screen_poison(d, golden);
}

std::string_view to_string(Trigger t) {
  switch (t) {
    case Trigger::kGateFail: return "gate-fail";
    case Trigger::kDriftAlert: return "drift-alert";
    case Trigger::kPoisonQuarantine: return "poison-quarantine";
    case Trigger::kManual: return "manual";
  }
  return "manual";
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::kRollback: return "rollback";
    case Action::kSafeMode: return "safe-mode";
    case Action::kQuarantine: return "quarantine";
  }
  return "rollback";
}

Trigger parse_trigger(std::string_view s) {
  for (Trigger t : {Trigger::kGateFail, Trigger::kDriftAlert, Trigger::kPoisonQuarantine, Trigger::kManual})
    if (to_string(t) == s) return t;
  throw Error(ErrorKind::kFormat, "unknown incident trigger '" + std::string(s) + "'");
}

Action parse_action(std::string_view s) {
  for (Action a : {Action::kRollback, Action::kSafeMode, Action::kQuarantine})
    if (to_string(a) == s) return a;
  throw Error(ErrorKind::kFormat, "unknown incident action '" + std::string(s) + "'");
}

Action default_action(Trigger t) {
  switch (t) {
    case Trigger::kGateFail: return Action::kRollback;
    case Trigger::kDriftAlert: return Action::kSafeMode;
    case Trigger::kPoisonQuarantine: return Action::kQuarantine;
    case Trigger::kManual: return Action::kRollback;
  }
  return Action::kRollback;
}

IncidentRecord make_incident(Trigger trigger, std::optional<std::uint64_t> record_index, std::string detail,
                             std::optional<Action> action, std::string timestamp) {
  if (action && trigger != Trigger::kManual && *action != default_action(trigger))
    throw Error(ErrorKind::kInvalidConfig, std::string(to_string(trigger)) + " incidents must take action " +
                                               std::string(to_string(default_action(trigger))));
  IncidentRecord r;
  r.timestamp = timestamp.empty() ? utc_timestamp() : std::move(timestamp);
  r.trigger = trigger;
  r.action = action.value_or(default_action(trigger));
  r.record_index = record_index;
  r.detail = std::move(detail);
  return r;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

int bin_of(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::kNonFiniteInput, "confidence outside [0,1]");
  return std::min(kDriftBins - 1, static_cast<int>(v * kDriftBins));
}

std::array<double, kDriftBins> histogram(std::span<const double> values) {
  std::array<double, kDriftBins> h{};
  for (double v : values) h[static_cast<std::size_t>(bin_of(v))] += 1.0;
  for (double& x : h) x /= static_cast<double>(values.size());
  return h;
}

}  // namespace

void DriftBaseline::validate() const {
  if (count == 0) throw Error(ErrorKind::kInvalidConfig, "drift baseline is empty");
  if (!(threshold >= 0)) throw Error(ErrorKind::kInvalidConfig, "drift threshold must be >= 0");
  if (min_window == 0) throw Error(ErrorKind::kInvalidConfig, "drift window minimum must be > 0");
  const double total = std::accumulate(histogram.begin(), histogram.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::kInvalidConfig, "drift histogram is not normalized");
}

DriftBaseline build_baseline(std::span<const double> confidences, double threshold, std::size_t min_window) {
  if (confidences.empty()) throw Error(ErrorKind::kEmptySplit, "drift baseline needs samples");
  DriftBaseline b;
  b.histogram = histogram(confidences);
  b.count = confidences.size();
  b.threshold = threshold;
  b.min_window = min_window;
  b.validate();
  return b;
}

DriftResult drift_check(const DriftBaseline& baseline, std::span<const double> window) {
  baseline.validate();
  if (window.size() < baseline.min_window)
    throw Error(ErrorKind::kWindowTooSmall, "window of " + std::to_string(window.size()) + " below minimum " +
                                                std::to_string(baseline.min_window));
  const auto w = histogram(window);
  DriftResult r;
  double fb = 0, fw = 0;
  for (int k = 0; k < kDriftBins; ++k) {
    fb += baseline.histogram[static_cast<std::size_t>(k)];
    fw += w[static_cast<std::size_t>(k)];
    r.ks = std::max(r.ks, std::abs(fb - fw));
  }
  r.alert = r.ks > baseline.threshold;
  if (r.alert) {
    char detail[64];
    std::snprintf(detail, sizeof detail, "ks=%.6f n=%zu", r.ks, window.size());
    r.incident = make_incident(Trigger::kDriftAlert, std::nullopt, detail);
  }
  return r;
}

DriftMonitor::DriftMonitor(DriftBaseline baseline, std::size_t window_size)
    : baseline_(std::move(baseline)), window_size_(window_size) {
  baseline_.validate();
  if (window_size_ < baseline_.min_window) throw Error(ErrorKind::kWindowTooSmall, "monitor window below minimum");
  window_.reserve(window_size_);
}

std::optional<DriftResult> DriftMonitor::push(double confidence) {
  bin_of(confidence);
  window_.push_back(confidence);
  if (window_.size() < window_size_) return std::nullopt;
  DriftResult r = drift_check(baseline_, window_);
  window_.clear();
  return r;
}

void to_json(nlohmann::json& j, const GatePolicy& p) {
  std::vector<std::string> required;
  for (AttackKind k : p.required) required.emplace_back(attacks::to_string(k));
  j = nlohmann::json{{"min_perf_ratio", p.min_perf_ratio},
                     {"max_fgsm_epsilon", p.max_fgsm_epsilon},
                     {"max_deepfool_overshoot", p.max_deepfool_overshoot},
                     {"required", required},
                     {"mode", p.mode == GateMode::kPerAttack ? "per-attack" : "aggregate"},
                     {"subset", p.subset}};
}

void from_json(const nlohmann::json& j, GatePolicy& p) {
  if (j.contains("min_perf_ratio")) j.at("min_perf_ratio").get_to(p.min_perf_ratio);
  if (j.contains("max_fgsm_epsilon")) j.at("max_fgsm_epsilon").get_to(p.max_fgsm_epsilon);
  if (j.contains("max_deepfool_overshoot")) j.at("max_deepfool_overshoot").get_to(p.max_deepfool_overshoot);
  if (j.contains("required")) {
    p.required.clear();
    for (const auto& k : j.at("required")) p.required.push_back(attacks::parse_attack_kind(k.get<std::string>()));
  }
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "per-attack") {
      p.mode = GateMode::kPerAttack;
    } else if (m == "aggregate") {
      p.mode = GateMode::kAggregate;
    } else {
      throw Error(ErrorKind::kInvalidConfig, "unknown gate mode '" + m + "'");
    }
  }
  if (j.contains("subset")) j.at("subset").get_to(p.subset);
  p.validate();
}

void to_json(nlohmann::json& j, const GateVerdict& v) {
  nlohmann::json ratios = nlohmann::json::object();
  for (const auto& [label, r] : v.ratios) ratios[label] = r;
  nlohmann::json reasons = nlohmann::json::array();
  for (const auto& r : v.reasons) reasons.push_back({{"attack", r.attack}, {"perf", r.perf}, {"ratio", r.ratio}});
  j = nlohmann::json{{"verdict", v.verdict()}, {"perf_clean", v.perf_clean}, {"ratios", ratios}, {"reasons", reasons}};
}

void to_json(nlohmann::json& j, const IncidentRecord& r) {
  j = nlohmann::json{{"timestamp", r.timestamp},
                     {"trigger", to_string(r.trigger)},
                     {"action", to_string(r.action)},
                     {"record_index", r.record_index ? nlohmann::json(*r.record_index) : nlohmann::json(nullptr)},
                     {"detail", r.detail}};
}

void from_json(const nlohmann::json& j, IncidentRecord& r) {
  j.at("timestamp").get_to(r.timestamp);
  r.trigger = parse_trigger(j.at("trigger").get<std::string>());
  r.action = parse_action(j.at("action").get<std::string>());
  r.record_index.reset();
  if (j.contains("record_index") && !j.at("record_index").is_null()) r.record_index = j.at("record_index").get<std::uint64_t>();
  if (j.contains("detail")) j.at("detail").get_to(r.detail);
  if (r.trigger != Trigger::kManual && r.action != default_action(r.trigger))
    throw Error(ErrorKind::kFormat, "incident action does not match its trigger");
}

void to_json(nlohmann::json& j, const DriftBaseline& b) {
  j = nlohmann::json{{"histogram", b.histogram},
                     {"count", b.count},
                     {"threshold", b.threshold},
                     {"min_window", b.min_window}};
}

void from_json(const nlohmann::json& j, DriftBaseline& b) {
  j.at("histogram").get_to(b.histogram);
  j.at("count").get_to(b.count);
  j.at("threshold").get_to(b.threshold);
  j.at("min_window").get_to(b.min_window);
  b.validate();
}

}  // namespace secmlops::govern
