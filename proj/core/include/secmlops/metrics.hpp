#pragma once

// Pedestrian-detection evaluation: greedy matching with ignore regions,
// miss-rate / false-positives-per-image curves, and the log-average miss rate
// over nine FPPI references log-spaced in [1e-2, 1].

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "secmlops/synthdata.hpp"

namespace secmlops::detector {
struct DetectorModel;
}
namespace secmlops::attacks {
struct AttackSpec;
}

namespace secmlops::metrics {

using synthdata::Box;
using synthdata::PedestrianGT;

struct Detection {
  double center_row = 0;
  double center_col = 0;
  double height = 0;
  double width = 0;
  double score = 0;

  Box box() const;
  bool operator==(const Detection&) const = default;
};

struct SubsetFilter {
  std::string name;
  double visibility_min = 0;
  double visibility_max = 1e300;
  bool visibility_max_inclusive = true;
  double height_min = 0;
  double height_max = 1e300;

  bool contains(const PedestrianGT& gt) const;
  bool operator==(const SubsetFilter&) const = default;
};

enum class Preset { kDesk, kCanonical };

Preset parse_preset(std::string_view name);
std::string_view to_string(Preset preset);

inline constexpr std::array<std::string_view, 4> kSubsetNames{"Reasonable", "Small", "Heavy", "All"};

// Reasonable, Small, Heavy, All in that order.
std::vector<SubsetFilter> subset_presets(Preset preset);
SubsetFilter subset(Preset preset, std::string_view name);

enum class Outcome { kTruePositive, kFalsePositive, kIgnored };

struct MatchResult {
  std::vector<Outcome> detections;  // parallel to the input detections
  std::vector<bool> gt_matched;
  std::vector<bool> gt_ignored;  // ignore flag or outside the subset
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

// Greedy by descending score (ties by input order). A detection takes the
// unmatched non-ignored GT with the highest IoU >= iou_threshold; failing
// that it is ignored if it overlaps an ignored GT at >= iou_threshold, and a
// false positive otherwise. subset == nullptr keeps every non-flagged GT.
MatchResult match(std::span<const Detection> dets, std::span<const PedestrianGT> gts,
                  const SubsetFilter* subset = nullptr, double iou_threshold = 0.5);

struct ImageResult {
  std::vector<double> scores;
  MatchResult match;
};

struct CurvePoint {
  double threshold = 0;
  double fppi = 0;
  double miss_rate = 1;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct Curve {
  std::vector<CurvePoint> points;  // descending threshold
  int num_images = 0;
  int num_gt = 0;
};

// Thresholds are the distinct detection scores plus a sentinel just above
// the maximum. Throws Error(kNoGroundTruth) when the images hold no
// non-ignored GT; Error(kInvalidConfig) for zero images.
Curve build_curve(std::span<const ImageResult> images);

inline constexpr double kMissRateFloor = 1e-5;

// FPPI references 10^(-2 + k/4), k = 0..8.
std::array<double, 9> fppi_references();

// MR(f) = min MR over points with FPPI <= f (1 when none), clamped to
// [kMissRateFloor, 1]; laMR = exp(mean ln MR(f)). Throws Error(kInvalidCurve)
// if the curve is not monotone.
double lamr(const Curve& curve);

struct MetricReport {
  std::string attack = "clean";
  std::string strategy = "none";  // defense stack label
  int num_images = 0;
  std::map<std::string, std::optional<double>> lamr;  // absent subset -> nullopt
  std::map<std::string, Curve> curves;
  std::string config_digest;
};

struct EvaluateOptions {
  Preset preset = Preset::kDesk;
  double score_threshold = 0.02;
  double nms_iou = 0.5;
  double match_iou = 0.5;
  std::size_t max_candidates = 100;
  std::string config_digest;
};

// Scores per-image detections on every subset of the preset.
MetricReport score_detections(std::span<const std::vector<Detection>> detections,
                              std::span<const std::vector<PedestrianGT>> gts, const EvaluateOptions& options);

// Attacks each scene with the chain (in order) if non-empty, decodes, and
// scores every subset.
MetricReport evaluate(const detector::DetectorModel& model, const synthdata::Dataset& dataset,
                      std::span<const int> scene_ids, std::span<const attacks::AttackSpec> attack_chain,
                      const EvaluateOptions& options);

// Reasonable-subset laMR of the clean split; used for early stopping.
double validation_lamr(const detector::DetectorModel& model, const synthdata::Dataset& dataset,
                       std::span<const int> scene_ids, const EvaluateOptions& options = {});

void to_json(nlohmann::json& j, const SubsetFilter& s);
void from_json(const nlohmann::json& j, SubsetFilter& s);
void to_json(nlohmann::json& j, const Curve& c);
void from_json(const nlohmann::json& j, Curve& c);
void to_json(nlohmann::json& j, const MetricReport& r);
// config_digest is not serialized.
void to_json(nlohmann::json& j, const EvaluateOptions& o);
void from_json(const nlohmann::json& j, EvaluateOptions& o);
void from_json(const nlohmann::json& j, MetricReport& r);

// SHA-256 of the canonical JSON of the report.
std::string report_digest(const MetricReport& report);

struct TableRow {
  std::string attack;
  std::string strategy;
  const MetricReport* report = nullptr;
};

// attack,strategy,Reasonable,Small,Heavy,All with laMR in percent.
std::string table_csv(std::span<const TableRow> rows);
std::string curve_csv(const Curve& curve);

}  // namespace secmlops::metrics
