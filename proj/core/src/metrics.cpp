#include "secmlops/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "secmlops/attacks.hpp"
#include "secmlops/detector.hpp"
#include "secmlops/digest.hpp"
#include "secmlops/error.hpp"

namespace secmlops::metrics {

Box Detection::box() const {
  return {center_row - 0.5 * height, center_col - 0.5 * width, center_row + 0.5 * height,
          center_col + 0.5 * width};
}

bool SubsetFilter::contains(const PedestrianGT& gt) const {
  if (gt.visibility < visibility_min) return false;
  if (visibility_max_inclusive ? gt.visibility > visibility_max : gt.visibility >= visibility_max) return false;
  return gt.height >= height_min && gt.height <= height_max;
}

Preset parse_preset(std::string_view name) {
  if (name == "desk") return Preset::kDesk;
  if (name == "canonical") return Preset::kCanonical;
  throw Error(ErrorKind::kInvalidConfig, "unknown subset preset '" + std::string(name) + "'");
}

std::string_view to_string(Preset preset) { return preset == Preset::kDesk ? "desk" : "canonical"; }

std::vector<SubsetFilter> subset_presets(Preset preset) {
  constexpr double kInf = 1e300;
  if (preset == Preset::kCanonical) {
    return {
        {"Reasonable", 0.65, kInf, true, 50, kInf},
        {"Small", 0.65, kInf, true, 50, 75},
        {"Heavy", 0.25, 0.65, true, 50, kInf},
        {"All", 0.2, kInf, true, 20, kInf},
    };
  }
  return {
      {"Reasonable", 0.65, kInf, true, 12, kInf},
      {"Small", 0.65, kInf, true, 12, 18},
      {"Heavy", 0.25, 0.65, false, 12, kInf},
      {"All", 0.2, kInf, true, 5, kInf},
  };
}

SubsetFilter subset(Preset preset, std::string_view name) {
  for (auto& s : subset_presets(preset))
    if (s.name == name) return s;
  throw Error(ErrorKind::kUnknownId, "unknown subset '" + std::string(name) + "'");
}

MatchResult match(std::span<const Detection> dets, std::span<const PedestrianGT> gts,
                  const SubsetFilter* subset, double iou_threshold) {
  MatchResult out;
  out.detections.assign(dets.size(), Outcome::kFalsePositive);
  out.gt_matched.assign(gts.size(), false);
  out.gt_ignored.resize(gts.size());
  std::vector<Box> gt_boxes(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    out.gt_ignored[g] = gts[g].ignore || (subset && !subset->contains(gts[g]));
    gt_boxes[g] = gts[g].box();
  }

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  for (std::size_t d : order) {
    const Box db = dets[d].box();
    double best = -1;
    std::ptrdiff_t best_gt = -1;
    bool hits_ignored = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = synthdata::iou(db, gt_boxes[g]);
      if (o < iou_threshold) continue;
      if (out.gt_ignored[g]) {
        hits_ignored = true;
        continue;
      }
      if (out.gt_matched[g]) continue;
      if (o > best) {
        best = o;
        best_gt = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_gt >= 0) {
      out.gt_matched[static_cast<std::size_t>(best_gt)] = true;
      out.detections[d] = Outcome::kTruePositive;
      ++out.tp;
    } else if (hits_ignored) {
      out.detections[d] = Outcome::kIgnored;
    } else {
      ++out.fp;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!out.gt_ignored[g] && !out.gt_matched[g]) ++out.fn;
  return out;
}

Curve build_curve(std::span<const ImageResult> images) {
  if (images.empty()) throw Error(ErrorKind::kInvalidConfig, "curve needs at least one image");
  struct Scored {
    double score;
    Outcome outcome;
  };
  std::vector<Scored> all;
  int num_gt = 0;
  for (const ImageResult& img : images) {
    if (img.scores.size() != img.match.detections.size())
      throw Error(ErrorKind::kShapeMismatch, "scores and match outcomes differ in length");
    for (std::size_t i = 0; i < img.scores.size(); ++i) all.push_back({img.scores[i], img.match.detections[i]});
    num_gt += img.match.tp + img.match.fn;
  }
  if (num_gt == 0) throw Error(ErrorKind::kNoGroundTruth, "no ground truth in subset");
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  Curve curve;
  curve.num_images = static_cast<int>(images.size());
  curve.num_gt = num_gt;
  const double n = static_cast<double>(images.size());
  const double sentinel = all.empty() ? 1.0 : std::nextafter(all.front().score, HUGE_VAL);
  curve.points.push_back({sentinel, 0.0, 1.0, 0, 0, num_gt});

  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double c = all[i].score;
    for (; i < all.size() && all[i].score == c; ++i) {
      if (all[i].outcome == Outcome::kTruePositive) ++tp;
      if (all[i].outcome == Outcome::kFalsePositive) ++fp;
    }
    const int fn = num_gt - tp;
    curve.points.push_back({c, fp / n, static_cast<double>(fn) / num_gt, tp, fp, fn});
  }
  return curve;
}

std::array<double, 9> fppi_references() {
  std::array<double, 9> refs{};
  for (int k = 0; k < 9; ++k) refs[k] = std::pow(10.0, -2.0 + k / 4.0);
  return refs;
}

double lamr(const Curve& curve) {
  if (curve.points.empty()) throw Error(ErrorKind::kInvalidCurve, "empty curve");
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& prev = curve.points[i - 1];
    const auto& cur = curve.points[i];
    if (!(cur.threshold < prev.threshold) || cur.fppi < prev.fppi || cur.miss_rate > prev.miss_rate)
      throw Error(ErrorKind::kInvalidCurve, "curve is not monotone at point " + std::to_string(i));
  }
  double log_sum = 0;
  for (double f : fppi_references()) {
    double mr = 1.0;
    for (const auto& p : curve.points)
      if (p.fppi <= f) mr = std::min(mr, p.miss_rate);
    log_sum += std::log(std::clamp(mr, kMissRateFloor, 1.0));
  }
  return std::exp(log_sum / 9.0);
}

MetricReport score_detections(std::span<const std::vector<Detection>> detections,
                              std::span<const std::vector<PedestrianGT>> gts, const EvaluateOptions& options) {
  if (detections.size() != gts.size())
    throw Error(ErrorKind::kShapeMismatch, "detections and ground truth differ in image count");
  MetricReport report;
  report.num_images = static_cast<int>(detections.size());
  report.config_digest = options.config_digest;
  for (const SubsetFilter& filter : subset_presets(options.preset)) {
    std::vector<ImageResult> images;
    images.reserve(detections.size());
    for (std::size_t i = 0; i < detections.size(); ++i) {
      ImageResult img;
      img.scores.reserve(detections[i].size());
      for (const auto& d : detections[i]) img.scores.push_back(d.score);
      img.match = match(detections[i], gts[i], &filter, options.match_iou);
      images.push_back(std::move(img));
    }
    try {
      Curve curve = build_curve(images);
      report.lamr[filter.name] = lamr(curve);
      report.curves[filter.name] = std::move(curve);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoGroundTruth) throw;
      report.lamr[filter.name] = std::nullopt;
    }
  }
  return report;
}

MetricReport evaluate(const detector::DetectorModel& model, const synthdata::Dataset& dataset,
                      std::span<const int> scene_ids, std::span<const attacks::AttackSpec> attack_chain,
                      const EvaluateOptions& options) {
  if (scene_ids.empty()) throw Error(ErrorKind::kEmptySplit, "evaluation split is empty");
  const detector::DecodeOptions decode_options{options.score_threshold, options.nms_iou, options.max_candidates};
  std::vector<std::vector<Detection>> detections;
  std::vector<std::vector<PedestrianGT>> gts;
  detections.reserve(scene_ids.size());
  gts.reserve(scene_ids.size());
  for (int id : scene_ids) {
    const auto& labels = dataset.gts(id);
    diffnet::Tensor input = detector::scene_tensor(dataset.scene(id));
    if (!attack_chain.empty()) input = attacks::apply_chain(model, input, labels, attack_chain);
    detections.push_back(detector::decode(detector::forward(model, input), model.config.downsample, decode_options));
    gts.push_back(labels);
  }
  MetricReport report = score_detections(detections, gts, options);
  report.attack = attacks::chain_label(attack_chain);
  return report;
}

double validation_lamr(const detector::DetectorModel& model, const synthdata::Dataset& dataset,
                       std::span<const int> scene_ids, const EvaluateOptions& options) {
  const MetricReport report = evaluate(model, dataset, scene_ids, {}, options);
  const auto& value = report.lamr.at("Reasonable");
  return value ? *value : 1.0;
}

void to_json(nlohmann::json& j, const SubsetFilter& s) {
  j = nlohmann::json{{"name", s.name},
                     {"visibility_min", s.visibility_min},
                     {"visibility_max", s.visibility_max},
                     {"visibility_max_inclusive", s.visibility_max_inclusive},
                     {"height_min", s.height_min},
                     {"height_max", s.height_max}};
}

void from_json(const nlohmann::json& j, SubsetFilter& s) {
  j.at("name").get_to(s.name);
  j.at("visibility_min").get_to(s.visibility_min);
  j.at("visibility_max").get_to(s.visibility_max);
  j.at("visibility_max_inclusive").get_to(s.visibility_max_inclusive);
  j.at("height_min").get_to(s.height_min);
  j.at("height_max").get_to(s.height_max);
}

void to_json(nlohmann::json& j, const Curve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points)
    pts.push_back({{"c", p.threshold}, {"fppi", p.fppi}, {"mr", p.miss_rate}, {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn}});
  j = nlohmann::json{{"num_images", c.num_images}, {"num_gt", c.num_gt}, {"points", std::move(pts)}};
}

void from_json(const nlohmann::json& j, Curve& c) {
  j.at("num_images").get_to(c.num_images);
  j.at("num_gt").get_to(c.num_gt);
  c.points.clear();
  for (const auto& p : j.at("points")) {
    c.points.push_back({p.at("c").get<double>(), p.at("fppi").get<double>(), p.at("mr").get<double>(),
                        p.at("tp").get<int>(), p.at("fp").get<int>(), p.at("fn").get<int>()});
  }
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::json lamrs = nlohmann::json::object();
  for (const auto& [name, v] : r.lamr) lamrs[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  j = nlohmann::json{{"attack", r.attack},
                     {"strategy", r.strategy},
                     {"num_images", r.num_images},
                     {"lamr", std::move(lamrs)},
                     {"curves", r.curves},
                     {"config_digest", r.config_digest}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  j.at("attack").get_to(r.attack);
  r.strategy = j.value("strategy", std::string("none"));
  j.at("num_images").get_to(r.num_images);
  r.lamr.clear();
  for (const auto& [name, v] : j.at("lamr").items())
    r.lamr[name] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  j.at("curves").get_to(r.curves);
  j.at("config_digest").get_to(r.config_digest);
}

void to_json(nlohmann::json& j, const EvaluateOptions& o) {
  j = nlohmann::json{{"preset", std::string(to_string(o.preset))},
                     {"score_threshold", o.score_threshold},
                     {"nms_iou", o.nms_iou},
                     {"match_iou", o.match_iou},
                     {"max_candidates", o.max_candidates}};
}

void from_json(const nlohmann::json& j, EvaluateOptions& o) {
  if (j.contains("preset")) o.preset = parse_preset(j.at("preset").get<std::string>());
  if (j.contains("score_threshold")) j.at("score_threshold").get_to(o.score_threshold);
  if (j.contains("nms_iou")) j.at("nms_iou").get_to(o.nms_iou);
  if (j.contains("match_iou")) j.at("match_iou").get_to(o.match_iou);
  if (j.contains("max_candidates")) j.at("max_candidates").get_to(o.max_candidates);
}

std::string report_digest(const MetricReport& report) { return sha256_hex(nlohmann::json(report).dump()); }

std::string table_csv(std::span<const TableRow> rows) {
  std::ostringstream out;
  out << "attack,strategy";
  for (auto name : kSubsetNames) out << ',' << name;
  out << '\n';
  char buf[32];
  for (const TableRow& row : rows) {
    out << row.attack << ',' << row.strategy;
    for (auto name : kSubsetNames) {
      out << ',';
      std::optional<double> value;
      if (row.report) {
        const auto it = row.report->lamr.find(std::string(name));
        if (it != row.report->lamr.end()) value = it->second;
      }
      if (value) {
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *value);
        out << buf;
      } else {
        out << "NA";
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string curve_csv(const Curve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "c,fppi,mr\n";
  for (const auto& p : curve.points) out << p.threshold << ',' << p.fppi << ',' << p.miss_rate << '\n';
  return out.str();
}

}  // namespace secmlops::metrics
