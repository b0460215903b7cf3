#include <cmath>

#include "doctest.h"
#include "lamr_oracle.hpp"
#include "secmlops/error.hpp"
#include "secmlops/metrics.hpp"

using namespace secmlops;
using namespace secmlops::metrics;

namespace {

PedestrianGT gt_box(double row, double col, double h) { return {row, col, h, 0.41 * h}; }
Detection det_of(const PedestrianGT& g, double score) { return {g.center_row, g.center_col, g.height, g.width, score}; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("matching basics") {
    const std::vector<PedestrianGT> gts{gt_box(20, 20, 20), gt_box(30, 80, 16)};
    auto m = match({}, gts);
    CHECK(m.tp == 0);
    CHECK(m.fp == 0);
    CHECK(m.fn == 2);
    const std::vector<Detection> one{det_of(gts[0], 0.9)};
    m = match(one, std::vector<PedestrianGT>{gts[0]});
    CHECK(m.tp == 1);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
  }

  TEST_CASE("greedy matching gives the GT to the higher score") {
    // Same height; a column shift d gives IoU (w-d)/(w+d).
    const PedestrianGT g = gt_box(30, 60, 20);
    const double w = g.width;
    auto shifted = [&](double iou, double score) {
      const double d = w * (1 - iou) / (1 + iou);
      return Detection{g.center_row, g.center_col + d, g.height, g.width, score};
    };
    const std::vector<Detection> dets{shifted(0.6, 0.8), shifted(0.7, 0.9)};
    CHECK(synthdata::iou(dets[1].box(), g.box()) == doctest::Approx(0.7));
    const auto m = match(dets, std::vector<PedestrianGT>{g});
    CHECK(m.detections[1] == Outcome::kTruePositive);
    CHECK(m.detections[0] == Outcome::kFalsePositive);
  }

  TEST_CASE("detections on ignored GTs are ignored") {
    PedestrianGT g = gt_box(30, 60, 20);
    g.ignore = true;
    const std::vector<Detection> dets{det_of(g, 0.9)};
    const auto m = match(dets, std::vector<PedestrianGT>{g, gt_box(20, 10, 20)});
    CHECK(m.detections[0] == Outcome::kIgnored);
    CHECK(m.fn == 1);
  }

  TEST_CASE("curve without detections") {
    ImageResult r;
    r.match = match({}, std::vector<PedestrianGT>{gt_box(20, 20, 20)});
    const auto c = build_curve(std::vector<ImageResult>{r});
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].miss_rate == 1.0);
    CHECK(c.points[0].fppi == 0.0);
    CHECK(lamr(c) == 1.0);
  }

  TEST_CASE("fppi is false positives over images") {
    std::vector<ImageResult> images(4);
    const std::vector<PedestrianGT> gts{gt_box(20, 20, 20)};
    const std::vector<Detection> clutter{det_of(gt_box(40, 100, 20), 0.6)};
    for (int i = 0; i < 4; ++i) {
      const auto& d = i < 2 ? clutter : std::vector<Detection>{};
      for (const auto& x : d) images[i].scores.push_back(x.score);
      images[i].match = match(d, gts);
    }
    const auto c = build_curve(images);
    CHECK(c.points.back().fppi == 0.5);
  }

  TEST_CASE("curve matches a per-threshold recount") {
    Rng rng(31);
    for (int trial = 0; trial < 60; ++trial) {
      const auto images = lamr_oracle::random_instance(rng);
      const auto curve = lamr_oracle::library_curve(images);
      for (const auto& p : curve.points) {
        const auto c = lamr_oracle::count_at(images, p.threshold);
        CHECK(p.tp == c.tp);
        CHECK(p.fp == c.fp);
        CHECK(p.fn == c.fn);
      }
      CHECK(lamr(curve) == doctest::Approx(lamr_oracle::lamr(images)).epsilon(1e-12));
    }
  }

  TEST_CASE("laMR limits") {
    const std::vector<PedestrianGT> gts{gt_box(20, 20, 20), gt_box(30, 80, 16)};
    ImageResult r;
    const std::vector<Detection> dets{det_of(gts[0], 0.9), det_of(gts[1], 0.8)};
    r.scores = {0.9, 0.8};
    r.match = match(dets, gts);
    CHECK(lamr(build_curve(std::vector<ImageResult>{r})) == doctest::Approx(kMissRateFloor).epsilon(1e-12));
  }

  TEST_CASE("constant miss rate gives itself") {
    Curve c;
    c.num_images = 10;
    c.num_gt = 10;
    c.points.push_back({1.0, 0.0, 0.1, 9, 0, 1});
    c.points.push_back({0.5, 2.0, 0.1, 9, 20, 1});
    CHECK(lamr(c) == doctest::Approx(0.1).epsilon(1e-14));
  }

  TEST_CASE("non-monotone curves are rejected") {
    Curve c;
    c.points.push_back({1.0, 0.0, 0.5, 0, 0, 0});
    c.points.push_back({0.5, 0.1, 0.7, 0, 0, 0});
    CHECK_THROWS_AS(lamr(c), Error);
  }

  TEST_CASE("no ground truth is an error") {
    ImageResult r;
    CHECK_THROWS_AS(build_curve(std::vector<ImageResult>{r}), Error);
  }

  TEST_CASE("subset presets") {
    const auto subsets = subset_presets(Preset::kDesk);
    REQUIRE(subsets.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(subsets[i].name == kSubsetNames[i]);
    CHECK(subset(Preset::kCanonical, "Reasonable").height_min == 50);
    CHECK(parse_preset("canonical") == Preset::kCanonical);
  }

  TEST_CASE("report json round trip") {
    const std::vector<std::vector<Detection>> dets{{det_of(gt_box(20, 20, 20), 0.7)}};
    const std::vector<std::vector<PedestrianGT>> gts{{gt_box(20, 20, 20), gt_box(30, 90, 20)}};
    EvaluateOptions o;
    o.config_digest = "abc";
    const MetricReport r = score_detections(dets, gts, o);
    const nlohmann::json j = r;
    const MetricReport back = j.get<MetricReport>();
    CHECK(back.lamr == r.lamr);
    CHECK(back.strategy == "none");
    CHECK(report_digest(back) == report_digest(r));
  }
}
