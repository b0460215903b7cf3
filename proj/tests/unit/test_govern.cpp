#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "secmlops/error.hpp"
#include "secmlops/govern.hpp"
#include "secmlops/rng.hpp"

using namespace secmlops;
using namespace secmlops::govern;
using attacks::AttackSpec;

namespace {

metrics::MetricReport report_with(double lamr) {
  metrics::MetricReport r;
  r.lamr["Reasonable"] = lamr;
  return r;
}

std::vector<AttackedReport> suite(double fgsm_lamr, double deepfool_lamr) {
  return {{AttackSpec::make_fgsm(0.03), report_with(fgsm_lamr)},
          {AttackSpec::make_deepfool(0.03), report_with(deepfool_lamr)}};
}

double ks_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pts = a;
  pts.insert(pts.end(), b.begin(), b.end());
  double d = 0;
  for (double x : pts) {
    const double fa = std::count_if(a.begin(), a.end(), [&](double v) { return v <= x; }) / double(a.size());
    const double fb = std::count_if(b.begin(), b.end(), [&](double v) { return v <= x; }) / double(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

std::vector<double> beta_sample(Rng& rng, std::size_t n, double shift = 0.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::clamp(rng.beta(5, 2) * 0.7 + shift, 0.0, 1.0);
  return v;
}

synthdata::DatasetConfig screen_config() {
  synthdata::DatasetConfig c;
  c.train_scenes = 300;
  c.val_scenes = 1;
  c.test_scenes = 1;
  return c;
}

}  // namespace

TEST_SUITE("govern") {
  TEST_CASE("gate worked examples") {
    const auto pass = evaluate_gate(report_with(0.114), suite(0.149, 0.12), {});
    CHECK(pass.pass);
    CHECK(pass.ratios[0].second == doctest::Approx(0.851 / 0.886));
    CHECK(std::round(pass.ratios[0].second * 1000) / 1000 == 0.960);

    const auto fail = evaluate_gate(report_with(0.099), suite(0.356, 0.1), {});
    CHECK(!fail.pass);
    REQUIRE(fail.reasons.size() == 1);
    CHECK(fail.reasons[0].attack == "fgsm(eps=0.03)");
    CHECK(std::round(fail.reasons[0].ratio * 1000) / 1000 == 0.715);
    CHECK(fail.verdict() == "fail");
  }

  TEST_CASE("no degradation always passes") {
    for (double ratio : {0.1, 0.5, 1.0}) {
      GatePolicy p;
      p.min_perf_ratio = ratio;
      CHECK(evaluate_gate(report_with(0.3), suite(0.3, 0.3), p).pass);
    }
  }

  TEST_CASE("aggregate mode averages the attacked performance") {
    GatePolicy p;
    p.mode = GateMode::kAggregate;
    // perf 0.9 clean; 0.6 and 0.9 attacked -> mean 0.75 >= 0.72
    CHECK(evaluate_gate(report_with(0.1), suite(0.4, 0.1), p).pass);
    p.mode = GateMode::kPerAttack;
    CHECK(!evaluate_gate(report_with(0.1), suite(0.4, 0.1), p).pass);
  }

  TEST_CASE("gate preconditions") {
    const std::vector<AttackedReport> only_fgsm{{AttackSpec::make_fgsm(0.03), report_with(0.1)}};
    try {
      evaluate_gate(report_with(0.1), only_fgsm, {});
      FAIL("expected missing attack");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMissingRequiredAttack);
    }
    auto over = suite(0.1, 0.1);
    over[0].attack = AttackSpec::make_fgsm(0.05);
    CHECK_THROWS_AS(evaluate_gate(report_with(0.1), over, {}), Error);
    over = suite(0.1, 0.1);
    over.push_back({AttackSpec::make_pgd(0.04, 0.01, 4), report_with(0.1)});
    CHECK_THROWS_AS(evaluate_gate(report_with(0.1), over, {}), Error);
  }

  TEST_CASE("missing subset counts as zero performance") {
    metrics::MetricReport empty;
    CHECK(performance(empty) == 0.0);
    CHECK(performance(report_with(0.25)) == 0.75);
  }

  TEST_CASE("ks statistic agrees with a brute-force scan") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> a(1 + rng.below(30)), b(1 + rng.below(30));
      for (auto& x : a) x = std::round(rng.uniform(0, 10));
      for (auto& x : b) x = std::round(rng.uniform(0, 10) + 1);
      CHECK(ks_statistic(a, b) == doctest::Approx(ks_oracle(a, b)).epsilon(1e-14));
    }
    const std::vector<double> same{1, 2, 3};
    CHECK(ks_statistic(same, same) == 0.0);
  }

  TEST_CASE("poison screen on identical data accepts") {
    const auto ds = synthdata::generate_dataset(screen_config(), 1);
    const auto golden = golden_stats(ds, ds.split.golden);
    const auto r = screen_poison(ds, ds.split.golden, golden);
    CHECK(r.ks == 0.0);
    CHECK(!r.quarantine);
  }

  TEST_CASE("poison screen calibration and power") {
    int false_alarms = 0, caught = 0;
    for (std::uint64_t t = 0; t < 20; ++t) {
      const auto ds = synthdata::generate_dataset(screen_config(), 100 + t);
      const auto golden = golden_stats(ds, ds.split.golden);
      const auto fresh = synthdata::generate_dataset(screen_config(), 500 + t);
      false_alarms += screen_poison(fresh, fresh.split.train, golden).quarantine;
      const auto poisoned =
          attacks::poison_labels(ds, {1.0, t}, attacks::candidate_map(ds, ds.split.train)).dataset;
      caught += screen_poison(poisoned, poisoned.split.train, golden).quarantine;
    }
    CHECK(false_alarms <= 2);
    CHECK(caught >= 18);
  }

  TEST_CASE("golden set must be large enough") {
    const auto ds = synthdata::generate_dataset(screen_config(), 1);
    const std::vector<int> few(ds.split.golden.begin(), ds.split.golden.begin() + 3);
    CHECK_THROWS_AS(golden_stats(ds, few), Error);
  }

  TEST_CASE("drift on the baseline sample itself is zero") {
    Rng rng(2);
    const auto base = beta_sample(rng, 1000);
    const auto b = build_baseline(base);
    const auto r = drift_check(b, base);
    CHECK(r.ks == 0.0);
    CHECK(!r.alert);
    CHECK(!r.incident);
  }

  TEST_CASE("a +0.3 shift alerts and a clean replay does not") {
    Rng rng(3);
    const auto b = build_baseline(beta_sample(rng, 2000));
    int alerts = 0, false_alarms = 0;
    for (int t = 0; t < 20; ++t) {
      const auto shifted = drift_check(b, beta_sample(rng, 500, 0.3));
      alerts += shifted.alert;
      if (shifted.alert) {
        REQUIRE(shifted.incident);
        CHECK(shifted.incident->trigger == Trigger::kDriftAlert);
        CHECK(shifted.incident->action == Action::kSafeMode);
      }
      false_alarms += drift_check(b, beta_sample(rng, 500)).alert;
    }
    CHECK(alerts >= 18);
    CHECK(false_alarms <= 2);
  }

  TEST_CASE("unreachable threshold never alerts") {
    Rng rng(4);
    const auto b = build_baseline(beta_sample(rng, 1000), 1.0);
    for (int t = 0; t < 5; ++t) CHECK(!drift_check(b, beta_sample(rng, 500, 0.5)).alert);
  }

  TEST_CASE("drift input checks") {
    Rng rng(5);
    const auto b = build_baseline(beta_sample(rng, 1000));
    CHECK_THROWS_AS(drift_check(b, beta_sample(rng, 50)), Error);
    CHECK_THROWS_AS(build_baseline(std::vector<double>{0.5, 1.5}), Error);
    CHECK_THROWS_AS(build_baseline(std::vector<double>{}), Error);
  }

  TEST_CASE("drift monitor emits a result per filled window") {
    Rng rng(6);
    DriftMonitor m(build_baseline(beta_sample(rng, 1000)), 200);
    int results = 0;
    for (double v : beta_sample(rng, 650)) results += m.push(v).has_value();
    CHECK(results == 3);
    CHECK(m.pending() == 50);
  }

  TEST_CASE("incident actions") {
    CHECK(default_action(Trigger::kGateFail) == Action::kRollback);
    CHECK(default_action(Trigger::kDriftAlert) == Action::kSafeMode);
    CHECK(default_action(Trigger::kPoisonQuarantine) == Action::kQuarantine);
    CHECK(make_incident(Trigger::kManual, 3, "operator", Action::kSafeMode).action == Action::kSafeMode);
    CHECK_THROWS_AS(make_incident(Trigger::kGateFail, 3, "x", Action::kSafeMode), Error);
    const auto inc = make_incident(Trigger::kGateFail, 2, "fgsm", std::nullopt, "2026-01-01T00:00:00Z");
    const nlohmann::json j = inc;
    CHECK(j.get<IncidentRecord>() == inc);
    CHECK(utc_timestamp().size() == 20);
  }

  TEST_CASE("policy json") {
    GatePolicy p;
    p.mode = GateMode::kAggregate;
    p.required = {attacks::AttackKind::kFgsm};
    const nlohmann::json j = p;
    CHECK(j.get<GatePolicy>() == p);
    CHECK_THROWS_AS(nlohmann::json({{"mode", "fuzzy"}}).get<GatePolicy>(), Error);
  }
}
