#include <benchmark/benchmark.h>

#include <filesystem>

#include "secmlops/attacks.hpp"
#include "secmlops/detector.hpp"
#include "secmlops/ledger.hpp"
#include "secmlops/metrics.hpp"
#include "secmlops/synthdata.hpp"

using namespace secmlops;

namespace {

const synthdata::Dataset& dataset() {
  static const auto ds = [] {
    synthdata::DatasetConfig c;
    c.train_scenes = 20;
    c.val_scenes = 4;
    c.test_scenes = 8;
    return synthdata::generate_dataset(c, 1);
  }();
  return ds;
}

detector::DetectorConfig tuned() {
  detector::DetectorConfig c;
  c.neck_layers = 3;
  c.positive_weight = 10;
  c.center_fraction = 0.5;
  c.center_neighborhood = true;
  return c;
}

void BM_Forward(benchmark::State& state) {
  const auto model = detector::make_model(tuned(), 1);
  const auto& scene = dataset().scene(0);
  for (auto _ : state) benchmark::DoNotOptimize(detector::forward(model, scene));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_BatchGradient(benchmark::State& state) {
  const auto model = detector::make_model(tuned(), 1);
  std::vector<detector::Sample> batch;
  for (int i = 0; i < 8; ++i) batch.push_back({dataset().scene(i), dataset().gts(i)});
  diffnet::ParamGrads grads;
  for (auto _ : state) benchmark::DoNotOptimize(detector::batch_gradient(model, batch, 1.0, grads));
}
BENCHMARK(BM_BatchGradient)->Unit(benchmark::kMillisecond);

void BM_Fgsm(benchmark::State& state) {
  const auto model = detector::make_model(tuned(), 1);
  const auto x = detector::scene_tensor(dataset().scene(0));
  for (auto _ : state) benchmark::DoNotOptimize(attacks::fgsm(model, x, dataset().gts(0), {0.03}));
}
BENCHMARK(BM_Fgsm)->Unit(benchmark::kMicrosecond);

void BM_Evaluate(benchmark::State& state) {
  const auto model = detector::make_model(tuned(), 1);
  const auto& ds = dataset();
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate(model, ds, ds.split.test, {}, {}));
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);

ledger::LedgerPayload payload(int n) {
  ledger::LedgerPayload p;
  p.model_id = "model-" + std::to_string(n);
  p.dataset_digest = sha256_hex("d");
  p.config_digest = sha256_hex("c");
  p.model_digest = sha256_hex("m" + std::to_string(n));
  p.report_digest = sha256_hex("r");
  p.gate_verdict = "pass";
  p.approvals = {"R3", "R8"};
  p.timestamp = "2026-01-01T00:00:00Z";
  return p;
}

void BM_LedgerVerify(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "secmlops_bench_ledger";
  std::filesystem::remove_all(dir);
  ledger::Ledger book(dir / "ledger.jsonl");
  const std::vector<std::uint8_t> key(32, 7);
  for (int i = 0; i < state.range(0); ++i) book.append(payload(i), key);
  const auto lines = book.lines();
  for (auto _ : state) benchmark::DoNotOptimize(ledger::verify_lines(lines, key));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_LedgerVerify)->Arg(20)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
