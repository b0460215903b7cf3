#pragma once

// End-to-end experiment plumbing shared by the command-line tool and the
// acceptance harness: config loading and digests, data preparation with
// optional poisoning and screening, defended training, attack-suite
// evaluation, the gate + ledger pipeline, and the drift replay.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "secmlops/attacks.hpp"
#include "secmlops/defenses.hpp"
#include "secmlops/detector.hpp"
#include "secmlops/govern.hpp"
#include "secmlops/ledger.hpp"
#include "secmlops/metrics.hpp"
#include "secmlops/synthdata.hpp"

namespace secmlops::experiment {

struct ScreenSettings {
  bool enabled = true;
  double threshold = 0.25;
  bool operator==(const ScreenSettings&) const = default;
};

struct DriftSettings {
  double threshold = 0.15;
  std::size_t min_window = 200;
  std::size_t window = 500;
  std::size_t windows = 4;
  double shift = 0.0;  // added to replayed confidences, clamped to [0,1]
  bool operator==(const DriftSettings&) const = default;
};

struct ExperimentConfig {
  synthdata::DatasetConfig dataset;
  detector::DetectorConfig detector;
  detector::TrainConfig train;
  defenses::DefenseStack defenses;
  std::optional<attacks::PoisonSpec> poison;
  std::vector<attacks::AttackSpec> attacks;
  govern::GatePolicy gate;
  metrics::EvaluateOptions evaluation;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> approvals{"R3", "R8"};
  ScreenSettings screen;
  DriftSettings drift;
  std::filesystem::path output_dir = "out";

  void validate() const;
};

// Tuned desk-scale defaults: the full defense stack and the FGSM/DeepFool
// suite at the policy caps.
ExperimentConfig default_config();

// Missing keys take the defaults; output_dir resolves against the config
// file's directory. Throws Error(kInvalidConfig) on schema violations.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);

// Every field except output_dir, with sorted keys.
nlohmann::json canonical_config(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);

struct PreparedData {
  synthdata::Dataset dataset;  // poisoned when the config asks for it
  std::vector<attacks::LabelFlip> flips;
  std::optional<govern::ScreenResult> screen;
};

// Generates the dataset, applies label poisoning to the train split and
// screens the incoming (non-golden) train labels against the golden split.
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

// Trains from make_model(detector, seed) with the configured defense stack.
defenses::StackResult train_model(const ExperimentConfig& config, const synthdata::Dataset& dataset,
                                  std::uint64_t seed);

// "clean" or "dp(gamma=0.1)" prefixed onto an attack label.
std::string attack_label(const ExperimentConfig& config, const std::string& attack);

// Clean test report first, then one report per configured attack.
std::vector<metrics::MetricReport> evaluate_suite(const ExperimentConfig& config, const detector::DetectorModel& model,
                                                  const synthdata::Dataset& dataset);

struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path metrics() const { return root / "metrics"; }
  std::filesystem::path tables() const { return root / "tables"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path ledger() const { return root / "ledger.jsonl"; }
  std::filesystem::path incidents() const { return root / "incidents.jsonl"; }
};

// "seed0-clean", "seed0-fgsm-eps0.03", ...
std::string report_stem(std::uint64_t seed, std::size_t index, const ExperimentConfig& config);

struct PipelineResult {
  std::uint64_t seed = 0;
  bool quarantined = false;
  std::optional<govern::ScreenResult> screen;
  std::vector<metrics::MetricReport> reports;
  std::optional<govern::GateVerdict> verdict;
  std::optional<ledger::LedgerRecord> record;
  std::optional<govern::IncidentRecord> incident;

  bool passed() const { return !quarantined && verdict && verdict->pass; }
};

// train -> evaluate(clean) -> evaluate(each attack) -> gate -> ledger append,
// and on failure a rollback recommendation recorded as an incident. A
// quarantined dataset stops before training with a poison-quarantine
// incident.
PipelineResult pipeline_run(const ExperimentConfig& config, std::uint64_t seed, const OutputLayout& out,
                            std::span<const std::uint8_t> key);

void append_incident(const std::filesystem::path& file, const govern::IncidentRecord& incident);
std::vector<govern::IncidentRecord> read_incidents(const std::filesystem::path& file);

// Decoded detection scores over the given scenes.
std::vector<double> confidence_pool(const ExperimentConfig& config, const detector::DetectorModel& model,
                                    const synthdata::Dataset& dataset, std::span<const int> scene_ids);

// Draws n values with replacement and adds shift, clamped to [0,1].
std::vector<double> replay_window(std::span<const double> pool, std::size_t n, double shift, Rng& rng);

struct MonitorResult {
  govern::DriftBaseline baseline;
  std::vector<govern::DriftResult> windows;
};

// Baseline from the validation scenes, windows replayed from the test scenes.
MonitorResult monitor_sim(const ExperimentConfig& config, const detector::DetectorModel& model,
                          const synthdata::Dataset& dataset, std::uint64_t seed);

// Loads every metrics/*.json report and orders the rows by strategy, then
// attack (clean first).
std::vector<metrics::MetricReport> load_reports(const std::filesystem::path& metrics_dir);
std::string aggregate_table(std::span<const metrics::MetricReport> reports);

void write_text(const std::filesystem::path& file, const std::string& text);
std::string read_text(const std::filesystem::path& file);

void to_json(nlohmann::json& j, const ExperimentConfig& c);

}  // namespace secmlops::experiment
