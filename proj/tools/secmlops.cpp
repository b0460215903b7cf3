// secmlops: batch front-end over the core library.
//
// Exit codes: 0 ok / gate pass, 2 gate fail or quarantine, 3 ledger invalid,
// 4 config error, 5 runtime error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "secmlops/error.hpp"
#include "secmlops/experiment.hpp"
#include "secmlops/ledger.hpp"
#include "secmlops/threatmodel.hpp"

namespace fs = std::filesystem;
using namespace secmlops;

namespace {

enum Exit { kOk = 0, kGateFail = 2, kLedgerInvalid = 3, kConfigError = 4, kRuntimeError = 5 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_format = "csv") {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "run seed; overrides the config seed list");
  cmd->add_option("--out", c.out, "output directory; overrides output_dir");
  c.format = default_format;
  cmd->add_option("--format", c.format, "output format")->check(CLI::IsMember({"json", "csv", "markdown"}));
}

experiment::ExperimentConfig config_of(const Common& c) {
  experiment::ExperimentConfig cfg = c.config.empty() ? experiment::default_config() : experiment::load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

fs::path out_of(const Common& c) {
  if (!c.out.empty()) return c.out;
  return config_of(c).output_dir;
}

std::string model_stem(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string csv_to_markdown(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  bool header = true;
  for (std::string line; std::getline(in, line);) {
    std::size_t cols = 1;
    out << "| ";
    for (char ch : line) {
      if (ch == ',') {
        out << " | ";
        ++cols;
      } else {
        out << ch;
      }
    }
    out << " |\n";
    if (header) {
      out << '|';
      for (std::size_t i = 0; i < cols; ++i) out << "---|";
      out << '\n';
      header = false;
    }
  }
  return out.str();
}

void print_table(const std::string& csv, const std::string& format, const nlohmann::json& as_json) {
  if (format == "json") {
    std::cout << as_json.dump(2) << '\n';
  } else if (format == "markdown") {
    std::cout << csv_to_markdown(csv);
  } else {
    std::cout << csv;
  }
}

int cmd_gen_data(const Common& c) {
  const auto cfg = config_of(c);
  for (auto seed : cfg.seeds) {
    const auto data = experiment::prepare_data(cfg, seed);
    const fs::path dir = cfg.output_dir / "data" / model_stem(seed);
    synthdata::write_dataset(data.dataset, dir);
    std::cout << dir.string() << ' ' << synthdata::dataset_digest(data.dataset) << '\n';
  }
  return kOk;
}

int cmd_train(const Common& c) {
  const auto cfg = config_of(c);
  const experiment::OutputLayout out{cfg.output_dir};
  int code = kOk;
  for (auto seed : cfg.seeds) {
    const auto data = experiment::prepare_data(cfg, seed);
    if (data.screen && data.screen->quarantine) {
      std::cerr << model_stem(seed) << ": incoming labels quarantined (ks=" << data.screen->ks << ")\n";
      code = kGateFail;
      continue;
    }
    const auto trained = experiment::train_model(cfg, data.dataset, seed);
    detector::save_model(trained.model, out.models() / model_stem(seed));
    experiment::write_text(out.models() / (model_stem(seed) + ".provenance.json"),
                           nlohmann::json{{"provenance", trained.provenance}, {"history", trained.history}}.dump(2) + "\n");
    std::cout << model_stem(seed) << ' ' << trained.provenance.model_params_digest << " epochs "
              << trained.provenance.epochs_run << " selected " << trained.provenance.selected_epoch << '\n';
  }
  return code;
}

int cmd_attack(const Common& c) {
  const auto cfg = config_of(c);
  const experiment::OutputLayout out{cfg.output_dir};
  for (auto seed : cfg.seeds) {
    const auto model = detector::load_model(out.models() / model_stem(seed));
    const auto dataset = synthdata::generate_dataset(cfg.dataset, seed);
    for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
      const fs::path dir = cfg.output_dir / "adversarial" / experiment::report_stem(seed, i + 1, cfg);
      fs::create_directories(dir);
      for (int id : dataset.split.test) {
        const auto x = detector::scene_tensor(dataset.scene(id));
        const auto adv = attacks::apply_chain(model, x, dataset.gts(id), std::span(&cfg.attacks[i], 1));
        attacks::write_adversarial_scene(dataset.scene(id), adv, dir / ("scene_" + std::to_string(id) + ".smla"));
      }
      std::cout << dir.string() << ' ' << dataset.split.test.size() << " scenes\n";
    }
  }
  return kOk;
}

int cmd_evaluate(const Common& c) {
  const auto cfg = config_of(c);
  const experiment::OutputLayout out{cfg.output_dir};
  std::vector<metrics::MetricReport> all;
  for (auto seed : cfg.seeds) {
    const auto model = detector::load_model(out.models() / model_stem(seed));
    const auto dataset = synthdata::generate_dataset(cfg.dataset, seed);
    auto reports = experiment::evaluate_suite(cfg, model, dataset);
    for (std::size_t i = 0; i < reports.size(); ++i)
      experiment::write_text(out.metrics() / (experiment::report_stem(seed, i, cfg) + ".json"),
                             nlohmann::json(reports[i]).dump(2) + "\n");
    all.insert(all.end(), reports.begin(), reports.end());
  }
  print_table(experiment::aggregate_table(all), c.format, nlohmann::json(all));
  return kOk;
}

int cmd_pipeline(const Common& c) {
  const auto cfg = config_of(c);
  const auto key = ledger::key_from_env();
  const experiment::OutputLayout out{cfg.output_dir};
  int code = kOk;
  for (auto seed : cfg.seeds) {
    const auto r = experiment::pipeline_run(cfg, seed, out, key);
    if (r.quarantined) {
      std::cout << model_stem(seed) << " quarantined ks=" << r.screen->ks << '\n';
      code = kGateFail;
      continue;
    }
    std::cout << model_stem(seed) << ' ' << r.verdict->verdict() << " record " << r.record->payload.record_index
              << ' ' << r.record->payload.model_id << '\n';
    for (const auto& [label, ratio] : r.verdict->ratios) std::cout << "  " << label << " ratio " << ratio << '\n';
    if (r.incident) std::cout << "  incident: " << r.incident->detail << '\n';
    if (!r.verdict->pass) code = kGateFail;
  }
  return code;
}

fs::path ledger_path(const Common& c) { return experiment::OutputLayout{out_of(c)}.ledger(); }

int verify_or_report(const ledger::Ledger& book, const std::vector<std::uint8_t>& key) {
  const auto v = book.verify(key);
  if (v.valid) return kOk;
  std::cerr << "ledger invalid: broken at " << *v.broken_at << " (" << v.reason << ")\n";
  return kLedgerInvalid;
}

void print_record(const ledger::LedgerRecord& r, const std::string& format) {
  if (format == "json") {
    std::cout << nlohmann::json(r).dump(2) << '\n';
  } else {
    std::cout << r.payload.record_index << ' ' << r.payload.model_id << ' ' << r.payload.gate_verdict << ' '
              << r.payload.status << " eps_at=" << r.payload.adversarial_epsilon() << '\n';
  }
}

int cmd_registry_log(const Common& c, const std::string& payload_file) {
  const auto key = ledger::key_from_env();
  ledger::LedgerPayload payload;
  try {
    payload = nlohmann::json::parse(experiment::read_text(payload_file)).get<ledger::LedgerPayload>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, payload_file + ": " + e.what());
  }
  ledger::Ledger book(ledger_path(c));
  if (const int code = verify_or_report(book, key); code != kOk) return code;
  print_record(book.append(std::move(payload), key), c.format);
  return kOk;
}

int cmd_registry_verify(const Common& c) {
  const auto key = ledger::key_from_env();
  ledger::Ledger book(ledger_path(c));
  const auto v = book.verify(key);
  if (c.format == "json") {
    std::cout << nlohmann::json{{"valid", v.valid},
                                {"broken_at", v.broken_at ? nlohmann::json(*v.broken_at) : nlohmann::json(nullptr)},
                                {"reason", v.reason}}
                     .dump()
              << '\n';
  } else if (v.valid) {
    std::cout << "valid\n";
  } else {
    std::cout << "broken-at " << *v.broken_at << " (" << v.reason << ")\n";
  }
  return v.valid ? kOk : kLedgerInvalid;
}

int cmd_registry_select(const Common& c, bool safe) {
  const auto key = ledger::key_from_env();
  ledger::Ledger book(ledger_path(c));
  if (const int code = verify_or_report(book, key); code != kOk) return code;
  const auto records = book.records();
  print_record(safe ? ledger::safe_mode(records) : ledger::rollback(records), c.format);
  return kOk;
}

int cmd_threat_report(const Common& c, const std::string& matrix_file) {
  const auto m = matrix_file.empty() ? threatmodel::vlpd_matrix() : threatmodel::load(matrix_file);
  if (c.format == "csv") {
    std::cout << threatmodel::render(m, threatmodel::Format::kCsv);
  } else if (c.format == "json") {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : threatmodel::prioritize(m))
      cells.push_back({{"element", cell.element},
                       {"threat", std::string(1, cell.threat)},
                       {"likelihood", std::string(1, threatmodel::to_letter(cell.likelihood))},
                       {"impact", threatmodel::to_string(cell.impact)},
                       {"risk", threatmodel::risk_score(cell)}});
    std::cout << cells.dump(2) << '\n';
  } else {
    std::cout << threatmodel::render(m, threatmodel::Format::kMarkdown);
  }
  return kOk;
}

int cmd_monitor(const Common& c, std::optional<double> shift) {
  auto cfg = config_of(c);
  if (shift) cfg.drift.shift = *shift;
  const experiment::OutputLayout out{cfg.output_dir};
  for (auto seed : cfg.seeds) {
    const auto model = detector::load_model(out.models() / model_stem(seed));
    const auto dataset = synthdata::generate_dataset(cfg.dataset, seed);
    const auto r = experiment::monitor_sim(cfg, model, dataset, seed);
    nlohmann::json windows = nlohmann::json::array();
    for (std::size_t w = 0; w < r.windows.size(); ++w) {
      const auto& d = r.windows[w];
      windows.push_back({{"window", w}, {"ks", d.ks}, {"alert", d.alert}});
      std::cout << model_stem(seed) << " window " << w << " ks " << d.ks << (d.alert ? " ALERT" : " ok") << '\n';
      if (d.incident) experiment::append_incident(out.incidents(), *d.incident);
    }
    experiment::write_text(out.metrics() / (model_stem(seed) + "-monitor.json"),
                           nlohmann::json{{"baseline", r.baseline}, {"shift", cfg.drift.shift}, {"windows", windows}}.dump(2) +
                               "\n");
  }
  return kOk;
}

int cmd_table(const Common& c) {
  const experiment::OutputLayout out{out_of(c)};
  const auto reports = experiment::load_reports(out.metrics());
  const std::string csv = experiment::aggregate_table(reports);
  experiment::write_text(out.tables() / "table.csv", csv);
  print_table(csv, c.format, nlohmann::json(reports));
  return kOk;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kInvalidConfig:
    case ErrorKind::kMissingRequiredAttack:
    case ErrorKind::kBudgetExceedsPolicy:
    case ErrorKind::kIncompletePayload:
      return kConfigError;
    default:
      return kRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Secure MLOps harness for a synthetic pedestrian detector"};
  app.require_subcommand(1);

  Common gen, train, attack, evaluate, pipeline, reg, threat, monitor, table;
  add_common(app.add_subcommand("gen-data", "generate the dataset"), gen);
  add_common(app.add_subcommand("train", "train with the configured defense stack"), train);
  add_common(app.add_subcommand("attack", "write adversarial test scenes"), attack);
  add_common(app.add_subcommand("evaluate", "score the trained model on the attack suite"), evaluate);
  add_common(app.add_subcommand("pipeline-run", "train, evaluate, gate, and record"), pipeline);

  auto* registry = app.add_subcommand("registry", "lineage ledger operations");
  registry->require_subcommand(1);
  std::string payload_file;
  auto* reg_log = registry->add_subcommand("log", "append a payload");
  add_common(reg_log, reg, "csv");
  reg_log->add_option("--payload", payload_file, "payload JSON")->required();
  auto* reg_verify = registry->add_subcommand("verify", "check hashes and MACs");
  auto* reg_rollback = registry->add_subcommand("rollback", "latest deployable record");
  auto* reg_safe = registry->add_subcommand("safe-mode", "deployable record with the largest AT budget");
  for (auto* sub : {reg_verify, reg_rollback, reg_safe}) add_common(sub, reg, "csv");

  auto* threat_cmd = app.add_subcommand("threat-model", "STRIDE matrix");
  threat_cmd->require_subcommand(1);
  std::string matrix_file;
  auto* report = threat_cmd->add_subcommand("report", "render the matrix");
  add_common(report, threat, "markdown");
  report->add_option("--matrix", matrix_file, "matrix CSV; defaults to the bundled one");

  std::optional<double> shift;
  auto* monitor_cmd = app.add_subcommand("monitor-sim", "replay confidences against a drift baseline");
  add_common(monitor_cmd, monitor);
  monitor_cmd->add_option("--shift", shift, "confidence shift applied to the replayed stream");

  add_common(app.add_subcommand("table", "aggregate metrics/*.json into tables/table.csv"), table);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen);
    if (app.got_subcommand("train")) return cmd_train(train);
    if (app.got_subcommand("attack")) return cmd_attack(attack);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(evaluate);
    if (app.got_subcommand("pipeline-run")) return cmd_pipeline(pipeline);
    if (app.got_subcommand("table")) return cmd_table(table);
    if (app.got_subcommand("monitor-sim")) return cmd_monitor(monitor, shift);
    if (report->parsed()) return cmd_threat_report(threat, matrix_file);
    if (reg_log->parsed()) return cmd_registry_log(reg, payload_file);
    if (reg_verify->parsed()) return cmd_registry_verify(reg);
    if (reg_rollback->parsed()) return cmd_registry_select(reg, false);
    if (reg_safe->parsed()) return cmd_registry_select(reg, true);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}
