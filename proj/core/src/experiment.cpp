#include "secmlops/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "secmlops/digest.hpp"
#include "secmlops/error.hpp"

namespace secmlops::experiment {

namespace {

const std::set<std::string> kConfigKeys{"dataset", "detector", "train",   "defenses",  "poison", "attacks",
                                        "gate",    "evaluation", "seeds", "approvals", "screen", "drift",
                                        "output_dir"};

std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.';
    if (keep) {
      out.push_back(c);
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void write_json(const std::filesystem::path& file, const nlohmann::json& j) { write_text(file, j.dump(2) + "\n"); }

}  // namespace

void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed on " + file.string());
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ExperimentConfig::validate() const {
  dataset.validate();
  detector.validate();
  train.validate();
  defenses.validate();
  if (poison) poison->validate();
  for (const auto& a : attacks) a.validate();
  gate.validate();
  if (seeds.empty()) throw Error(ErrorKind::kInvalidConfig, "seeds must not be empty");
  if (dataset.height != detector.height || dataset.width != detector.width)
    throw Error(ErrorKind::kInvalidConfig, "detector input size must match the scene size");
  if (!(screen.threshold >= 0)) throw Error(ErrorKind::kInvalidConfig, "screen threshold must be >= 0");
  if (drift.min_window == 0 || drift.window < drift.min_window)
    throw Error(ErrorKind::kInvalidConfig, "drift window must be >= min_window > 0");
  if (!(drift.threshold >= 0)) throw Error(ErrorKind::kInvalidConfig, "drift threshold must be >= 0");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.detector.neck_layers = 3;
  c.detector.positive_weight = 10.0;
  c.detector.center_fraction = 0.5;
  c.detector.center_neighborhood = true;
  c.train.epochs = 30;
  c.train.learning_rate = 0.02;
  c.train.momentum = 0.9;
  c.train.cosine_schedule = true;
  c.defenses = defenses::DefenseStack::secmlops();
  c.attacks = {attacks::AttackSpec::make_fgsm(0.03), attacks::AttackSpec::make_deepfool(0.03)};
  return c;
}

ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidConfig, "config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kConfigKeys.count(key)) throw Error(ErrorKind::kInvalidConfig, "unknown config key '" + key + "'");
  ExperimentConfig c = default_config();
  try {
    if (j.contains("dataset")) j.at("dataset").get_to(c.dataset);
    if (j.contains("detector")) j.at("detector").get_to(c.detector);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("defenses")) j.at("defenses").get_to(c.defenses);
    if (j.contains("poison")) {
      c.poison.reset();
      if (!j.at("poison").is_null()) c.poison = j.at("poison").get<attacks::PoisonSpec>();
    }
    if (j.contains("attacks")) j.at("attacks").get_to(c.attacks);
    if (j.contains("gate")) j.at("gate").get_to(c.gate);
    if (j.contains("evaluation")) j.at("evaluation").get_to(c.evaluation);
    if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
    if (j.contains("approvals")) j.at("approvals").get_to(c.approvals);
    if (j.contains("screen")) {
      const auto& s = j.at("screen");
      c.screen.enabled = s.value("enabled", c.screen.enabled);
      c.screen.threshold = s.value("threshold", c.screen.threshold);
    }
    if (j.contains("drift")) {
      const auto& d = j.at("drift");
      c.drift.threshold = d.value("threshold", c.drift.threshold);
      c.drift.min_window = d.value("min_window", c.drift.min_window);
      c.drift.window = d.value("window", c.drift.window);
      c.drift.windows = d.value("windows", c.drift.windows);
      c.drift.shift = d.value("shift", c.drift.shift);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, e.what());
  }
  if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;
  c.evaluation.preset = c.train.preset;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(file));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, file.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::kInvalidConfig, e.what());
  }
  return parse_config(j, file.parent_path());
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = canonical_config(c);
  j["output_dir"] = c.output_dir.string();
}

nlohmann::json canonical_config(const ExperimentConfig& c) {
  return nlohmann::json{{"dataset", c.dataset},
                        {"detector", c.detector},
                        {"train", c.train},
                        {"defenses", c.defenses},
                        {"poison", c.poison ? nlohmann::json(*c.poison) : nlohmann::json(nullptr)},
                        {"attacks", c.attacks},
                        {"gate", c.gate},
                        {"evaluation", c.evaluation},
                        {"seeds", c.seeds},
                        {"approvals", c.approvals},
                        {"screen", {{"enabled", c.screen.enabled}, {"threshold", c.screen.threshold}}},
                        {"drift",
                         {{"threshold", c.drift.threshold},
                          {"min_window", c.drift.min_window},
                          {"window", c.drift.window},
                          {"windows", c.drift.windows},
                          {"shift", c.drift.shift}}}};
}

std::string config_digest(const ExperimentConfig& config) { return sha256_hex(canonical_config(config).dump()); }

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  PreparedData out;
  out.dataset = synthdata::generate_dataset(config.dataset, seed);
  if (!config.poison) return out;

  const auto& split = out.dataset.split;
  std::vector<int> incoming;
  for (int id : split.train)
    if (std::find(split.golden.begin(), split.golden.end(), id) == split.golden.end()) incoming.push_back(id);

  attacks::PoisonSpec spec = *config.poison;
  spec.seed += seed;
  auto poisoned = attacks::poison_labels(out.dataset, spec, attacks::candidate_map(out.dataset, incoming));
  if (config.screen.enabled) {
    const auto golden = govern::golden_stats(out.dataset, split.golden, config.screen.threshold);
    out.screen = govern::screen_poison(poisoned.dataset, incoming, golden);
  }
  out.dataset = std::move(poisoned.dataset);
  out.flips = std::move(poisoned.manifest);
  return out;
}

defenses::StackResult train_model(const ExperimentConfig& config, const synthdata::Dataset& dataset,
                                  std::uint64_t seed) {
  detector::TrainConfig train = config.train;
  train.seed = seed;
  defenses::DefenseStack stack = config.defenses;
  if (stack.cutmix) stack.cutmix->seed = seed;
  return defenses::apply_stack(detector::make_model(config.detector, seed), dataset, stack, train);
}

std::string attack_label(const ExperimentConfig& config, const std::string& attack) {
  if (!config.poison) return attack;
  const std::string dp = "dp(gamma=" + fmt("%g", config.poison->gamma) + ")";
  return attack == "clean" ? dp : dp + "+" + attack;
}

std::vector<metrics::MetricReport> evaluate_suite(const ExperimentConfig& config, const detector::DetectorModel& model,
                                                  const synthdata::Dataset& dataset) {
  metrics::EvaluateOptions options = config.evaluation;
  options.config_digest = config_digest(config);
  std::vector<metrics::MetricReport> reports;
  auto finish = [&](metrics::MetricReport r) {
    r.attack = attack_label(config, r.attack);
    r.strategy = config.defenses.label();
    reports.push_back(std::move(r));
  };
  finish(metrics::evaluate(model, dataset, dataset.split.test, {}, options));
  for (const auto& a : config.attacks) finish(metrics::evaluate(model, dataset, dataset.split.test, std::span(&a, 1), options));
  return reports;
}

std::string report_stem(std::uint64_t seed, std::size_t index, const ExperimentConfig& config) {
  const std::string prefix = "seed" + std::to_string(seed) + "-";
  if (index == 0) return prefix + "clean";
  const auto& spec = config.attacks.at(index - 1);
  std::string stem = prefix + slug(spec.label());
  for (std::size_t k = 0; k + 1 < index; ++k)
    if (config.attacks[k].label() == spec.label()) return stem + "-" + std::to_string(index);
  return stem;
}

void append_incident(const std::filesystem::path& file, const govern::IncidentRecord& incident) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::kIo, "cannot append to " + file.string());
  out << nlohmann::json(incident).dump() << '\n';
}

std::vector<govern::IncidentRecord> read_incidents(const std::filesystem::path& file) {
  std::vector<govern::IncidentRecord> out;
  if (!std::filesystem::exists(file)) return out;
  std::istringstream in(read_text(file));
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<govern::IncidentRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, "incident log: " + std::string(e.what()));
    }
  }
  return out;
}

PipelineResult pipeline_run(const ExperimentConfig& config, std::uint64_t seed, const OutputLayout& out,
                            std::span<const std::uint8_t> key) {
  config.validate();
  govern::check_suite(config.attacks, config.gate);
  PipelineResult r;
  r.seed = seed;
  const std::string tag = "seed" + std::to_string(seed);

  PreparedData data = prepare_data(config, seed);
  r.screen = data.screen;
  if (!data.flips.empty()) write_json(out.metrics() / (tag + "-poison.json"), nlohmann::json(data.flips));
  if (data.screen && data.screen->quarantine) {
    r.quarantined = true;
    r.incident = govern::make_incident(govern::Trigger::kPoisonQuarantine, std::nullopt,
                                       tag + " ks=" + fmt("%.6f", data.screen->ks));
    append_incident(out.incidents(), *r.incident);
    return r;
  }

  defenses::StackResult trained = train_model(config, data.dataset, seed);
  detector::save_model(trained.model, out.models() / tag);
  write_json(out.models() / (tag + ".provenance.json"),
             nlohmann::json{{"provenance", trained.provenance}, {"history", trained.history}});

  r.reports = evaluate_suite(config, trained.model, data.dataset);
  for (std::size_t i = 0; i < r.reports.size(); ++i)
    write_json(out.metrics() / (report_stem(seed, i, config) + ".json"), r.reports[i]);

  std::vector<govern::AttackedReport> attacked;
  for (std::size_t i = 0; i < config.attacks.size(); ++i) attacked.push_back({config.attacks[i], r.reports[i + 1]});
  r.verdict = govern::evaluate_gate(r.reports.front(), attacked, config.gate);
  write_json(out.metrics() / (tag + "-gate.json"), *r.verdict);

  std::vector<metrics::TableRow> rows;
  for (const auto& rep : r.reports) rows.push_back({rep.attack, rep.strategy, &rep});
  write_text(out.tables() / (tag + "-summary.csv"), metrics::table_csv(rows));

  ledger::Ledger book(out.ledger());
  const auto previous = book.records();
  ledger::LedgerPayload payload;
  payload.model_digest = diffnet::params_digest(trained.model.params);
  payload.model_id = "model-" + payload.model_digest.substr(0, 16);
  if (!previous.empty()) payload.parent_model_id = previous.back().payload.model_id;
  payload.dataset_digest = synthdata::dataset_digest(data.dataset);
  payload.config_digest = config_digest(config);
  payload.provenance = trained.provenance;
  payload.report_digest = sha256_hex(nlohmann::json(r.reports).dump());
  payload.gate_verdict = r.verdict->verdict();
  for (const auto& v : r.verdict->reasons)
    payload.gate_reasons.push_back(v.attack + ": ratio " + fmt("%.4f", v.ratio) + " < " +
                                   fmt("%g", config.gate.min_perf_ratio));
  payload.approvals.insert(config.approvals.begin(), config.approvals.end());
  r.record = book.append(std::move(payload), key);

  if (!r.verdict->pass) {
    const auto records = book.records();
    std::string detail = tag + " record " + std::to_string(r.record->payload.record_index) + " failed the gate; ";
    std::optional<std::uint64_t> target;
    try {
      const auto& back = ledger::rollback(records);
      target = back.payload.record_index;
      detail += "roll back to record " + std::to_string(*target) + " (" + back.payload.model_id + ")";
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoSecureVersion) throw;
      detail += "no secure version to roll back to";
    }
    r.incident = govern::make_incident(govern::Trigger::kGateFail, target ? target : r.record->payload.record_index,
                                       detail);
    append_incident(out.incidents(), *r.incident);
  }
  return r;
}

std::vector<double> confidence_pool(const ExperimentConfig& config, const detector::DetectorModel& model,
                                    const synthdata::Dataset& dataset, std::span<const int> scene_ids) {
  detector::DecodeOptions decode{config.evaluation.score_threshold, config.evaluation.nms_iou,
                                 config.evaluation.max_candidates};
  std::vector<double> out;
  for (int id : scene_ids)
    for (const auto& d : detector::decode(detector::forward(model, dataset.scene(id)), model.config.downsample, decode))
      out.push_back(d.score);
  return out;
}

std::vector<double> replay_window(std::span<const double> pool, std::size_t n, double shift, Rng& rng) {
  if (pool.empty()) throw Error(ErrorKind::kEmptySplit, "no confidences to replay");
  std::vector<double> w(n);
  for (double& v : w) v = std::clamp(pool[rng.below(pool.size())] + shift, 0.0, 1.0);
  return w;
}

MonitorResult monitor_sim(const ExperimentConfig& config, const detector::DetectorModel& model,
                          const synthdata::Dataset& dataset, std::uint64_t seed) {
  MonitorResult out;
  const auto reference = confidence_pool(config, model, dataset, dataset.split.val);
  out.baseline = govern::build_baseline(reference, config.drift.threshold, config.drift.min_window);
  const auto live = confidence_pool(config, model, dataset, dataset.split.test);
  Rng rng(seed, streams::kMonitor);
  for (std::size_t w = 0; w < config.drift.windows; ++w)
    out.windows.push_back(govern::drift_check(out.baseline, replay_window(live, config.drift.window, config.drift.shift, rng)));
  return out;
}

std::vector<metrics::MetricReport> load_reports(const std::filesystem::path& metrics_dir) {
  if (!std::filesystem::is_directory(metrics_dir)) throw Error(ErrorKind::kIo, metrics_dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(metrics_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<metrics::MetricReport> out;
  for (const auto& f : files) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(f));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, f.string() + ": " + e.what());
    }
    if (j.is_object() && j.contains("lamr") && j.contains("curves")) out.push_back(j.get<metrics::MetricReport>());
  }
  return out;
}

std::string aggregate_table(std::span<const metrics::MetricReport> reports) {
  struct Group {
    std::map<std::string, double> sum;
    std::set<std::string> missing;
    int count = 0;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;
  for (const auto& r : reports) {
    auto& g = groups[{r.strategy, r.attack}];
    ++g.count;
    for (auto name : metrics::kSubsetNames) {
      const auto it = r.lamr.find(std::string(name));
      if (it == r.lamr.end() || !it->second) {
        g.missing.insert(std::string(name));
      } else {
        g.sum[std::string(name)] += *it->second;
      }
    }
  }
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& [k, g] : groups) keys.push_back(k);
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first == "none" || (b.first != "none" && a.first < b.first);
    const bool ca = a.second == "clean", cb = b.second == "clean";
    if (ca != cb) return ca;
    return a.second < b.second;
  });
  std::vector<metrics::MetricReport> means;
  means.reserve(keys.size());
  for (const auto& k : keys) {
    const auto& g = groups[k];
    metrics::MetricReport m;
    m.attack = k.second;
    m.strategy = k.first;
    for (auto name : metrics::kSubsetNames) {
      const std::string n(name);
      m.lamr[n] = g.missing.count(n) ? std::nullopt : std::optional<double>(g.sum.at(n) / g.count);
    }
    means.push_back(std::move(m));
  }
  std::vector<metrics::TableRow> rows;
  for (const auto& m : means) rows.push_back({m.attack, m.strategy, &m});
  return metrics::table_csv(rows);
}

}  // namespace secmlops::experiment
