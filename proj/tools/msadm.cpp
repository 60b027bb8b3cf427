#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msadm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text_atomic(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw msadm::Error("cannot open for writing: " + tmp);
    out << content;
    if (!out) throw msadm::Error("short write to " + tmp);
  }
  fs::rename(tmp, p);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw msadm::Error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw msadm::SchemaError("not valid JSON: " + path);
  return j;
}

/// Final artifact paths written by the running stage, removed on failure so
/// a crashed stage never leaves partial output behind.
struct StageOutputs {
  std::vector<std::string> files;

  void add(const std::string& p) { files.push_back(p); }

  void write(const std::string& path, const std::string& content) {
    write_text_atomic(path, content);
    add(path);
  }

  void discard_all() {
    for (const std::string& p : files) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    files.clear();
  }
};

void write_manifest(StageOutputs& outs, const std::string& command,
                    const std::vector<std::string>& inputs, const msadm::PipelineConfig& cfg,
                    const std::string& primary_artifact) {
  const json manifest = msadm::run_manifest(command, inputs, outs.files, cfg);
  outs.write(primary_artifact + ".manifest.json", manifest.dump(2) + "\n");
}

/// Binds every pipeline-config field as a flag on one subcommand; flags that
/// were actually passed override the config file, which overrides defaults.
struct ConfigBinder {
  std::string config_path;
  msadm::PipelineConfig flags;
  std::vector<std::pair<CLI::Option*, std::function<void(msadm::PipelineConfig&)>>> appliers;
  std::map<std::string, CLI::Option*> by_name;

  void bind(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    auto add = [&](const char* name, auto& storage, const char* desc) {
      CLI::Option* o = cmd->add_option(name, storage, desc);
      appliers.emplace_back(o, [&storage, name, this](msadm::PipelineConfig& cfg) {
        apply_field(cfg, name, storage);
      });
      by_name[name] = o;
      return o;
    };
    add("--data", flags.data_path, "trace CSV path");
    add("--labels", flags.labels_path, "window label CSV path");
    add("--scenario", flags.scenario_path, "scenario JSON path");
    add("--manual", flags.manual_path, "manual interval JSON path");
    add("--rulebase", flags.rulebase_path, "rule-base JSON path");
    add("--grammar", flags.grammar_path, "grammar JSON path (empty = built-in)");
    add("--model", flags.model_path, "model binary path");
    add("--reports-dir", flags.reports_dir, "directory for report artifacts");
    add("--lss", flags.lss_path, "scaled-state JSONL path");
    add("--detections", flags.detections_path, "detection CSV path");
    add("--metrics", flags.metrics_path, "metrics JSON path");
    add("--window", flags.window, "window length in samples");
    add("--stride", flags.stride, "window stride in samples");
    add("--k-max", flags.k_max, "maximum clusters per KPI group");
    add("--kappa", flags.kappa, "detection/classification loss weight");
    add("--proj-dim", flags.proj_dim, "attention projection width");
    add("--hidden-dim", flags.hidden_dim, "LSTM hidden width");
    add("--epochs", flags.epochs, "training epochs");
    add("--batch-size", flags.batch_size, "training batch size");
    add("--learning-rate", flags.learning_rate, "Adam learning rate");
    add("--train-fraction", flags.train_fraction, "training split fraction");
    add("--delta-t", flags.delta_t, "rule refresh interval, logical seconds");
    add("--now", flags.now, "logical clock value");
    add("--mask-mode", flags.mask_mode, "recalibration mode: plus_one | literal");
    CLI::Option* zm = cmd->add_flag("--zero-mask", flags.zero_mask, "ablation: zero the mask");
    appliers.emplace_back(zm, [this](msadm::PipelineConfig& cfg) { cfg.zero_mask = flags.zero_mask; });
    by_name["--zero-mask"] = zm;
    add("--backend", flags.backend, "LLM backend: mock | http");
    add("--canned-dir", flags.canned_dir, "mock backend canned-response directory");
    add("--base-url", flags.base_url, "HTTP backend base URL");
    add("--llm-model", flags.llm_model, "HTTP backend model name");
    add("--token-budget", flags.token_budget, "prompt token budget");
    add("--report-limit", flags.report_limit, "maximum reports per run");
    add("--seed", flags.seed, "run seed");
  }

  template <typename T>
  void apply_field(msadm::PipelineConfig& cfg, const std::string& name, const T& value) {
    if constexpr (std::is_same_v<T, std::string>) {
      if (name == "--data") cfg.data_path = value;
      else if (name == "--labels") cfg.labels_path = value;
      else if (name == "--scenario") cfg.scenario_path = value;
      else if (name == "--manual") cfg.manual_path = value;
      else if (name == "--rulebase") cfg.rulebase_path = value;
      else if (name == "--grammar") cfg.grammar_path = value;
      else if (name == "--model") cfg.model_path = value;
      else if (name == "--reports-dir") cfg.reports_dir = value;
      else if (name == "--lss") cfg.lss_path = value;
      else if (name == "--detections") cfg.detections_path = value;
      else if (name == "--metrics") cfg.metrics_path = value;
      else if (name == "--mask-mode") cfg.mask_mode = value;
      else if (name == "--backend") cfg.backend = value;
      else if (name == "--canned-dir") cfg.canned_dir = value;
      else if (name == "--base-url") cfg.base_url = value;
      else if (name == "--llm-model") cfg.llm_model = value;
    } else if constexpr (std::is_same_v<T, int>) {
      if (name == "--window") cfg.window = value;
      else if (name == "--stride") cfg.stride = value;
      else if (name == "--k-max") cfg.k_max = value;
      else if (name == "--epochs") cfg.epochs = value;
      else if (name == "--batch-size") cfg.batch_size = value;
      else if (name == "--report-limit") cfg.report_limit = value;
    } else if constexpr (std::is_same_v<T, double>) {
      if (name == "--kappa") cfg.kappa = value;
      else if (name == "--learning-rate") cfg.learning_rate = value;
      else if (name == "--train-fraction") cfg.train_fraction = value;
    } else if constexpr (std::is_same_v<T, std::size_t>) {
      if (name == "--proj-dim") cfg.proj_dim = value;
      else if (name == "--hidden-dim") cfg.hidden_dim = value;
      else if (name == "--token-budget") cfg.token_budget = value;
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
      if (name == "--delta-t") cfg.delta_t = value;
      else if (name == "--now") cfg.now = value;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (name == "--seed") cfg.seed = value;
    }
  }

  bool provided(const std::string& name) const {
    const auto it = by_name.find(name);
    return it != by_name.end() && it->second->count() > 0;
  }

  msadm::PipelineConfig resolve() const {
    msadm::PipelineConfig cfg;
    if (!config_path.empty()) cfg = msadm::load_pipeline_config(config_path);
    for (const auto& [opt, apply] : appliers)
      if (opt->count() > 0) apply(cfg);
    return cfg;
  }
};

std::unique_ptr<msadm::LlmBackend> make_backend(const msadm::PipelineConfig& cfg) {
  if (cfg.backend == "mock") return std::make_unique<msadm::MockBackend>(cfg.canned_dir);
  if (cfg.backend == "http") {
    msadm::HttpBackendConfig hc;
    hc.base_url = cfg.base_url;
    hc.model = cfg.llm_model;
    return std::make_unique<msadm::HttpBackend>(hc);
  }
  throw msadm::ValidationError("unknown backend: " + cfg.backend + " (expected mock or http)");
}

msadm::RuleBase load_rulebase_file(const std::string& path) {
  return msadm::rulebase_from_json(parse_json_file(path));
}

msadm::SemanticTree load_grammar_file(const msadm::PipelineConfig& cfg) {
  if (cfg.grammar_path.empty()) return msadm::default_grammar();
  return msadm::load_grammar(parse_json_file(cfg.grammar_path));
}

std::vector<msadm::KpiWindow> all_windows(const std::vector<msadm::KpiTrace>& traces,
                                          const msadm::PipelineConfig& cfg) {
  std::vector<msadm::KpiWindow> out;
  for (const msadm::KpiTrace& t : traces)
    for (msadm::KpiWindow& w : msadm::window(t, cfg.window, cfg.stride))
      out.push_back(std::move(w));
  return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void cmd_simulate(const msadm::PipelineConfig& cfg, const ConfigBinder& binder,
                  std::size_t duration, bool duration_set, std::size_t auto_faults,
                  StageOutputs& outs) {
  msadm::ScenarioConfig scenario;
  if (!cfg.scenario_path.empty()) scenario = msadm::scenario_from_json(parse_json_file(cfg.scenario_path));
  else scenario = msadm::default_scenario();

  if (binder.provided("--seed") || cfg.scenario_path.empty()) scenario.seed = cfg.seed;
  if (binder.provided("--window") || cfg.scenario_path.empty()) scenario.window = cfg.window;
  if (binder.provided("--stride") || cfg.scenario_path.empty()) scenario.stride = cfg.stride;
  if (duration_set) scenario.duration = duration;
  if (auto_faults > 0) msadm::auto_fault_schedule(scenario, auto_faults);

  const msadm::SimResult sim = msadm::simulate(scenario);

  fs::path data_parent = fs::path(cfg.data_path).parent_path();
  if (!data_parent.empty()) fs::create_directories(data_parent);
  msadm::write_traces(sim.traces, cfg.data_path, msadm::TraceFormat::csv);
  outs.add(cfg.data_path);
  fs::path labels_parent = fs::path(cfg.labels_path).parent_path();
  if (!labels_parent.empty()) fs::create_directories(labels_parent);
  msadm::write_labels(sim.labels, cfg.labels_path);
  outs.add(cfg.labels_path);

  std::size_t anomalous = 0;
  for (const msadm::WindowLabel& l : sim.labels) anomalous += l.anomaly ? 1 : 0;
  std::cout << "simulated " << sim.traces.size() << " traces, " << sim.labels.size()
            << " windows (" << anomalous << " anomalous)\n";

  std::vector<std::string> inputs;
  if (!cfg.scenario_path.empty()) inputs.push_back(cfg.scenario_path);
  write_manifest(outs, "simulate", inputs, cfg, cfg.data_path);
}

void cmd_build_rules(const msadm::PipelineConfig& cfg, StageOutputs& outs) {
  const auto traces = msadm::load_traces(cfg.data_path, msadm::TraceFormat::csv);
  const auto windows = all_windows(traces, cfg);
  std::vector<msadm::ManualInterval> manual;
  if (!cfg.manual_path.empty())
    manual = msadm::load_manual_intervals(parse_json_file(cfg.manual_path));

  msadm::RuleBaseConfig rbc;
  rbc.k_max = cfg.k_max;
  rbc.seed = cfg.seed;
  rbc.built_at = cfg.now;
  const msadm::RuleBase rb = msadm::build_rulebase(windows, manual, rbc);
  for (const msadm::RuleWarning& w : rb.warnings)
    std::cerr << "warning: " << w.entity_class << "/" << w.kpi_name << ": " << w.reason << "\n";

  outs.write(cfg.rulebase_path, msadm::to_json(rb).dump(2) + "\n");
  std::cout << "built " << rb.groups.size() << " rule groups from " << windows.size()
            << " windows\n";

  std::vector<std::string> inputs{cfg.data_path};
  if (!cfg.manual_path.empty()) inputs.push_back(cfg.manual_path);
  write_manifest(outs, "build-rules", inputs, cfg, cfg.rulebase_path);
}

void cmd_scale(const msadm::PipelineConfig& cfg, StageOutputs& outs) {
  const auto traces = msadm::load_traces(cfg.data_path, msadm::TraceFormat::csv);
  const msadm::RuleBase rb = load_rulebase_file(cfg.rulebase_path);
  const msadm::WindowGrid grid = msadm::build_window_grid(traces, cfg);

  std::string lines;
  std::size_t count = 0;
  for (const auto& [entity, rows] : grid.windows) {
    for (const std::vector<msadm::KpiWindow>& group : rows) {
      const msadm::ScaledStateList lss = msadm::scale_entity(group, rb);
      json j;
      j["entity_id"] = lss.entity_id;
      j["entity_class"] = lss.entity_class;
      j["window_index"] = lss.window_index;
      j["states"] = json::array();
      for (const msadm::ScaledState& s : lss.states)
        j["states"].push_back({{"kpi", s.kpi_name},
                               {"code", s.code},
                               {"severity", s.severity},
                               {"descriptor", s.descriptor},
                               {"lower", s.lower},
                               {"upper", s.upper},
                               {"point", s.point},
                               {"value", s.representative_value}});
      lines += j.dump();
      lines += '\n';
      ++count;
    }
  }
  outs.write(cfg.lss_path, lines);
  std::cout << "scaled " << count << " entity windows\n";
  write_manifest(outs, "scale", {cfg.data_path, cfg.rulebase_path}, cfg, cfg.lss_path);
}

msadm::ModelConfig model_config_for(const msadm::DatasetBundle& bundle,
                                    const msadm::PipelineConfig& cfg) {
  msadm::ModelConfig mc;
  mc.entities = bundle.scenes.front().entity_ids.size();
  mc.timesteps = static_cast<std::size_t>(cfg.window);
  mc.channels = bundle.channel_kpis.size();
  mc.proj_dim = cfg.proj_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.fault_classes = msadm::fault_label_count();
  mc.kappa = cfg.kappa;
  mc.learning_rate = cfg.learning_rate;
  mc.epochs = cfg.epochs;
  mc.batch_size = cfg.batch_size;
  mc.seed = cfg.seed;
  return mc;
}

void cmd_train(const msadm::PipelineConfig& cfg, StageOutputs& outs) {
  const auto traces = msadm::load_traces(cfg.data_path, msadm::TraceFormat::csv);
  const auto labels = msadm::load_labels(cfg.labels_path);
  const msadm::RuleBase rb = load_rulebase_file(cfg.rulebase_path);
  msadm::DatasetBundle bundle = msadm::assemble_dataset(traces, labels, rb, cfg);

  const auto [train_idx, hold_idx] =
      msadm::split_indices(bundle.samples.size(), cfg.train_fraction, cfg.seed);
  if (train_idx.empty()) throw msadm::ValidationError("train: empty training split");
  const msadm::ChannelScaler scaler = msadm::fit_scaler(bundle.samples, train_idx);
  for (msadm::Sample& s : bundle.samples) scaler.apply(s.x);

  std::vector<msadm::Sample> train_set;
  train_set.reserve(train_idx.size());
  for (std::size_t i : train_idx) train_set.push_back(bundle.samples[i]);

  const msadm::ModelConfig mc = model_config_for(bundle, cfg);
  const msadm::TrainResult result = msadm::train(train_set, mc);
  for (const msadm::TrainLogRow& row : result.log)
    if (row.epoch == 1 || row.epoch % 10 == 0 || row.epoch == mc.epochs)
      std::cerr << "epoch " << row.epoch << " loss " << msadm::fmt_fixed(row.total, 4) << "\n";

  fs::path model_parent = fs::path(cfg.model_path).parent_path();
  if (!model_parent.empty()) fs::create_directories(model_parent);
  msadm::save_model(result.model, cfg.model_path, cfg.model_path + ".json");
  outs.add(cfg.model_path);
  outs.add(cfg.model_path + ".json");
  outs.write(cfg.model_path + ".scaler.json",
             msadm::scaler_to_json(scaler, bundle.channel_kpis).dump(2) + "\n");

  if (!hold_idx.empty()) {
    std::vector<int> pd, td, pc, tc;
    for (std::size_t i : hold_idx) {
      const msadm::DetectionRow row =
          msadm::detect_sample(result.model, bundle.samples[i], bundle.keys[i]);
      pd.push_back(row.pred_anomaly);
      td.push_back(row.truth_anomaly);
      pc.push_back(row.pred_fault);
      tc.push_back(row.truth_fault);
    }
    const msadm::DetectionMetrics dm = msadm::detection_metrics(pd, td, 1);
    std::cout << "holdout detection accuracy " << msadm::fmt_fixed(dm.accuracy, 2)
              << ", classification accuracy "
              << msadm::fmt_fixed(msadm::classification_accuracy(pc, tc), 2) << "\n";
  }

  write_manifest(outs, "train", {cfg.data_path, cfg.labels_path, cfg.rulebase_path}, cfg,
                 cfg.model_path);
}

void cmd_detect(const msadm::PipelineConfig& cfg, StageOutputs& outs) {
  const auto traces = msadm::load_traces(cfg.data_path, msadm::TraceFormat::csv);
  const auto labels = msadm::load_labels(cfg.labels_path);
  const msadm::RuleBase rb = load_rulebase_file(cfg.rulebase_path);
  msadm::DatasetBundle bundle = msadm::assemble_dataset(traces, labels, rb, cfg);
  const msadm::Model model = msadm::load_model(cfg.model_path, cfg.model_path + ".json");
  const msadm::ChannelScaler scaler =
      msadm::scaler_from_json(parse_json_file(cfg.model_path + ".scaler.json"));

  std::vector<msadm::DetectionRow> rows;
  rows.reserve(bundle.samples.size());
  for (std::size_t i = 0; i < bundle.samples.size(); ++i) {
    msadm::Sample s = bundle.samples[i];
    scaler.apply(s.x);
    rows.push_back(msadm::detect_sample(model, s, bundle.keys[i]));
  }
  outs.write(cfg.detections_path, msadm::detections_to_csv(rows));

  std::size_t flagged = 0;
  for (const msadm::DetectionRow& r : rows) flagged += r.pred_anomaly;
  std::cout << "detected " << flagged << " anomalous windows out of " << rows.size() << "\n";
  write_manifest(outs, "detect",
                 {cfg.data_path, cfg.labels_path, cfg.rulebase_path, cfg.model_path}, cfg,
                 cfg.detections_path);
}

void cmd_semanticize(const msadm::PipelineConfig& cfg, bool refresh, StageOutputs& outs) {
  const auto traces = msadm::load_traces(cfg.data_path, msadm::TraceFormat::csv);
  const msadm::RuleBase rb = load_rulebase_file(cfg.rulebase_path);
  const msadm::SemanticTree tree = load_grammar_file(cfg);
  const msadm::DescriptorMapping mapping = msadm::mapping_from(rb);
  msadm::validate_coverage(tree, mapping);
  const msadm::WindowGrid grid = msadm::build_window_grid(traces, cfg);

  std::vector<msadm::KpiWindow> recent;
  if (refresh) recent = all_windows(traces, cfg);

  bool any_refreshed = false;
  std::string lines;
  for (const auto& [entity, rows] : grid.windows) {
    for (const std::vector<msadm::KpiWindow>& group : rows) {
      const msadm::ScaledStateList lss = msadm::scale_entity(group, rb);
      const msadm::GenerationResult gen =
          msadm::generate_descriptions(lss, tree, mapping, rb, recent, cfg.now, cfg.delta_t);
      any_refreshed = any_refreshed || gen.refreshed;
      json j;
      j["entity_id"] = lss.entity_id;
      j["window_index"] = lss.window_index;
      j["sentences"] = gen.sentences;
      lines += j.dump();
      lines += '\n';
    }
  }
  if (any_refreshed) std::cerr << "rule base refreshed in memory (artifact unchanged)\n";
  outs.write(cfg.lss_path, lines);
  std::cout << "semanticized " << grid.windows.size() << " entities\n";
  write_manifest(outs, "semanticize", {cfg.data_path, cfg.rulebase_path}, cfg, cfg.lss_path);
}

void cmd_report(const msadm::PipelineConfig& cfg, StageOutputs& outs) {
  const auto traces = msadm::load_traces(cfg.data_path, msadm::TraceFormat::csv);
  const auto labels = msadm::load_labels(cfg.labels_path);
  const msadm::RuleBase rb = load_rulebase_file(cfg.rulebase_path);
  const msadm::SemanticTree tree = load_grammar_file(cfg);
  const msadm::DescriptorMapping mapping = msadm::mapping_from(rb);
  msadm::validate_coverage(tree, mapping);
  msadm::DatasetBundle bundle = msadm::assemble_dataset(traces, labels, rb, cfg);
  const msadm::Model model = msadm::load_model(cfg.model_path, cfg.model_path + ".json");
  const msadm::ChannelScaler scaler =
      msadm::scaler_from_json(parse_json_file(cfg.model_path + ".scaler.json"));
  const std::unique_ptr<msadm::LlmBackend> backend = make_backend(cfg);

  const std::vector<msadm::ReportBundle> reports =
      msadm::make_reports(bundle, model, scaler, tree, mapping, rb, *backend, cfg);

  fs::create_directories(cfg.reports_dir);
  json index = json::array();
  for (const msadm::ReportBundle& r : reports) {
    const std::string stem = "report-" + std::to_string(r.key.scene) + "-" +
                             std::to_string(r.key.window_index);
    const std::string txt_path = (fs::path(cfg.reports_dir) / (stem + ".txt")).string();
    const std::string json_path = (fs::path(cfg.reports_dir) / (stem + ".json")).string();
    outs.write(txt_path, r.response);
    json j;
    j["scene"] = r.key.scene;
    j["window_index"] = r.key.window_index;
    j["prompt_fnv64"] = msadm::fnv_hex(msadm::fnv1a64(r.prompt.rendered));
    j["report"] = msadm::report_to_json(r.report);
    outs.write(json_path, j.dump(2) + "\n");
    index.push_back({{"scene", r.key.scene},
                     {"window_index", r.key.window_index},
                     {"fault_type", r.report.fault_type},
                     {"txt", txt_path},
                     {"json", json_path}});
  }
  const std::string index_path = (fs::path(cfg.reports_dir) / "index.json").string();
  outs.write(index_path, index.dump(2) + "\n");

  std::cout << "wrote " << reports.size() << " reports to " << cfg.reports_dir << "\n";
  write_manifest(outs, "report",
                 {cfg.data_path, cfg.labels_path, cfg.rulebase_path, cfg.model_path}, cfg,
                 index_path);
}

void cmd_eval(const msadm::PipelineConfig& cfg, StageOutputs& outs) {
  const std::vector<msadm::DetectionRow> rows =
      msadm::detections_from_csv(read_text(cfg.detections_path));
  if (rows.empty()) throw msadm::ValidationError("eval: no detection rows");

  std::vector<int> pd, td, pc, tc;
  std::vector<double> scores;
  for (const msadm::DetectionRow& r : rows) {
    pd.push_back(r.pred_anomaly);
    td.push_back(r.truth_anomaly);
    pc.push_back(r.pred_fault);
    tc.push_back(r.truth_fault);
    scores.push_back(r.p_anomalous);
  }
  const msadm::DetectionMetrics dm = msadm::detection_metrics(pd, td, 1);
  const double cls_acc = msadm::classification_accuracy(pc, tc);

  json metrics;
  metrics["detection"] = msadm::metrics_to_json(dm);
  metrics["classification_accuracy"] = cls_acc;

  std::string roc_csv;
  try {
    const std::vector<msadm::RocPoint> roc = msadm::roc_points(scores, td);
    roc_csv = msadm::roc_to_csv(roc);
    metrics["roc_points"] = roc.size();
  } catch (const std::domain_error& e) {
    std::cerr << "roc skipped: " << e.what() << "\n";
  }

  outs.write(cfg.metrics_path, metrics.dump(2) + "\n");
  if (!roc_csv.empty()) {
    const std::string roc_path =
        (fs::path(cfg.metrics_path).parent_path() / "roc.csv").string();
    outs.write(roc_path, roc_csv);
  }

  std::cout << msadm::metrics_table(dm);
  std::cout << "accuracy " << msadm::fmt_fixed(dm.accuracy, 2) << "\n";
  std::cout << "classification accuracy " << msadm::fmt_fixed(cls_acc, 2) << "\n";
  write_manifest(outs, "eval", {cfg.detections_path}, cfg, cfg.metrics_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MSADM: multi-scale network health management pipeline"};
  app.require_subcommand(1);

  std::map<std::string, ConfigBinder> binders;
  const std::vector<std::string> names = {"simulate",    "build-rules", "scale",
                                          "train",       "detect",      "semanticize",
                                          "report",      "eval"};
  const std::map<std::string, std::string> descs = {
      {"simulate", "generate labeled KPI traces"},
      {"build-rules", "cluster windows into a rule base"},
      {"scale", "dump scaled state lists"},
      {"train", "train the detection model"},
      {"detect", "run detection over all windows"},
      {"semanticize", "generate anomaly sentences"},
      {"report", "full pipeline: detect, semanticize, query the LLM"},
      {"eval", "score detections against ground truth"},
  };

  std::size_t sim_duration = 0;
  std::size_t sim_auto_faults = 0;
  CLI::Option* sim_duration_opt = nullptr;
  bool sem_refresh = false;

  std::map<std::string, CLI::App*> cmds;
  for (const std::string& name : names) {
    CLI::App* cmd = app.add_subcommand(name, descs.at(name));
    binders[name].bind(cmd);
    cmds[name] = cmd;
  }
  sim_duration_opt =
      cmds["simulate"]->add_option("--duration", sim_duration, "samples per entity");
  cmds["simulate"]->add_option("--auto-faults", sim_auto_faults,
                               "schedule this many deterministic fault events");
  cmds["semanticize"]->add_flag("--refresh", sem_refresh,
                                "recluster stale rule groups from the input data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  StageOutputs outs;
  try {
    const msadm::PipelineConfig cfg = binders.at(name).resolve();
    if (name == "simulate")
      cmd_simulate(cfg, binders.at(name), sim_duration, sim_duration_opt->count() > 0,
                   sim_auto_faults, outs);
    else if (name == "build-rules")
      cmd_build_rules(cfg, outs);
    else if (name == "scale")
      cmd_scale(cfg, outs);
    else if (name == "train")
      cmd_train(cfg, outs);
    else if (name == "detect")
      cmd_detect(cfg, outs);
    else if (name == "semanticize")
      cmd_semanticize(cfg, sem_refresh, outs);
    else if (name == "report")
      cmd_report(cfg, outs);
    else if (name == "eval")
      cmd_eval(cfg, outs);
    return 0;
  } catch (const msadm::BackendError& e) {
    outs.discard_all();
    std::cerr << "backend error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    outs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
