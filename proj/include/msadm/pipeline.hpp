#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"
#include "msadm/encoder.hpp"
#include "msadm/eval.hpp"
#include "msadm/ingest.hpp"
#include "msadm/llmbridge.hpp"
#include "msadm/model.hpp"
#include "msadm/rng.hpp"
#include "msadm/rulebase.hpp"
#include "msadm/semtree.hpp"
#include "msadm/simnet.hpp"

namespace msadm {

/// All knobs of the end-to-end pipeline. JSON file values override the
/// defaults; command-line flags override the file.
struct PipelineConfig {
  std::string data_path = "data/traces.csv";
  std::string labels_path = "data/labels.csv";
  std::string scenario_path;  // empty -> default_scenario()
  std::string manual_path;    // optional manual interval JSON
  std::string rulebase_path = "artifacts/rulebase.json";
  std::string grammar_path;  // empty -> embedded default grammar
  std::string model_path = "artifacts/model.bin";
  std::string reports_dir = "artifacts/reports";
  std::string lss_path = "artifacts/lss.jsonl";
  std::string detections_path = "artifacts/detections.csv";
  std::string metrics_path = "artifacts/metrics.json";

  int window = 16;
  int stride = 16;
  int k_max = 8;

  double kappa = 0.5;
  std::size_t proj_dim = 8;
  std::size_t hidden_dim = 16;
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double train_fraction = 0.8;

  std::int64_t delta_t = 86400;  // logical seconds between rule refreshes
  std::int64_t now = 0;          // logical clock

  std::string mask_mode = "plus_one";
  bool zero_mask = false;  // ablation: K identically zero

  std::string backend = "mock";
  std::string canned_dir;
  std::string base_url;
  std::string llm_model;
  std::size_t token_budget = 8192;
  int report_limit = 10;

  std::uint64_t seed = 1;
};

inline void pipeline_config_merge_json(PipelineConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("pipeline config must be a JSON object");
  auto str = [&](const char* key, std::string& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
  };
  auto num = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  try {
    str("data_path", cfg.data_path);
    str("labels_path", cfg.labels_path);
    str("scenario_path", cfg.scenario_path);
    str("manual_path", cfg.manual_path);
    str("rulebase_path", cfg.rulebase_path);
    str("grammar_path", cfg.grammar_path);
    str("model_path", cfg.model_path);
    str("reports_dir", cfg.reports_dir);
    str("lss_path", cfg.lss_path);
    str("detections_path", cfg.detections_path);
    str("metrics_path", cfg.metrics_path);
    num("window", cfg.window);
    num("stride", cfg.stride);
    num("k_max", cfg.k_max);
    num("kappa", cfg.kappa);
    num("proj_dim", cfg.proj_dim);
    num("hidden_dim", cfg.hidden_dim);
    num("epochs", cfg.epochs);
    num("batch_size", cfg.batch_size);
    num("learning_rate", cfg.learning_rate);
    num("train_fraction", cfg.train_fraction);
    num("delta_t", cfg.delta_t);
    num("now", cfg.now);
    str("mask_mode", cfg.mask_mode);
    if (j.contains("zero_mask")) cfg.zero_mask = j.at("zero_mask").get<bool>();
    str("backend", cfg.backend);
    str("canned_dir", cfg.canned_dir);
    str("base_url", cfg.base_url);
    str("llm_model", cfg.llm_model);
    num("token_budget", cfg.token_budget);
    num("report_limit", cfg.report_limit);
    num("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("pipeline config: ") + e.what());
  }
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  PipelineConfig cfg;
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SchemaError("config file is not valid JSON: " + path);
  pipeline_config_merge_json(cfg, j);
  return cfg;
}

// ---------------------------------------------------------------------------
// Fault label indexing: 0 = normal, 1.. = fault classes in canonical order
// ---------------------------------------------------------------------------

inline int label_index(const std::string& fault_class) {
  if (fault_class == "normal") return 0;
  const auto& names = fault_class_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == fault_class) return static_cast<int>(i) + 1;
  throw ValidationError("unknown fault class label: " + fault_class);
}

inline std::string label_name(int index) {
  if (index == 0) return "normal";
  const auto& names = fault_class_names();
  if (index < 1 || static_cast<std::size_t>(index) > names.size())
    throw std::out_of_range("fault label index out of range");
  return names[static_cast<std::size_t>(index) - 1];
}

inline std::size_t fault_label_count() { return fault_class_names().size() + 1; }

// ---------------------------------------------------------------------------
// Scene and dataset assembly
// ---------------------------------------------------------------------------

/// One co-observed group of entities, one per entity class, sharing a node
/// index. The model's entity axis runs over a scene.
struct Scene {
  std::vector<std::string> entity_ids;  // class-sorted order
};

struct SceneWindowKey {
  std::size_t scene = 0;
  int window_index = 0;
};

struct DatasetBundle {
  std::vector<Scene> scenes;
  std::vector<std::string> channel_kpis;  // sorted; fixes the channel axis
  std::vector<Sample> samples;            // one per (scene, window_index)
  std::vector<SceneWindowKey> keys;       // parallel to samples
  // Per entity, per window index: the scaled state list (pre-mask semantics).
  std::map<std::string, std::vector<ScaledStateList>> lss;
  // Per entity, per window index, per channel: the raw window values.
  std::map<std::string, std::vector<std::vector<KpiWindow>>> raw_windows;
  int window = 0;
};

inline std::vector<Scene> build_scenes(const std::vector<KpiTrace>& traces) {
  std::map<std::string, std::set<std::string>> by_class;  // class -> entity ids
  for (const KpiTrace& t : traces) by_class[t.entity_class].insert(t.entity_id);
  if (by_class.empty()) throw ValidationError("build_scenes: no traces");
  std::size_t nodes = by_class.begin()->second.size();
  for (const auto& [cls, ids] : by_class)
    if (ids.size() != nodes)
      throw ValidationError("build_scenes: entity classes have unequal node counts (" + cls +
                            " has " + std::to_string(ids.size()) + ", expected " +
                            std::to_string(nodes) + ")");
  std::vector<Scene> scenes(nodes);
  for (const auto& [cls, ids] : by_class) {
    std::size_t i = 0;
    for (const std::string& id : ids) scenes[i++].entity_ids.push_back(id);
  }
  return scenes;
}

/// Windowed traces regrouped as entity -> window index -> channel, with a
/// fixed sorted channel axis. Every entity must cover every channel with the
/// same number of complete windows.
struct WindowGrid {
  std::vector<std::string> channel_kpis;
  std::map<std::string, std::vector<std::vector<KpiWindow>>> windows;
  std::size_t window_count = 0;
};

inline WindowGrid build_window_grid(const std::vector<KpiTrace>& traces,
                                    const PipelineConfig& cfg) {
  if (traces.empty()) throw ValidationError("build_window_grid: no traces");
  WindowGrid grid;
  std::set<std::string> kpi_set;
  for (const KpiTrace& t : traces) kpi_set.insert(t.kpi_name);
  grid.channel_kpis.assign(kpi_set.begin(), kpi_set.end());
  const std::size_t C = grid.channel_kpis.size();

  std::map<std::string, std::vector<std::vector<KpiWindow>>> by_channel;  // entity -> channel
  for (const KpiTrace& t : traces) {
    auto& per_channel = by_channel[t.entity_id];
    if (per_channel.empty()) per_channel.resize(C);
    const auto it = std::find(grid.channel_kpis.begin(), grid.channel_kpis.end(), t.kpi_name);
    per_channel[static_cast<std::size_t>(it - grid.channel_kpis.begin())] =
        window(t, cfg.window, cfg.stride);
  }

  bool first = true;
  for (const auto& [entity, per_channel] : by_channel) {
    for (std::size_t c = 0; c < C; ++c) {
      if (per_channel[c].empty())
        throw ValidationError("build_window_grid: entity " + entity +
                              " has no complete windows for KPI " + grid.channel_kpis[c]);
      if (first) {
        grid.window_count = per_channel[c].size();
        first = false;
      } else if (per_channel[c].size() != grid.window_count) {
        throw ValidationError("build_window_grid: window counts differ across entities/KPIs");
      }
    }
  }

  for (const auto& [entity, per_channel] : by_channel) {
    auto& rows = grid.windows[entity];
    rows.reserve(grid.window_count);
    for (std::size_t w = 0; w < grid.window_count; ++w) {
      std::vector<KpiWindow> group;
      group.reserve(C);
      for (std::size_t c = 0; c < C; ++c) group.push_back(per_channel[c][w]);
      rows.push_back(std::move(group));
    }
  }
  return grid;
}

/// Windows every trace, scales each entity-window into an LSS, applies the
/// recalibration mask, and groups entities into scene samples with labels.
inline DatasetBundle assemble_dataset(const std::vector<KpiTrace>& traces,
                                      const std::vector<WindowLabel>& labels,
                                      const RuleBase& rb, const PipelineConfig& cfg) {
  WindowGrid grid = build_window_grid(traces, cfg);
  DatasetBundle bundle;
  bundle.window = cfg.window;
  bundle.channel_kpis = grid.channel_kpis;
  const std::size_t C = bundle.channel_kpis.size();
  const std::size_t W = grid.window_count;

  for (const auto& [entity, rows] : grid.windows) {
    auto& lists = bundle.lss[entity];
    lists.reserve(W);
    for (const std::vector<KpiWindow>& group : rows) lists.push_back(scale_entity(group, rb));
  }
  bundle.raw_windows = std::move(grid.windows);

  std::map<std::pair<std::string, int>, const WindowLabel*> label_of;
  for (const WindowLabel& l : labels) label_of[{l.entity_id, l.window_index}] = &l;

  bundle.scenes = build_scenes(traces);
  const std::size_t E = bundle.scenes.front().entity_ids.size();
  const std::size_t T = static_cast<std::size_t>(cfg.window);
  const MaskMode mode = mask_mode_from_string(cfg.mask_mode);

  for (std::size_t s = 0; s < bundle.scenes.size(); ++s) {
    const Scene& scene = bundle.scenes[s];
    for (std::size_t w = 0; w < W; ++w) {
      Tensor3 X(E, T, C);
      std::vector<RecalibrationMask> masks;
      masks.reserve(E);
      int y_d = 0, y_c = 0;
      for (std::size_t e = 0; e < E; ++e) {
        const std::string& entity = scene.entity_ids[e];
        const auto& raw = bundle.raw_windows.at(entity)[w];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < T; ++t) X.at(e, t, c) = raw[c].values[t];
        RecalibrationMask mask = build_mask(bundle.lss.at(entity)[w], bundle.channel_kpis);
        if (cfg.zero_mask) std::fill(mask.K.begin(), mask.K.end(), 0.0);
        masks.push_back(std::move(mask));

        const auto lit = label_of.find({entity, static_cast<int>(w)});
        if (lit == label_of.end())
          throw ValidationError("assemble_dataset: no label for entity " + entity +
                                " window " + std::to_string(w));
        if (lit->second->anomaly && y_d == 0) {
          y_d = 1;
          y_c = label_index(lit->second->fault_class);
        }
      }
      Sample sample;
      sample.x = apply_mask(X, masks, mode);
      sample.y_d = y_d;
      sample.y_c = y_c;
      bundle.samples.push_back(std::move(sample));
      bundle.keys.push_back({s, static_cast<int>(w)});
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Channel standardization (fit on the training split)
// ---------------------------------------------------------------------------

struct ChannelScaler {
  std::vector<double> mean;
  std::vector<double> std;

  void apply(Tensor3& X) const {
    if (mean.size() != X.C) throw std::domain_error("ChannelScaler: channel count mismatch");
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        for (std::size_t c = 0; c < X.C; ++c)
          X.at(e, t, c) = (X.at(e, t, c) - mean[c]) / std[c];
  }
};

inline ChannelScaler fit_scaler(const std::vector<Sample>& samples,
                                const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("fit_scaler: no samples");
  const std::size_t C = samples[indices[0]].x.C;
  ChannelScaler sc;
  sc.mean.assign(C, 0.0);
  sc.std.assign(C, 0.0);
  std::size_t n = 0;
  for (std::size_t i : indices) {
    const Tensor3& X = samples[i].x;
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        for (std::size_t c = 0; c < C; ++c) sc.mean[c] += X.at(e, t, c);
    n += X.E * X.T;
  }
  for (std::size_t c = 0; c < C; ++c) sc.mean[c] /= static_cast<double>(n);
  for (std::size_t i : indices) {
    const Tensor3& X = samples[i].x;
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          const double d = X.at(e, t, c) - sc.mean[c];
          sc.std[c] += d * d;
        }
  }
  for (std::size_t c = 0; c < C; ++c) {
    sc.std[c] = std::sqrt(sc.std[c] / static_cast<double>(n));
    if (sc.std[c] == 0.0) sc.std[c] = 1.0;
  }
  return sc;
}

inline nlohmann::json scaler_to_json(const ChannelScaler& sc,
                                     const std::vector<std::string>& channel_kpis) {
  return nlohmann::json{{"mean", sc.mean}, {"std", sc.std}, {"channels", channel_kpis}};
}

inline ChannelScaler scaler_from_json(const nlohmann::json& j) {
  ChannelScaler sc;
  try {
    sc.mean = j.at("mean").get<std::vector<double>>();
    sc.std = j.at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scaler: ") + e.what());
  }
  if (sc.mean.size() != sc.std.size()) throw SchemaError("scaler: mean/std length mismatch");
  return sc;
}

/// Deterministic shuffled split; returns (train, holdout) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must lie in (0,1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, "split"));
  rng.shuffle(order);
  const std::size_t cut = static_cast<std::size_t>(static_cast<double>(n) * train_fraction);
  return {std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end())};
}

// ---------------------------------------------------------------------------
// Detection over assembled samples
// ---------------------------------------------------------------------------

struct DetectionRow {
  SceneWindowKey key;
  double p_anomalous = 0.0;
  int pred_anomaly = 0;
  int pred_fault = 0;  // label index
  int truth_anomaly = 0;
  int truth_fault = 0;
};

inline DetectionRow detect_sample(const Model& model, const Sample& s, SceneWindowKey key) {
  const DetectionOutput out = model.forward(s.x);
  DetectionRow row;
  row.key = key;
  row.p_anomalous = out.p_d[1];
  row.pred_anomaly = out.p_d[1] >= out.p_d[0] ? 1 : 0;
  row.pred_fault = static_cast<int>(
      std::max_element(out.p_c.begin(), out.p_c.end()) - out.p_c.begin());
  row.truth_anomaly = s.y_d;
  row.truth_fault = s.y_c;
  return row;
}

inline constexpr const char* kDetectionsHeader =
    "scene,window_index,p_anomalous,pred_anomaly,pred_fault,truth_anomaly,truth_fault";

inline std::string detections_to_csv(const std::vector<DetectionRow>& rows) {
  std::string out = std::string(kDetectionsHeader) + "\n";
  for (const DetectionRow& r : rows) {
    out += std::to_string(r.key.scene);
    out += ',';
    out += std::to_string(r.key.window_index);
    out += ',';
    out += fmt_double(r.p_anomalous);
    out += ',';
    out += std::to_string(r.pred_anomaly);
    out += ',';
    out += label_name(r.pred_fault);
    out += ',';
    out += std::to_string(r.truth_anomaly);
    out += ',';
    out += label_name(r.truth_fault);
    out += '\n';
  }
  return out;
}

inline std::vector<DetectionRow> detections_from_csv(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != kDetectionsHeader)
    throw ParseError(1, "expected header '" + std::string(kDetectionsHeader) + "'");
  std::vector<DetectionRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_row(lines[i]);
    if (f.size() != 7)
      throw ParseError(i + 1, "expected 7 fields, got " + std::to_string(f.size()));
    DetectionRow r;
    r.key.scene = static_cast<std::size_t>(parse_double(trim(f[0])));
    r.key.window_index = static_cast<int>(parse_double(trim(f[1])));
    r.p_anomalous = parse_double(trim(f[2]));
    r.pred_anomaly = static_cast<int>(parse_double(trim(f[3])));
    r.pred_fault = label_index(trim(f[4]));
    r.truth_anomaly = static_cast<int>(parse_double(trim(f[5])));
    r.truth_fault = label_index(trim(f[6]));
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

inline std::uint64_t file_fnv64(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for hashing: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes);
}

inline std::string fnv_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline constexpr int kPipelineVersion = 1;

/// Records what a stage consumed and produced; written next to the primary
/// artifact as <artifact>.manifest.json.
inline nlohmann::json run_manifest(const std::string& command,
                                   const std::vector<std::string>& inputs,
                                   const std::vector<std::string>& outputs,
                                   const PipelineConfig& cfg) {
  nlohmann::json j;
  j["version"] = kPipelineVersion;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["logical_now"] = cfg.now;
  j["inputs"] = nlohmann::json::array();
  for (const std::string& p : inputs)
    j["inputs"].push_back({{"path", p}, {"fnv64", fnv_hex(file_fnv64(p))}});
  j["outputs"] = nlohmann::json::array();
  for (const std::string& p : outputs)
    j["outputs"].push_back({{"path", p}, {"fnv64", fnv_hex(file_fnv64(p))}});
  return j;
}

// ---------------------------------------------------------------------------
// Report generation over detected anomalies
// ---------------------------------------------------------------------------

struct ReportBundle {
  SceneWindowKey key;
  PromptBundle prompt;
  Report report;
  std::string response;
};

/// Builds prompts for anomalous predictions (deterministic scene-window
/// order, capped by report_limit) and runs them through the backend.
inline std::vector<ReportBundle> make_reports(const DatasetBundle& bundle, const Model& model,
                                              const ChannelScaler& scaler,
                                              const SemanticTree& tree,
                                              const DescriptorMapping& mapping,
                                              const RuleBase& rb, LlmBackend& backend,
                                              const PipelineConfig& cfg) {
  std::vector<std::string> options;
  options.push_back("normal");
  for (const std::string& f : fault_class_names()) options.push_back(f);

  QueryConfig qc;
  qc.token_budget = cfg.token_budget;
  qc.max_retries = 0;
  qc.backoff_ms = 0;

  std::vector<ReportBundle> out;
  for (std::size_t i = 0; i < bundle.samples.size(); ++i) {
    if (out.size() >= static_cast<std::size_t>(cfg.report_limit)) break;
    Sample scaled = bundle.samples[i];
    scaler.apply(scaled.x);
    const DetectionOutput det = model.forward(scaled.x);
    if (det.p_d[1] < det.p_d[0]) continue;
    const int pred_fault = static_cast<int>(
        std::max_element(det.p_c.begin(), det.p_c.end()) - det.p_c.begin());

    const SceneWindowKey key = bundle.keys[i];
    PromptInputs in;
    in.detection = det;
    in.predicted_fault = label_name(pred_fault);
    in.options = options;
    const Scene& scene = bundle.scenes[key.scene];
    for (const std::string& entity : scene.entity_ids) {
      const ScaledStateList& lss =
          bundle.lss.at(entity)[static_cast<std::size_t>(key.window_index)];
      GenerationResult gen =
          generate_descriptions(lss, tree, mapping, rb, {}, cfg.now, cfg.delta_t);
      for (std::string& s : gen.sentences) in.sentences.push_back(std::move(s));
    }

    ReportBundle rb_out;
    rb_out.key = key;
    rb_out.prompt = build_prompt(in);
    rb_out.response = query_llm(rb_out.prompt, backend, qc);
    rb_out.report = parse_report(rb_out.response, rb_out.prompt.options);
    out.push_back(std::move(rb_out));
  }
  return out;
}

}  // namespace msadm
