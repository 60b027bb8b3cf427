#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"
#include "msadm/ingest.hpp"
#include "msadm/rng.hpp"

namespace msadm {

inline constexpr const char* kKpiPacketLoss = "packet_loss";
inline constexpr const char* kKpiDelay = "delay";
inline constexpr const char* kKpiThroughput = "throughput";
inline constexpr const char* kKpiJitter = "jitter";

enum class FaultClass { congestion, node_crash, malicious_traffic, config_error, interference };

inline const std::vector<std::string>& fault_class_names() {
  static const std::vector<std::string> names = {
      "congestion", "node_crash", "malicious_traffic", "config_error", "interference"};
  return names;
}

inline std::string to_string(FaultClass f) { return fault_class_names()[static_cast<int>(f)]; }

inline FaultClass fault_class_from_string(const std::string& name) {
  const auto& names = fault_class_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<FaultClass>(i);
  throw ValidationError("unknown fault class: " + name);
}

struct KpiBaseline {
  double mean = 0.0;
  double noise = 0.0;  // Gaussian sigma
};

struct ClassProfile {
  std::string entity_class;
  std::size_t node_count = 1;
  std::map<std::string, KpiBaseline> kpis;
};

/// start/end are sample indices into each target's traces, [start, end).
struct FaultEvent {
  FaultClass fault_class = FaultClass::congestion;
  std::vector<std::string> targets;
  std::size_t start = 0;
  std::size_t end = 0;
  double intensity = 1.0;
};

struct ScenarioConfig {
  std::vector<ClassProfile> classes;
  std::size_t duration = 256;  // samples per entity
  int window = 16;
  int stride = 16;
  std::uint64_t seed = 1;
  std::vector<FaultEvent> faults;
};

struct WindowLabel {
  std::string entity_id;
  int window_index = 0;
  bool anomaly = false;
  std::string fault_class = "normal";
};

struct SimResult {
  std::vector<KpiTrace> traces;
  std::vector<WindowLabel> labels;
};

namespace detail {

inline std::string entity_name(const std::string& entity_class, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "-%02zu", index);
  return entity_class + buf;
}

inline double clamp_kpi(const std::string& kpi, double v) {
  if (kpi == kKpiPacketLoss) return std::clamp(v, 0.0, 1.0);
  return std::max(v, 0.0);
}

}  // namespace detail

/// Baselines placing the three entity classes on clearly separated loss
/// scales (vehicle ~0.5%, expressway ~1%, UAV ~3%).
inline ScenarioConfig default_scenario() {
  ScenarioConfig cfg;
  cfg.classes = {
      {"city_vehicle",
       4,
       {{kKpiPacketLoss, {0.005, 0.001}},
        {kKpiDelay, {20.0, 2.0}},
        {kKpiThroughput, {80.0, 4.0}},
        {kKpiJitter, {1.5, 0.3}}}},
      {"expressway",
       4,
       {{kKpiPacketLoss, {0.01, 0.002}},
        {kKpiDelay, {35.0, 3.0}},
        {kKpiThroughput, {50.0, 3.0}},
        {kKpiJitter, {3.0, 0.5}}}},
      {"plain_uav",
       4,
       {{kKpiPacketLoss, {0.03, 0.005}},
        {kKpiDelay, {60.0, 6.0}},
        {kKpiThroughput, {20.0, 2.0}},
        {kKpiJitter, {6.0, 1.0}}}},
  };
  return cfg;
}

inline void validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.classes.empty()) throw ValidationError("scenario: at least one entity class required");
  std::set<std::string> entity_ids;
  for (const ClassProfile& cp : cfg.classes) {
    if (cp.entity_class.empty()) throw ValidationError("scenario: empty entity class name");
    if (cp.node_count < 1)
      throw ValidationError("scenario: node count must be >= 1 for " + cp.entity_class);
    if (cp.kpis.empty())
      throw ValidationError("scenario: no KPI baselines for " + cp.entity_class);
    for (const auto& [kpi, base] : cp.kpis) {
      if (!(base.mean >= 0.0) || !(base.noise >= 0.0) || !std::isfinite(base.mean) ||
          !std::isfinite(base.noise))
        throw ValidationError("scenario: distribution parameters must be finite and >= 0 for " +
                              cp.entity_class + "/" + kpi);
    }
    for (std::size_t i = 0; i < cp.node_count; ++i)
      entity_ids.insert(detail::entity_name(cp.entity_class, i));
  }
  if (cfg.window < 2) throw ValidationError("scenario: window must be >= 2");
  if (cfg.stride < 1) throw ValidationError("scenario: stride must be >= 1");
  if (cfg.duration < static_cast<std::size_t>(cfg.window))
    throw ValidationError("scenario: duration shorter than one window");

  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> spans;
  for (const FaultEvent& ev : cfg.faults) {
    if (ev.start >= ev.end) throw ValidationError("fault event: start must precede end");
    if (ev.end > cfg.duration) throw ValidationError("fault event: extends past duration");
    if (!(ev.intensity > 0.0 && ev.intensity <= 1.0))
      throw ValidationError("fault event: intensity must be in (0,1]");
    if (ev.targets.empty()) throw ValidationError("fault event: no targets");
    for (const std::string& id : ev.targets) {
      if (!entity_ids.count(id)) throw ValidationError("fault event: unknown target " + id);
      for (const auto& [s, e] : spans[id])
        if (ev.start < e && s < ev.end)
          throw ValidationError("fault events overlap on entity " + id);
      spans[id].emplace_back(ev.start, ev.end);
    }
  }
}

/// Applies the event's transform to samples in [start, end); everything
/// else is untouched. Zero intensity is the identity.
inline KpiTrace inject_fault(const KpiTrace& trace, const FaultEvent& event) {
  if (event.start >= event.end || event.end > trace.size())
    throw std::domain_error("inject_fault: event window outside trace span");
  KpiTrace out = trace;
  const double i = event.intensity;
  if (i == 0.0) return out;
  for (std::size_t t = event.start; t < event.end; ++t) {
    double v = out.values[t];
    switch (event.fault_class) {
      case FaultClass::congestion:
        if (out.kpi_name == kKpiDelay) v *= 1.0 + i;
        if (out.kpi_name == kKpiPacketLoss) v *= 1.0 + 9.0 * i;
        break;
      case FaultClass::node_crash:
        if (out.kpi_name == kKpiPacketLoss) v = 1.0;
        if (out.kpi_name == kKpiThroughput) v = 0.0;
        break;
      case FaultClass::malicious_traffic:
        if (out.kpi_name == kKpiThroughput) v *= 1.0 + 4.0 * i;
        if (out.kpi_name == kKpiPacketLoss) v = 0.99;
        break;
      case FaultClass::config_error:
        if (out.kpi_name == kKpiDelay) v *= 1.0 + 3.0 * i;
        break;
      case FaultClass::interference:
        if (out.kpi_name == kKpiJitter) v *= 1.0 + 6.0 * i;
        break;
    }
    out.values[t] = detail::clamp_kpi(out.kpi_name, v);
  }
  return out;
}

/// Generates per-entity traces from the class baselines, injects the fault
/// schedule, and labels each window by overlap with the injected intervals.
inline SimResult simulate(const ScenarioConfig& cfg) {
  validate_scenario(cfg);
  SimResult result;

  std::map<std::string, std::vector<const FaultEvent*>> by_entity;
  for (const FaultEvent& ev : cfg.faults)
    for (const std::string& id : ev.targets) by_entity[id].push_back(&ev);

  for (const ClassProfile& cp : cfg.classes) {
    for (std::size_t node = 0; node < cp.node_count; ++node) {
      const std::string entity_id = detail::entity_name(cp.entity_class, node);
      for (const auto& [kpi, base] : cp.kpis) {
        Rng rng(mix_seed(mix_seed(cfg.seed, entity_id), kpi));
        KpiTrace trace;
        trace.entity_id = entity_id;
        trace.entity_class = cp.entity_class;
        trace.kpi_name = kpi;
        trace.timestamps.reserve(cfg.duration);
        trace.values.reserve(cfg.duration);
        for (std::size_t t = 0; t < cfg.duration; ++t) {
          trace.timestamps.push_back(static_cast<double>(t));
          trace.values.push_back(
              detail::clamp_kpi(kpi, base.mean + base.noise * rng.normal()));
        }
        for (const FaultEvent* ev : by_entity[entity_id]) trace = inject_fault(trace, *ev);
        result.traces.push_back(std::move(trace));
      }

      const std::size_t T = static_cast<std::size_t>(cfg.window);
      const std::size_t stride = static_cast<std::size_t>(cfg.stride);
      int widx = 0;
      for (std::size_t off = 0; off + T <= cfg.duration; off += stride, ++widx) {
        WindowLabel label;
        label.entity_id = entity_id;
        label.window_index = widx;
        // When disjoint events share a window, the larger overlap names the
        // fault; ties go to the earlier event.
        std::size_t best_overlap = 0;
        std::size_t best_start = 0;
        for (const FaultEvent* ev : by_entity[entity_id]) {
          const std::size_t lo = std::max(off, ev->start);
          const std::size_t hi = std::min(off + T, ev->end);
          if (lo >= hi) continue;
          const std::size_t overlap = hi - lo;
          if (overlap > best_overlap || (overlap == best_overlap && ev->start < best_start)) {
            best_overlap = overlap;
            best_start = ev->start;
            label.anomaly = true;
            label.fault_class = to_string(ev->fault_class);
          }
        }
        result.labels.push_back(std::move(label));
      }
    }
  }
  return result;
}

/// Appends `count` non-overlapping fault events cycling through the fault
/// classes, with randomized targets, spans, and intensities drawn from the
/// scenario seed. Events that cannot be placed without overlap are skipped.
inline void auto_fault_schedule(ScenarioConfig& cfg, std::size_t count) {
  std::vector<std::string> entities;
  for (const ClassProfile& cp : cfg.classes)
    for (std::size_t i = 0; i < cp.node_count; ++i)
      entities.push_back(detail::entity_name(cp.entity_class, i));
  if (entities.empty()) throw ValidationError("auto_fault_schedule: no entities");
  const std::size_t T = static_cast<std::size_t>(cfg.window);
  if (cfg.duration < 2 * T)
    throw ValidationError("auto_fault_schedule: duration too short for fault spans");

  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> spans;
  for (const FaultEvent& ev : cfg.faults)
    for (const std::string& id : ev.targets) spans[id].emplace_back(ev.start, ev.end);

  Rng rng(mix_seed(cfg.seed, "fault-schedule"));
  std::size_t placed = 0;
  for (std::size_t i = 0; placed < count && i < count * 20; ++i) {
    FaultEvent ev;
    ev.fault_class = static_cast<FaultClass>(placed % fault_class_names().size());
    const std::string& target = entities[rng.index(entities.size())];
    const std::size_t len = std::min(T + rng.index(2 * T), cfg.duration - 1);
    const std::size_t start = rng.index(cfg.duration - len);
    ev.targets = {target};
    ev.start = start;
    ev.end = start + len;
    ev.intensity = 0.4 + 0.6 * rng.uniform();
    bool overlaps = false;
    for (const auto& [s, e] : spans[target])
      if (ev.start < e && s < ev.end) overlaps = true;
    if (overlaps) continue;
    spans[target].emplace_back(ev.start, ev.end);
    cfg.faults.push_back(std::move(ev));
    ++placed;
  }
}

// ---------------------------------------------------------------------------
// Labels + scenario files
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr const char* kLabelHeader = "entity_id,window_index,anomaly,fault_class";
}

inline void write_labels(const std::vector<WindowLabel>& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << detail::kLabelHeader << "\n";
  for (const WindowLabel& l : labels)
    out << l.entity_id << ',' << l.window_index << ',' << (l.anomaly ? 1 : 0) << ','
        << l.fault_class << "\n";
}

inline std::vector<WindowLabel> load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open labels file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto lines = split_lines(ss.str());
  if (lines.empty() || trim(lines[0]) != detail::kLabelHeader)
    throw ParseError(1, "expected header '" + std::string(detail::kLabelHeader) + "'");
  std::vector<WindowLabel> labels;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = detail::split_csv_row(lines[i]);
    if (fields.size() != 4)
      throw ParseError(i + 1, "expected 4 fields, got " + std::to_string(fields.size()));
    WindowLabel l;
    l.entity_id = trim(fields[0]);
    l.window_index = static_cast<int>(parse_double(trim(fields[1])));
    l.anomaly = trim(fields[2]) == "1";
    l.fault_class = trim(fields[3]);
    labels.push_back(std::move(l));
  }
  return labels;
}

inline nlohmann::json scenario_to_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["duration"] = cfg.duration;
  j["window"] = cfg.window;
  j["stride"] = cfg.stride;
  j["seed"] = cfg.seed;
  j["classes"] = nlohmann::json::array();
  for (const ClassProfile& cp : cfg.classes) {
    nlohmann::json jc;
    jc["entity_class"] = cp.entity_class;
    jc["node_count"] = cp.node_count;
    jc["kpis"] = nlohmann::json::object();
    for (const auto& [kpi, base] : cp.kpis)
      jc["kpis"][kpi] = {{"mean", base.mean}, {"noise", base.noise}};
    j["classes"].push_back(jc);
  }
  j["faults"] = nlohmann::json::array();
  for (const FaultEvent& ev : cfg.faults)
    j["faults"].push_back({{"fault_class", to_string(ev.fault_class)},
                           {"targets", ev.targets},
                           {"start", ev.start},
                           {"end", ev.end},
                           {"intensity", ev.intensity}});
  return j;
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig cfg;
  try {
    cfg.duration = j.at("duration").get<std::size_t>();
    cfg.window = j.at("window").get<int>();
    cfg.stride = j.at("stride").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jc : j.at("classes")) {
      ClassProfile cp;
      cp.entity_class = jc.at("entity_class").get<std::string>();
      cp.node_count = jc.at("node_count").get<std::size_t>();
      for (const auto& [kpi, jb] : jc.at("kpis").items())
        cp.kpis[kpi] = {jb.at("mean").get<double>(), jb.at("noise").get<double>()};
      cfg.classes.push_back(std::move(cp));
    }
    if (j.contains("faults")) {
      for (const auto& je : j.at("faults")) {
        FaultEvent ev;
        ev.fault_class = fault_class_from_string(je.at("fault_class").get<std::string>());
        ev.targets = je.at("targets").get<std::vector<std::string>>();
        ev.start = je.at("start").get<std::size_t>();
        ev.end = je.at("end").get<std::size_t>();
        ev.intensity = je.at("intensity").get<double>();
        cfg.faults.push_back(std::move(ev));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scenario config: ") + e.what());
  }
  return cfg;
}

}  // namespace msadm
