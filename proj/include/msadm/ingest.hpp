#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"

namespace msadm {

/// One entity's raw samples for one KPI. Timestamps are strictly
/// increasing seconds; values are in KPI-native units.
struct KpiTrace {
  std::string entity_id;
  std::string entity_class;
  std::string kpi_name;
  std::vector<double> timestamps;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

/// A fixed-length slice of one trace.
struct KpiWindow {
  std::string entity_id;
  std::string entity_class;
  std::string kpi_name;
  int window_index = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

enum class TraceFormat { csv, jsonl };

namespace detail {

inline constexpr const char* kCsvHeader = "entity_id,entity_class,kpi_name,timestamp,value";

struct TraceRow {
  std::string entity_id;
  std::string entity_class;
  std::string kpi_name;
  double timestamp;
  double value;
};

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return fields;
}

inline std::vector<KpiTrace> assemble_traces(const std::vector<TraceRow>& rows,
                                             const std::vector<std::size_t>& row_lines) {
  std::vector<KpiTrace> traces;
  std::map<std::pair<std::string, std::string>, std::size_t> index;  // (entity, kpi) -> slot
  std::map<std::string, std::string> entity_classes;

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const TraceRow& row = rows[r];
    const std::size_t line = row_lines[r];
    if (!std::isfinite(row.timestamp) || !std::isfinite(row.value))
      throw ValidationError("line " + std::to_string(line) + ": non-finite timestamp or value");

    auto cls = entity_classes.find(row.entity_id);
    if (cls == entity_classes.end())
      entity_classes.emplace(row.entity_id, row.entity_class);
    else if (cls->second != row.entity_class)
      throw ValidationError("line " + std::to_string(line) + ": entity '" + row.entity_id +
                            "' changes class from '" + cls->second + "' to '" + row.entity_class + "'");

    auto key = std::make_pair(row.entity_id, row.kpi_name);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, traces.size()).first;
      traces.push_back(KpiTrace{row.entity_id, row.entity_class, row.kpi_name, {}, {}});
    }
    KpiTrace& t = traces[it->second];
    if (!t.timestamps.empty() && row.timestamp <= t.timestamps.back())
      throw ValidationError("line " + std::to_string(line) + ": timestamps not strictly increasing for (" +
                            row.entity_id + ", " + row.kpi_name + ")");
    t.timestamps.push_back(row.timestamp);
    t.values.push_back(row.value);
  }
  return traces;
}

}  // namespace detail

/// Loads traces from a CSV or JSONL file. One trace per (entity_id,
/// kpi_name) pair, in first-appearance order. Malformed rows raise
/// ParseError naming the line; non-monotone timestamps raise
/// ValidationError.
inline std::vector<KpiTrace> load_traces(const std::string& path, TraceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trace file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::vector<detail::TraceRow> rows;
  std::vector<std::size_t> row_lines;
  if (text.empty()) return {};

  const auto lines = split_lines(text);
  if (format == TraceFormat::csv) {
    if (trim(lines[0]) != detail::kCsvHeader)
      throw ParseError(1, "expected header '" + std::string(detail::kCsvHeader) + "'");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::string& line = lines[i];
      if (trim(line).empty()) continue;
      auto fields = detail::split_csv_row(line);
      if (fields.size() != 5)
        throw ParseError(i + 1, "expected 5 fields, got " + std::to_string(fields.size()));
      detail::TraceRow row;
      row.entity_id = trim(fields[0]);
      row.entity_class = trim(fields[1]);
      row.kpi_name = trim(fields[2]);
      try {
        row.timestamp = parse_double(trim(fields[3]));
        row.value = parse_double(trim(fields[4]));
      } catch (const ParseError& e) {
        throw ParseError(i + 1, e.what());
      }
      rows.push_back(std::move(row));
      row_lines.push_back(i + 1);
    }
  } else {
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string& line = lines[i];
      if (trim(line).empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object())
        throw ParseError(i + 1, "invalid JSON object");
      detail::TraceRow row;
      try {
        row.entity_id = j.at("entity_id").get<std::string>();
        row.entity_class = j.at("entity_class").get<std::string>();
        row.kpi_name = j.at("kpi_name").get<std::string>();
        row.timestamp = j.at("timestamp").get<double>();
        row.value = j.at("value").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(i + 1, e.what());
      }
      rows.push_back(std::move(row));
      row_lines.push_back(i + 1);
    }
  }
  return detail::assemble_traces(rows, row_lines);
}

/// Writes traces in the same row order load_traces reproduces bit-exactly.
inline void write_traces(const std::vector<KpiTrace>& traces, const std::string& path,
                         TraceFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  if (format == TraceFormat::csv) {
    out << detail::kCsvHeader << "\n";
    for (const KpiTrace& t : traces)
      for (std::size_t i = 0; i < t.size(); ++i)
        out << t.entity_id << ',' << t.entity_class << ',' << t.kpi_name << ','
            << fmt_double(t.timestamps[i]) << ',' << fmt_double(t.values[i]) << "\n";
  } else {
    for (const KpiTrace& t : traces)
      for (std::size_t i = 0; i < t.size(); ++i) {
        nlohmann::json j;
        j["entity_id"] = t.entity_id;
        j["entity_class"] = t.entity_class;
        j["kpi_name"] = t.kpi_name;
        j["timestamp"] = t.timestamps[i];
        j["value"] = t.values[i];
        out << j.dump() << "\n";
      }
  }
}

/// Slices a trace into windows at offsets 0, stride, 2*stride, ...
/// The trailing partial window is dropped; a trace shorter than T
/// yields an empty list.
inline std::vector<KpiWindow> window(const KpiTrace& trace, int T, int stride) {
  if (T < 2) throw std::invalid_argument("window length must be >= 2");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::vector<KpiWindow> out;
  if (trace.size() < static_cast<std::size_t>(T)) return out;
  const std::size_t n = trace.size();
  int idx = 0;
  for (std::size_t off = 0; off + static_cast<std::size_t>(T) <= n; off += static_cast<std::size_t>(stride)) {
    KpiWindow w;
    w.entity_id = trace.entity_id;
    w.entity_class = trace.entity_class;
    w.kpi_name = trace.kpi_name;
    w.window_index = idx++;
    w.values.assign(trace.values.begin() + static_cast<std::ptrdiff_t>(off),
                    trace.values.begin() + static_cast<std::ptrdiff_t>(off) + T);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace msadm
