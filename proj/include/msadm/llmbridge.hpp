#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"
#include "msadm/model.hpp"

namespace msadm {

inline constexpr const char* kNormalOption = "normal";
inline constexpr const char* kUnclassifiedOption = "unclassified";

struct PromptBundle {
  std::string context;
  std::vector<std::string> options;
  std::string task_instruction;
  std::string rendered;
};

struct ReportAction {
  std::string description;
  std::string script;  // opaque text from a fenced block, never executed
};

struct Report {
  std::string fault_type;
  std::string severity;
  std::vector<std::string> evidence;
  std::vector<ReportAction> actions;
  std::string raw_response;
  bool fault_remapped = false;  // fault named outside options, degraded to unclassified
};

struct PromptInputs {
  DetectionOutput detection;
  std::string predicted_fault;  // label of the argmax classification head
  std::vector<std::string> sentences;
  std::vector<std::string> options;
  std::vector<std::string> common_anomalies;
};

/// Deterministic three-segment prompt: Context, restricted Options, and the
/// chain-of-verification task instruction.
inline PromptBundle build_prompt(const PromptInputs& in) {
  if (in.options.empty()) throw std::domain_error("build_prompt: options must not be empty");

  PromptBundle b;
  b.options = in.options;
  if (std::find(b.options.begin(), b.options.end(), kNormalOption) == b.options.end())
    b.options.push_back(kNormalOption);
  if (std::find(b.options.begin(), b.options.end(), kUnclassifiedOption) == b.options.end())
    b.options.push_back(kUnclassifiedOption);

  const bool anomalous = in.detection.p_d[1] >= in.detection.p_d[0];
  std::ostringstream ctx;
  ctx << "Anomaly detection verdict: " << (anomalous ? "anomalous" : "normal") << " (p="
      << fmt_fixed(in.detection.p_d[anomalous ? 1 : 0], 4) << ").";
  if (!in.predicted_fault.empty()) {
    double p_top = 0.0;
    for (double p : in.detection.p_c) p_top = std::max(p_top, p);
    ctx << " Predicted fault type: " << in.predicted_fault << " (p=" << fmt_fixed(p_top, 4)
        << ").";
  }
  ctx << "\n";
  if (in.sentences.empty()) {
    ctx << "All monitored KPI states are normal; no anomalous states were observed.\n";
  } else {
    ctx << "Observed anomalous KPI states:\n";
    for (const std::string& s : in.sentences) ctx << "- " << s << "\n";
  }
  if (!in.common_anomalies.empty()) {
    ctx << "Common anomalies for this entity class:\n";
    for (const std::string& c : in.common_anomalies) ctx << "- " << c << "\n";
  }
  b.context = ctx.str();

  std::ostringstream task;
  task << "Step 1: Confirm the fault type. Compare the detection verdict and the observed KPI "
          "states against each option and choose exactly one option from the list.\n"
       << "Step 2: Verify the evidence. Quote every observed KPI state sentence that supports "
          "your chosen fault type, verbatim, and reject sentences that contradict it.\n"
       << "Step 3: Generate mitigation actions. Propose concrete remediation steps for the "
          "confirmed fault; include shell commands in fenced code blocks where applicable.\n"
       << "Respond in exactly this format:\n"
       << "FAULT TYPE: <one option from the list>\n"
       << "SEVERITY: <one word>\n"
       << "EVIDENCE:\n"
       << "- <verbatim sentence>\n"
       << "ACTIONS:\n"
       << "- <action description>\n";
  b.task_instruction = task.str();

  std::ostringstream out;
  out << "=== Context ===\n" << b.context;
  out << "=== Options ===\n";
  for (std::size_t i = 0; i < b.options.size(); ++i)
    out << (i + 1) << ". " << b.options[i] << "\n";
  out << "=== Task Instruction ===\n" << b.task_instruction;
  b.rendered = out.str();
  return b;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string name() const = 0;
  // Returns raw completion text; throws BackendError on transport failure.
  virtual std::string complete(const std::string& prompt) = 0;
};

struct QueryConfig {
  int max_retries = 3;
  int backoff_ms = 100;
  std::size_t token_budget = 8192;  // estimated as ceil(chars / 4)
  std::function<void(const std::string&)> logger;  // request/response log sink
};

inline std::size_t estimate_tokens(const std::string& text) { return (text.size() + 3) / 4; }

inline std::string query_llm(const PromptBundle& prompt, LlmBackend& backend,
                             const QueryConfig& qc = {}) {
  const std::size_t est = estimate_tokens(prompt.rendered);
  if (est > qc.token_budget)
    throw BackendError("prompt estimated at " + std::to_string(est) +
                       " tokens exceeds budget of " + std::to_string(qc.token_budget));
  auto log = [&](const std::string& line) {
    if (!qc.logger) return;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    qc.logger("[" + std::to_string(ms) + "] " + line);
  };
  log("request to " + backend.name() + " (" + std::to_string(est) + " est. tokens)");
  std::string last_error;
  for (int attempt = 0; attempt <= qc.max_retries; ++attempt) {
    if (attempt > 0) {
      const int delay = qc.backoff_ms * (1 << (attempt - 1));
      log("retry " + std::to_string(attempt) + " after " + std::to_string(delay) + " ms");
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    try {
      std::string response = backend.complete(prompt.rendered);
      log("response received (" + std::to_string(response.size()) + " bytes)");
      return response;
    } catch (const BackendError& e) {
      last_error = e.what();
    }
  }
  throw BackendError("backend failed after " + std::to_string(qc.max_retries) +
                     " retries: " + last_error);
}

namespace detail {

inline std::string severity_word_for(const std::vector<std::string>& sentences) {
  static const std::pair<const char*, int> ranks[] = {
      {"slight", 1}, {"moderate", 2}, {"high", 3}, {"extreme", 4}, {"complete", 5}};
  int best = 0;
  for (const std::string& s : sentences) {
    const std::string low = to_lower(s);
    for (const auto& [word, rank] : ranks)
      if (low.find(word) != std::string::npos) best = std::max(best, rank);
  }
  switch (best) {
    case 1: return "low";
    case 2: return "moderate";
    case 3: return "high";
    case 4:
    case 5: return "critical";
    default: return "none";
  }
}

}  // namespace detail

/// Offline backend. If a canned-response directory is configured and holds a
/// file named by the prompt's FNV-1a hash, that file is returned verbatim;
/// otherwise a schema-conforming report is synthesized from the prompt text.
class MockBackend : public LlmBackend {
 public:
  explicit MockBackend(std::string canned_dir = "") : canned_dir_(std::move(canned_dir)) {}

  std::string name() const override { return "mock"; }

  std::string complete(const std::string& prompt) override {
    if (!canned_dir_.empty()) {
      char hex[17];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(fnv1a64(prompt)));
      const std::filesystem::path p = std::filesystem::path(canned_dir_) / (std::string(hex) + ".txt");
      std::ifstream f(p);
      if (f) {
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
      }
    }
    return synthesize(prompt);
  }

 private:
  static std::string synthesize(const std::string& prompt) {
    std::vector<std::string> sentences;
    std::vector<std::string> options;
    std::string predicted;
    bool anomalous = false;
    enum { none, context, opts } section = none;
    for (const std::string& raw : split_lines(prompt)) {
      const std::string line = trim(raw);
      if (line == "=== Context ===") {
        section = context;
        continue;
      }
      if (line == "=== Options ===") {
        section = opts;
        continue;
      }
      if (line == "=== Task Instruction ===") break;
      if (section == context) {
        if (line.rfind("Anomaly detection verdict: anomalous", 0) == 0) anomalous = true;
        const std::string key = "Predicted fault type: ";
        const std::size_t at = line.find(key);
        if (at != std::string::npos) {
          const std::size_t start = at + key.size();
          const std::size_t stop = line.find(" (p=", start);
          predicted = line.substr(start, stop == std::string::npos ? std::string::npos
                                                                   : stop - start);
        }
        if (line.rfind("- ", 0) == 0 && line.size() > 2 && line.back() == '.')
          sentences.push_back(line.substr(2));
      } else if (section == opts) {
        const std::size_t dot = line.find(". ");
        if (dot != std::string::npos) options.push_back(line.substr(dot + 2));
      }
    }

    std::string fault = kUnclassifiedOption;
    if (!anomalous) {
      fault = kNormalOption;
    } else if (std::find(options.begin(), options.end(), predicted) != options.end() &&
               predicted != kNormalOption) {
      fault = predicted;
    }

    std::ostringstream out;
    out << "FAULT TYPE: " << fault << "\n";
    out << "SEVERITY: " << (anomalous ? detail::severity_word_for(sentences) : "none") << "\n";
    out << "EVIDENCE:\n";
    if (sentences.empty())
      out << "- All monitored KPI states are normal.\n";
    else
      for (const std::string& s : sentences) out << "- " << s << "\n";
    out << "ACTIONS:\n";
    if (fault == kNormalOption) {
      out << "- Continue routine monitoring; no mitigation is required.\n";
    } else {
      out << "- Isolate the affected entity and inspect recent KPI windows for " << fault
          << ".\n";
      out << "```shell\n";
      out << "netmon inspect --fault " << fault << " --window last\n";
      out << "```\n";
      out << "- Re-run detection after mitigation to confirm recovery.\n";
    }
    return out.str();
  }

  std::string canned_dir_;
};

/// Parses the schema-conforming report text: FAULT TYPE / EVIDENCE / ACTIONS
/// are required, SEVERITY is optional, fenced blocks under ACTIONS attach to
/// the preceding action as opaque script text.
inline Report parse_report(const std::string& raw, const std::vector<std::string>& options) {
  if (raw.empty()) throw std::invalid_argument("parse_report: empty response");
  Report rep;
  rep.raw_response = raw;
  rep.severity = "unspecified";

  enum class Section { none, evidence, actions };
  Section section = Section::none;
  bool saw_fault = false, saw_evidence = false, saw_actions = false;
  bool in_fence = false;
  std::string fence_text;

  for (const std::string& line_raw : split_lines(raw)) {
    const std::string line = trim(line_raw);
    if (in_fence) {
      if (line.rfind("```", 0) == 0) {
        in_fence = false;
        if (!rep.actions.empty()) rep.actions.back().script = fence_text;
        fence_text.clear();
      } else {
        fence_text += line_raw;
        fence_text += '\n';
      }
      continue;
    }
    if (line.rfind("FAULT TYPE:", 0) == 0) {
      rep.fault_type = trim(line.substr(11));
      saw_fault = true;
      section = Section::none;
      continue;
    }
    if (line.rfind("SEVERITY:", 0) == 0) {
      rep.severity = trim(line.substr(9));
      section = Section::none;
      continue;
    }
    if (line == "EVIDENCE:") {
      saw_evidence = true;
      section = Section::evidence;
      continue;
    }
    if (line == "ACTIONS:") {
      saw_actions = true;
      section = Section::actions;
      continue;
    }
    if (section == Section::actions && line.rfind("```", 0) == 0) {
      in_fence = true;
      fence_text.clear();
      continue;
    }
    if (line.rfind("- ", 0) == 0) {
      if (section == Section::evidence) rep.evidence.push_back(line.substr(2));
      if (section == Section::actions) rep.actions.push_back({line.substr(2), ""});
    }
  }
  if (!saw_fault) throw SchemaError("response is missing the FAULT TYPE section", raw);
  if (!saw_evidence) throw SchemaError("response is missing the EVIDENCE section", raw);
  if (!saw_actions) throw SchemaError("response is missing the ACTIONS section", raw);
  if (rep.fault_type.empty()) throw SchemaError("FAULT TYPE line is empty", raw);

  if (std::find(options.begin(), options.end(), rep.fault_type) == options.end()) {
    rep.fault_type = kUnclassifiedOption;
    rep.fault_remapped = true;
  }
  return rep;
}

/// Renders a Report back into the response schema; parse_report round-trips it.
inline std::string render_report(const Report& rep) {
  std::ostringstream out;
  out << "FAULT TYPE: " << rep.fault_type << "\n";
  out << "SEVERITY: " << rep.severity << "\n";
  out << "EVIDENCE:\n";
  for (const std::string& e : rep.evidence) out << "- " << e << "\n";
  out << "ACTIONS:\n";
  for (const ReportAction& a : rep.actions) {
    out << "- " << a.description << "\n";
    if (!a.script.empty()) {
      out << "```shell\n" << a.script;
      if (a.script.back() != '\n') out << "\n";
      out << "```\n";
    }
  }
  return out.str();
}

inline nlohmann::json report_to_json(const Report& rep) {
  nlohmann::json j;
  j["fault_type"] = rep.fault_type;
  j["severity"] = rep.severity;
  j["evidence"] = rep.evidence;
  j["actions"] = nlohmann::json::array();
  for (const ReportAction& a : rep.actions)
    j["actions"].push_back({{"description", a.description}, {"script", a.script}});
  j["fault_remapped"] = rep.fault_remapped;
  return j;
}

/// Chat-completion HTTP backend. Base URL and model come from config; the
/// API key is read from an environment variable at call time.
struct HttpBackendConfig {
  std::string base_url;  // e.g. http://localhost:8080
  std::string model;
  std::string api_key_env = "MSADM_LLM_API_KEY";
  int timeout_seconds = 30;
};

class HttpBackend : public LlmBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.empty()) throw ValidationError("HttpBackend: base_url is required");
  }

  std::string name() const override { return "http:" + cfg_.model; }

  std::string complete(const std::string& prompt) override;

 private:
  HttpBackendConfig cfg_;
};

}  // namespace msadm

// httplib pulls in system networking headers; keep it at the bottom so the
// pure parts of this header stay cheap for the test binaries.
#ifndef MSADM_NO_HTTP
#include <httplib.h>

namespace msadm {

inline std::string HttpBackend::complete(const std::string& prompt) {
  httplib::Client client(cfg_.base_url);
  client.set_connection_timeout(cfg_.timeout_seconds);
  client.set_read_timeout(cfg_.timeout_seconds);
  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
    headers.emplace("Authorization", std::string("Bearer ") + key);
  nlohmann::json body;
  body["model"] = cfg_.model;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
  auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res)
    throw BackendError("no response from " + cfg_.base_url + ": " +
                       httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendError("backend returned HTTP " + std::to_string(res->status));
  nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw BackendError("backend returned invalid JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError("backend response missing choices[0].message.content");
  }
}

}  // namespace msadm
#endif  // MSADM_NO_HTTP
