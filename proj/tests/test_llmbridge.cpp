#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msadm/llmbridge.hpp"

using namespace msadm;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("msadm-llm-" + std::to_string(::getpid()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

PromptInputs anomalous_inputs() {
  PromptInputs in;
  in.detection.p_d = {0.2, 0.8};
  in.detection.p_c = {0.1, 0.7, 0.2};
  in.predicted_fault = "congestion";
  in.sentences = {"The delay shows a moderate anomaly.",
                  "The packet loss rate shows a high anomaly."};
  in.options = {"congestion", "node_crash"};
  return in;
}

struct CountingBackend : LlmBackend {
  int calls = 0;
  int fail_first = 0;
  std::string reply = "ok";
  std::string name() const override { return "counting"; }
  std::string complete(const std::string&) override {
    ++calls;
    if (calls <= fail_first) throw BackendError("transient failure " + std::to_string(calls));
    return reply;
  }
};

}  // namespace

TEST_CASE("prompts render the three labelled segments") {
  const PromptBundle b = build_prompt(anomalous_inputs());

  CHECK(b.rendered.find("=== Context ===\n") != std::string::npos);
  CHECK(b.rendered.find("=== Options ===\n") != std::string::npos);
  CHECK(b.rendered.find("=== Task Instruction ===\n") != std::string::npos);
  CHECK(b.rendered.find("Anomaly detection verdict: anomalous (p=0.8000).") != std::string::npos);
  CHECK(b.rendered.find("Predicted fault type: congestion (p=0.7000).") != std::string::npos);

  // Every sentence appears verbatim as a bullet.
  CHECK(b.context.find("- The delay shows a moderate anomaly.\n") != std::string::npos);
  CHECK(b.context.find("- The packet loss rate shows a high anomaly.\n") != std::string::npos);

  // Options are numbered from 1 and close with the two mandatory labels.
  REQUIRE(b.options.size() == 4);
  CHECK(b.options[0] == "congestion");
  CHECK(b.options[1] == "node_crash");
  CHECK(b.options[2] == "normal");
  CHECK(b.options[3] == "unclassified");
  CHECK(b.rendered.find("1. congestion\n") != std::string::npos);
  CHECK(b.rendered.find("3. normal\n") != std::string::npos);
  CHECK(b.rendered.find("4. unclassified\n") != std::string::npos);

  // The three-step verification instruction.
  CHECK(b.task_instruction.find("Step 1: Confirm the fault type.") != std::string::npos);
  CHECK(b.task_instruction.find("Step 2: Verify the evidence.") != std::string::npos);
  CHECK(b.task_instruction.find("Step 3: Generate mitigation actions.") != std::string::npos);
  CHECK(b.task_instruction.find("FAULT TYPE:") != std::string::npos);
}

TEST_CASE("normal verdicts render without a fault prediction") {
  PromptInputs in;
  in.detection.p_d = {0.9, 0.1};
  in.detection.p_c = {0.5, 0.5};
  in.options = {"congestion"};
  const PromptBundle b = build_prompt(in);
  CHECK(b.context.find("Anomaly detection verdict: normal (p=0.9000).") != std::string::npos);
  CHECK(b.context.find("Predicted fault type") == std::string::npos);
  CHECK(b.context.find("All monitored KPI states are normal") != std::string::npos);
}

TEST_CASE("mandatory options are not duplicated") {
  PromptInputs in = anomalous_inputs();
  in.options = {"normal", "congestion", "unclassified"};
  const PromptBundle b = build_prompt(in);
  CHECK(b.options.size() == 3);
  CHECK(std::count(b.options.begin(), b.options.end(), "normal") == 1);
  CHECK(std::count(b.options.begin(), b.options.end(), "unclassified") == 1);
}

TEST_CASE("common anomalies are listed when provided") {
  PromptInputs in = anomalous_inputs();
  in.common_anomalies = {"rush-hour congestion spikes"};
  const PromptBundle b = build_prompt(in);
  CHECK(b.context.find("Common anomalies for this entity class:\n") != std::string::npos);
  CHECK(b.context.find("- rush-hour congestion spikes\n") != std::string::npos);
}

TEST_CASE("prompts require at least one option") {
  PromptInputs in = anomalous_inputs();
  in.options.clear();
  CHECK_THROWS_AS(build_prompt(in), std::domain_error);
}

TEST_CASE("token estimation rounds up by four characters") {
  CHECK(estimate_tokens("") == 0);
  CHECK(estimate_tokens("abcd") == 1);
  CHECK(estimate_tokens("abcde") == 2);
  CHECK(estimate_tokens(std::string(8, 'x')) == 2);
  CHECK(estimate_tokens(std::string(9, 'x')) == 3);
}

TEST_CASE("the token budget is enforced before any backend call") {
  PromptBundle b;
  b.rendered = std::string(100, 'a');
  CountingBackend backend;
  QueryConfig qc;
  qc.token_budget = 10;
  CHECK_THROWS_AS(query_llm(b, backend, qc), BackendError);
  CHECK(backend.calls == 0);
}

TEST_CASE("transient backend failures are retried with backoff") {
  PromptBundle b;
  b.rendered = "prompt";
  CountingBackend backend;
  backend.fail_first = 2;
  QueryConfig qc;
  qc.max_retries = 2;
  qc.backoff_ms = 1;
  CHECK(query_llm(b, backend, qc) == "ok");
  CHECK(backend.calls == 3);
}

TEST_CASE("persistent failures surface the last error") {
  PromptBundle b;
  b.rendered = "prompt";
  CountingBackend backend;
  backend.fail_first = 100;
  QueryConfig qc;
  qc.max_retries = 1;
  qc.backoff_ms = 1;
  CHECK_THROWS_WITH(query_llm(b, backend, qc),
                    Catch::Matchers::ContainsSubstring("transient failure 2"));
  CHECK(backend.calls == 2);
}

TEST_CASE("the query logger records request and response lines") {
  PromptBundle b;
  b.rendered = "prompt";
  CountingBackend backend;
  std::vector<std::string> log;
  QueryConfig qc;
  qc.logger = [&](const std::string& line) { log.push_back(line); };
  query_llm(b, backend, qc);
  REQUIRE(log.size() == 2);
  CHECK(log[0].find("request to counting") != std::string::npos);
  CHECK(log[1].find("response received") != std::string::npos);
  CHECK(log[0][0] == '[');
}

TEST_CASE("canned responses are returned verbatim by prompt hash") {
  TempDir dir;
  const PromptBundle b = build_prompt(anomalous_inputs());
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(b.rendered)));
  const std::string canned = "FAULT TYPE: node_crash\nEVIDENCE:\n- x\nACTIONS:\n- y\n";
  std::ofstream((dir.path / (std::string(hex) + ".txt"))) << canned;

  MockBackend mock(dir.path.string());
  CHECK(mock.complete(b.rendered) == canned);

  // A different prompt misses the canned file and falls back to synthesis.
  PromptInputs other = anomalous_inputs();
  other.predicted_fault = "node_crash";
  const std::string synth = mock.complete(build_prompt(other).rendered);
  CHECK(synth.find("FAULT TYPE: node_crash") != std::string::npos);
}

TEST_CASE("mock synthesis is deterministic and schema-conforming") {
  const PromptBundle b = build_prompt(anomalous_inputs());
  MockBackend mock;
  const std::string r1 = mock.complete(b.rendered);
  const std::string r2 = mock.complete(b.rendered);
  CHECK(r1 == r2);

  const Report rep = parse_report(r1, b.options);
  CHECK(rep.fault_type == "congestion");
  CHECK(rep.severity == "high");  // strongest keyword in the sentences
  REQUIRE(rep.evidence.size() == 2);
  CHECK(rep.evidence[0] == "The delay shows a moderate anomaly.");
  CHECK(rep.evidence[1] == "The packet loss rate shows a high anomaly.");
  REQUIRE(rep.actions.size() == 2);
  CHECK(rep.actions[0].script.find("netmon inspect --fault congestion") != std::string::npos);
  CHECK_FALSE(rep.fault_remapped);
}

TEST_CASE("mock synthesis answers normal for normal verdicts") {
  PromptInputs in;
  in.detection.p_d = {0.9, 0.1};
  in.detection.p_c = {1.0};
  in.options = {"congestion"};
  MockBackend mock;
  const std::string raw = mock.complete(build_prompt(in).rendered);
  CHECK(raw.find("FAULT TYPE: normal\n") != std::string::npos);
  CHECK(raw.find("SEVERITY: none\n") != std::string::npos);
  CHECK(raw.find("Continue routine monitoring") != std::string::npos);
}

TEST_CASE("mock synthesis degrades unknown predictions to unclassified") {
  PromptInputs in = anomalous_inputs();
  in.predicted_fault = "made_up_fault";
  MockBackend mock;
  const std::string raw = mock.complete(build_prompt(in).rendered);
  CHECK(raw.find("FAULT TYPE: unclassified\n") != std::string::npos);

  // An anomalous verdict whose argmax is "normal" is contradictory: degrade too.
  PromptInputs odd = anomalous_inputs();
  odd.predicted_fault = "normal";
  const std::string raw2 = mock.complete(build_prompt(odd).rendered);
  CHECK(raw2.find("FAULT TYPE: unclassified\n") != std::string::npos);
}

TEST_CASE("severity words follow the strongest descriptor") {
  CHECK(detail::severity_word_for({}) == "none");
  CHECK(detail::severity_word_for({"a slight anomaly"}) == "low");
  CHECK(detail::severity_word_for({"a moderate anomaly"}) == "moderate");
  CHECK(detail::severity_word_for({"a high anomaly"}) == "high");
  CHECK(detail::severity_word_for({"an extreme anomaly"}) == "critical");
  CHECK(detail::severity_word_for({"a complete stall"}) == "critical");
  CHECK(detail::severity_word_for({"a slight anomaly", "an extreme anomaly"}) == "critical");
}

TEST_CASE("reports round trip through render and parse") {
  Report rep;
  rep.fault_type = "congestion";
  rep.severity = "high";
  rep.evidence = {"The delay shows a moderate anomaly."};
  rep.actions = {{"Inspect the uplink", "netmon inspect --fault congestion\n  sudo restart\n"},
                 {"Re-run detection", ""}};
  const std::string text = render_report(rep);
  const Report back = parse_report(text, {"congestion", "normal", "unclassified"});
  CHECK(back.fault_type == rep.fault_type);
  CHECK(back.severity == rep.severity);
  CHECK(back.evidence == rep.evidence);
  REQUIRE(back.actions.size() == 2);
  CHECK(back.actions[0].description == rep.actions[0].description);
  CHECK(back.actions[0].script == rep.actions[0].script);
  CHECK(back.actions[1].description == rep.actions[1].description);
  CHECK(back.actions[1].script.empty());
  CHECK(back.raw_response == text);
}

TEST_CASE("missing report sections are schema errors that keep the raw text") {
  const std::vector<std::string> options = {"congestion", "normal", "unclassified"};
  const std::string no_fault = "EVIDENCE:\n- e\nACTIONS:\n- a\n";
  try {
    parse_report(no_fault, options);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.raw == no_fault);
    CHECK(std::string(e.what()).find("FAULT TYPE") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_report("FAULT TYPE: x\nACTIONS:\n- a\n", options), SchemaError);
  CHECK_THROWS_AS(parse_report("FAULT TYPE: x\nEVIDENCE:\n- e\n", options), SchemaError);
  CHECK_THROWS_AS(parse_report("FAULT TYPE:\nEVIDENCE:\n- e\nACTIONS:\n- a\n", options),
                  SchemaError);
  CHECK_THROWS_AS(parse_report("", options), std::invalid_argument);
}

TEST_CASE("severity defaults to unspecified when absent") {
  const Report rep = parse_report("FAULT TYPE: congestion\nEVIDENCE:\n- e\nACTIONS:\n- a\n",
                                  {"congestion", "normal", "unclassified"});
  CHECK(rep.severity == "unspecified");
}

TEST_CASE("fault types outside the options degrade to unclassified") {
  const Report rep = parse_report("FAULT TYPE: gremlins\nEVIDENCE:\n- e\nACTIONS:\n- a\n",
                                  {"congestion", "normal", "unclassified"});
  CHECK(rep.fault_type == "unclassified");
  CHECK(rep.fault_remapped);
}

TEST_CASE("reports serialize to json") {
  Report rep;
  rep.fault_type = "congestion";
  rep.severity = "low";
  rep.evidence = {"e1"};
  rep.actions = {{"a1", "s1\n"}};
  const nlohmann::json j = report_to_json(rep);
  CHECK(j.at("fault_type") == "congestion");
  CHECK(j.at("severity") == "low");
  CHECK(j.at("evidence").size() == 1);
  CHECK(j.at("actions").at(0).at("description") == "a1");
  CHECK(j.at("actions").at(0).at("script") == "s1\n");
  CHECK(j.at("fault_remapped") == false);
}
