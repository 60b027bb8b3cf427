#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "msadm/rulebase.hpp"

using namespace msadm;

namespace {

KpiWindow mkwin(const std::string& cls, const std::string& kpi, int idx,
                std::vector<double> values, const std::string& id = "e0") {
  KpiWindow w;
  w.entity_id = id;
  w.entity_class = cls;
  w.kpi_name = kpi;
  w.window_index = idx;
  w.values = std::move(values);
  return w;
}

std::vector<KpiWindow> constant_history(const std::string& cls, const std::string& kpi,
                                        double value, int count) {
  std::vector<KpiWindow> out;
  for (int i = 0; i < count; ++i)
    out.push_back(mkwin(cls, kpi, i, {value, value, value, value}));
  return out;
}

// Two well-separated constant regimes: 10 windows near `lo`, 5 near `hi`.
std::vector<KpiWindow> two_regime_history(double lo, double hi) {
  std::vector<KpiWindow> out;
  int idx = 0;
  for (int i = 0; i < 10; ++i) {
    const double v = lo + 0.001 * i;
    out.push_back(mkwin("router", "delay", idx++, {v, v, v, v}));
  }
  for (int i = 0; i < 5; ++i) {
    const double v = hi + 0.001 * i;
    out.push_back(mkwin("router", "delay", idx++, {v, v, v, v}));
  }
  return out;
}

std::vector<ManualInterval> table_manual() {
  return {
      {"city_vehicle", "packet_loss", 0.0, 0.0, 0, "no"},
      {"city_vehicle", "packet_loss", 0.0, 0.01, 1, "normal"},
      {"city_vehicle", "packet_loss", 0.01, 0.05, 2, "slight"},
      {"city_vehicle", "packet_loss", 0.05, 0.10, 3, "moderate"},
      {"expressway", "packet_loss", 0.0, 0.02, 1, "normal"},
      {"expressway", "packet_loss", 0.02, 0.08, 2, "slight"},
      {"expressway", "packet_loss", 0.08, 0.15, 3, "moderate"},
      {"plain_uav", "packet_loss", 0.005, 0.01, 3, "moderate"},
      {"plain_uav", "packet_loss", 0.01, 0.26, 4, "high"},
      {"plain_uav", "packet_loss", 0.26, 0.99, 5, "extreme"},
      {"plain_uav", "packet_loss", 1.0, 1.0, 6, "complete"},
  };
}

}  // namespace

TEST_CASE("descriptor ladder covers codes zero through six") {
  CHECK(descriptor_for_code(0) == "no");
  CHECK(descriptor_for_code(1) == "normal");
  CHECK(descriptor_for_code(2) == "slight");
  CHECK(descriptor_for_code(3) == "moderate");
  CHECK(descriptor_for_code(4) == "high");
  CHECK(descriptor_for_code(5) == "extreme");
  CHECK(descriptor_for_code(6) == "complete");
  CHECK(descriptor_for_code(7) == "level-7");
  CHECK(max_descriptor_code() == 6);
}

TEST_CASE("severity is the euclidean distance to the normal center") {
  CHECK(severity({3, 4, 0, 0}, {0, 0, 0, 0}) == 5.0);
  CHECK(severity({1, 1, 1, 1}, {0, 0, 0, 0}) == 2.0);
  CHECK(severity({2, 2, 2, 2}, {2, 2, 2, 2}) == 0.0);
}

TEST_CASE("group noise threshold is the rms of window standard deviations") {
  // Window variances 1 and 3 -> threshold sqrt(2).
  std::vector<KpiWindow> history = {
      mkwin("c", "k", 0, {0.0, 2.0}),
      mkwin("c", "k", 1, {0.0, 2.0 * std::sqrt(3.0)}),
  };
  RuleBaseConfig cfg;
  cfg.min_windows_per_cluster = 1;
  const RuleBase rb = build_rulebase(history, {}, cfg);
  const KpiRule* rule = rb.find("c", "k");
  REQUIRE(rule != nullptr);
  CHECK_THAT(rule->noise_threshold, Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-12));
}

TEST_CASE("a single constant regime maps to the normal code") {
  const RuleBase rb = build_rulebase(constant_history("c", "k", 5.0, 6), {}, {});
  const KpiRule* rule = rb.find("c", "k");
  REQUIRE(rule != nullptr);
  REQUIRE(rule->centers.size() == 1);
  CHECK(rule->cluster_codes == std::vector<int>{1});

  const ScaledState s = scale(mkwin("c", "k", 0, {5.0, 5.0, 5.0, 5.0}), rb);
  CHECK(s.code == 1);
  CHECK(s.severity == 0.0);
  CHECK(s.descriptor == "normal");
  CHECK(s.representative_value == 5.0);
}

TEST_CASE("two regimes get severity-ordered codes and a disjoint tiling") {
  const RuleBase rb = build_rulebase(two_regime_history(1.0, 10.0), {}, {});
  const KpiRule* rule = rb.find("router", "delay");
  REQUIRE(rule != nullptr);
  REQUIRE(rule->centers.size() == 2);

  // The larger (10-window) regime is normal: severity 0, code 1.
  REQUIRE(rule->codes.count(1) == 1);
  REQUIRE(rule->codes.count(2) == 1);
  CHECK(rule->codes.at(1).severity == 0.0);
  CHECK(rule->codes.at(1).descriptor == "normal");
  CHECK(rule->codes.at(2).severity > 0.0);
  CHECK(rule->codes.at(2).descriptor == "slight");

  // Intervals partition the observed f_avg range without gaps or overlap.
  REQUIRE(rule->intervals.size() == 2);
  CHECK(rule->intervals[0].code == 1);
  CHECK(rule->intervals[1].code == 2);
  CHECK(rule->intervals[0].lower == 1.0);
  CHECK(rule->intervals[0].upper == rule->intervals[1].lower);
  CHECK_THAT(rule->intervals[1].upper, Catch::Matchers::WithinAbs(10.004, 1e-12));

  const ScaledState lo = scale(mkwin("router", "delay", 0, {1.0, 1.0, 1.0, 1.0}), rb);
  CHECK(lo.code == 1);
  CHECK(lo.descriptor == "normal");
  const ScaledState hi = scale(mkwin("router", "delay", 0, {10.0, 10.0, 10.0, 10.0}), rb);
  CHECK(hi.code == 2);
  CHECK(hi.descriptor == "slight");
  CHECK(hi.severity > 0.0);
}

TEST_CASE("manual interval tables scale reference packet-loss readings") {
  std::vector<KpiWindow> history;
  for (const auto& w : constant_history("city_vehicle", "packet_loss", 0.002, 6))
    history.push_back(w);
  for (const auto& w : constant_history("expressway", "packet_loss", 0.005, 6))
    history.push_back(w);
  for (const auto& w : constant_history("plain_uav", "packet_loss", 0.002, 6))
    history.push_back(w);

  const RuleBase rb = build_rulebase(history, table_manual(), {});

  SECTION("city vehicle") {
    ScaledState s = scale(mkwin("city_vehicle", "packet_loss", 0, {0.0, 0.0, 0.0, 0.0}), rb);
    CHECK(s.code == 0);
    CHECK(s.descriptor == "no");
    CHECK(s.severity == 0.0);
    CHECK(s.point);

    s = scale(mkwin("city_vehicle", "packet_loss", 0, {0.03, 0.03, 0.03, 0.03}), rb);
    CHECK(s.code == 2);
    CHECK(s.descriptor == "slight");
    CHECK(s.severity == 1.0);

    s = scale(mkwin("city_vehicle", "packet_loss", 0, {0.005, 0.005, 0.005, 0.005}), rb);
    CHECK(s.code == 1);
    CHECK(s.descriptor == "normal");

    // Top of the moderate band is closed.
    s = scale(mkwin("city_vehicle", "packet_loss", 0, {0.10, 0.10, 0.10, 0.10}), rb);
    CHECK(s.code == 3);
    CHECK(s.descriptor == "moderate");
  }

  SECTION("expressway") {
    const ScaledState s =
        scale(mkwin("expressway", "packet_loss", 0, {0.05, 0.05, 0.05, 0.05}), rb);
    CHECK(s.code == 2);
    CHECK(s.descriptor == "slight");
  }

  SECTION("plain uav") {
    ScaledState s = scale(mkwin("plain_uav", "packet_loss", 0, {1.0, 1.0, 1.0, 1.0}), rb);
    CHECK(s.code == 6);
    CHECK(s.descriptor == "complete");
    CHECK(s.severity == 5.0);
    CHECK(s.point);

    s = scale(mkwin("plain_uav", "packet_loss", 0, {0.03, 0.03, 0.03, 0.03}), rb);
    CHECK(s.code == 4);
    CHECK(s.descriptor == "high");

    s = scale(mkwin("plain_uav", "packet_loss", 0, {0.5, 0.5, 0.5, 0.5}), rb);
    CHECK(s.code == 5);
    CHECK(s.descriptor == "extreme");
  }
}

TEST_CASE("manual intervals take precedence over cluster assignment") {
  std::vector<ManualInterval> manual = {{"router", "delay", 0.5, 2.0, 5, "extreme"}};
  const RuleBase rb = build_rulebase(two_regime_history(1.0, 10.0), manual, {});
  const KpiRule* rule = rb.find("router", "delay");
  REQUIRE(rule != nullptr);

  // 1.0 sits in the normal cluster's band but inside the manual overlay.
  const ScaledState s = scale(mkwin("router", "delay", 0, {1.0, 1.0, 1.0, 1.0}), rb);
  CHECK(s.code == 5);
  CHECK(s.descriptor == "extreme");
  CHECK(s.severity == 4.0);

  // The clustered interval that overlapped the overlay was cut back.
  for (const StateInterval& iv : rule->intervals) {
    if (iv.origin == IntervalOrigin::manual) continue;
    if (iv.is_point()) continue;
    const bool disjoint = iv.upper <= 0.5 || iv.lower >= 2.0;
    CHECK(disjoint);
  }
  // Manual codes never collide with cluster codes.
  for (int code : rule->cluster_codes) CHECK(code != 5);
}

TEST_CASE("nearest-center ties resolve to the lower severity code") {
  for (int flip = 0; flip < 2; ++flip) {
    KpiRule rule;
    rule.entity_class = "c";
    rule.kpi_name = "k";
    rule.noise_threshold = 0.0;
    rule.trend_m = 4;
    rule.centers = {{-1, 0, 0, 0}, {1, 0, 0, 0}};
    rule.cluster_codes = flip ? std::vector<int>{2, 1} : std::vector<int>{1, 2};
    CodeInfo normal;
    normal.severity = 0.0;
    normal.descriptor = "normal";
    normal.band_lo = -1.0;
    normal.band_hi = -1.0;
    CodeInfo slight;
    slight.severity = 2.0;
    slight.descriptor = "slight";
    slight.band_lo = 1.0;
    slight.band_hi = 1.0;
    rule.codes[1] = normal;
    rule.codes[2] = slight;

    RuleBase rb;
    rb.groups[{"c", "k"}] = rule;

    const ScaledState s = scale(mkwin("c", "k", 0, {0.0, 0.0, 0.0, 0.0}), rb);
    CHECK(s.code == 1);
    CHECK(s.descriptor == "normal");
    // No interval for the code: the raw band is reported instead.
    CHECK(s.lower == -1.0);
    CHECK(s.upper == -1.0);
    CHECK(s.point);
  }
}

TEST_CASE("scaling an unknown group throws") {
  const RuleBase rb = build_rulebase(constant_history("c", "k", 1.0, 6), {}, {});
  CHECK_THROWS_AS(scale(mkwin("c", "other", 0, {1.0, 1.0}), rb), LookupError);
}

TEST_CASE("recluster is a no-op before the refresh interval elapses") {
  RuleBaseConfig cfg;
  cfg.built_at = 0;
  const RuleBase rb = build_rulebase(two_regime_history(1.0, 10.0), {}, cfg);
  const RuleBase out = recluster(rb, two_regime_history(101.0, 110.0), 5, 10);
  CHECK(to_json(out).dump() == to_json(rb).dump());
}

TEST_CASE("recluster rebuilds stale groups with shifted intervals") {
  RuleBaseConfig cfg;
  cfg.built_at = 0;
  const RuleBase rb = build_rulebase(two_regime_history(1.0, 10.0), {}, cfg);
  const KpiRule* before = rb.find("router", "delay");
  REQUIRE(before != nullptr);

  const RuleBase out = recluster(rb, two_regime_history(101.0, 110.0), 20, 10);
  const KpiRule* after = out.find("router", "delay");
  REQUIRE(after != nullptr);
  CHECK(after->built_at == 20);
  REQUIRE(after->intervals.size() == before->intervals.size());
  for (std::size_t i = 0; i < after->intervals.size(); ++i) {
    CHECK(after->intervals[i].code == before->intervals[i].code);
    CHECK_THAT(after->intervals[i].lower,
               Catch::Matchers::WithinAbs(before->intervals[i].lower + 100.0, 1e-9));
    CHECK_THAT(after->intervals[i].upper,
               Catch::Matchers::WithinAbs(before->intervals[i].upper + 100.0, 1e-9));
  }
  CHECK(after->cluster_codes.size() == before->cluster_codes.size());
}

TEST_CASE("recluster requires recent windows") {
  const RuleBase rb = build_rulebase(constant_history("c", "k", 1.0, 6), {}, {});
  CHECK_THROWS_AS(recluster(rb, {}, 10, 1), std::invalid_argument);
}

TEST_CASE("rule base construction is deterministic") {
  const std::vector<KpiWindow> history = two_regime_history(1.0, 10.0);
  const RuleBase a = build_rulebase(history, table_manual(), {});
  const RuleBase b = build_rulebase(history, table_manual(), {});
  CHECK(to_json(a).dump() == to_json(b).dump());
}

TEST_CASE("undersized groups are skipped with a warning") {
  std::vector<KpiWindow> history = constant_history("c", "k", 1.0, 6);
  for (const auto& w : constant_history("c", "tiny", 2.0, 3)) history.push_back(w);
  const RuleBase rb = build_rulebase(history, {}, {});
  CHECK(rb.find("c", "k") != nullptr);
  CHECK(rb.find("c", "tiny") == nullptr);
  REQUIRE(rb.warnings.size() == 1);
  CHECK(rb.warnings[0].kpi_name == "tiny");
  CHECK(rb.warnings[0].reason.find("below minimum") != std::string::npos);
}

TEST_CASE("rule base json round trip preserves every field") {
  std::vector<KpiWindow> history = two_regime_history(1.0, 10.0);
  for (const auto& w : constant_history("city_vehicle", "packet_loss", 0.002, 6))
    history.push_back(w);
  std::vector<ManualInterval> manual = {
      {"city_vehicle", "packet_loss", 0.0, 0.01, 1, "normal"},
      {"city_vehicle", "packet_loss", 1.0, 1.0, 6, "complete"},
  };
  for (const auto& w : constant_history("c", "tiny", 2.0, 3)) history.push_back(w);

  const RuleBase rb = build_rulebase(history, manual, {});
  const std::string dumped = to_json(rb).dump();
  const RuleBase back = rulebase_from_json(nlohmann::json::parse(dumped));
  CHECK(to_json(back).dump() == dumped);
}

TEST_CASE("rulebase documents with the wrong shape are rejected") {
  CHECK_THROWS_AS(rulebase_from_json(nlohmann::json::object()), SchemaError);
  nlohmann::json j = to_json(build_rulebase(constant_history("c", "k", 1.0, 6), {}, {}));
  j["version"] = 9;
  CHECK_THROWS_AS(rulebase_from_json(j), SchemaError);
}

TEST_CASE("manual interval validation") {
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6),
                                 {{"c", "k", 2.0, 1.0, 1, "normal"}}, {}),
                  ValidationError);
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6),
                                 {{"c", "k", 0.0, 2.0, 1, "normal"},
                                  {"c", "k", 1.0, 3.0, 2, "slight"}},
                                 {}),
                  ValidationError);
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6),
                                 {{"c", "k", 0.0, 1.0, 1, "normal"},
                                  {"c", "k", 2.0, 3.0, 1, "slight"}},
                                 {}),
                  ValidationError);
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6),
                                 {{"c", "k", 0.0, 1.0, 1, ""}}, {}),
                  ValidationError);
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6),
                                 {{"c", "k", 0.0, 1.0, -1, "x"}}, {}),
                  ValidationError);
}

TEST_CASE("manual intervals load from a json array") {
  const auto j = nlohmann::json::parse(R"([
    {"entity_class": "c", "kpi_name": "k", "lower": 0.0, "upper": 0.5, "code": 1,
     "descriptor": "normal"}
  ])");
  const auto manual = load_manual_intervals(j);
  REQUIRE(manual.size() == 1);
  CHECK(manual[0].entity_class == "c");
  CHECK(manual[0].upper == 0.5);
  CHECK_THROWS_AS(load_manual_intervals(nlohmann::json::object()), SchemaError);
  CHECK_THROWS_AS(load_manual_intervals(nlohmann::json::parse(R"([{"entity_class": "c"}])")),
                  SchemaError);
}

TEST_CASE("rule base config is validated") {
  RuleBaseConfig bad;
  bad.k_max = 0;
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6), {}, bad),
                  std::invalid_argument);
  bad = {};
  bad.min_windows_per_cluster = 0;
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6), {}, bad),
                  std::invalid_argument);
  bad = {};
  bad.normal_code = -1;
  CHECK_THROWS_AS(build_rulebase(constant_history("c", "k", 1.0, 6), {}, bad),
                  std::invalid_argument);
}
