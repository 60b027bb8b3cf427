#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"
#include "msadm/features.hpp"
#include "msadm/ingest.hpp"
#include "msadm/kmeans.hpp"

namespace msadm {

enum class IntervalOrigin { clustered, manual };

/// Raw-value state interval. Half-open [lower, upper) except the topmost
/// interval of a rule set, which is closed; point intervals (lower == upper)
/// match exactly one value and take precedence over enclosing ranges.
struct StateInterval {
  double lower = 0.0;
  double upper = 0.0;
  int code = 0;
  double severity = 0.0;
  std::string descriptor;
  IntervalOrigin origin = IntervalOrigin::clustered;

  bool is_point() const { return lower == upper; }
};

struct ManualInterval {
  std::string entity_class;
  std::string kpi_name;
  double lower = 0.0;
  double upper = 0.0;
  int code = 0;
  std::string descriptor;
};

/// Per-code metadata: Euclidean severity, descriptor word, and the raw
/// f_avg band the code covers before interval tiling. The band survives
/// even when the tiled interval is swallowed by a manual overlay.
struct CodeInfo {
  double severity = 0.0;
  std::string descriptor;
  IntervalOrigin origin = IntervalOrigin::clustered;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

struct KpiRule {
  std::string entity_class;
  std::string kpi_name;
  std::uint64_t seed = 0;
  double noise_threshold = 0.0;
  int trend_m = 4;
  std::int64_t built_at = 0;
  std::array<double, 4> scaler_mean{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> scaler_std{1.0, 1.0, 1.0, 1.0};
  std::vector<std::array<double, 4>> centers;  // standardized feature space
  std::vector<int> cluster_codes;              // code per center index
  int normal_index = 0;
  bool k_reduced = false;
  std::map<int, CodeInfo> codes;
  std::vector<StateInterval> intervals;  // sorted by lower, pairwise disjoint

  const StateInterval* interval_for_code(int code) const {
    for (const StateInterval& iv : intervals)
      if (iv.code == code) return &iv;
    return nullptr;
  }
};

struct RuleWarning {
  std::string entity_class;
  std::string kpi_name;
  std::string reason;
};

struct RuleBaseConfig {
  int k_max = 8;
  int min_windows_per_cluster = 5;
  int normal_code = 1;
  int trend_m = 4;
  std::uint64_t seed = 1;
  std::int64_t built_at = 0;  // logical clock, supplied by the caller
};

struct RuleBase {
  int version = 1;
  RuleBaseConfig config;
  std::map<std::pair<std::string, std::string>, KpiRule> groups;
  std::vector<ManualInterval> manual;
  std::vector<RuleWarning> warnings;

  const KpiRule* find(const std::string& entity_class, const std::string& kpi_name) const {
    auto it = groups.find({entity_class, kpi_name});
    return it == groups.end() ? nullptr : &it->second;
  }
};

/// One scaled LSS entry for a window.
struct ScaledState {
  std::string kpi_name;
  int code = 0;
  double severity = 0.0;
  std::string descriptor;
  double lower = 0.0;   // interval (or band fallback) the code covers
  double upper = 0.0;
  bool point = false;
  double representative_value = 0.0;  // f_avg of the window
};

struct ScaledStateList {
  std::string entity_id;
  std::string entity_class;
  std::size_t window_index = 0;
  std::vector<ScaledState> states;
};

/// Code-indexed descriptor ladder shared by every rule set, mirroring the
/// fixed codeword column convention. Codes past the ladder degrade to a
/// numbered level and never normally occur (cluster count is capped first).
inline std::string descriptor_for_code(int code) {
  static const char* ladder[] = {"no",   "normal",  "slight",  "moderate",
                                 "high", "extreme", "complete"};
  if (code >= 0 && code < 7) return ladder[code];
  return "level-" + std::to_string(code);
}

inline int max_descriptor_code() { return 6; }

inline double severity(const std::array<double, 4>& center,
                       const std::array<double, 4>& normal_center) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = center[i] - normal_center[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace detail {

inline std::array<double, 4> standardize(const FeatureVector& f, const KpiRule& rule) {
  const std::array<double, 4> raw = f.as_array();
  std::array<double, 4> z;
  for (std::size_t i = 0; i < 4; ++i)
    z[i] = (raw[i] - rule.scaler_mean[i]) / rule.scaler_std[i];
  return z;
}

inline bool interval_contains(const StateInterval& iv, double v, bool topmost) {
  if (iv.is_point()) return v == iv.lower;
  if (topmost) return v >= iv.lower && v <= iv.upper;
  return v >= iv.lower && v < iv.upper;
}

/// Match v against a sorted disjoint interval list: point intervals win over
/// ranges sharing a bound; the topmost range is closed above.
inline const StateInterval* match_interval(const std::vector<StateInterval>& ivs, double v) {
  const StateInterval* top = nullptr;
  for (const StateInterval& iv : ivs)
    if (!iv.is_point() && (!top || iv.upper > top->upper)) top = &iv;
  for (const StateInterval& iv : ivs)
    if (iv.is_point() && v == iv.lower) return &iv;
  for (const StateInterval& iv : ivs)
    if (!iv.is_point() && interval_contains(iv, v, &iv == top)) return &iv;
  return nullptr;
}

inline const StateInterval* match_manual(const KpiRule& rule, double v) {
  const StateInterval* top = nullptr;
  for (const StateInterval& iv : rule.intervals)
    if (!iv.is_point() && (!top || iv.upper > top->upper)) top = &iv;
  for (const StateInterval& iv : rule.intervals)
    if (iv.origin == IntervalOrigin::manual && iv.is_point() && v == iv.lower) return &iv;
  for (const StateInterval& iv : rule.intervals)
    if (iv.origin == IntervalOrigin::manual && !iv.is_point() &&
        interval_contains(iv, v, &iv == top))
      return &iv;
  return nullptr;
}

/// Subtract the union of manual ranges from [lo, hi) and keep the widest
/// surviving fragment (leftmost on ties). Point manual intervals carry no
/// measure and are ignored here.
inline std::optional<std::pair<double, double>> subtract_manual(
    double lo, double hi, const std::vector<ManualInterval>& manual,
    const std::string& entity_class, const std::string& kpi_name) {
  std::vector<std::pair<double, double>> cuts;
  for (const ManualInterval& m : manual) {
    if (m.entity_class != entity_class || m.kpi_name != kpi_name) continue;
    if (m.lower == m.upper) continue;
    cuts.emplace_back(m.lower, m.upper);
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::pair<double, double>> frags;
  double cursor = lo;
  for (const auto& [clo, chi] : cuts) {
    if (chi <= cursor) continue;
    if (clo >= hi) break;
    if (clo > cursor) frags.emplace_back(cursor, std::min(clo, hi));
    cursor = std::max(cursor, chi);
    if (cursor >= hi) break;
  }
  if (cursor < hi) frags.emplace_back(cursor, hi);
  std::optional<std::pair<double, double>> best;
  for (const auto& f : frags) {
    if (f.second <= f.first) continue;
    if (!best || f.second - f.first > best->second - best->first) best = f;
  }
  return best;
}

inline void validate_manual(const std::vector<ManualInterval>& manual) {
  std::map<std::pair<std::string, std::string>, std::vector<const ManualInterval*>> by_group;
  for (const ManualInterval& m : manual) {
    if (!std::isfinite(m.lower) || !std::isfinite(m.upper))
      throw ValidationError("manual interval bounds must be finite");
    if (m.lower > m.upper)
      throw ValidationError("manual interval for " + m.entity_class + "/" + m.kpi_name +
                            " has lower > upper");
    if (m.code < 0)
      throw ValidationError("manual interval codes must be >= 0");
    if (m.descriptor.empty())
      throw ValidationError("manual interval needs a descriptor");
    by_group[{m.entity_class, m.kpi_name}].push_back(&m);
  }
  for (const auto& [key, items] : by_group) {
    std::vector<const ManualInterval*> sorted = items;
    std::sort(sorted.begin(), sorted.end(), [](const ManualInterval* a, const ManualInterval* b) {
      if (a->lower != b->lower) return a->lower < b->lower;
      return a->upper < b->upper;
    });
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      const auto* a = sorted[i];
      const auto* b = sorted[i + 1];
      if (a->code == b->code)
        throw ValidationError("duplicate manual code " + std::to_string(a->code) + " for " +
                              key.first + "/" + key.second);
      if (b->lower < a->upper && !(a->lower == a->upper) && !(b->lower == b->upper))
        throw ValidationError("overlapping manual intervals for " + key.first + "/" + key.second);
    }
    for (std::size_t i = 0; i < sorted.size(); ++i)
      for (std::size_t j = i + 1; j < sorted.size(); ++j)
        if (sorted[i]->code == sorted[j]->code)
          throw ValidationError("duplicate manual code " + std::to_string(sorted[i]->code) +
                                " for " + key.first + "/" + key.second);
  }
}

struct GroupBuildInput {
  std::vector<FeatureVector> features;
  double noise_threshold = 0.0;
};

inline GroupBuildInput group_features(const std::vector<const KpiWindow*>& windows, int trend_m) {
  GroupBuildInput out;
  double sum_var = 0.0;
  std::vector<FeatureVector> partial;
  partial.reserve(windows.size());
  for (const KpiWindow* w : windows) {
    const std::size_t n = w->values.size();
    if (n < 2) throw ValidationError("window for " + w->kpi_name + " has fewer than 2 samples");
    double sum = 0.0;
    for (double v : w->values) sum += v;
    const double avg = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : w->values) ss += (v - avg) * (v - avg);
    sum_var += ss / static_cast<double>(n);
  }
  out.noise_threshold = std::sqrt(sum_var / static_cast<double>(windows.size()));
  for (const KpiWindow* w : windows) {
    const int m_eff = std::max(1, std::min<int>(trend_m, static_cast<int>(w->values.size() / 2)));
    out.features.push_back(extract_features(w->values, out.noise_threshold, m_eff));
  }
  return out;
}

inline KpiRule build_group(const std::string& entity_class, const std::string& kpi_name,
                           const std::vector<const KpiWindow*>& windows,
                           const std::vector<ManualInterval>& manual,
                           const RuleBaseConfig& cfg) {
  KpiRule rule;
  rule.entity_class = entity_class;
  rule.kpi_name = kpi_name;
  rule.seed = mix_seed(cfg.seed, kpi_name);
  rule.trend_m = cfg.trend_m;
  rule.built_at = cfg.built_at;

  GroupBuildInput in = group_features(windows, cfg.trend_m);
  rule.noise_threshold = in.noise_threshold;
  const std::size_t n = in.features.size();

  for (std::size_t d = 0; d < 4; ++d) {
    double sum = 0.0;
    for (const FeatureVector& f : in.features) sum += f.as_array()[d];
    rule.scaler_mean[d] = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const FeatureVector& f : in.features) {
      const double diff = f.as_array()[d] - rule.scaler_mean[d];
      ss += diff * diff;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    rule.scaler_std[d] = sd > 0.0 ? sd : 1.0;
  }

  std::vector<std::vector<double>> points;
  points.reserve(n);
  for (const FeatureVector& f : in.features) {
    const std::array<double, 4> raw = f.as_array();
    std::vector<double> z(4);
    for (std::size_t d = 0; d < 4; ++d)
      z[d] = (raw[d] - rule.scaler_mean[d]) / rule.scaler_std[d];
    points.push_back(std::move(z));
  }

  // Codes not taken by manual intervals, counted from normal_code up to the
  // descriptor ladder's ceiling, bound how many clusters may be materialized.
  std::vector<int> taken;
  for (const ManualInterval& m : manual)
    if (m.entity_class == entity_class && m.kpi_name == kpi_name) taken.push_back(m.code);
  std::sort(taken.begin(), taken.end());
  int available = 0;
  for (int c = cfg.normal_code; c <= max_descriptor_code(); ++c)
    if (!std::binary_search(taken.begin(), taken.end(), c)) ++available;

  std::size_t k_cap = static_cast<std::size_t>(cfg.k_max);
  k_cap = std::min(k_cap, n / static_cast<std::size_t>(cfg.min_windows_per_cluster));
  k_cap = std::min(k_cap, static_cast<std::size_t>(std::max(available, 1)));
  if (k_cap == 0) k_cap = 1;

  std::vector<ClusterModel> models;
  std::vector<double> wcss;
  for (std::size_t k = 1; k <= k_cap; ++k) {
    models.push_back(kmeans(points, k, rule.seed));
    wcss.push_back(models.back().wcss);
  }
  const std::size_t k_star = std::min(select_k(wcss), models.size());
  const ClusterModel& model = models[k_star - 1];
  const std::size_t k = model.centers.size();
  rule.k_reduced = model.k_reduced;

  rule.normal_index = model.normal_index;

  rule.centers.resize(k);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t d = 0; d < 4; ++d) rule.centers[c][d] = model.centers[c][d];

  std::vector<double> sev(k);
  for (std::size_t c = 0; c < k; ++c)
    sev[c] = severity(rule.centers[c], rule.centers[static_cast<std::size_t>(rule.normal_index)]);

  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sev[a] != sev[b]) return sev[a] < sev[b];
    return a < b;
  });

  rule.cluster_codes.assign(k, 0);
  int next = cfg.normal_code;
  for (std::size_t rank = 0; rank < k; ++rank) {
    while (std::binary_search(taken.begin(), taken.end(), next)) ++next;
    rule.cluster_codes[order[rank]] = next;
    ++next;
  }

  // Raw f_avg band per cluster.
  std::vector<double> band_lo(k, std::numeric_limits<double>::infinity());
  std::vector<double> band_hi(k, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const int c = model.assignments[i];
    band_lo[c] = std::min(band_lo[c], in.features[i].avg);
    band_hi[c] = std::max(band_hi[c], in.features[i].avg);
  }

  for (std::size_t c = 0; c < k; ++c) {
    CodeInfo info;
    info.severity = sev[c];
    info.descriptor = descriptor_for_code(rule.cluster_codes[c]);
    info.origin = IntervalOrigin::clustered;
    info.band_lo = band_lo[c];
    info.band_hi = band_hi[c];
    rule.codes[rule.cluster_codes[c]] = info;
  }
  for (const ManualInterval& m : manual) {
    if (m.entity_class != entity_class || m.kpi_name != kpi_name) continue;
    CodeInfo info;
    info.severity = static_cast<double>(std::max(0, m.code - cfg.normal_code));
    info.descriptor = m.descriptor;
    info.origin = IntervalOrigin::manual;
    info.band_lo = m.lower;
    info.band_hi = m.upper;
    rule.codes[m.code] = info;
  }

  // Tile the observed f_avg range: clusters ordered by band midpoint, each
  // boundary placed midway between adjacent band edges.
  double global_lo = band_lo[0], global_hi = band_hi[0];
  for (std::size_t c = 1; c < k; ++c) {
    global_lo = std::min(global_lo, band_lo[c]);
    global_hi = std::max(global_hi, band_hi[c]);
  }
  std::vector<std::size_t> by_mid(k);
  for (std::size_t c = 0; c < k; ++c) by_mid[c] = c;
  std::sort(by_mid.begin(), by_mid.end(), [&](std::size_t a, std::size_t b) {
    const double ma = band_lo[a] + band_hi[a];
    const double mb = band_lo[b] + band_hi[b];
    if (ma != mb) return ma < mb;
    return a < b;
  });
  std::vector<double> bounds(k + 1);
  bounds[0] = global_lo;
  bounds[k] = global_hi;
  for (std::size_t i = 1; i < k; ++i) {
    double b = 0.5 * (band_hi[by_mid[i - 1]] + band_lo[by_mid[i]]);
    b = std::min(std::max(b, bounds[i - 1]), global_hi);
    bounds[i] = b;
  }
  for (std::size_t i = 1; i <= k; ++i) bounds[i] = std::max(bounds[i], bounds[i - 1]);

  std::vector<StateInterval> tiled;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t c = by_mid[i];
    StateInterval iv;
    iv.lower = bounds[i];
    iv.upper = bounds[i + 1];
    iv.code = rule.cluster_codes[c];
    iv.severity = sev[c];
    iv.descriptor = rule.codes[iv.code].descriptor;
    iv.origin = IntervalOrigin::clustered;
    if (iv.lower < iv.upper || (k == 1 && iv.lower == iv.upper)) tiled.push_back(iv);
  }

  std::vector<StateInterval> out;
  for (const StateInterval& iv : tiled) {
    if (iv.is_point()) {
      out.push_back(iv);
      continue;
    }
    auto frag = subtract_manual(iv.lower, iv.upper, manual, entity_class, kpi_name);
    if (!frag) continue;
    StateInterval cut = iv;
    cut.lower = frag->first;
    cut.upper = frag->second;
    if (cut.lower < cut.upper) out.push_back(cut);
  }
  for (const ManualInterval& m : manual) {
    if (m.entity_class != entity_class || m.kpi_name != kpi_name) continue;
    StateInterval iv;
    iv.lower = m.lower;
    iv.upper = m.upper;
    iv.code = m.code;
    iv.severity = rule.codes[m.code].severity;
    iv.descriptor = m.descriptor;
    iv.origin = IntervalOrigin::manual;
    out.push_back(iv);
  }
  std::sort(out.begin(), out.end(), [](const StateInterval& a, const StateInterval& b) {
    if (a.lower != b.lower) return a.lower < b.lower;
    if (a.is_point() != b.is_point()) return a.is_point();
    return a.upper < b.upper;
  });
  rule.intervals = std::move(out);
  return rule;
}

}  // namespace detail

/// Clusters each (entity_class, kpi) group's window features, derives
/// severity-ordered codes and raw-value intervals, and overlays manual
/// intervals. Groups below the minimum size are skipped with a warning.
inline RuleBase build_rulebase(const std::vector<KpiWindow>& history,
                               const std::vector<ManualInterval>& manual,
                               const RuleBaseConfig& cfg) {
  if (cfg.k_max < 1) throw std::invalid_argument("build_rulebase: k_max must be >= 1");
  if (cfg.min_windows_per_cluster < 1)
    throw std::invalid_argument("build_rulebase: min_windows_per_cluster must be >= 1");
  if (cfg.normal_code < 0) throw std::invalid_argument("build_rulebase: normal_code must be >= 0");
  detail::validate_manual(manual);

  RuleBase rb;
  rb.config = cfg;
  rb.manual = manual;

  std::map<std::pair<std::string, std::string>, std::vector<const KpiWindow*>> by_group;
  for (const KpiWindow& w : history) by_group[{w.entity_class, w.kpi_name}].push_back(&w);

  for (const auto& [key, windows] : by_group) {
    if (windows.size() < static_cast<std::size_t>(cfg.min_windows_per_cluster)) {
      rb.warnings.push_back({key.first, key.second,
                             "group has " + std::to_string(windows.size()) +
                                 " windows, below minimum " +
                                 std::to_string(cfg.min_windows_per_cluster)});
      continue;
    }
    rb.groups[key] = detail::build_group(key.first, key.second, windows, manual, cfg);
  }
  return rb;
}

/// Maps one window to its scaled state: manual interval on f_avg wins,
/// otherwise nearest cluster center in standardized feature space with ties
/// broken toward the lower-severity code.
inline ScaledState scale(const KpiWindow& w, const RuleBase& rb) {
  const KpiRule* rule = rb.find(w.entity_class, w.kpi_name);
  if (!rule)
    throw LookupError("no rule for (" + w.entity_class + ", " + w.kpi_name + ")");
  const int m_eff = std::max(1, std::min<int>(rule->trend_m, static_cast<int>(w.values.size() / 2)));
  const FeatureVector f = extract_features(w.values, rule->noise_threshold, m_eff);

  ScaledState s;
  s.kpi_name = w.kpi_name;
  s.representative_value = f.avg;

  int code;
  if (const StateInterval* m = detail::match_manual(*rule, f.avg)) {
    code = m->code;
  } else {
    const std::array<double, 4> z = detail::standardize(f, *rule);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < rule->centers.size(); ++c) {
      double d = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        const double diff = z[i] - rule->centers[c][i];
        d += diff * diff;
      }
      const bool closer = d < best_d;
      const bool tie_lower_sev =
          d == best_d && rule->codes.at(rule->cluster_codes[c]).severity <
                             rule->codes.at(rule->cluster_codes[best]).severity;
      if (closer || tie_lower_sev) {
        best_d = d;
        best = c;
      }
    }
    code = rule->cluster_codes[best];
  }

  const CodeInfo& info = rule->codes.at(code);
  s.code = code;
  s.severity = info.severity;
  s.descriptor = info.descriptor;
  if (const StateInterval* iv = rule->interval_for_code(code)) {
    s.lower = iv->lower;
    s.upper = iv->upper;
    s.point = iv->is_point();
  } else {
    s.lower = info.band_lo;
    s.upper = info.band_hi;
    s.point = info.band_lo == info.band_hi;
  }
  return s;
}

/// Scales every window of one entity snapshot into an LSS, kpi order = input order.
inline ScaledStateList scale_entity(const std::vector<KpiWindow>& windows, const RuleBase& rb) {
  if (windows.empty()) throw std::invalid_argument("scale_entity: no windows");
  ScaledStateList lss;
  lss.entity_id = windows.front().entity_id;
  lss.entity_class = windows.front().entity_class;
  lss.window_index = windows.front().window_index;
  for (const KpiWindow& w : windows) {
    if (w.entity_id != lss.entity_id || w.window_index != lss.window_index)
      throw ValidationError("scale_entity: windows span multiple entities or window indices");
    lss.states.push_back(scale(w, rb));
  }
  return lss;
}

/// Rebuilds the groups that have recent windows once delta_t has elapsed
/// since their build; untouched groups are carried over unchanged.
inline RuleBase recluster(const RuleBase& rb, const std::vector<KpiWindow>& recent,
                          std::int64_t now, std::int64_t delta_t) {
  std::map<std::pair<std::string, std::string>, std::vector<KpiWindow>> by_group;
  for (const KpiWindow& w : recent) by_group[{w.entity_class, w.kpi_name}].push_back(w);
  if (by_group.empty()) throw std::invalid_argument("recluster: no recent windows");

  RuleBase out = rb;
  RuleBaseConfig cfg = rb.config;
  cfg.built_at = now;

  for (auto& [key, windows] : by_group) {
    auto it = rb.groups.find(key);
    if (it != rb.groups.end() && now - it->second.built_at < delta_t) continue;
    out.warnings.erase(std::remove_if(out.warnings.begin(), out.warnings.end(),
                                      [&](const RuleWarning& wr) {
                                        return wr.entity_class == key.first &&
                                               wr.kpi_name == key.second;
                                      }),
                       out.warnings.end());
    if (windows.size() < static_cast<std::size_t>(cfg.min_windows_per_cluster)) {
      out.warnings.push_back({key.first, key.second,
                              "recluster skipped: " + std::to_string(windows.size()) +
                                  " recent windows, below minimum " +
                                  std::to_string(cfg.min_windows_per_cluster)});
      continue;
    }
    std::vector<const KpiWindow*> ptrs;
    ptrs.reserve(windows.size());
    for (const KpiWindow& w : windows) ptrs.push_back(&w);
    out.groups[key] = detail::build_group(key.first, key.second, ptrs, rb.manual, cfg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON persistence
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RuleBase& rb) {
  nlohmann::json j;
  j["version"] = rb.version;
  j["config"] = {{"k_max", rb.config.k_max},
                 {"min_windows_per_cluster", rb.config.min_windows_per_cluster},
                 {"normal_code", rb.config.normal_code},
                 {"trend_m", rb.config.trend_m},
                 {"seed", rb.config.seed},
                 {"built_at", rb.config.built_at}};
  j["groups"] = nlohmann::json::array();
  for (const auto& [key, rule] : rb.groups) {
    nlohmann::json g;
    g["entity_class"] = rule.entity_class;
    g["kpi_name"] = rule.kpi_name;
    g["seed"] = rule.seed;
    g["noise_threshold"] = rule.noise_threshold;
    g["trend_m"] = rule.trend_m;
    g["built_at"] = rule.built_at;
    g["scaler_mean"] = rule.scaler_mean;
    g["scaler_std"] = rule.scaler_std;
    g["centers"] = rule.centers;
    g["cluster_codes"] = rule.cluster_codes;
    g["normal_index"] = rule.normal_index;
    g["k_reduced"] = rule.k_reduced;
    g["codes"] = nlohmann::json::array();
    for (const auto& [code, info] : rule.codes) {
      g["codes"].push_back({{"code", code},
                            {"severity", info.severity},
                            {"descriptor", info.descriptor},
                            {"origin", info.origin == IntervalOrigin::manual ? "manual" : "clustered"},
                            {"band_lo", info.band_lo},
                            {"band_hi", info.band_hi}});
    }
    g["intervals"] = nlohmann::json::array();
    for (const StateInterval& iv : rule.intervals) {
      g["intervals"].push_back({{"lower", iv.lower},
                                {"upper", iv.upper},
                                {"code", iv.code},
                                {"severity", iv.severity},
                                {"descriptor", iv.descriptor},
                                {"origin", iv.origin == IntervalOrigin::manual ? "manual" : "clustered"}});
    }
    j["groups"].push_back(std::move(g));
  }
  j["manual"] = nlohmann::json::array();
  for (const ManualInterval& m : rb.manual) {
    j["manual"].push_back({{"entity_class", m.entity_class},
                           {"kpi_name", m.kpi_name},
                           {"lower", m.lower},
                           {"upper", m.upper},
                           {"code", m.code},
                           {"descriptor", m.descriptor}});
  }
  j["warnings"] = nlohmann::json::array();
  for (const RuleWarning& w : rb.warnings) {
    j["warnings"].push_back(
        {{"entity_class", w.entity_class}, {"kpi_name", w.kpi_name}, {"reason", w.reason}});
  }
  return j;
}

inline RuleBase rulebase_from_json(const nlohmann::json& j) {
  RuleBase rb;
  try {
    rb.version = j.at("version").get<int>();
    if (rb.version != 1)
      throw SchemaError("unsupported rulebase version " + std::to_string(rb.version));
    const auto& jc = j.at("config");
    rb.config.k_max = jc.at("k_max").get<int>();
    rb.config.min_windows_per_cluster = jc.at("min_windows_per_cluster").get<int>();
    rb.config.normal_code = jc.at("normal_code").get<int>();
    rb.config.trend_m = jc.at("trend_m").get<int>();
    rb.config.seed = jc.at("seed").get<std::uint64_t>();
    rb.config.built_at = jc.at("built_at").get<std::int64_t>();
    for (const auto& g : j.at("groups")) {
      KpiRule rule;
      rule.entity_class = g.at("entity_class").get<std::string>();
      rule.kpi_name = g.at("kpi_name").get<std::string>();
      rule.seed = g.at("seed").get<std::uint64_t>();
      rule.noise_threshold = g.at("noise_threshold").get<double>();
      rule.trend_m = g.at("trend_m").get<int>();
      rule.built_at = g.at("built_at").get<std::int64_t>();
      rule.scaler_mean = g.at("scaler_mean").get<std::array<double, 4>>();
      rule.scaler_std = g.at("scaler_std").get<std::array<double, 4>>();
      rule.centers = g.at("centers").get<std::vector<std::array<double, 4>>>();
      rule.cluster_codes = g.at("cluster_codes").get<std::vector<int>>();
      rule.normal_index = g.at("normal_index").get<int>();
      rule.k_reduced = g.at("k_reduced").get<bool>();
      for (const auto& c : g.at("codes")) {
        CodeInfo info;
        info.severity = c.at("severity").get<double>();
        info.descriptor = c.at("descriptor").get<std::string>();
        info.origin = c.at("origin").get<std::string>() == "manual" ? IntervalOrigin::manual
                                                                    : IntervalOrigin::clustered;
        info.band_lo = c.at("band_lo").get<double>();
        info.band_hi = c.at("band_hi").get<double>();
        rule.codes[c.at("code").get<int>()] = info;
      }
      for (const auto& i : g.at("intervals")) {
        StateInterval iv;
        iv.lower = i.at("lower").get<double>();
        iv.upper = i.at("upper").get<double>();
        iv.code = i.at("code").get<int>();
        iv.severity = i.at("severity").get<double>();
        iv.descriptor = i.at("descriptor").get<std::string>();
        iv.origin = i.at("origin").get<std::string>() == "manual" ? IntervalOrigin::manual
                                                                  : IntervalOrigin::clustered;
        rule.intervals.push_back(std::move(iv));
      }
      rb.groups[{rule.entity_class, rule.kpi_name}] = std::move(rule);
    }
    for (const auto& m : j.at("manual")) {
      rb.manual.push_back({m.at("entity_class").get<std::string>(),
                           m.at("kpi_name").get<std::string>(), m.at("lower").get<double>(),
                           m.at("upper").get<double>(), m.at("code").get<int>(),
                           m.at("descriptor").get<std::string>()});
    }
    for (const auto& w : j.at("warnings")) {
      rb.warnings.push_back({w.at("entity_class").get<std::string>(),
                             w.at("kpi_name").get<std::string>(),
                             w.at("reason").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("rulebase document malformed: ") + e.what());
  }
  return rb;
}

inline std::vector<ManualInterval> load_manual_intervals(const nlohmann::json& j) {
  std::vector<ManualInterval> out;
  if (!j.is_array()) throw SchemaError("manual intervals document must be a JSON array");
  try {
    for (const auto& m : j) {
      out.push_back({m.at("entity_class").get<std::string>(), m.at("kpi_name").get<std::string>(),
                     m.at("lower").get<double>(), m.at("upper").get<double>(),
                     m.at("code").get<int>(), m.at("descriptor").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manual intervals malformed: ") + e.what());
  }
  detail::validate_manual(out);
  return out;
}

}  // namespace msadm
