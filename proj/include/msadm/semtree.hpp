#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"
#include "msadm/rulebase.hpp"

namespace msadm {

inline constexpr double kValueReportFactor = 1.15;

struct TreeNode {
  std::string phrase;
  std::string kpi;         // leaf key, empty on internal nodes
  std::string descriptor;  // leaf key, empty on internal nodes
  std::vector<std::size_t> children;
  std::size_t parent = static_cast<std::size_t>(-1);

  bool is_leaf() const { return !descriptor.empty(); }
};

struct SemanticTree {
  std::vector<TreeNode> nodes;
  std::size_t root = 0;
  std::map<std::pair<std::string, std::string>, std::size_t> leaf_index;
  std::vector<std::string> unreachable;  // internal nodes with no leaf below
  std::uint64_t structure_hash = 0;
};

/// Per-group state-code semantics: descriptor words, the normal code, and
/// the zero-severity codes Algorithm pruning removes.
struct GroupMapping {
  std::map<int, std::string> descriptors;
  int normal_code = 1;
  std::set<int> zero_severity;
};

struct DescriptorMapping {
  std::map<std::pair<std::string, std::string>, GroupMapping> groups;

  const GroupMapping& group(const std::string& entity_class, const std::string& kpi) const {
    auto it = groups.find({entity_class, kpi});
    if (it == groups.end())
      throw LookupError("no descriptor mapping for (" + entity_class + ", " + kpi + ")");
    return it->second;
  }

  const std::string& map_code(const std::string& entity_class, const std::string& kpi,
                              int code) const {
    const GroupMapping& g = group(entity_class, kpi);
    auto it = g.descriptors.find(code);
    if (it == g.descriptors.end())
      throw LookupError("code " + std::to_string(code) + " of KPI " + kpi +
                        " has no descriptor in the mapping");
    return it->second;
  }
};

inline DescriptorMapping mapping_from(const RuleBase& rb) {
  DescriptorMapping m;
  for (const auto& [key, rule] : rb.groups) {
    GroupMapping g;
    g.normal_code = rb.config.normal_code;
    for (const auto& [code, info] : rule.codes) {
      g.descriptors[code] = info.descriptor;
      if (info.severity == 0.0) g.zero_severity.insert(code);
    }
    m.groups[key] = g;
  }
  return m;
}

namespace detail {

inline std::size_t parse_grammar_node(const nlohmann::json& j, SemanticTree& tree,
                                      std::size_t parent) {
  if (!j.is_object()) throw StructuralError("grammar node must be a JSON object");
  TreeNode node;
  node.parent = parent;
  try {
    node.phrase = trim(j.at("phrase").get<std::string>());
  } catch (const nlohmann::json::exception&) {
    throw StructuralError("grammar node is missing its phrase");
  }
  if (node.phrase.empty()) throw StructuralError("grammar node has an empty phrase");
  if (j.contains("descriptor") || j.contains("kpi")) {
    if (!j.contains("descriptor") || !j.contains("kpi"))
      throw StructuralError("leaf node '" + node.phrase + "' needs both kpi and descriptor keys");
    node.kpi = j.at("kpi").get<std::string>();
    node.descriptor = j.at("descriptor").get<std::string>();
    if (node.kpi.empty() || node.descriptor.empty())
      throw StructuralError("leaf node '" + node.phrase + "' has empty kpi or descriptor");
    if (j.contains("children") && !j.at("children").empty())
      throw StructuralError("leaf node '" + node.phrase + "' must not have children");
  }
  const std::size_t idx = tree.nodes.size();
  tree.nodes.push_back(node);
  if (!tree.nodes[idx].is_leaf() && j.contains("children")) {
    const auto& kids = j.at("children");
    if (!kids.is_array()) throw StructuralError("children of '" + node.phrase + "' must be an array");
    for (const auto& kid : kids) {
      const std::size_t child = parse_grammar_node(kid, tree, idx);
      tree.nodes[idx].children.push_back(child);
    }
  }
  return idx;
}

inline bool has_leaf_below(const SemanticTree& tree, std::size_t idx) {
  const TreeNode& n = tree.nodes[idx];
  if (n.is_leaf()) return true;
  for (std::size_t c : n.children)
    if (has_leaf_below(tree, c)) return true;
  return false;
}

}  // namespace detail

/// Builds the tree from its JSON document and verifies the structural
/// invariants: single root, unique (kpi, descriptor) leaves, no childless
/// internal nodes masquerading as leaves.
inline SemanticTree load_grammar(const nlohmann::json& doc) {
  SemanticTree tree;
  tree.root = detail::parse_grammar_node(doc, tree, static_cast<std::size_t>(-1));

  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& n = tree.nodes[i];
    if (n.is_leaf()) {
      auto key = std::make_pair(n.kpi, n.descriptor);
      if (tree.leaf_index.count(key))
        throw StructuralError("duplicate leaf for (" + n.kpi + ", " + n.descriptor +
                              ") at node '" + n.phrase + "'");
      tree.leaf_index[key] = i;
    } else if (n.children.empty()) {
      tree.unreachable.push_back(n.phrase);
    } else if (!detail::has_leaf_below(tree, i)) {
      tree.unreachable.push_back(n.phrase);
    }
  }
  if (tree.leaf_index.empty()) throw StructuralError("grammar has no descriptor leaves");

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const TreeNode& n : tree.nodes) {
    h = fnv1a64(n.phrase, h);
    h = fnv1a64(n.kpi, h);
    h = fnv1a64(n.descriptor, h);
    const std::uint64_t arity = n.children.size();
    h = fnv1a64(&arity, sizeof(arity), h);
  }
  tree.structure_hash = h;
  return tree;
}

inline SemanticTree load_grammar_text(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw SchemaError("grammar document is not valid JSON");
  return load_grammar(doc);
}

/// Checks that every non-prunable code's descriptor resolves to a leaf for
/// its KPI. Throws a structural error naming the first gap.
inline void validate_coverage(const SemanticTree& tree, const DescriptorMapping& mapping) {
  for (const auto& [key, g] : mapping.groups) {
    for (const auto& [code, descriptor] : g.descriptors) {
      if (g.zero_severity.count(code)) continue;
      if (!tree.leaf_index.count({key.second, descriptor}))
        throw StructuralError("grammar is missing a leaf for (" + key.second + ", " + descriptor +
                              ") required by " + key.first);
    }
  }
}

inline std::vector<std::size_t> traverse_tree(const SemanticTree& tree, const std::string& kpi,
                                              const std::string& descriptor) {
  auto it = tree.leaf_index.find({kpi, descriptor});
  if (it == tree.leaf_index.end())
    throw LookupError("no leaf for descriptor '" + descriptor + "' of KPI " + kpi);
  std::vector<std::size_t> path;
  for (std::size_t idx = it->second; idx != static_cast<std::size_t>(-1);
       idx = tree.nodes[idx].parent)
    path.push_back(idx);
  std::reverse(path.begin(), path.end());
  return path;
}

inline std::string construct_sentence(const std::vector<std::string>& phrases) {
  if (phrases.empty()) throw std::invalid_argument("construct_sentence: empty path");
  std::string out;
  for (const std::string& p : phrases) {
    const std::string t = trim(p);
    if (t.empty()) throw std::invalid_argument("construct_sentence: empty phrase in path");
    if (!out.empty()) out += ' ';
    out += t;
  }
  if (out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 'a' + 'A');
  out += '.';
  return out;
}

inline std::string construct_sentence(const SemanticTree& tree,
                                      const std::vector<std::size_t>& path) {
  std::vector<std::string> phrases;
  phrases.reserve(path.size());
  for (std::size_t idx : path) phrases.push_back(tree.nodes[idx].phrase);
  return construct_sentence(phrases);
}

/// Raw-value rendering for sentence suffixes, deterministic per KPI family.
inline std::string render_kpi_value(const std::string& kpi_name, double v) {
  if (kpi_name == "packet_loss") return fmt_fixed(v * 100.0, 1) + "%";
  if (kpi_name == "delay") return fmt_fixed(v, 0) + " ms";
  if (kpi_name == "jitter") return fmt_fixed(v, 1) + " ms";
  if (kpi_name == "throughput") return fmt_fixed(v, 1) + " Mb/s";
  return fmt_double(v);
}

struct GenerationResult {
  std::vector<std::string> sentences;
  bool refreshed = false;
  RuleBase rulebase;        // post-refresh rule base (== input when not refreshed)
  DescriptorMapping mapping;
};

/// Enhanced description generation: optional rule-base refresh once delta_t
/// has elapsed, zero-severity pruning, root-to-leaf sentence construction,
/// and the conditional value suffix for v > upper * 1.15.
inline GenerationResult generate_descriptions(const ScaledStateList& S, const SemanticTree& tree,
                                              const DescriptorMapping& mapping, const RuleBase& rb,
                                              const std::vector<KpiWindow>& recent,
                                              std::int64_t now, std::int64_t delta_t) {
  GenerationResult res;
  res.rulebase = rb;
  res.mapping = mapping;

  bool stale = false;
  for (const auto& [key, rule] : rb.groups)
    if (now - rule.built_at >= delta_t) stale = true;
  if (!recent.empty() && stale) {
    res.rulebase = recluster(rb, recent, now, delta_t);
    res.mapping = mapping_from(res.rulebase);
    res.refreshed = true;
  }

  for (const ScaledState& s : S.states) {
    const GroupMapping& g = res.mapping.group(S.entity_class, s.kpi_name);
    if (g.zero_severity.count(s.code)) continue;
    auto dit = g.descriptors.find(s.code);
    if (dit == g.descriptors.end())
      throw LookupError("code " + std::to_string(s.code) + " of KPI " + s.kpi_name +
                        " has no descriptor in the mapping");
    const std::vector<std::size_t> path = traverse_tree(tree, s.kpi_name, dit->second);
    std::vector<std::string> phrases;
    phrases.reserve(path.size() + 1);
    for (std::size_t idx : path) phrases.push_back(tree.nodes[idx].phrase);
    if (s.representative_value > s.upper * kValueReportFactor)
      phrases.push_back("with value " + render_kpi_value(s.kpi_name, s.representative_value));
    res.sentences.push_back(construct_sentence(phrases));
  }
  return res;
}

/// Grammar shipped with the library: depth-4 paths over the simulated KPI
/// families and the severity descriptor ladder.
inline const char* default_grammar_json() {
  return R"GRAMMAR({
  "phrase": "the",
  "children": [
    {
      "phrase": "packet loss rate",
      "children": [
        {
          "phrase": "shows",
          "children": [
            {"phrase": "a slight anomaly", "kpi": "packet_loss", "descriptor": "slight"},
            {"phrase": "a moderate anomaly", "kpi": "packet_loss", "descriptor": "moderate"},
            {"phrase": "a high anomaly", "kpi": "packet_loss", "descriptor": "high"},
            {"phrase": "an extreme anomaly", "kpi": "packet_loss", "descriptor": "extreme"},
            {"phrase": "a complete loss of packets", "kpi": "packet_loss", "descriptor": "complete"}
          ]
        }
      ]
    },
    {
      "phrase": "delay",
      "children": [
        {
          "phrase": "shows",
          "children": [
            {"phrase": "a slight anomaly", "kpi": "delay", "descriptor": "slight"},
            {"phrase": "a moderate anomaly", "kpi": "delay", "descriptor": "moderate"},
            {"phrase": "a high anomaly", "kpi": "delay", "descriptor": "high"},
            {"phrase": "an extreme anomaly", "kpi": "delay", "descriptor": "extreme"},
            {"phrase": "a complete stall", "kpi": "delay", "descriptor": "complete"}
          ]
        }
      ]
    },
    {
      "phrase": "throughput",
      "children": [
        {
          "phrase": "shows",
          "children": [
            {"phrase": "a slight anomaly", "kpi": "throughput", "descriptor": "slight"},
            {"phrase": "a moderate anomaly", "kpi": "throughput", "descriptor": "moderate"},
            {"phrase": "a high anomaly", "kpi": "throughput", "descriptor": "high"},
            {"phrase": "an extreme anomaly", "kpi": "throughput", "descriptor": "extreme"},
            {"phrase": "a complete collapse", "kpi": "throughput", "descriptor": "complete"}
          ]
        }
      ]
    },
    {
      "phrase": "jitter",
      "children": [
        {
          "phrase": "shows",
          "children": [
            {"phrase": "a slight anomaly", "kpi": "jitter", "descriptor": "slight"},
            {"phrase": "a moderate anomaly", "kpi": "jitter", "descriptor": "moderate"},
            {"phrase": "a high anomaly", "kpi": "jitter", "descriptor": "high"},
            {"phrase": "an extreme anomaly", "kpi": "jitter", "descriptor": "extreme"},
            {"phrase": "a complete instability", "kpi": "jitter", "descriptor": "complete"}
          ]
        }
      ]
    },
    {
      "phrase": "bit error rate",
      "children": [
        {
          "phrase": "shows",
          "children": [
            {"phrase": "a slight anomaly", "kpi": "bit_error_rate", "descriptor": "slight"},
            {"phrase": "a moderate anomaly", "kpi": "bit_error_rate", "descriptor": "moderate"},
            {"phrase": "a high anomaly", "kpi": "bit_error_rate", "descriptor": "high"},
            {"phrase": "an extreme anomaly", "kpi": "bit_error_rate", "descriptor": "extreme"},
            {"phrase": "a complete corruption", "kpi": "bit_error_rate", "descriptor": "complete"}
          ]
        }
      ]
    }
  ]
})GRAMMAR";
}

inline SemanticTree default_grammar() { return load_grammar_text(default_grammar_json()); }

}  // namespace msadm
