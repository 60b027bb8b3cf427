#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"

namespace msadm {

struct DetectionMetrics {
  double accuracy = 0.0;                 // percent
  std::optional<double> recall;          // absent when truth has no positives
  std::optional<double> fnr;             // absent when truth has no positives
  std::optional<double> fpr;             // absent when truth has no negatives
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

template <typename Label>
DetectionMetrics detection_metrics(const std::vector<Label>& pred,
                                   const std::vector<Label>& truth,
                                   const Label& positive_class) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("detection_metrics: pred/truth length mismatch");
  if (pred.empty()) throw std::invalid_argument("detection_metrics: empty inputs");

  DetectionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive_class;
    const bool t = truth[i] == positive_class;
    if (p && t)
      ++m.tp;
    else if (p && !t)
      ++m.fp;
    else if (!p && t)
      ++m.fn;
    else
      ++m.tn;
  }
  const double n = static_cast<double>(pred.size());
  m.accuracy = 100.0 * static_cast<double>(m.tp + m.tn) / n;
  if (m.tp + m.fn > 0) {
    m.recall = 100.0 * static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    m.fnr = 100.0 - *m.recall;
  }
  if (m.fp + m.tn > 0)
    m.fpr = 100.0 * static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn);
  return m;
}

/// Multi-class accuracy over exact label matches, in percent.
template <typename Label>
double classification_accuracy(const std::vector<Label>& pred, const std::vector<Label>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("classification_accuracy: pred/truth length mismatch");
  if (pred.empty()) throw std::invalid_argument("classification_accuracy: empty inputs");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Threshold sweep over distinct scores (predict positive when score >= t).
/// Fractions in [0,1]; the endpoints (0,0) and (1,1) are always present.
inline std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                        const std::vector<int>& truth) {
  if (scores.size() != truth.size())
    throw std::invalid_argument("roc_points: scores/truth length mismatch");
  if (scores.empty()) throw std::invalid_argument("roc_points: empty inputs");
  if (!all_finite(scores.begin(), scores.end()))
    throw std::domain_error("roc_points: scores must be finite");

  std::size_t pos = 0, neg = 0;
  for (int t : truth) (t != 0 ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::domain_error("roc_points: truth needs at least one positive and one negative");

  std::set<double> thresholds(scores.begin(), scores.end());
  std::vector<RocPoint> points;
  points.push_back({0.0, 0.0});
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (truth[i] != 0 ? tp : fp)++;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                      static_cast<double>(tp) / static_cast<double>(pos)});
  }
  points.push_back({1.0, 1.0});
  std::sort(points.begin(), points.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  points.erase(std::unique(points.begin(), points.end(),
                           [](const RocPoint& a, const RocPoint& b) {
                             return a.fpr == b.fpr && a.tpr == b.tpr;
                           }),
               points.end());
  return points;
}

struct RougePair {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

struct RougeScores {
  RougePair rouge1;
  RougePair rougeL;
};

namespace detail {

inline std::vector<std::string> rouge_tokenize(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u))
      cleaned.push_back(' ');
    else
      cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougePair rouge_pair(std::size_t match, std::size_t cand_len, std::size_t ref_len) {
  RougePair p;
  p.recall = 100.0 * static_cast<double>(match) / static_cast<double>(ref_len);
  p.precision = 100.0 * static_cast<double>(match) / static_cast<double>(cand_len);
  p.f1 = p.precision + p.recall > 0.0
             ? 2.0 * p.precision * p.recall / (p.precision + p.recall)
             : 0.0;
  return p;
}

}  // namespace detail

inline RougeScores rouge(const std::string& candidate, const std::string& reference) {
  const std::vector<std::string> cand = detail::rouge_tokenize(candidate);
  const std::vector<std::string> ref = detail::rouge_tokenize(reference);
  if (cand.empty()) throw std::domain_error("rouge: candidate is empty after tokenization");
  if (ref.empty()) throw std::domain_error("rouge: reference is empty after tokenization");

  std::map<std::string, std::size_t> ref_counts;
  for (const std::string& t : ref) ++ref_counts[t];
  std::map<std::string, std::size_t> cand_counts;
  for (const std::string& t : cand) ++cand_counts[t];
  std::size_t overlap = 0;
  for (const auto& [tok, c] : cand_counts) {
    const auto it = ref_counts.find(tok);
    if (it != ref_counts.end()) overlap += std::min(c, it->second);
  }

  RougeScores s;
  s.rouge1 = detail::rouge_pair(overlap, cand.size(), ref.size());
  s.rougeL = detail::rouge_pair(detail::lcs_length(cand, ref), cand.size(), ref.size());
  return s;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

inline nlohmann::json metrics_to_json(const DetectionMetrics& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["recall"] = m.recall ? nlohmann::json(*m.recall) : nlohmann::json();
  j["fnr"] = m.fnr ? nlohmann::json(*m.fnr) : nlohmann::json();
  j["fpr"] = m.fpr ? nlohmann::json(*m.fpr) : nlohmann::json();
  j["counts"] = {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
  return j;
}

inline nlohmann::json rouge_to_json(const RougeScores& s) {
  auto pair = [](const RougePair& p) {
    return nlohmann::json{
        {"recall", p.recall}, {"precision", p.precision}, {"f1", p.f1}};
  };
  return nlohmann::json{{"rouge1", pair(s.rouge1)}, {"rougeL", pair(s.rougeL)}};
}

inline std::string metrics_table(const DetectionMetrics& m) {
  auto cell = [](const std::optional<double>& v) {
    return v ? fmt_fixed(*v, 2) : std::string("n/a");
  };
  std::ostringstream out;
  out << "metric     value\n";
  out << "---------  ------\n";
  out << "accuracy   " << fmt_fixed(m.accuracy, 2) << "\n";
  out << "recall     " << cell(m.recall) << "\n";
  out << "fnr        " << cell(m.fnr) << "\n";
  out << "fpr        " << cell(m.fpr) << "\n";
  return out.str();
}

inline std::string roc_to_csv(const std::vector<RocPoint>& points) {
  std::string out = "fpr,tpr\n";
  for (const RocPoint& p : points) {
    out += fmt_double(p.fpr);
    out += ',';
    out += fmt_double(p.tpr);
    out += '\n';
  }
  return out;
}

}  // namespace msadm
