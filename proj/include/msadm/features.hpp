#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "msadm/common.hpp"
#include "msadm/ingest.hpp"

namespace msadm {

/// Window statistics: population mean/variance, jitter (stddev), and
/// trend (count of significant local extrema).
struct FeatureVector {
  double avg = 0.0;
  double var = 0.0;
  double jit = 0.0;
  int trend = 0;

  std::array<double, 4> as_array() const {
    return {avg, var, jit, static_cast<double>(trend)};
  }
};

/// Counts significant local extrema: the window is covered by m
/// overlapping equal-length subintervals; an interior point of a
/// subinterval counts when it differs from both neighbors by more than
/// the noise threshold h and is a strict local max or min. A physical
/// sample is counted at most once across subintervals.
inline int count_extrema(const std::vector<double>& values, double h, int m) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("count_extrema: window needs >= 2 samples");
  if (h < 0.0) throw std::invalid_argument("count_extrema: noise threshold must be >= 0");
  if (m < 1 || static_cast<std::size_t>(m) * 2 > n)
    throw std::invalid_argument("count_extrema: subinterval count must satisfy 1 <= m <= n/2");
  for (double v : values) require_finite(v, "sample");

  // Nominal length 2*ceil(n/(m+1)) gives ~50% overlap; offsets are spread
  // so the first subinterval starts at 0 and the last ends at n.
  std::size_t len;
  if (m == 1) {
    len = n;
  } else {
    len = 2 * ((n + static_cast<std::size_t>(m)) / (static_cast<std::size_t>(m) + 1));
    if (len > n) len = n;
  }

  std::vector<bool> counted(n, false);
  int total = 0;
  for (int j = 0; j < m; ++j) {
    std::size_t off = 0;
    if (m > 1) {
      const double span = static_cast<double>(n - len);
      off = static_cast<std::size_t>(std::llround(span * static_cast<double>(j) / static_cast<double>(m - 1)));
    }
    if (off + len > n) off = n - len;
    for (std::size_t i = off + 1; i + 1 < off + len; ++i) {
      if (counted[i]) continue;
      const double dl = values[i] - values[i - 1];
      const double dr = values[i] - values[i + 1];
      if (std::fabs(dl) > h && std::fabs(dr) > h && ((dl > 0 && dr > 0) || (dl < 0 && dr < 0))) {
        counted[i] = true;
        ++total;
      }
    }
  }
  return total;
}

inline int count_extrema(const KpiWindow& w, double h, int m) {
  return count_extrema(w.values, h, m);
}

/// Population statistics over the window plus the extrema trend.
inline FeatureVector extract_features(const std::vector<double>& values, double h, int m) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("extract_features: window needs >= 2 samples");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error("extract_features: non-finite sample");
  }
  FeatureVector f;
  double sum = 0.0;
  for (double v : values) sum += v;
  f.avg = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) {
    const double d = v - f.avg;
    ss += d * d;
  }
  f.var = ss / static_cast<double>(n);
  f.jit = std::sqrt(f.var);
  f.trend = count_extrema(values, h, m);
  return f;
}

inline FeatureVector extract_features(const KpiWindow& w, double h, int m) {
  return extract_features(w.values, h, m);
}

/// Noise threshold from historical normal windows: sqrt of the mean
/// window variance, so the threshold carries data units.
inline double default_noise_threshold(const std::vector<KpiWindow>& normal_windows) {
  if (normal_windows.empty())
    throw std::domain_error("default_noise_threshold: no windows given");
  double sum_var = 0.0;
  for (const KpiWindow& w : normal_windows) {
    const std::size_t n = w.values.size();
    if (n < 2) throw std::invalid_argument("default_noise_threshold: window needs >= 2 samples");
    double sum = 0.0;
    for (double v : w.values) {
      if (!std::isfinite(v)) throw std::domain_error("default_noise_threshold: non-finite sample");
      sum += v;
    }
    const double avg = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : w.values) ss += (v - avg) * (v - avg);
    sum_var += ss / static_cast<double>(n);
  }
  return std::sqrt(sum_var / static_cast<double>(normal_windows.size()));
}

}  // namespace msadm
