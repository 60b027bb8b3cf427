#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "msadm/rulebase.hpp"
#include "msadm/tensor.hpp"

namespace msadm {

/// Per-channel recalibration weights K_f = s_f * r_f for one entity.
struct RecalibrationMask {
  std::vector<double> K;
};

enum class MaskMode {
  plus_one,  // f_v = X * (1 + K): preserves normal-state signal
  literal    // f_v = X * K: zeroes channels whose state code is 0
};

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "plus_one") return MaskMode::plus_one;
  if (s == "literal") return MaskMode::literal;
  throw ValidationError("unknown mask mode '" + s + "' (expected plus_one or literal)");
}

inline std::string to_string(MaskMode m) {
  return m == MaskMode::plus_one ? "plus_one" : "literal";
}

/// Position of v inside [lower, upper], clamped to [0, 1]. Point intervals
/// report maximal intensity.
inline double relative_intensity(double v, double lower, double upper) {
  require_finite(v, "raw value");
  require_finite(lower, "interval lower");
  require_finite(upper, "interval upper");
  if (lower > upper) throw std::invalid_argument("relative_intensity: lower > upper");
  if (lower == upper) return 1.0;
  if (v <= lower) return 0.0;
  if (v >= upper) return 1.0;
  return (v - lower) / (upper - lower);
}

inline double relative_intensity(double v, const StateInterval& iv) {
  return relative_intensity(v, iv.lower, iv.upper);
}

inline double relative_intensity(const ScaledState& s) {
  return relative_intensity(s.representative_value, s.lower, s.upper);
}

inline double recalibration_weight(int state_code, double r) {
  if (state_code < 0) throw std::invalid_argument("recalibration_weight: state code must be >= 0");
  if (!(r >= 0.0 && r <= 1.0))
    throw std::invalid_argument("recalibration_weight: relative intensity must lie in [0,1]");
  return static_cast<double>(state_code) * r;
}

/// Builds the per-channel mask for one entity from its LSS. channel_kpis
/// fixes the channel order; every channel must have a scaled state.
inline RecalibrationMask build_mask(const ScaledStateList& lss,
                                    const std::vector<std::string>& channel_kpis) {
  RecalibrationMask mask;
  mask.K.reserve(channel_kpis.size());
  for (const std::string& kpi : channel_kpis) {
    const ScaledState* found = nullptr;
    for (const ScaledState& s : lss.states) {
      if (s.kpi_name == kpi) {
        found = &s;
        break;
      }
    }
    if (!found)
      throw LookupError("no scaled state for channel '" + kpi + "' of entity " + lss.entity_id);
    mask.K.push_back(recalibration_weight(found->code, relative_intensity(*found)));
  }
  return mask;
}

/// Recalibrates the input tensor with one mask per entity.
inline Tensor3 apply_mask(const Tensor3& X, const std::vector<RecalibrationMask>& masks,
                          MaskMode mode = MaskMode::plus_one) {
  if (masks.size() != X.E)
    throw std::domain_error("apply_mask: need one mask per entity");
  for (const RecalibrationMask& m : masks) {
    if (m.K.size() != X.C)
      throw std::domain_error("apply_mask: mask channel count does not match tensor");
    for (double k : m.K) {
      require_finite(k, "mask weight");
      if (k < 0.0) throw std::domain_error("apply_mask: negative mask weight");
    }
  }
  Tensor3 out(X.E, X.T, X.C);
  for (std::size_t e = 0; e < X.E; ++e)
    for (std::size_t t = 0; t < X.T; ++t)
      for (std::size_t c = 0; c < X.C; ++c) {
        const double k = masks[e].K[c];
        const double factor = mode == MaskMode::plus_one ? 1.0 + k : k;
        out.at(e, t, c) = X.at(e, t, c) * factor;
      }
  return out;
}

}  // namespace msadm
