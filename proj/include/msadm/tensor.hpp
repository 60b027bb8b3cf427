#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "msadm/common.hpp"

namespace msadm {

/// Dense [entities x timesteps x channels] tensor, row-major.
struct Tensor3 {
  std::size_t E = 0, T = 0, C = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t e, std::size_t t, std::size_t c)
      : E(e), T(t), C(c), data(e * t * c, 0.0) {
    if (e == 0 || t == 0 || c == 0)
      throw std::invalid_argument("Tensor3: dimensions must be >= 1");
  }

  double& at(std::size_t e, std::size_t t, std::size_t c) {
    return data[(e * T + t) * C + c];
  }
  const double& at(std::size_t e, std::size_t t, std::size_t c) const {
    return data[(e * T + t) * C + c];
  }

  bool same_shape(const Tensor3& o) const { return E == o.E && T == o.T && C == o.C; }

  bool finite() const { return all_finite(data.begin(), data.end()); }
};

}  // namespace msadm
