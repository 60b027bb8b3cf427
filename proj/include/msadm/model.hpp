#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msadm/common.hpp"
#include "msadm/rng.hpp"
#include "msadm/tensor.hpp"

namespace msadm {

struct ModelConfig {
  std::size_t entities = 3;
  std::size_t timesteps = 16;
  std::size_t channels = 5;
  std::size_t proj_dim = 8;
  std::size_t hidden_dim = 16;
  std::size_t fault_classes = 6;
  double kappa = 0.5;
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (entities < 1 || timesteps < 1 || channels < 1 || proj_dim < 1 || hidden_dim < 1 ||
        fault_classes < 1)
      throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
    if (!(kappa >= 0.0 && kappa <= 1.0))
      throw std::invalid_argument("ModelConfig: kappa must lie in [0,1]");
    if (learning_rate <= 0.0) throw std::invalid_argument("ModelConfig: learning rate must be > 0");
    if (epochs < 1 || batch_size < 1)
      throw std::invalid_argument("ModelConfig: epochs and batch size must be >= 1");
  }
};

struct DetectionOutput {
  std::array<double, 2> p_d{0.0, 0.0};  // (normal, anomalous)
  std::vector<double> p_c;              // over fault classes
};

struct LossParts {
  double total = 0.0;
  double detection = 0.0;
  double classification = 0.0;
};

/// Flat parameter container with named matrix views. Gradients live in a
/// parallel buffer so finite-difference checks and Adam can walk one array.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::size_t offset = 0, rows = 0, cols = 0;
  };

  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw std::logic_error("ParamStore: duplicate entry " + name);
    Entry e{name, values_.size(), rows, cols};
    index_[name] = entries_.size();
    entries_.push_back(e);
    values_.resize(values_.size() + rows * cols, 0.0);
    grads_.resize(values_.size(), 0.0);
    return e.offset;
  }

  const Entry& info(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("ParamStore: unknown entry " + name);
    return entries_[it->second];
  }

  double* ptr(const std::string& name) { return values_.data() + info(name).offset; }
  const double* ptr(const std::string& name) const { return values_.data() + info(name).offset; }
  double* grad(const std::string& name) { return grads_.data() + info(name).offset; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& grads() { return grads_; }
  const std::vector<double>& grads() const { return grads_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return values_.size(); }

  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  bool finite() const { return all_finite(values_.begin(), values_.end()); }

 private:
  std::vector<double> values_, grads_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline void matvec(const double* W, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += W[r * cols + c] * x[c];
    y[r] = s;
  }
}

// dx += W^T dy
inline void matvec_t_acc(const double* W, std::size_t rows, std::size_t cols, const double* dy,
                         double* dx) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dx[c] += W[r * cols + c] * dy[r];
}

// dW += dy (outer) x
inline void outer_acc(double* dW, std::size_t rows, std::size_t cols, const double* dy,
                      const double* x) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dW[r * cols + c] += dy[r] * x[c];
}

inline void softmax(std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t E = cfg_.entities, T = cfg_.timesteps, C = cfg_.channels;
    const std::size_t d = cfg_.proj_dim, h = cfg_.hidden_dim, F = cfg_.fault_classes;
    p_.add("ch_score_w", C, C);
    p_.add("ch_score_b", C, 1);
    p_.add("sp_score_w", E, E);
    p_.add("sp_score_b", E, 1);
    p_.add("tm_score_w", T, T);
    p_.add("tm_score_b", T, 1);
    p_.add("ch_proj", d, C);
    p_.add("sp_proj", d, C);
    p_.add("tm_proj", d, C);
    p_.add("fuse_w1", d, d);
    p_.add("fuse_w2", d, d);
    p_.add("fuse_w3", d, d);
    p_.add("gate_w", d, d);
    p_.add("gate_b", d, 1);
    for (const char* g : {"i", "f", "o", "c"}) {
      p_.add(std::string("lstm_w") + g, h, d);
      p_.add(std::string("lstm_u") + g, h, h);
      p_.add(std::string("lstm_b") + g, h, 1);
    }
    p_.add("dec_w", h, h);
    p_.add("dec_b", h, 1);
    p_.add("head_d", 2, h);
    p_.add("head_c", F, h);

    Rng rng(cfg_.seed);
    for (const ParamStore::Entry& e : p_.entries()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(e.cols));
      double* v = p_.values().data() + e.offset;
      for (std::size_t i = 0; i < e.rows * e.cols; ++i) v[i] = rng.uniform(-bound, bound);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return p_; }
  const ParamStore& params() const { return p_; }

  Tensor3 channel_attention(const Tensor3& X) const {
    Cache c;
    check_input(X);
    branch_forward(X, Axis::channel, c);
    return c.branch_out;
  }
  Tensor3 spatial_attention(const Tensor3& X) const {
    Cache c;
    check_input(X);
    branch_forward(X, Axis::spatial, c);
    return c.branch_out;
  }
  Tensor3 temporal_attention(const Tensor3& X) const {
    Cache c;
    check_input(X);
    branch_forward(X, Axis::temporal, c);
    return c.branch_out;
  }

  Tensor3 gated_fuse(const Tensor3& x_temp, const Tensor3& x_spat, const Tensor3& x_chan) const {
    const std::size_t d = cfg_.proj_dim;
    if (!x_temp.same_shape(x_spat) || !x_temp.same_shape(x_chan) || x_temp.C != d)
      throw std::domain_error("gated_fuse: branch shapes disagree");
    Tensor3 x_sum(x_temp.E, x_temp.T, d), fused(x_temp.E, x_temp.T, d);
    const double* W1 = p_.ptr("fuse_w1");
    const double* W2 = p_.ptr("fuse_w2");
    const double* W3 = p_.ptr("fuse_w3");
    const double* Wg = p_.ptr("gate_w");
    const double* bg = p_.ptr("gate_b");
    std::vector<double> tmp1(d), tmp2(d), tmp3(d), z(d);
    for (std::size_t e = 0; e < x_temp.E; ++e)
      for (std::size_t t = 0; t < x_temp.T; ++t) {
        detail::matvec(W1, d, d, &x_temp.at(e, t, 0), tmp1.data());
        detail::matvec(W2, d, d, &x_spat.at(e, t, 0), tmp2.data());
        detail::matvec(W3, d, d, &x_chan.at(e, t, 0), tmp3.data());
        for (std::size_t i = 0; i < d; ++i) x_sum.at(e, t, i) = tmp1[i] + tmp2[i] + tmp3[i];
        detail::matvec(Wg, d, d, &x_sum.at(e, t, 0), z.data());
        for (std::size_t i = 0; i < d; ++i) {
          const double g = detail::sigmoid(z[i] + bg[i]);
          fused.at(e, t, i) = g * x_sum.at(e, t, i);
        }
      }
    return fused;
  }

  std::vector<double> encode_sequence(const Tensor3& x_fused) const {
    if (x_fused.C != cfg_.proj_dim)
      throw std::domain_error("encode_sequence: inner dimension must equal proj_dim");
    const std::size_t T = x_fused.T, d = cfg_.proj_dim, h = cfg_.hidden_dim;
    std::vector<double> hs(h, 0.0), cs(h, 0.0);
    std::vector<double> x_t(d), zi(h), zf(h), zo(h), zc(h), tmp(h);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t e = 0; e < x_fused.E; ++e) s += x_fused.at(e, t, i);
        x_t[i] = s / static_cast<double>(x_fused.E);
      }
      lstm_step(x_t.data(), hs, cs, zi, zf, zo, zc, tmp);
    }
    return hs;
  }

  DetectionOutput decode(const std::vector<double>& attr) const {
    if (attr.size() != cfg_.hidden_dim)
      throw std::domain_error("decode: attr dimension must equal hidden_dim");
    if (!all_finite(attr.begin(), attr.end())) throw std::domain_error("decode: non-finite attr");
    const std::size_t h = cfg_.hidden_dim, F = cfg_.fault_classes;
    std::vector<double> z(h), isa(h);
    detail::matvec(p_.ptr("dec_w"), h, h, attr.data(), z.data());
    const double* b = p_.ptr("dec_b");
    for (std::size_t i = 0; i < h; ++i) isa[i] = std::max(0.0, z[i] + b[i]);

    DetectionOutput out;
    std::vector<double> ld(2), lc(F);
    detail::matvec(p_.ptr("head_d"), 2, h, isa.data(), ld.data());
    detail::matvec(p_.ptr("head_c"), F, h, isa.data(), lc.data());
    detail::softmax(ld);
    detail::softmax(lc);
    out.p_d = {ld[0], ld[1]};
    out.p_c = lc;
    return out;
  }

  DetectionOutput forward(const Tensor3& X) const {
    Cache c;
    run_forward(X, c);
    return c.out;
  }

  /// Full forward plus backprop; gradients accumulate into the store.
  LossParts forward_backward(const Tensor3& X, int y_d, int y_c) {
    Cache c;
    run_forward(X, c);
    const LossParts lp = loss_parts(c.out, y_d, y_c, cfg_.kappa);
    backward(X, c, y_d, y_c);
    return lp;
  }

  static LossParts loss_parts(const DetectionOutput& out, int y_d, int y_c, double kappa) {
    if (y_d != 0 && y_d != 1) throw std::invalid_argument("loss: detection label must be 0 or 1");
    if (y_c < 0 || static_cast<std::size_t>(y_c) >= out.p_c.size())
      throw std::invalid_argument("loss: class label out of range");
    if (!(kappa >= 0.0 && kappa <= 1.0))
      throw std::invalid_argument("loss: kappa must lie in [0,1]");
    constexpr double eps = 1e-12;
    LossParts lp;
    lp.detection = -std::log(std::max(out.p_d[static_cast<std::size_t>(y_d)], eps));
    lp.classification = -std::log(std::max(out.p_c[static_cast<std::size_t>(y_c)], eps));
    lp.total = kappa * lp.detection + (1.0 - kappa) * lp.classification;
    return lp;
  }

 private:
  enum class Axis { channel, spatial, temporal };

  struct Cache {
    // attention branches
    std::vector<double> mean[3], logits[3], alpha[3];
    Tensor3 scaled[3];
    Tensor3 branch_out;  // scratch for standalone branch calls
    Tensor3 x_temp, x_spat, x_chan;
    // fusion
    Tensor3 x_sum, gate, x_fused;
    // pooled sequence and LSTM tapes, one row per timestep
    std::vector<std::vector<double>> pooled, gi, gf, go, gc, cell, tanh_c, hidden;
    std::vector<double> attr;
    // decoder
    std::vector<double> dec_z, isa;
    DetectionOutput out;
  };

  void check_input(const Tensor3& X) const {
    if (X.E != cfg_.entities || X.T != cfg_.timesteps || X.C != cfg_.channels)
      throw std::domain_error("model: input tensor shape does not match config");
    if (!X.finite()) throw std::domain_error("model: non-finite input");
  }

  static std::size_t axis_len(Axis a, const ModelConfig& cfg) {
    switch (a) {
      case Axis::channel: return cfg.channels;
      case Axis::spatial: return cfg.entities;
      default: return cfg.timesteps;
    }
  }

  static const char* score_w_name(Axis a) {
    switch (a) {
      case Axis::channel: return "ch_score_w";
      case Axis::spatial: return "sp_score_w";
      default: return "tm_score_w";
    }
  }
  static const char* score_b_name(Axis a) {
    switch (a) {
      case Axis::channel: return "ch_score_b";
      case Axis::spatial: return "sp_score_b";
      default: return "tm_score_b";
    }
  }
  static const char* proj_name(Axis a) {
    switch (a) {
      case Axis::channel: return "ch_proj";
      case Axis::spatial: return "sp_proj";
      default: return "tm_proj";
    }
  }

  static std::size_t axis_index(Axis a, std::size_t e, std::size_t t, std::size_t c) {
    switch (a) {
      case Axis::channel: return c;
      case Axis::spatial: return e;
      default: return t;
    }
  }

  /// Mean over complementary axes, softmax-scored scaling, projection to d.
  void branch_forward(const Tensor3& X, Axis a, Cache& cache) const {
    const std::size_t n = axis_len(a, cfg_);
    const std::size_t ai = static_cast<std::size_t>(a);
    auto& mean = cache.mean[ai];
    auto& logits = cache.logits[ai];
    auto& alpha = cache.alpha[ai];
    mean.assign(n, 0.0);
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        for (std::size_t c = 0; c < X.C; ++c) mean[axis_index(a, e, t, c)] += X.at(e, t, c);
    const double denom = static_cast<double>(X.E * X.T * X.C) / static_cast<double>(n);
    for (double& m : mean) m /= denom;

    logits.assign(n, 0.0);
    detail::matvec(p_.ptr(score_w_name(a)), n, n, mean.data(), logits.data());
    const double* b = p_.ptr(score_b_name(a));
    for (std::size_t i = 0; i < n; ++i) logits[i] += b[i];
    alpha = logits;
    detail::softmax(alpha);

    cache.scaled[ai] = Tensor3(X.E, X.T, X.C);
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        for (std::size_t c = 0; c < X.C; ++c)
          cache.scaled[ai].at(e, t, c) = X.at(e, t, c) * alpha[axis_index(a, e, t, c)];

    const std::size_t d = cfg_.proj_dim;
    cache.branch_out = Tensor3(X.E, X.T, d);
    const double* P = p_.ptr(proj_name(a));
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        detail::matvec(P, d, X.C, &cache.scaled[ai].at(e, t, 0), &cache.branch_out.at(e, t, 0));
  }

  void branch_backward(const Tensor3& X, Axis a, const Tensor3& d_out, Cache& cache) {
    const std::size_t n = axis_len(a, cfg_);
    const std::size_t ai = static_cast<std::size_t>(a);
    const std::size_t d = cfg_.proj_dim;
    const double* P = p_.ptr(proj_name(a));
    double* dP = p_.grad(proj_name(a));
    Tensor3 d_scaled(X.E, X.T, X.C);
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t) {
        detail::outer_acc(dP, d, X.C, &d_out.at(e, t, 0), &cache.scaled[ai].at(e, t, 0));
        detail::matvec_t_acc(P, d, X.C, &d_out.at(e, t, 0), &d_scaled.at(e, t, 0));
      }
    std::vector<double> d_alpha(n, 0.0);
    for (std::size_t e = 0; e < X.E; ++e)
      for (std::size_t t = 0; t < X.T; ++t)
        for (std::size_t c = 0; c < X.C; ++c)
          d_alpha[axis_index(a, e, t, c)] += d_scaled.at(e, t, c) * X.at(e, t, c);

    const auto& alpha = cache.alpha[ai];
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += d_alpha[i] * alpha[i];
    std::vector<double> d_logits(n);
    for (std::size_t i = 0; i < n; ++i) d_logits[i] = alpha[i] * (d_alpha[i] - dot);

    detail::outer_acc(p_.grad(score_w_name(a)), n, n, d_logits.data(), cache.mean[ai].data());
    double* db = p_.grad(score_b_name(a));
    for (std::size_t i = 0; i < n; ++i) db[i] += d_logits[i];
  }

  void lstm_step(const double* x_t, std::vector<double>& hs, std::vector<double>& cs,
                 std::vector<double>& zi, std::vector<double>& zf, std::vector<double>& zo,
                 std::vector<double>& zc, std::vector<double>& tmp) const {
    const std::size_t d = cfg_.proj_dim, h = cfg_.hidden_dim;
    detail::matvec(p_.ptr("lstm_wi"), h, d, x_t, zi.data());
    detail::matvec(p_.ptr("lstm_wf"), h, d, x_t, zf.data());
    detail::matvec(p_.ptr("lstm_wo"), h, d, x_t, zo.data());
    detail::matvec(p_.ptr("lstm_wc"), h, d, x_t, zc.data());
    detail::matvec(p_.ptr("lstm_ui"), h, h, hs.data(), tmp.data());
    for (std::size_t i = 0; i < h; ++i) zi[i] += tmp[i];
    detail::matvec(p_.ptr("lstm_uf"), h, h, hs.data(), tmp.data());
    for (std::size_t i = 0; i < h; ++i) zf[i] += tmp[i];
    detail::matvec(p_.ptr("lstm_uo"), h, h, hs.data(), tmp.data());
    for (std::size_t i = 0; i < h; ++i) zo[i] += tmp[i];
    detail::matvec(p_.ptr("lstm_uc"), h, h, hs.data(), tmp.data());
    for (std::size_t i = 0; i < h; ++i) zc[i] += tmp[i];
    const double* bi = p_.ptr("lstm_bi");
    const double* bf = p_.ptr("lstm_bf");
    const double* bo = p_.ptr("lstm_bo");
    const double* bc = p_.ptr("lstm_bc");
    for (std::size_t i = 0; i < h; ++i) {
      const double gi = detail::sigmoid(zi[i] + bi[i]);
      const double gf = detail::sigmoid(zf[i] + bf[i]);
      const double go = detail::sigmoid(zo[i] + bo[i]);
      const double gc = std::tanh(zc[i] + bc[i]);
      cs[i] = gf * cs[i] + gi * gc;
      hs[i] = go * std::tanh(cs[i]);
      zi[i] = gi;  // reuse buffers to hand activations back to callers that tape
      zf[i] = gf;
      zo[i] = go;
      zc[i] = gc;
    }
  }

  void run_forward(const Tensor3& X, Cache& c) const {
    check_input(X);
    const std::size_t E = X.E, T = X.T, d = cfg_.proj_dim, h = cfg_.hidden_dim;

    branch_forward(X, Axis::temporal, c);
    c.x_temp = c.branch_out;
    branch_forward(X, Axis::spatial, c);
    c.x_spat = c.branch_out;
    branch_forward(X, Axis::channel, c);
    c.x_chan = c.branch_out;

    c.x_sum = Tensor3(E, T, d);
    c.gate = Tensor3(E, T, d);
    c.x_fused = Tensor3(E, T, d);
    const double* W1 = p_.ptr("fuse_w1");
    const double* W2 = p_.ptr("fuse_w2");
    const double* W3 = p_.ptr("fuse_w3");
    const double* Wg = p_.ptr("gate_w");
    const double* bg = p_.ptr("gate_b");
    std::vector<double> tmp1(d), tmp2(d), tmp3(d), z(d);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t t = 0; t < T; ++t) {
        detail::matvec(W1, d, d, &c.x_temp.at(e, t, 0), tmp1.data());
        detail::matvec(W2, d, d, &c.x_spat.at(e, t, 0), tmp2.data());
        detail::matvec(W3, d, d, &c.x_chan.at(e, t, 0), tmp3.data());
        for (std::size_t i = 0; i < d; ++i) c.x_sum.at(e, t, i) = tmp1[i] + tmp2[i] + tmp3[i];
        detail::matvec(Wg, d, d, &c.x_sum.at(e, t, 0), z.data());
        for (std::size_t i = 0; i < d; ++i) {
          const double g = detail::sigmoid(z[i] + bg[i]);
          c.gate.at(e, t, i) = g;
          c.x_fused.at(e, t, i) = g * c.x_sum.at(e, t, i);
        }
      }

    c.pooled.assign(T, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t e = 0; e < E; ++e) s += c.x_fused.at(e, t, i);
        c.pooled[t][i] = s / static_cast<double>(E);
      }

    c.gi.assign(T, std::vector<double>(h));
    c.gf.assign(T, std::vector<double>(h));
    c.go.assign(T, std::vector<double>(h));
    c.gc.assign(T, std::vector<double>(h));
    c.cell.assign(T, std::vector<double>(h));
    c.tanh_c.assign(T, std::vector<double>(h));
    c.hidden.assign(T, std::vector<double>(h));
    std::vector<double> hs(h, 0.0), cs(h, 0.0), tmp(h);
    for (std::size_t t = 0; t < T; ++t) {
      lstm_step(c.pooled[t].data(), hs, cs, c.gi[t], c.gf[t], c.go[t], c.gc[t], tmp);
      c.cell[t] = cs;
      c.hidden[t] = hs;
      for (std::size_t i = 0; i < h; ++i) c.tanh_c[t][i] = std::tanh(cs[i]);
    }
    c.attr = hs;

    c.dec_z.assign(h, 0.0);
    detail::matvec(p_.ptr("dec_w"), h, h, c.attr.data(), c.dec_z.data());
    const double* db = p_.ptr("dec_b");
    c.isa.assign(h, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      c.dec_z[i] += db[i];
      c.isa[i] = std::max(0.0, c.dec_z[i]);
    }

    const std::size_t F = cfg_.fault_classes;
    std::vector<double> ld(2), lc(F);
    detail::matvec(p_.ptr("head_d"), 2, h, c.isa.data(), ld.data());
    detail::matvec(p_.ptr("head_c"), F, h, c.isa.data(), lc.data());
    detail::softmax(ld);
    detail::softmax(lc);
    c.out.p_d = {ld[0], ld[1]};
    c.out.p_c = lc;
  }

  void backward(const Tensor3& X, Cache& c, int y_d, int y_c) {
    const std::size_t E = X.E, T = X.T, d = cfg_.proj_dim, h = cfg_.hidden_dim;
    const std::size_t F = cfg_.fault_classes;
    const double kappa = cfg_.kappa;

    // softmax + cross-entropy heads
    std::vector<double> dld(2), dlc(F);
    for (std::size_t i = 0; i < 2; ++i)
      dld[i] = kappa * (c.out.p_d[i] - (static_cast<int>(i) == y_d ? 1.0 : 0.0));
    for (std::size_t i = 0; i < F; ++i)
      dlc[i] = (1.0 - kappa) * (c.out.p_c[i] - (static_cast<int>(i) == y_c ? 1.0 : 0.0));

    std::vector<double> d_isa(h, 0.0);
    detail::outer_acc(p_.grad("head_d"), 2, h, dld.data(), c.isa.data());
    detail::outer_acc(p_.grad("head_c"), F, h, dlc.data(), c.isa.data());
    detail::matvec_t_acc(p_.ptr("head_d"), 2, h, dld.data(), d_isa.data());
    detail::matvec_t_acc(p_.ptr("head_c"), F, h, dlc.data(), d_isa.data());

    std::vector<double> d_dec_z(h);
    for (std::size_t i = 0; i < h; ++i) d_dec_z[i] = c.dec_z[i] > 0.0 ? d_isa[i] : 0.0;
    detail::outer_acc(p_.grad("dec_w"), h, h, d_dec_z.data(), c.attr.data());
    double* d_dec_b = p_.grad("dec_b");
    std::vector<double> d_h(h, 0.0), d_cell(h, 0.0);
    for (std::size_t i = 0; i < h; ++i) d_dec_b[i] += d_dec_z[i];
    detail::matvec_t_acc(p_.ptr("dec_w"), h, h, d_dec_z.data(), d_h.data());

    // LSTM backprop through time
    std::vector<std::vector<double>> d_pooled(T, std::vector<double>(d, 0.0));
    std::vector<double> dzi(h), dzf(h), dzo(h), dzc(h), d_h_prev(h), d_c_prev(h);
    for (std::size_t ti = T; ti-- > 0;) {
      const std::vector<double>& gi = c.gi[ti];
      const std::vector<double>& gf = c.gf[ti];
      const std::vector<double>& go = c.go[ti];
      const std::vector<double>& gc = c.gc[ti];
      const std::vector<double>& tc = c.tanh_c[ti];
      const std::vector<double>* c_prev = ti > 0 ? &c.cell[ti - 1] : nullptr;
      const std::vector<double>* h_prev = ti > 0 ? &c.hidden[ti - 1] : nullptr;
      for (std::size_t i = 0; i < h; ++i) {
        const double dh = d_h[i];
        const double d_o = dh * tc[i];
        d_cell[i] += dh * go[i] * (1.0 - tc[i] * tc[i]);
        const double d_i = d_cell[i] * gc[i];
        const double d_gc = d_cell[i] * gi[i];
        const double cp = c_prev ? (*c_prev)[i] : 0.0;
        const double d_f = d_cell[i] * cp;
        dzi[i] = d_i * gi[i] * (1.0 - gi[i]);
        dzf[i] = d_f * gf[i] * (1.0 - gf[i]);
        dzo[i] = d_o * go[i] * (1.0 - go[i]);
        dzc[i] = d_gc * (1.0 - gc[i] * gc[i]);
      }
      const double* x_t = c.pooled[ti].data();
      detail::outer_acc(p_.grad("lstm_wi"), h, d, dzi.data(), x_t);
      detail::outer_acc(p_.grad("lstm_wf"), h, d, dzf.data(), x_t);
      detail::outer_acc(p_.grad("lstm_wo"), h, d, dzo.data(), x_t);
      detail::outer_acc(p_.grad("lstm_wc"), h, d, dzc.data(), x_t);
      if (h_prev) {
        detail::outer_acc(p_.grad("lstm_ui"), h, h, dzi.data(), h_prev->data());
        detail::outer_acc(p_.grad("lstm_uf"), h, h, dzf.data(), h_prev->data());
        detail::outer_acc(p_.grad("lstm_uo"), h, h, dzo.data(), h_prev->data());
        detail::outer_acc(p_.grad("lstm_uc"), h, h, dzc.data(), h_prev->data());
      }
      double* dbi = p_.grad("lstm_bi");
      double* dbf = p_.grad("lstm_bf");
      double* dbo = p_.grad("lstm_bo");
      double* dbc = p_.grad("lstm_bc");
      for (std::size_t i = 0; i < h; ++i) {
        dbi[i] += dzi[i];
        dbf[i] += dzf[i];
        dbo[i] += dzo[i];
        dbc[i] += dzc[i];
      }
      detail::matvec_t_acc(p_.ptr("lstm_wi"), h, d, dzi.data(), d_pooled[ti].data());
      detail::matvec_t_acc(p_.ptr("lstm_wf"), h, d, dzf.data(), d_pooled[ti].data());
      detail::matvec_t_acc(p_.ptr("lstm_wo"), h, d, dzo.data(), d_pooled[ti].data());
      detail::matvec_t_acc(p_.ptr("lstm_wc"), h, d, dzc.data(), d_pooled[ti].data());
      std::fill(d_h_prev.begin(), d_h_prev.end(), 0.0);
      if (ti > 0) {
        detail::matvec_t_acc(p_.ptr("lstm_ui"), h, h, dzi.data(), d_h_prev.data());
        detail::matvec_t_acc(p_.ptr("lstm_uf"), h, h, dzf.data(), d_h_prev.data());
        detail::matvec_t_acc(p_.ptr("lstm_uo"), h, h, dzo.data(), d_h_prev.data());
        detail::matvec_t_acc(p_.ptr("lstm_uc"), h, h, dzc.data(), d_h_prev.data());
      }
      for (std::size_t i = 0; i < h; ++i) {
        d_c_prev[i] = d_cell[i] * gf[i];
      }
      d_h = d_h_prev;
      d_cell = d_c_prev;
    }

    // entity pooling
    Tensor3 d_fused(E, T, d);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i)
          d_fused.at(e, t, i) = d_pooled[t][i] / static_cast<double>(E);

    // gated fusion
    Tensor3 d_sum(E, T, d), d_temp(E, T, d), d_spat(E, T, d), d_chan(E, T, d);
    const double* Wg = p_.ptr("gate_w");
    double* dWg = p_.grad("gate_w");
    double* dbg = p_.grad("gate_b");
    std::vector<double> dz(d);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
          const double g = c.gate.at(e, t, i);
          const double dgate = d_fused.at(e, t, i) * c.x_sum.at(e, t, i);
          dz[i] = dgate * g * (1.0 - g);
          d_sum.at(e, t, i) = d_fused.at(e, t, i) * g;
          dbg[i] += dz[i];
        }
        detail::outer_acc(dWg, d, d, dz.data(), &c.x_sum.at(e, t, 0));
        detail::matvec_t_acc(Wg, d, d, dz.data(), &d_sum.at(e, t, 0));
        detail::outer_acc(p_.grad("fuse_w1"), d, d, &d_sum.at(e, t, 0), &c.x_temp.at(e, t, 0));
        detail::outer_acc(p_.grad("fuse_w2"), d, d, &d_sum.at(e, t, 0), &c.x_spat.at(e, t, 0));
        detail::outer_acc(p_.grad("fuse_w3"), d, d, &d_sum.at(e, t, 0), &c.x_chan.at(e, t, 0));
        detail::matvec_t_acc(p_.ptr("fuse_w1"), d, d, &d_sum.at(e, t, 0), &d_temp.at(e, t, 0));
        detail::matvec_t_acc(p_.ptr("fuse_w2"), d, d, &d_sum.at(e, t, 0), &d_spat.at(e, t, 0));
        detail::matvec_t_acc(p_.ptr("fuse_w3"), d, d, &d_sum.at(e, t, 0), &d_chan.at(e, t, 0));
      }

    branch_backward(X, Axis::temporal, d_temp, c);
    branch_backward(X, Axis::spatial, d_spat, c);
    branch_backward(X, Axis::channel, d_chan, c);
  }

  ModelConfig cfg_;
  ParamStore p_;
};

inline double loss(const DetectionOutput& out, int y_d, int y_c, double kappa) {
  return Model::loss_parts(out, y_d, y_c, kappa).total;
}

struct Sample {
  Tensor3 x;
  int y_d = 0;  // 0 normal, 1 anomalous
  int y_c = 0;  // fault class index, 0 = normal
};

struct TrainLogRow {
  int epoch = 0;
  double total = 0.0, detection = 0.0, classification = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
};

/// Mini-batch Adam over the joint loss. Deterministic for a fixed config.
inline TrainResult train(const std::vector<Sample>& dataset, const ModelConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  cfg.validate();
  for (const Sample& s : dataset) {
    if (s.y_d != 0 && s.y_d != 1) throw std::invalid_argument("train: detection label must be 0/1");
    if (s.y_c < 0 || static_cast<std::size_t>(s.y_c) >= cfg.fault_classes)
      throw std::invalid_argument("train: class label out of range");
  }

  TrainResult res{Model(cfg), {}};
  Model& model = res.model;
  ParamStore& p = model.params();

  std::vector<double> m(p.size(), 0.0), v(p.size(), 0.0);
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  Rng rng(mix_seed(cfg.seed, "train-shuffle"));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum_l = 0.0, sum_ld = 0.0, sum_lc = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      p.zero_grads();
      for (std::size_t idx = start; idx < stop; ++idx) {
        const Sample& s = dataset[order[idx]];
        const LossParts lp = model.forward_backward(s.x, s.y_d, s.y_c);
        if (!std::isfinite(lp.total))
          throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        sum_l += lp.total;
        sum_ld += lp.detection;
        sum_lc += lp.classification;
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      std::vector<double>& g = p.grads();
      std::vector<double>& w = p.values();
      ++step;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] * inv;
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        w[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam_eps);
      }
    }
    const double n = static_cast<double>(dataset.size());
    res.log.push_back({epoch, sum_l / n, sum_ld / n, sum_lc / n});
    if (!p.finite()) throw Error("training diverged: non-finite parameters at epoch " +
                                 std::to_string(epoch));
  }
  return res;
}

/// Central-difference gradient verification; returns the max relative error
/// with denominator max(|analytic|, |numeric|, 1e-6). The floor sits two
/// decades above the difference-quotient roundoff (ulp(loss)/2eps ~ 1e-11),
/// so gradients too small for central differences to resolve cannot drown
/// the signal while anything resolvable must still match.
inline double grad_check(Model& model, const Sample& s, double eps = 1e-5) {
  ParamStore& p = model.params();
  p.zero_grads();
  model.forward_backward(s.x, s.y_d, s.y_c);
  const std::vector<double> analytic = p.grads();
  const double kappa = model.config().kappa;

  double worst = 0.0;
  std::vector<double>& w = p.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + eps;
    const double lp = loss(model.forward(s.x), s.y_d, s.y_c, kappa);
    w[i] = orig - eps;
    const double lm = loss(model.forward(s.x), s.y_d, s.y_c, kappa);
    w[i] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization: flat binary parameter file plus JSON manifest
// ---------------------------------------------------------------------------

inline void save_model(const Model& model, const std::string& bin_path,
                       const std::string& manifest_path) {
  const ParamStore& p = model.params();
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot open " + bin_path + " for writing");
  bin.write(reinterpret_cast<const char*>(p.values().data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!bin) throw Error("short write to " + bin_path);
  bin.close();

  const ModelConfig& cfg = model.config();
  nlohmann::json j;
  j["version"] = 1;
  j["param_count"] = p.size();
  j["params_fnv64"] = fnv1a64(p.values().data(), p.size() * sizeof(double));
  j["config"] = {{"entities", cfg.entities},
                 {"timesteps", cfg.timesteps},
                 {"channels", cfg.channels},
                 {"proj_dim", cfg.proj_dim},
                 {"hidden_dim", cfg.hidden_dim},
                 {"fault_classes", cfg.fault_classes},
                 {"kappa", cfg.kappa},
                 {"learning_rate", cfg.learning_rate},
                 {"epochs", cfg.epochs},
                 {"batch_size", cfg.batch_size},
                 {"seed", cfg.seed}};
  j["entries"] = nlohmann::json::array();
  for (const ParamStore::Entry& e : p.entries())
    j["entries"].push_back(
        {{"name", e.name}, {"offset", e.offset}, {"rows", e.rows}, {"cols", e.cols}});
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw Error("cannot open " + manifest_path + " for writing");
  mf << j.dump(2) << "\n";
}

inline Model load_model(const std::string& bin_path, const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw Error("cannot open " + manifest_path);
  nlohmann::json j = nlohmann::json::parse(mf, nullptr, false);
  if (j.is_discarded()) throw SchemaError("model manifest is not valid JSON");
  try {
    if (j.at("version").get<int>() != 1) throw SchemaError("unsupported model manifest version");
    const auto& jc = j.at("config");
    ModelConfig cfg;
    cfg.entities = jc.at("entities").get<std::size_t>();
    cfg.timesteps = jc.at("timesteps").get<std::size_t>();
    cfg.channels = jc.at("channels").get<std::size_t>();
    cfg.proj_dim = jc.at("proj_dim").get<std::size_t>();
    cfg.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
    cfg.fault_classes = jc.at("fault_classes").get<std::size_t>();
    cfg.kappa = jc.at("kappa").get<double>();
    cfg.learning_rate = jc.at("learning_rate").get<double>();
    cfg.epochs = jc.at("epochs").get<int>();
    cfg.batch_size = jc.at("batch_size").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();

    Model model(cfg);
    ParamStore& p = model.params();
    if (j.at("param_count").get<std::size_t>() != p.size())
      throw SchemaError("model manifest parameter count does not match config shapes");
    for (const auto& e : j.at("entries")) {
      const ParamStore::Entry& have = p.info(e.at("name").get<std::string>());
      if (have.offset != e.at("offset").get<std::size_t>() ||
          have.rows != e.at("rows").get<std::size_t>() ||
          have.cols != e.at("cols").get<std::size_t>())
        throw SchemaError("model manifest entry mismatch for " + have.name);
    }

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw Error("cannot open " + bin_path);
    bin.read(reinterpret_cast<char*>(p.values().data()),
             static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (static_cast<std::size_t>(bin.gcount()) != p.size() * sizeof(double))
      throw SchemaError("model parameter file is shorter than the manifest promises");
    const std::uint64_t h = fnv1a64(p.values().data(), p.size() * sizeof(double));
    if (h != j.at("params_fnv64").get<std::uint64_t>())
      throw SchemaError("model parameter file hash mismatch");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model manifest malformed: ") + e.what());
  }
}

}  // namespace msadm
