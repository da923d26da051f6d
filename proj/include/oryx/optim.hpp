// Named parameter collection, Adam, and a central-difference gradient
// oracle used to cross-check the tape.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oryx/tape.hpp"
#include "oryx/tensor.hpp"

namespace oryx {

// Parameters in stable insertion order; order defines the layout of
// optimizer state and checkpoints.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor value) {
    ORYX_REQUIRE_MSG(find(name) < 0, "duplicate parameter " << name);
    names_.push_back(name);
    values_.push_back(std::move(value));
    return values_.back();
  }

  int64_t count() const { return static_cast<int64_t>(values_.size()); }
  const std::string& name(int64_t i) const { return names_[static_cast<size_t>(i)]; }
  Tensor& value(int64_t i) { return values_[static_cast<size_t>(i)]; }
  const Tensor& value(int64_t i) const { return values_[static_cast<size_t>(i)]; }

  int64_t find(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int64_t>(i);
    return -1;
  }
  Tensor& at(const std::string& name) {
    const int64_t i = find(name);
    ORYX_REQUIRE_MSG(i >= 0, "unknown parameter " << name);
    return values_[static_cast<size_t>(i)];
  }
  const Tensor& at(const std::string& name) const {
    const int64_t i = find(name);
    ORYX_REQUIRE_MSG(i >= 0, "unknown parameter " << name);
    return values_[static_cast<size_t>(i)];
  }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const Tensor& t : values_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// Registers every parameter on a tape; node ids are parallel to ParamSet
// order.
inline std::vector<int> register_params(Tape& tape, const ParamSet& params) {
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(params.count()));
  for (int64_t i = 0; i < params.count(); ++i)
    ids.push_back(tape.param(params.value(i), params.name(i)));
  return ids;
}

inline std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<int>& ids) {
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(tape.grad(id));
  return out;
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(const ParamSet& params) {
    AdamState s;
    for (int64_t i = 0; i < params.count(); ++i) {
      s.m.emplace_back(params.value(i).shape());
      s.v.emplace_back(params.value(i).shape());
    }
    return s;
  }
};

inline void adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  ORYX_REQUIRE(static_cast<int64_t>(grads.size()) == params.count() &&
               state.m.size() == grads.size());
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.value(static_cast<int64_t>(i));
    const Tensor& g = grads[i];
    ORYX_REQUIRE_MSG(p.same_shape(g), "gradient shape mismatch for "
                                          << params.name(static_cast<int64_t>(i)));
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Central finite differences of a scalar function of one tensor.
template <typename F>
Tensor finite_difference_grad(F&& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Mixed absolute/relative elementwise error: |a-b| / max(1, |a|, |b|).
inline double max_mixed_rel_diff(const Tensor& a, const Tensor& b) {
  ORYX_REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace oryx
