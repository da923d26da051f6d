// Reverse-mode autodiff over whole-tensor ops. A Tape is built fresh per
// update step; nodes hold forward values, backward() walks the tape in
// reverse and accumulates grads. Every op validates shapes up front and
// scans its output for non-finite values so a blow-up fails loudly at the
// node that produced it.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "oryx/linalg.hpp"
#include "oryx/tensor.hpp"

namespace oryx {

class Tape {
 public:
  struct Node {
    Tensor value;
    std::string name;
    bool needs_grad = false;
    // Pulls grad(self) and accumulates into parents' grad buffers.
    std::function<void(Tape&, int)> backprop;
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  const Tensor& value(int id) const { return node(id).value; }
  const std::string& name(int id) const { return node(id).name; }
  bool needs_grad(int id) const { return node(id).needs_grad; }

  // --- graph construction ------------------------------------------------

  int leaf(Tensor v, const std::string& name, bool needs_grad) {
    return push(std::move(v), name, needs_grad, {});
  }
  int constant(Tensor v, const std::string& name = "const") {
    return leaf(std::move(v), name, false);
  }
  int param(Tensor v, const std::string& name) { return leaf(std::move(v), name, true); }

  // Generic entry point so custom fused ops (e.g. retention) can live in
  // their own headers.
  int custom(Tensor v, const std::string& name, const std::vector<int>& parents,
             std::function<void(Tape&, int)> backprop) {
    bool ng = false;
    for (int p : parents) ng = ng || node(p).needs_grad;
    return push(std::move(v), name, ng, ng ? std::move(backprop) : nullptr);
  }

  int matmul(int a, int b) {
    Tensor y = oryx::matmul(value(a), value(b));
    return custom(std::move(y), "matmul", {a, b}, [a, b](Tape& t, int self) {
      CMapMat g(t.grad_data(self), t.value(self).dim(0), t.value(self).dim(1));
      if (t.needs_grad(a)) {
        MapMat da(t.grad_buffer(a).data(), t.value(a).dim(0), t.value(a).dim(1));
        da.noalias() += g * as_mat(t.value(b)).transpose();
      }
      if (t.needs_grad(b)) {
        MapMat db(t.grad_buffer(b).data(), t.value(b).dim(0), t.value(b).dim(1));
        db.noalias() += as_mat(t.value(a)).transpose() * g;
      }
    });
  }

  int add(int a, int b) {
    Tensor y = oryx::add(value(a), value(b));
    return custom(std::move(y), "add", {a, b}, [a, b](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.needs_grad(a)) accum_into(t.grad_buffer(a), g, 1.0);
      if (t.needs_grad(b)) accum_into(t.grad_buffer(b), g, 1.0);
    });
  }

  int sub(int a, int b) {
    ORYX_REQUIRE(value(a).same_shape(value(b)));
    Tensor y = value(a);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] -= value(b)[i];
    return custom(std::move(y), "sub", {a, b}, [a, b](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.needs_grad(a)) accum_into(t.grad_buffer(a), g, 1.0);
      if (t.needs_grad(b)) accum_into(t.grad_buffer(b), g, -1.0);
    });
  }

  int mul(int a, int b) {
    Tensor y = elementwise_mul(value(a), value(b));
    return custom(std::move(y), "mul", {a, b}, [a, b](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor& da = t.grad_buffer(a);
        const Tensor& vb = t.value(b);
        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * vb[i];
      }
      if (t.needs_grad(b)) {
        Tensor& db = t.grad_buffer(b);
        const Tensor& va = t.value(a);
        for (int64_t i = 0; i < g.numel(); ++i) db[i] += g[i] * va[i];
      }
    });
  }

  int scale(int a, double c) {
    return custom(oryx::scale(value(a), c), "scale", {a}, [a, c](Tape& t, int self) {
      if (!t.needs_grad(a)) return;
      accum_into(t.grad_buffer(a), t.grad(self), c);
    });
  }

  int add_row_bias(int x, int bias) {
    Tensor y = oryx::add_row_bias(value(x), value(bias));
    return custom(std::move(y), "add_row_bias", {x, bias}, [x, bias](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      const int64_t m = g.dim(0), n = g.dim(1);
      if (t.needs_grad(x)) accum_into(t.grad_buffer(x), g, 1.0);
      if (t.needs_grad(bias)) {
        Tensor& db = t.grad_buffer(bias);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      }
    });
  }

  int relu(int x) {
    return custom(oryx::relu(value(x)), "relu", {x}, [x](Tape& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.grad(self);
      const Tensor& vx = t.value(x);
      Tensor& dx = t.grad_buffer(x);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (vx[i] > 0.0) dx[i] += g[i];
    });
  }

  // y = gain * x / sqrt(mean_row(x^2) + eps)
  int rms_norm(int x, int gain) {
    Tensor y = rms_norm_rows(value(x), value(gain));
    return custom(std::move(y), "rms_norm", {x, gain}, [x, gain](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      const Tensor& vx = t.value(x);
      const Tensor& vg = t.value(gain);
      const int64_t m = vx.dim(0), n = vx.dim(1);
      for (int64_t i = 0; i < m; ++i) {
        const double* xr = vx.data() + i * n;
        const double* gr = g.data() + i * n;
        double ms = 0.0;
        for (int64_t j = 0; j < n; ++j) ms += xr[j] * xr[j];
        const double r2 = ms / static_cast<double>(n) + kNormEps;
        const double inv = 1.0 / std::sqrt(r2);
        if (t.needs_grad(x)) {
          // dx_j = gain_j g_j / r - x_j * sum_i(g_i gain_i x_i) / (n r^3)
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j) dot += gr[j] * vg[j] * xr[j];
          const double c = dot * inv * inv * inv / static_cast<double>(n);
          Tensor& dx = t.grad_buffer(x);
          for (int64_t j = 0; j < n; ++j) dx[i * n + j] += vg[j] * gr[j] * inv - xr[j] * c;
        }
        if (t.needs_grad(gain)) {
          Tensor& dg = t.grad_buffer(gain);
          for (int64_t j = 0; j < n; ++j) dg[j] += gr[j] * xr[j] * inv;
        }
      }
    });
  }

  // Group norm over per-head row segments; standard layer-norm backward per
  // segment: dx = (dxh - mean(dxh) - xhat * mean(dxh*xhat)) / r.
  int head_norm(int x, int gain, int64_t heads) {
    Tensor y = head_norm_rows(value(x), value(gain), heads);
    return custom(std::move(y), "head_norm", {x, gain}, [x, gain, heads](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      const Tensor& vx = t.value(x);
      const Tensor& vg = t.value(gain);
      const int64_t m = vx.dim(0), n = vx.dim(1), d = n / heads;
      std::vector<double> xhat(static_cast<size_t>(d));
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t off = i * n + h * d;
          const double* xs = vx.data() + off;
          double mu = 0.0;
          for (int64_t j = 0; j < d; ++j) mu += xs[j];
          mu /= static_cast<double>(d);
          double var = 0.0;
          for (int64_t j = 0; j < d; ++j) var += (xs[j] - mu) * (xs[j] - mu);
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + kNormEps);
          for (int64_t j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (xs[j] - mu) * inv;
          if (t.needs_grad(gain)) {
            Tensor& dg = t.grad_buffer(gain);
            for (int64_t j = 0; j < d; ++j)
              dg[h * d + j] += g[off + j] * xhat[static_cast<size_t>(j)];
          }
          if (t.needs_grad(x)) {
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              const double dxh = g[off + j] * vg[h * d + j];
              s1 += dxh;
              s2 += dxh * xhat[static_cast<size_t>(j)];
            }
            s1 /= static_cast<double>(d);
            s2 /= static_cast<double>(d);
            Tensor& dx = t.grad_buffer(x);
            for (int64_t j = 0; j < d; ++j) {
              const double dxh = g[off + j] * vg[h * d + j];
              dx[off + j] += (dxh - s1 - xhat[static_cast<size_t>(j)] * s2) * inv;
            }
          }
        }
      }
    });
  }

  // y_i = x[i, idx_i]. idx entries must be in range.
  int gather_cols(int x, std::vector<int64_t> idx) {
    const Tensor& vx = value(x);
    ORYX_REQUIRE(vx.rank() == 2 && static_cast<int64_t>(idx.size()) == vx.dim(0));
    const int64_t m = vx.dim(0), n = vx.dim(1);
    Tensor y({m});
    for (int64_t i = 0; i < m; ++i) {
      ORYX_REQUIRE_MSG(idx[static_cast<size_t>(i)] >= 0 && idx[static_cast<size_t>(i)] < n,
                       "gather index out of range at row " << i);
      y[i] = vx[i * n + idx[static_cast<size_t>(i)]];
    }
    auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return custom(std::move(y), "gather_cols", {x}, [x, ix](Tape& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.grad(self);
      Tensor& dx = t.grad_buffer(x);
      const int64_t n = t.value(x).dim(1);
      for (int64_t i = 0; i < g.numel(); ++i) dx[i * n + (*ix)[static_cast<size_t>(i)]] += g[i];
    });
  }

  // Weighted negative log-likelihood over rows of logits:
  //   loss = sum_i w_i * (logsumexp(logits_i) - logits_i[a_i])
  // Weights are constants (already normalised by the caller).
  int weighted_nll(int logits, std::vector<int64_t> actions, Tensor weights) {
    const Tensor& lg = value(logits);
    ORYX_REQUIRE(lg.rank() == 2);
    const int64_t m = lg.dim(0), n = lg.dim(1);
    ORYX_REQUIRE(static_cast<int64_t>(actions.size()) == m && weights.numel() == m);
    Tensor probs = softmax_rows(lg);
    double loss = 0.0;
    for (int64_t i = 0; i < m; ++i) {
      const int64_t a = actions[static_cast<size_t>(i)];
      ORYX_REQUIRE_MSG(a >= 0 && a < n, "action index out of range at row " << i);
      // -log softmax[a], recovered from the stabilised probs
      loss += weights[i] * -std::log(probs[i * n + a]);
    }
    auto acts = std::make_shared<std::vector<int64_t>>(std::move(actions));
    auto p = std::make_shared<Tensor>(std::move(probs));
    auto w = std::make_shared<Tensor>(std::move(weights));
    return custom(Tensor({1}, {loss}), "weighted_nll", {logits},
                  [logits, acts, p, w](Tape& t, int self) {
                    if (!t.needs_grad(logits)) return;
                    const double gl = t.grad(self)[0];
                    Tensor& dx = t.grad_buffer(logits);
                    const int64_t m = p->dim(0), n = p->dim(1);
                    for (int64_t i = 0; i < m; ++i) {
                      const double c = gl * (*w)[i];
                      for (int64_t j = 0; j < n; ++j) dx[i * n + j] += c * (*p)[i * n + j];
                      dx[i * n + (*acts)[static_cast<size_t>(i)]] -= c;
                    }
                  });
  }

  // Mean squared error over entries where mask != 0; divisor is the count of
  // unmasked entries. target and mask are constants.
  int masked_mse(int pred, Tensor target, Tensor mask) {
    const Tensor& vp = value(pred);
    ORYX_REQUIRE(vp.same_shape(target) && vp.same_shape(mask));
    double count = 0.0, loss = 0.0;
    for (int64_t i = 0; i < vp.numel(); ++i) {
      if (mask[i] == 0.0) continue;
      const double d = vp[i] - target[i];
      loss += d * d;
      count += 1.0;
    }
    ORYX_REQUIRE_MSG(count > 0.0, "masked_mse: empty mask");
    loss /= count;
    auto tg = std::make_shared<Tensor>(std::move(target));
    auto mk = std::make_shared<Tensor>(std::move(mask));
    return custom(Tensor({1}, {loss}), "masked_mse", {pred},
                  [pred, tg, mk, count](Tape& t, int self) {
                    if (!t.needs_grad(pred)) return;
                    const double gl = t.grad(self)[0];
                    const Tensor& vp = t.value(pred);
                    Tensor& dx = t.grad_buffer(pred);
                    for (int64_t i = 0; i < vp.numel(); ++i)
                      if ((*mk)[i] != 0.0) dx[i] += gl * 2.0 * (vp[i] - (*tg)[i]) / count;
                  });
  }

  int sum(int x) {
    double s = 0.0;
    for (int64_t i = 0; i < value(x).numel(); ++i) s += value(x)[i];
    return custom(Tensor({1}, {s}), "sum", {x}, [x](Tape& t, int self) {
      if (!t.needs_grad(x)) return;
      const double gl = t.grad(self)[0];
      Tensor& dx = t.grad_buffer(x);
      for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gl;
    });
  }

  int mean(int x) {
    const double n = static_cast<double>(value(x).numel());
    double s = 0.0;
    for (int64_t i = 0; i < value(x).numel(); ++i) s += value(x)[i];
    return custom(Tensor({1}, {s / n}), "mean", {x}, [x, n](Tape& t, int self) {
      if (!t.needs_grad(x)) return;
      const double gl = t.grad(self)[0] / n;
      Tensor& dx = t.grad_buffer(x);
      for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gl;
    });
  }

  // --- backward ----------------------------------------------------------

  void backward(int loss) {
    ORYX_REQUIRE_MSG(value(loss).numel() == 1, "backward expects a scalar loss, got shape "
                                                   << shape_str(value(loss).shape()));
    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), 0);
    grad_buffer(loss)[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
      Node& nd = nodes_[static_cast<size_t>(id)];
      if (!has_grad_[static_cast<size_t>(id)] || !nd.needs_grad || !nd.backprop) continue;
      if (!grads_[static_cast<size_t>(id)].all_finite())
        throw NumericError("non-finite gradient flowing into node " + nd.name);
      nd.backprop(*this, id);
    }
  }

  // Gradient of the last backward() pass. Zero tensor if the node was never
  // reached (disconnected from the loss).
  Tensor grad(int id) const {
    if (static_cast<size_t>(id) < has_grad_.size() && has_grad_[static_cast<size_t>(id)])
      return grads_[static_cast<size_t>(id)];
    return Tensor(node(id).value.shape());
  }

  Tensor& grad_buffer(int id) {
    if (!has_grad_[static_cast<size_t>(id)]) {
      grads_[static_cast<size_t>(id)] = Tensor(node(id).value.shape());
      has_grad_[static_cast<size_t>(id)] = 1;
    }
    return grads_[static_cast<size_t>(id)];
  }
  double* grad_data(int id) { return grad_buffer(id).data(); }

 private:
  const Node& node(int id) const {
    ORYX_REQUIRE_MSG(id >= 0 && id < size(), "bad node id " << id);
    return nodes_[static_cast<size_t>(id)];
  }

  int push(Tensor v, const std::string& name, bool needs_grad,
           std::function<void(Tape&, int)> backprop) {
    const int id = size();
    std::string full = name + "#" + std::to_string(id);
    if (!v.all_finite()) throw NumericError("non-finite value produced by node " + full);
    nodes_.push_back(Node{std::move(v), std::move(full), needs_grad, std::move(backprop)});
    return id;
  }

  static void accum_into(Tensor& dst, const Tensor& src, double c) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += c * src[i];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
};

}  // namespace oryx
