// Multi-head retention with per-timestep token blocks. All tokens emitted at
// one timestep share the decay exponent: weight on a source token m seen from
// token i is kappa^(t(i)-t(m)), 1 within the same timestep. Three equivalent
// computation modes:
//   - parallel: masked decay matrix D, Y = ((Q K^T) .* D) V
//   - recurrent: per-timestep state S <- kappa*S + K_t^T V_t, reads q*S
//   - chunkwise: parallel within a chunk plus decayed carry-in state
// The intra_causal flag additionally hides later tokens inside the same
// timestep block (decoder); without it a block has full intra-block
// visibility (encoder). Query scaling (1/sqrt(d)) is the caller's job.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "oryx/linalg.hpp"
#include "oryx/tape.hpp"
#include "oryx/tensor.hpp"

namespace oryx {

struct RetentionConfig {
  int64_t heads = 1;
  int64_t head_dim = 64;
  double kappa_scale = 0.5;  // sigma in kappa_h = 1 - sigma * 2^(-5-h)

  double kappa(int64_t h) const {
    ORYX_REQUIRE(h >= 0 && h < heads);
    return 1.0 - kappa_scale * std::pow(2.0, -5.0 - static_cast<double>(h));
  }
  int64_t width() const { return heads * head_dim; }
};

// --- single-head reference kernels (test oracles + execution path) --------

// Decay matrix over one token stream. timestep[i] is the emission step of
// token i (non-decreasing), segment[i] groups tokens into independent
// episodes; negative segment marks padding. Entries crossing segments or
// touching padding are zero.
inline Tensor decay_matrix(double kappa, const std::vector<int64_t>& timestep,
                           const std::vector<int64_t>& segment, bool intra_causal) {
  ORYX_REQUIRE(timestep.size() == segment.size());
  const int64_t m = static_cast<int64_t>(timestep.size());
  Tensor d({m, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      if (segment[static_cast<size_t>(i)] < 0 || segment[static_cast<size_t>(j)] < 0) continue;
      if (segment[static_cast<size_t>(i)] != segment[static_cast<size_t>(j)]) continue;
      const int64_t dt = timestep[static_cast<size_t>(i)] - timestep[static_cast<size_t>(j)];
      if (dt < 0) continue;
      if (dt == 0 && intra_causal && j > i) continue;
      d[i * m + j] = std::pow(kappa, static_cast<double>(dt));
    }
  }
  return d;
}

// Y = ((Q K^T) .* D) V for one head.
inline Tensor retention_parallel(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const Tensor& d) {
  ORYX_REQUIRE(q.rank() == 2 && q.same_shape(k) && q.same_shape(v));
  ORYX_REQUIRE(d.rank() == 2 && d.dim(0) == q.dim(0) && d.dim(1) == q.dim(0));
  const int64_t m = q.dim(0);
  Tensor a({m, m});
  as_mat(a).noalias() = as_mat(q) * as_mat(k).transpose();
  for (int64_t i = 0; i < m * m; ++i) a[i] *= d[i];
  Tensor y(q.shape());
  as_mat(y).noalias() = as_mat(a) * as_mat(v);
  return y;
}

// One recurrent step over a block of rows (all tokens of one timestep).
// State decays first, every token reads the decayed state, then the whole
// block is absorbed. With intra_causal, token i additionally sees block
// tokens m <= i; otherwise the full block.
inline Tensor retention_recurrent_block(const Tensor& q, const Tensor& k, const Tensor& v,
                                        double kappa, bool intra_causal, Tensor& state) {
  ORYX_REQUIRE(q.rank() == 2 && q.same_shape(k) && q.same_shape(v));
  const int64_t n = q.dim(0), d = q.dim(1);
  ORYX_REQUIRE(state.rank() == 2 && state.dim(0) == d && state.dim(1) == d);
  as_mat(state) *= kappa;
  Tensor y(q.shape());
  as_mat(y).noalias() = as_mat(q) * as_mat(state);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t last = intra_causal ? i : n - 1;
    for (int64_t mrow = 0; mrow <= last; ++mrow) {
      double dot = 0.0;
      for (int64_t c = 0; c < d; ++c) dot += q[i * d + c] * k[mrow * d + c];
      for (int64_t c = 0; c < d; ++c) y[i * d + c] += dot * v[mrow * d + c];
    }
  }
  as_mat(state).noalias() += as_mat(k).transpose() * as_mat(v);
  return y;
}

// Full-stream recurrent driver: tokens grouped in consecutive blocks of
// `block` rows per timestep. Segment changes reset the state; padding rows
// (segment < 0) produce zeros and are not absorbed.
inline Tensor retention_recurrent(const Tensor& q, const Tensor& k, const Tensor& v,
                                  double kappa, int64_t block,
                                  const std::vector<int64_t>& segment, bool intra_causal) {
  const int64_t m = q.dim(0), d = q.dim(1);
  ORYX_REQUIRE(block >= 1 && m % block == 0 &&
               static_cast<int64_t>(segment.size()) == m);
  Tensor y(q.shape());
  Tensor state({d, d});
  int64_t prev_seg = INT64_MIN;
  for (int64_t t = 0; t < m / block; ++t) {
    const int64_t seg = segment[static_cast<size_t>(t * block)];
    for (int64_t r = 1; r < block; ++r)
      ORYX_REQUIRE_MSG(segment[static_cast<size_t>(t * block + r)] == seg,
                       "segment change inside a timestep block");
    if (seg < 0) continue;  // padding: zero output, state untouched
    if (seg != prev_seg) {
      state = Tensor({d, d});
      prev_seg = seg;
    }
    Tensor qb({block, d}), kb({block, d}), vb({block, d});
    std::copy(q.data() + t * block * d, q.data() + (t + 1) * block * d, qb.data());
    std::copy(k.data() + t * block * d, k.data() + (t + 1) * block * d, kb.data());
    std::copy(v.data() + t * block * d, v.data() + (t + 1) * block * d, vb.data());
    Tensor yb = retention_recurrent_block(qb, kb, vb, kappa, intra_causal, state);
    std::copy(yb.data(), yb.data() + block * d, y.data() + t * block * d);
  }
  return y;
}

// Chunkwise form over a single segment: within-chunk parallel part plus a
// carried state read through xi_i = kappa^(delta_i + 1) and state update
// S_out = kappa^C S_in + K^T diag(eta) V with eta_m = kappa^(C-1-delta_m),
// where delta is the 0-based timestep inside the chunk and C the number of
// timesteps the chunk covers.
inline Tensor retention_chunkwise(const Tensor& q, const Tensor& k, const Tensor& v,
                                  double kappa, int64_t block, int64_t chunk_steps,
                                  bool intra_causal) {
  const int64_t m = q.dim(0), d = q.dim(1);
  ORYX_REQUIRE(block >= 1 && m % block == 0 && chunk_steps >= 1);
  const int64_t steps = m / block;
  Tensor y(q.shape());
  Tensor state({d, d});
  for (int64_t t0 = 0; t0 < steps; t0 += chunk_steps) {
    const int64_t c = std::min(chunk_steps, steps - t0);  // timesteps in chunk
    const int64_t rows = c * block, off = t0 * block;
    Tensor qb({rows, d}), kb({rows, d}), vb({rows, d});
    std::copy(q.data() + off * d, q.data() + (off + rows) * d, qb.data());
    std::copy(k.data() + off * d, k.data() + (off + rows) * d, kb.data());
    std::copy(v.data() + off * d, v.data() + (off + rows) * d, vb.data());
    std::vector<int64_t> local_t(static_cast<size_t>(rows)), seg(static_cast<size_t>(rows), 0);
    for (int64_t i = 0; i < rows; ++i) local_t[static_cast<size_t>(i)] = i / block;
    Tensor yb = retention_parallel(qb, kb, vb, decay_matrix(kappa, local_t, seg, intra_causal));
    // carry-in: token at local step delta reads kappa^(delta+1) * S_in
    for (int64_t i = 0; i < rows; ++i) {
      const double xi = std::pow(kappa, static_cast<double>(i / block + 1));
      for (int64_t col = 0; col < d; ++col) {
        double dot = 0.0;
        for (int64_t r = 0; r < d; ++r) dot += qb[i * d + r] * state[r * d + col];
        yb[i * d + col] += xi * dot;
      }
    }
    std::copy(yb.data(), yb.data() + rows * d, y.data() + off * d);
    // S_out = kappa^c * S_in + K^T diag(eta) V
    as_mat(state) *= std::pow(kappa, static_cast<double>(c));
    Tensor kw = kb;
    for (int64_t i = 0; i < rows; ++i) {
      const double eta = std::pow(kappa, static_cast<double>(c - 1 - i / block));
      for (int64_t col = 0; col < d; ++col) kw[i * d + col] *= eta;
    }
    as_mat(state).noalias() += as_mat(kw).transpose() * as_mat(vb);
  }
  return y;
}

// --- multi-head execution state -------------------------------------------

struct RetentionState {
  std::vector<Tensor> s;  // one (head_dim, head_dim) matrix per head

  static RetentionState zeros(const RetentionConfig& cfg) {
    RetentionState st;
    for (int64_t h = 0; h < cfg.heads; ++h) st.s.emplace_back(Shape{cfg.head_dim, cfg.head_dim});
    return st;
  }
  void reset() {
    for (Tensor& t : s) t = Tensor(t.shape());
  }
};

// One timestep of multi-head recurrent retention. q/k/v are (n, heads*head_dim)
// blocks for the n tokens emitted this step; state updates in place.
inline Tensor retention_step(const Tensor& q, const Tensor& k, const Tensor& v,
                             const RetentionConfig& cfg, bool intra_causal,
                             RetentionState& st) {
  ORYX_REQUIRE(q.rank() == 2 && q.dim(1) == cfg.width() && q.same_shape(k) && q.same_shape(v));
  ORYX_REQUIRE(static_cast<int64_t>(st.s.size()) == cfg.heads);
  const int64_t n = q.dim(0), d = cfg.head_dim;
  Tensor y(q.shape());
  Tensor qh({n, d}), kh({n, d}), vh({n, d});
  for (int64_t h = 0; h < cfg.heads; ++h) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < d; ++c) {
        qh[i * d + c] = q[i * cfg.width() + h * d + c];
        kh[i * d + c] = k[i * cfg.width() + h * d + c];
        vh[i * d + c] = v[i * cfg.width() + h * d + c];
      }
    Tensor yh = retention_recurrent_block(qh, kh, vh, cfg.kappa(h), intra_causal,
                                          st.s[static_cast<size_t>(h)]);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < d; ++c) y[i * cfg.width() + h * d + c] = yh[i * d + c];
  }
  return y;
}

// --- fused tape op ---------------------------------------------------------

// Token layout of a batch of training windows: `windows` independent windows,
// each `steps` timesteps of `block` tokens, concatenated row-wise. segment is
// per token across the whole batch (-1 = padding).
struct RetentionLayout {
  int64_t windows = 1;
  int64_t steps = 1;
  int64_t block = 1;
  std::vector<int64_t> segment;
  bool intra_causal = false;

  int64_t window_rows() const { return steps * block; }
  int64_t rows() const { return windows * window_rows(); }
};

// Batched multi-head retention on the tape. Values are (rows, heads*head_dim).
// Backward uses dA = (dY V^T) .* D, dQ = dA K, dK = dA^T Q, dV = A^T dY per
// window and head.
inline int retention(Tape& tape, int q, int k, int v, const RetentionConfig& cfg,
                     const RetentionLayout& layout) {
  const Tensor& vq = tape.value(q);
  ORYX_REQUIRE_MSG(vq.rank() == 2 && vq.dim(0) == layout.rows() && vq.dim(1) == cfg.width(),
                   "retention input shape " << shape_str(vq.shape()));
  ORYX_REQUIRE(vq.same_shape(tape.value(k)) && vq.same_shape(tape.value(v)));
  ORYX_REQUIRE(static_cast<int64_t>(layout.segment.size()) == layout.rows());

  const int64_t wr = layout.window_rows();
  // decay matrices, one per (window, head); head-invariant masks differ only
  // through kappa so build straight from the layout
  auto decays = std::make_shared<std::vector<Tensor>>();
  decays->reserve(static_cast<size_t>(layout.windows * cfg.heads));
  for (int64_t w = 0; w < layout.windows; ++w) {
    std::vector<int64_t> tstep(static_cast<size_t>(wr)), seg(static_cast<size_t>(wr));
    for (int64_t i = 0; i < wr; ++i) {
      tstep[static_cast<size_t>(i)] = i / layout.block;
      seg[static_cast<size_t>(i)] = layout.segment[static_cast<size_t>(w * wr + i)];
    }
    for (int64_t h = 0; h < cfg.heads; ++h)
      decays->push_back(decay_matrix(cfg.kappa(h), tstep, seg, layout.intra_causal));
  }

  const int64_t d = cfg.head_dim, width = cfg.width();
  Tensor y(vq.shape());
  {
    CMapMat mq(vq.data(), layout.rows(), width);
    CMapMat mk(tape.value(k).data(), layout.rows(), width);
    CMapMat mv(tape.value(v).data(), layout.rows(), width);
    MapMat my(y.data(), layout.rows(), width);
    for (int64_t w = 0; w < layout.windows; ++w) {
      for (int64_t h = 0; h < cfg.heads; ++h) {
        CMapMat md((*decays)[static_cast<size_t>(w * cfg.heads + h)].data(), wr, wr);
        EMat a = (mq.block(w * wr, h * d, wr, d) * mk.block(w * wr, h * d, wr, d).transpose())
                     .cwiseProduct(md);
        my.block(w * wr, h * d, wr, d).noalias() = a * mv.block(w * wr, h * d, wr, d);
      }
    }
  }

  auto lay = std::make_shared<RetentionLayout>(layout);
  const int64_t heads = cfg.heads;
  return tape.custom(std::move(y), "retention", {q, k, v},
                     [q, k, v, decays, lay, heads, d, width, wr](Tape& t, int self) {
                       CMapMat mq(t.value(q).data(), lay->rows(), width);
                       CMapMat mk(t.value(k).data(), lay->rows(), width);
                       CMapMat mv(t.value(v).data(), lay->rows(), width);
                       CMapMat g(t.grad_data(self), lay->rows(), width);
                       MapMat dq(t.grad_buffer(q).data(), lay->rows(), width);
                       MapMat dk(t.grad_buffer(k).data(), lay->rows(), width);
                       MapMat dv(t.grad_buffer(v).data(), lay->rows(), width);
                       for (int64_t w = 0; w < lay->windows; ++w) {
                         for (int64_t h = 0; h < heads; ++h) {
                           CMapMat md((*decays)[static_cast<size_t>(w * heads + h)].data(), wr, wr);
                           auto qb = mq.block(w * wr, h * d, wr, d);
                           auto kb = mk.block(w * wr, h * d, wr, d);
                           auto vb = mv.block(w * wr, h * d, wr, d);
                           auto gb = g.block(w * wr, h * d, wr, d);
                           EMat da = (gb * vb.transpose()).cwiseProduct(md);
                           EMat a = (qb * kb.transpose()).cwiseProduct(md);
                           dq.block(w * wr, h * d, wr, d).noalias() += da * kb;
                           dk.block(w * wr, h * d, wr, d).noalias() += da.transpose() * qb;
                           dv.block(w * wr, h * d, wr, d).noalias() += a.transpose() * gb;
                         }
                       }
                     });
}

}  // namespace oryx
