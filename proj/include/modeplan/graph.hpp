#pragma once

#include <cassert>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "modeplan/tensor.hpp"

namespace modeplan {

// Reverse-mode autodiff on flat 2-D float64 buffers.
//
// Define-by-run: every builder method evaluates its op eagerly and records a
// tape entry; backward() replays the tape in reverse. Node values and grads
// live in a chunked bump arena (stable addresses, reused across forwards via
// reset()). Parameters keep their storage outside the graph so repeated
// forwards never copy weights.

namespace detail {

class Arena {
 public:
  double* alloc(size_t n) {
    if (n == 0) return nullptr;
    while (chunk_ < chunks_.size() && used_ + n > sizes_[chunk_]) {
      ++chunk_;
      used_ = 0;
    }
    if (chunk_ >= chunks_.size()) {
      size_t cap = std::max(n, kChunkSize);
      chunks_.push_back(std::make_unique<double[]>(cap));
      sizes_.push_back(cap);
      used_ = 0;
    }
    double* p = chunks_[chunk_].get() + used_;
    used_ += n;
    return p;
  }

  double* alloc_zero(size_t n) {
    double* p = alloc(n);
    if (p) std::memset(p, 0, n * sizeof(double));
    return p;
  }

  void reset() {
    chunk_ = 0;
    used_ = 0;
  }

 private:
  static constexpr size_t kChunkSize = 1 << 17;  // doubles (1 MiB)
  std::vector<std::unique_ptr<double[]>> chunks_;
  std::vector<size_t> sizes_;
  size_t chunk_ = 0;
  size_t used_ = 0;
};

}  // namespace detail

enum class Op {
  kInput,
  kParam,
  kAdd,
  kScale,
  kView,
  kSliceCols,
  kConcatRows,
  kGatherRows,
  kGatherAddRows,
  kLinear,
  kLayerNorm,
  kGelu,
  kAttention,
  kRelAttn,
  kCeRows,
  kGaussNll,
  kIntegrate,
  kSumAll,
};

class Graph {
  struct Meta {
    std::vector<int> ia, ib;       // index arrays (gather, key_idx, qstart)
    std::vector<double> fa;        // float payload (targets, init states)
    int heads = 0;
    int horizon = 0;
    double scalar = 0.0;
    double* stash0 = nullptr;      // op-specific saved activations
    double* stash1 = nullptr;
    double* stash2 = nullptr;
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1, d = -1, e = -1;
    int rows = 0, cols = 0;
    double* val = nullptr;
    double* grad = nullptr;
    int meta = -1;
  };

 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  void reset() {
    nodes_.clear();
    metas_.clear();
    arena_.reset();
  }

  bool grad_enabled() const { return grad_enabled_; }
  int rows(int id) const { return nodes_[id].rows; }
  int cols(int id) const { return nodes_[id].cols; }
  size_t numel(int id) const {
    return size_t(nodes_[id].rows) * size_t(nodes_[id].cols);
  }
  const double* val(int id) const { return nodes_[id].val; }
  double* mutable_val(int id) { return nodes_[id].val; }
  const double* grad(int id) const { return nodes_[id].grad; }

  Tensor tensor_of(int id) const {
    const Node& n = nodes_[id];
    Tensor t({n.rows, n.cols});
    std::memcpy(t.data.data(), n.val, numel(id) * sizeof(double));
    return t;
  }

  double scalar_of(int id) const { return nodes_[id].val[0]; }

  // --- leaves ---------------------------------------------------------------

  int input(int rows, int cols) {
    Node n{Op::kInput};
    n.rows = rows;
    n.cols = cols;
    n.val = arena_.alloc(size_t(rows) * cols);
    n.grad = grad_enabled_ ? arena_.alloc_zero(size_t(rows) * cols) : nullptr;
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  int input(const Tensor& t) {
    int id = input(t.rows(), t.cols());
    std::memcpy(nodes_[id].val, t.data.data(), t.data.size() * sizeof(double));
    return id;
  }

  // Parameter leaf backed by external value/grad storage.
  int param(Tensor& value, Tensor& grad) {
    Node n{Op::kParam};
    n.rows = value.rows();
    n.cols = value.cols();
    n.val = value.data.data();
    n.grad = grad_enabled_ ? grad.data.data() : nullptr;
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  // --- elementwise / structural ----------------------------------------------

  int add(int a, int b) {
    check_same_shape(a, b);
    int id = make(Op::kAdd, nodes_[a].rows, nodes_[a].cols, a, b);
    const double* xa = nodes_[a].val;
    const double* xb = nodes_[b].val;
    double* y = nodes_[id].val;
    size_t n = numel(id);
    for (size_t i = 0; i < n; ++i) y[i] = xa[i] + xb[i];
    return id;
  }

  int scale(int a, double s) {
    int id = make(Op::kScale, nodes_[a].rows, nodes_[a].cols, a);
    metas_[nodes_[id].meta].scalar = s;
    const double* x = nodes_[a].val;
    double* y = nodes_[id].val;
    size_t n = numel(id);
    for (size_t i = 0; i < n; ++i) y[i] = s * x[i];
    return id;
  }

  // Reinterpret shape without copying; val/grad buffers are aliased.
  int view(int a, int rows, int cols) {
    if (size_t(rows) * cols != numel(a))
      throw std::runtime_error("view: element count mismatch");
    Node n{Op::kView, a};
    n.rows = rows;
    n.cols = cols;
    n.val = nodes_[a].val;
    n.grad = nodes_[a].grad;
    n.meta = -1;
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  int slice_cols(int a, int c0, int c1) {
    int rows = nodes_[a].rows, cols = nodes_[a].cols;
    if (c0 < 0 || c1 > cols || c0 >= c1)
      throw std::runtime_error("slice_cols: bad range");
    int id = make(Op::kSliceCols, rows, c1 - c0, a);
    Meta& m = metas_[nodes_[id].meta];
    m.heads = c0;  // column offset
    const double* x = nodes_[a].val;
    double* y = nodes_[id].val;
    for (int r = 0; r < rows; ++r)
      std::memcpy(y + size_t(r) * (c1 - c0), x + size_t(r) * cols + c0,
                  size_t(c1 - c0) * sizeof(double));
    return id;
  }

  int concat_rows(int a, int b) {
    if (nodes_[a].cols != nodes_[b].cols)
      throw std::runtime_error("concat_rows: column mismatch");
    int id = make(Op::kConcatRows, nodes_[a].rows + nodes_[b].rows,
                  nodes_[a].cols, a, b);
    size_t na = numel(a), nb = numel(b);
    std::memcpy(nodes_[id].val, nodes_[a].val, na * sizeof(double));
    std::memcpy(nodes_[id].val + na, nodes_[b].val, nb * sizeof(double));
    return id;
  }

  int gather_rows(int a, std::vector<int> idx) {
    int rows = int(idx.size());
    int cols = nodes_[a].cols;
    int id = make(Op::kGatherRows, rows, cols, a);
    Meta& m = metas_[nodes_[id].meta];
    m.ia = std::move(idx);
    const double* x = nodes_[a].val;
    double* y = nodes_[id].val;
    for (int r = 0; r < rows; ++r)
      std::memcpy(y + size_t(r) * cols, x + size_t(m.ia[r]) * cols,
                  cols * sizeof(double));
    return id;
  }

  // out[r,:] = a[ia[r],:] + b[ib[r],:]
  int gather_add_rows(int a, int b, std::vector<int> ia, std::vector<int> ib) {
    if (nodes_[a].cols != nodes_[b].cols || ia.size() != ib.size())
      throw std::runtime_error("gather_add_rows: shape mismatch");
    int rows = int(ia.size());
    int cols = nodes_[a].cols;
    int id = make(Op::kGatherAddRows, rows, cols, a, b);
    Meta& m = metas_[nodes_[id].meta];
    m.ia = std::move(ia);
    m.ib = std::move(ib);
    const double* xa = nodes_[a].val;
    const double* xb = nodes_[b].val;
    double* y = nodes_[id].val;
    for (int r = 0; r < rows; ++r) {
      const double* pa = xa + size_t(m.ia[r]) * cols;
      const double* pb = xb + size_t(m.ib[r]) * cols;
      double* py = y + size_t(r) * cols;
      for (int c = 0; c < cols; ++c) py[c] = pa[c] + pb[c];
    }
    return id;
  }

  // --- dense layers -----------------------------------------------------------

  // y = x @ W^T + b,  x:[m,in]  W:[out,in]  b:[1,out]
  int linear(int x, int w, int b) {
    int m = nodes_[x].rows, in = nodes_[x].cols, out = nodes_[w].rows;
    if (nodes_[w].cols != in || nodes_[b].cols != out)
      throw std::runtime_error("linear: shape mismatch");
    int id = make(Op::kLinear, m, out, x, w, b);
    const double* xv = nodes_[x].val;
    const double* wv = nodes_[w].val;
    const double* bv = nodes_[b].val;
    double* y = nodes_[id].val;
    for (int r = 0; r < m; ++r) {
      const double* xr = xv + size_t(r) * in;
      double* yr = y + size_t(r) * out;
      // four output columns at a time: independent accumulator chains that
      // share each x load keep the FMA pipeline full
      int o = 0;
      for (; o + 4 <= out; o += 4) {
        const double* w0 = wv + size_t(o) * in;
        const double* w1 = w0 + in;
        const double* w2 = w1 + in;
        const double* w3 = w2 + in;
        double a0 = bv[o], a1 = bv[o + 1], a2 = bv[o + 2], a3 = bv[o + 3];
        for (int i = 0; i < in; ++i) {
          double xi = xr[i];
          a0 += xi * w0[i];
          a1 += xi * w1[i];
          a2 += xi * w2[i];
          a3 += xi * w3[i];
        }
        yr[o] = a0;
        yr[o + 1] = a1;
        yr[o + 2] = a2;
        yr[o + 3] = a3;
      }
      for (; o < out; ++o) {
        const double* wr = wv + size_t(o) * in;
        double acc = bv[o];
        for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
        yr[o] = acc;
      }
    }
    return id;
  }

  int layer_norm(int x, int gain, int bias) {
    int m = nodes_[x].rows, n = nodes_[x].cols;
    if (nodes_[gain].cols != n || nodes_[bias].cols != n)
      throw std::runtime_error("layer_norm: shape mismatch");
    int id = make(Op::kLayerNorm, m, n, x, gain, bias);
    Meta& meta = metas_[nodes_[id].meta];
    if (grad_enabled_) {
      meta.stash0 = arena_.alloc(size_t(m) * n);  // xhat
      meta.stash1 = arena_.alloc(size_t(m));      // inv_std
    }
    const double* xv = nodes_[x].val;
    const double* g = nodes_[gain].val;
    const double* bv = nodes_[bias].val;
    double* y = nodes_[id].val;
    for (int r = 0; r < m; ++r) {
      const double* xr = xv + size_t(r) * n;
      double* yr = y + size_t(r) * n;
      double mean = 0.0;
      for (int c = 0; c < n; ++c) mean += xr[c];
      mean /= n;
      double var = 0.0;
      for (int c = 0; c < n; ++c) {
        double d = xr[c] - mean;
        var += d * d;
      }
      var /= n;
      double inv = 1.0 / std::sqrt(var + kLnEps);
      for (int c = 0; c < n; ++c) {
        double xh = (xr[c] - mean) * inv;
        if (grad_enabled_) meta.stash0[size_t(r) * n + c] = xh;
        yr[c] = g[c] * xh + bv[c];
      }
      if (grad_enabled_) meta.stash1[r] = inv;
    }
    return id;
  }

  // Tanh-form GELU: one tanh per element instead of erf+exp, and the stashed
  // tanh value makes the backward pass free of transcendentals entirely.
  int gelu(int x) {
    int id = make(Op::kGelu, nodes_[x].rows, nodes_[x].cols, x);
    Meta& meta = metas_[nodes_[id].meta];
    const double* xv = nodes_[x].val;
    double* y = nodes_[id].val;
    size_t n = numel(id);
    if (grad_enabled_) meta.stash0 = arena_.alloc(n);
    for (size_t i = 0; i < n; ++i) {
      double v = xv[i];
      double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      if (grad_enabled_) meta.stash0[i] = t;
      y[i] = 0.5 * v * (1.0 + t);
    }
    return id;
  }

  // --- attention ----------------------------------------------------------------

  // Plain single-head scaled dot-product attention. `allow` is an optional
  // [nq*nk] permission mask; a query with every key denied is an error (it
  // has no valid softmax), never a silent NaN.
  int attention(int q, int k, int v, std::vector<uint8_t> allow = {}) {
    int nq = nodes_[q].rows, d = nodes_[q].cols, nk = nodes_[k].rows;
    if (nodes_[k].cols != d || nodes_[v].rows != nk || nodes_[v].cols != d ||
        (!allow.empty() && int(allow.size()) != nq * nk))
      throw std::runtime_error("attention: shape mismatch");
    int id = make(Op::kAttention, nq, d, q, k, v);
    Meta& m = metas_[nodes_[id].meta];
    m.ia.assign(allow.begin(), allow.end());
    m.stash0 = arena_.alloc(size_t(nq) * nk);  // attn weights
    double inv_sqrt = 1.0 / std::sqrt(double(d));
    const double* qv = nodes_[q].val;
    const double* kv = nodes_[k].val;
    const double* vv = nodes_[v].val;
    double* y = nodes_[id].val;
    for (int i = 0; i < nq; ++i) {
      double* w = m.stash0 + size_t(i) * nk;
      double mx = -1e300;
      bool any = false;
      for (int j = 0; j < nk; ++j) {
        if (!allow.empty() && !allow[size_t(i) * nk + j]) {
          w[j] = -1e300;
          continue;
        }
        any = true;
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += qv[size_t(i) * d + c] * kv[size_t(j) * d + c];
        w[j] = acc * inv_sqrt;
        mx = std::max(mx, w[j]);
      }
      if (!any) throw std::runtime_error("attention: query with all keys denied");
      double z = 0.0;
      for (int j = 0; j < nk; ++j) {
        w[j] = w[j] <= -1e299 ? 0.0 : std::exp(w[j] - mx);
        z += w[j];
      }
      double* yr = y + size_t(i) * d;
      for (int c = 0; c < d; ++c) yr[c] = 0.0;
      for (int j = 0; j < nk; ++j) {
        w[j] /= z;
        if (w[j] == 0.0) continue;
        const double* vr = vv + size_t(j) * d;
        for (int c = 0; c < d; ++c) yr[c] += w[j] * vr[c];
      }
    }
    return id;
  }

  // Multi-head attention with relative positional terms folded into keys and
  // values: for pair (i, j) the key/value source is c_ij = kv[j] + p[pair],
  // K_ij = Wk c_ij, V_ij = Wv c_ij. Rather than projecting every pair, fold
  // Wk into the query side (t_i^h = Wk_h^T q_i^h) and defer Wv until after
  // aggregation, which drops the per-pair cost from O(D^2) to O(heads * D).
  //
  // Pairs are listed contiguously per query: key_idx[pr] is the kv row for
  // pair pr, p row pr is its positional embedding, and query i owns pairs
  // [qstart[i], qstart[i+1]).
  int rel_attn(int q, int kv, int p, int wk, int wv, int heads,
               std::vector<int> key_idx, std::vector<int> qstart) {
    int nq = nodes_[q].rows;
    int dim = nodes_[q].cols;
    int npair = int(key_idx.size());
    if (nodes_[kv].cols != dim || nodes_[p].cols != dim ||
        nodes_[wk].rows != dim || nodes_[wk].cols != dim ||
        nodes_[wv].rows != dim || nodes_[wv].cols != dim ||
        nodes_[p].rows != npair || int(qstart.size()) != nq + 1 ||
        dim % heads != 0)
      throw std::runtime_error("rel_attn: shape mismatch");
    int id = make(Op::kRelAttn, nq, dim, q, kv, p, wk, wv);
    Meta& m = metas_[nodes_[id].meta];
    m.heads = heads;
    m.ia = std::move(key_idx);
    m.ib = std::move(qstart);
    m.stash0 = arena_.alloc(size_t(nq) * heads * dim);    // t
    m.stash1 = arena_.alloc(size_t(npair) * heads);       // attn weights
    m.stash2 = arena_.alloc(size_t(nq) * heads * dim);    // agg
    run_rel_attn_forward(id);
    return id;
  }

  // --- losses --------------------------------------------------------------------

  // out[r] = -log softmax(logits[r])[targets[r]]
  int ce_rows(int logits, std::vector<int> targets) {
    int m = nodes_[logits].rows, k = nodes_[logits].cols;
    if (int(targets.size()) != m)
      throw std::runtime_error("ce_rows: target count mismatch");
    int id = make(Op::kCeRows, m, 1, logits);
    Meta& meta = metas_[nodes_[id].meta];
    meta.ia = std::move(targets);
    if (grad_enabled_) meta.stash0 = arena_.alloc(size_t(m) * k);  // probs
    const double* x = nodes_[logits].val;
    double* y = nodes_[id].val;
    std::vector<double> row(k);
    for (int r = 0; r < m; ++r) {
      const double* xr = x + size_t(r) * k;
      double mx = xr[0];
      for (int c = 1; c < k; ++c) mx = std::max(mx, xr[c]);
      double z = 0.0;
      for (int c = 0; c < k; ++c) {
        row[c] = std::exp(xr[c] - mx);
        z += row[c];
      }
      int t = meta.ia[r];
      y[r] = -(xr[t] - mx - std::log(z));
      if (grad_enabled_)
        for (int c = 0; c < k; ++c) meta.stash0[size_t(r) * k + c] = row[c] / z;
    }
    return id;
  }

  // Diagonal Gaussian negative log-likelihood per row over 4 channels
  // (x, y, theta, v); the theta residual is wrapped. log_std is clamped to
  // [-5, 2] inside the op (clamped coordinates get zero gradient).
  int gauss_nll(int pred, int log_std, std::vector<double> target) {
    int m = nodes_[pred].rows;
    if (nodes_[pred].cols != 4 || nodes_[log_std].rows != m ||
        nodes_[log_std].cols != 4 || int(target.size()) != size_t(m) * 4)
      throw std::runtime_error("gauss_nll: shape mismatch");
    int id = make(Op::kGaussNll, m, 1, pred, log_std);
    Meta& meta = metas_[nodes_[id].meta];
    meta.fa = std::move(target);
    const double* pv = nodes_[pred].val;
    const double* lv = nodes_[log_std].val;
    double* y = nodes_[id].val;
    for (int r = 0; r < m; ++r) {
      double acc = 0.0;
      for (int d = 0; d < 4; ++d) {
        double ls = clamp_log_std(lv[size_t(r) * 4 + d]);
        double sigma = std::exp(ls);
        double res = pv[size_t(r) * 4 + d] - meta.fa[size_t(r) * 4 + d];
        if (d == 2) res = wrap_residual(res);
        double z = res / sigma;
        acc += 0.5 * z * z + ls + 0.5 * std::log(2.0 * M_PI);
      }
      y[r] = acc;
    }
    return id;
  }

  // Unroll per-step displacements (dx, dy, dtheta, dv), expressed in the
  // agent frame at each step, into absolute states. Rows are grouped as
  // [group, step]; init holds the 4-channel start state per group.
  int integrate(int disp, std::vector<double> init, int horizon) {
    int rows = nodes_[disp].rows;
    if (nodes_[disp].cols != 4 || horizon <= 0 || rows % horizon != 0 ||
        init.size() != size_t(rows / horizon) * 4)
      throw std::runtime_error("integrate: shape mismatch");
    int id = make(Op::kIntegrate, rows, 4, disp);
    Meta& meta = metas_[nodes_[id].meta];
    meta.fa = std::move(init);
    meta.horizon = horizon;
    const double* dv = nodes_[disp].val;
    double* y = nodes_[id].val;
    int groups = rows / horizon;
    for (int g = 0; g < groups; ++g) {
      double x = meta.fa[size_t(g) * 4 + 0];
      double yy = meta.fa[size_t(g) * 4 + 1];
      double th = meta.fa[size_t(g) * 4 + 2];
      double v = meta.fa[size_t(g) * 4 + 3];
      for (int t = 0; t < horizon; ++t) {
        size_t r = (size_t(g) * horizon + t) * 4;
        double ct = std::cos(th), st = std::sin(th);
        x += ct * dv[r + 0] - st * dv[r + 1];
        yy += st * dv[r + 0] + ct * dv[r + 1];
        th = wrap_residual(th + dv[r + 2]);
        v += dv[r + 3];
        y[r + 0] = x;
        y[r + 1] = yy;
        y[r + 2] = th;
        y[r + 3] = v;
      }
    }
    return id;
  }

  int sum_all(int x) {
    int id = make(Op::kSumAll, 1, 1, x);
    const double* xv = nodes_[x].val;
    size_t n = numel(x);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += xv[i];
    nodes_[id].val[0] = acc;
    return id;
  }

  // --- backward ---------------------------------------------------------------

  void backward(int loss) {
    if (!grad_enabled_) throw std::runtime_error("backward: grads disabled");
    if (numel(loss) != 1) throw std::runtime_error("backward: loss not scalar");
    nodes_[loss].grad[0] += 1.0;
    for (int id = loss; id >= 0; --id) backward_node(id);
  }

 private:
  static constexpr double kLnEps = 1e-5;
  static constexpr double kGeluA = 0.044715;       // cubic coefficient
  static constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

  static double wrap_residual(double a) {
    double r = std::fmod(a + M_PI, 2.0 * M_PI);
    if (r <= 0.0) r += 2.0 * M_PI;
    return r - M_PI;
  }

  static double clamp_log_std(double ls) {
    return std::min(2.0, std::max(-5.0, ls));
  }

  void check_same_shape(int a, int b) const {
    if (nodes_[a].rows != nodes_[b].rows || nodes_[a].cols != nodes_[b].cols)
      throw std::runtime_error("shape mismatch");
  }

  int make(Op op, int rows, int cols, int a, int b = -1, int c = -1,
           int d = -1, int e = -1) {
    Node n{op, a, b, c, d, e};
    n.rows = rows;
    n.cols = cols;
    n.val = arena_.alloc(size_t(rows) * cols);
    n.grad = grad_enabled_ ? arena_.alloc_zero(size_t(rows) * cols) : nullptr;
    n.meta = int(metas_.size());
    metas_.emplace_back();
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  void run_rel_attn_forward(int id) {
    Node& n = nodes_[id];
    Meta& m = metas_[n.meta];
    const Node& q = nodes_[n.a];
    const Node& kv = nodes_[n.b];
    const Node& p = nodes_[n.c];
    const Node& wk = nodes_[n.d];
    const Node& wv = nodes_[n.e];
    int nq = q.rows, dim = q.cols, heads = m.heads, dh = dim / heads;
    double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<double> cbuf;  // c_ij = kv[j] + p[pair], built once per query
    for (int i = 0; i < nq; ++i) {
      int pr0 = m.ib[i], pr1 = m.ib[i + 1];
      int np = pr1 - pr0;
      cbuf.resize(size_t(np) * dim);
      for (int pr = pr0; pr < pr1; ++pr) {
        const double* kvr = kv.val + size_t(m.ia[pr]) * dim;
        const double* pp = p.val + size_t(pr) * dim;
        double* c = cbuf.data() + size_t(pr - pr0) * dim;
        for (int dcol = 0; dcol < dim; ++dcol) c[dcol] = kvr[dcol] + pp[dcol];
      }
      for (int h = 0; h < heads; ++h) {
        double* t = m.stash0 + (size_t(i) * heads + h) * dim;
        // t = Wk_h^T q_h  (Wk rows h*dh..h*dh+dh-1), two rows per pass
        for (int dcol = 0; dcol < dim; ++dcol) t[dcol] = 0.0;
        int r = 0;
        for (; r + 2 <= dh; r += 2) {
          double q0 = q.val[size_t(i) * dim + h * dh + r];
          double q1 = q.val[size_t(i) * dim + h * dh + r + 1];
          const double* w0 = wk.val + size_t(h * dh + r) * dim;
          const double* w1 = w0 + dim;
          for (int dcol = 0; dcol < dim; ++dcol)
            t[dcol] += q0 * w0[dcol] + q1 * w1[dcol];
        }
        for (; r < dh; ++r) {
          double qs = q.val[size_t(i) * dim + h * dh + r];
          const double* wrow = wk.val + size_t(h * dh + r) * dim;
          for (int dcol = 0; dcol < dim; ++dcol) t[dcol] += qs * wrow[dcol];
        }
        // logits and softmax over this query's pairs
        double mx = -1e300;
        for (int pr = pr0; pr < pr1; ++pr) {
          const double* c = cbuf.data() + size_t(pr - pr0) * dim;
          double acc = 0.0;
          for (int dcol = 0; dcol < dim; ++dcol) acc += t[dcol] * c[dcol];
          double logit = acc * inv_sqrt;
          m.stash1[size_t(pr) * heads + h] = logit;
          mx = std::max(mx, logit);
        }
        double z = 0.0;
        for (int pr = pr0; pr < pr1; ++pr) {
          double& w = m.stash1[size_t(pr) * heads + h];
          w = std::exp(w - mx);
          z += w;
        }
        double* agg = m.stash2 + (size_t(i) * heads + h) * dim;
        for (int dcol = 0; dcol < dim; ++dcol) agg[dcol] = 0.0;
        for (int pr = pr0; pr < pr1; ++pr) {
          double& w = m.stash1[size_t(pr) * heads + h];
          w /= z;
          const double* c = cbuf.data() + size_t(pr - pr0) * dim;
          for (int dcol = 0; dcol < dim; ++dcol) agg[dcol] += w * c[dcol];
        }
        // out_h = Wv_h agg, four rows per pass
        double* yr = n.val + size_t(i) * dim + h * dh;
        r = 0;
        for (; r + 4 <= dh; r += 4) {
          const double* w0 = wv.val + size_t(h * dh + r) * dim;
          const double* w1 = w0 + dim;
          const double* w2 = w1 + dim;
          const double* w3 = w2 + dim;
          double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
          for (int dcol = 0; dcol < dim; ++dcol) {
            double av = agg[dcol];
            a0 += w0[dcol] * av;
            a1 += w1[dcol] * av;
            a2 += w2[dcol] * av;
            a3 += w3[dcol] * av;
          }
          yr[r] = a0;
          yr[r + 1] = a1;
          yr[r + 2] = a2;
          yr[r + 3] = a3;
        }
        for (; r < dh; ++r) {
          const double* wrow = wv.val + size_t(h * dh + r) * dim;
          double acc = 0.0;
          for (int dcol = 0; dcol < dim; ++dcol) acc += wrow[dcol] * agg[dcol];
          yr[r] = acc;
        }
      }
    }
  }

  void backward_rel_attn(int id) {
    Node& n = nodes_[id];
    Meta& m = metas_[n.meta];
    Node& q = nodes_[n.a];
    Node& kv = nodes_[n.b];
    Node& p = nodes_[n.c];
    Node& wk = nodes_[n.d];
    Node& wv = nodes_[n.e];
    int nq = q.rows, dim = q.cols, heads = m.heads, dh = dim / heads;
    double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<double> gagg(dim), gt(dim), ga, ge, cbuf;
    for (int i = 0; i < nq; ++i) {
      int pr0 = m.ib[i], pr1 = m.ib[i + 1];
      int np = pr1 - pr0;
      ga.assign(np, 0.0);
      ge.assign(np, 0.0);
      cbuf.resize(size_t(np) * dim);  // c_ij = kv[j] + p[pair], once per query
      for (int pr = pr0; pr < pr1; ++pr) {
        const double* kvr = kv.val + size_t(m.ia[pr]) * dim;
        const double* pp = p.val + size_t(pr) * dim;
        double* c = cbuf.data() + size_t(pr - pr0) * dim;
        for (int dcol = 0; dcol < dim; ++dcol) c[dcol] = kvr[dcol] + pp[dcol];
      }
      for (int h = 0; h < heads; ++h) {
        const double* go = n.grad + size_t(i) * dim + h * dh;
        const double* agg = m.stash2 + (size_t(i) * heads + h) * dim;
        const double* t = m.stash0 + (size_t(i) * heads + h) * dim;
        // through out = Wv_h agg
        for (int dcol = 0; dcol < dim; ++dcol) gagg[dcol] = 0.0;
        for (int r = 0; r < dh; ++r) {
          double g = go[r];
          if (g == 0.0) continue;
          double* gwrow = wv.grad + size_t(h * dh + r) * dim;
          const double* wrow = wv.val + size_t(h * dh + r) * dim;
          for (int dcol = 0; dcol < dim; ++dcol) {
            gwrow[dcol] += g * agg[dcol];
            gagg[dcol] += g * wrow[dcol];
          }
        }
        // through agg = sum_pr a * c  and softmax
        double dot = 0.0;
        for (int pr = pr0; pr < pr1; ++pr) {
          const double* c = cbuf.data() + size_t(pr - pr0) * dim;
          double acc = 0.0;
          for (int dcol = 0; dcol < dim; ++dcol) acc += gagg[dcol] * c[dcol];
          ga[pr - pr0] = acc;
          dot += m.stash1[size_t(pr) * heads + h] * acc;
        }
        for (int pr = pr0; pr < pr1; ++pr) {
          double a = m.stash1[size_t(pr) * heads + h];
          ge[pr - pr0] = a * (ga[pr - pr0] - dot);
        }
        // through e = t . c / sqrt(dh)  and  agg's direct c term
        for (int dcol = 0; dcol < dim; ++dcol) gt[dcol] = 0.0;
        for (int pr = pr0; pr < pr1; ++pr) {
          double a = m.stash1[size_t(pr) * heads + h];
          double gei = ge[pr - pr0] * inv_sqrt;
          const double* c = cbuf.data() + size_t(pr - pr0) * dim;
          double* gkv = kv.grad + size_t(m.ia[pr]) * dim;
          double* gp = p.grad + size_t(pr) * dim;
          for (int dcol = 0; dcol < dim; ++dcol) {
            double gc = a * gagg[dcol] + gei * t[dcol];
            gkv[dcol] += gc;
            gp[dcol] += gc;
            gt[dcol] += gei * c[dcol];
          }
        }
        // through t = Wk_h^T q_h, two rows per pass
        int r = 0;
        for (; r + 2 <= dh; r += 2) {
          double q0 = q.val[size_t(i) * dim + h * dh + r];
          double q1 = q.val[size_t(i) * dim + h * dh + r + 1];
          const double* w0 = wk.val + size_t(h * dh + r) * dim;
          const double* w1 = w0 + dim;
          double* gw0 = wk.grad + size_t(h * dh + r) * dim;
          double* gw1 = gw0 + dim;
          double a0 = 0.0, a1 = 0.0;
          for (int dcol = 0; dcol < dim; ++dcol) {
            double gtc = gt[dcol];
            a0 += w0[dcol] * gtc;
            a1 += w1[dcol] * gtc;
            gw0[dcol] += q0 * gtc;
            gw1[dcol] += q1 * gtc;
          }
          q.grad[size_t(i) * dim + h * dh + r] += a0;
          q.grad[size_t(i) * dim + h * dh + r + 1] += a1;
        }
        for (; r < dh; ++r) {
          double qs = q.val[size_t(i) * dim + h * dh + r];
          const double* wrow = wk.val + size_t(h * dh + r) * dim;
          double* gwrow = wk.grad + size_t(h * dh + r) * dim;
          double acc = 0.0;
          for (int dcol = 0; dcol < dim; ++dcol) {
            acc += wrow[dcol] * gt[dcol];
            gwrow[dcol] += qs * gt[dcol];
          }
          q.grad[size_t(i) * dim + h * dh + r] += acc;
        }
      }
    }
  }

  void backward_node(int id) {
    Node& n = nodes_[id];
    const double* g = n.grad;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kAdd: {
        double* ga = nodes_[n.a].grad;
        double* gb = nodes_[n.b].grad;
        size_t cnt = numel(id);
        for (size_t i = 0; i < cnt; ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kScale: {
        double s = metas_[n.meta].scalar;
        double* ga = nodes_[n.a].grad;
        size_t cnt = numel(id);
        for (size_t i = 0; i < cnt; ++i) ga[i] += s * g[i];
        break;
      }
      case Op::kView:
        break;  // grad buffer aliased with input
      case Op::kSliceCols: {
        const Meta& m = metas_[n.meta];
        int c0 = m.heads;
        int in_cols = nodes_[n.a].cols;
        double* ga = nodes_[n.a].grad;
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c)
            ga[size_t(r) * in_cols + c0 + c] += g[size_t(r) * n.cols + c];
        break;
      }
      case Op::kAttention: {
        Node& q = nodes_[n.a];
        Node& k = nodes_[n.b];
        Node& v = nodes_[n.c];
        const Meta& m = metas_[n.meta];
        int nq = q.rows, d = q.cols, nk = k.rows;
        double inv_sqrt = 1.0 / std::sqrt(double(d));
        std::vector<double> ga(nk), ge(nk);
        for (int i = 0; i < nq; ++i) {
          const double* gr = g + size_t(i) * d;
          const double* w = m.stash0 + size_t(i) * nk;
          double dot = 0.0;
          for (int j = 0; j < nk; ++j) {
            double acc = 0.0;
            const double* vr = v.val + size_t(j) * d;
            double* gvr = v.grad + size_t(j) * d;
            for (int c = 0; c < d; ++c) {
              acc += gr[c] * vr[c];
              gvr[c] += w[j] * gr[c];
            }
            ga[j] = acc;
            dot += w[j] * acc;
          }
          for (int j = 0; j < nk; ++j) ge[j] = w[j] * (ga[j] - dot) * inv_sqrt;
          double* gq = q.grad + size_t(i) * d;
          const double* qr = q.val + size_t(i) * d;
          for (int j = 0; j < nk; ++j) {
            if (ge[j] == 0.0) continue;
            const double* kr = k.val + size_t(j) * d;
            double* gk = k.grad + size_t(j) * d;
            for (int c = 0; c < d; ++c) {
              gq[c] += ge[j] * kr[c];
              gk[c] += ge[j] * qr[c];
            }
          }
        }
        break;
      }
      case Op::kConcatRows: {
        size_t na = numel(n.a);
        double* ga = nodes_[n.a].grad;
        double* gb = nodes_[n.b].grad;
        for (size_t i = 0; i < na; ++i) ga[i] += g[i];
        size_t nb = numel(n.b);
        for (size_t i = 0; i < nb; ++i) gb[i] += g[na + i];
        break;
      }
      case Op::kGatherRows: {
        const Meta& m = metas_[n.meta];
        double* ga = nodes_[n.a].grad;
        int cols = n.cols;
        for (int r = 0; r < n.rows; ++r) {
          double* dst = ga + size_t(m.ia[r]) * cols;
          const double* src = g + size_t(r) * cols;
          for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
        break;
      }
      case Op::kGatherAddRows: {
        const Meta& m = metas_[n.meta];
        double* ga = nodes_[n.a].grad;
        double* gb = nodes_[n.b].grad;
        int cols = n.cols;
        for (int r = 0; r < n.rows; ++r) {
          const double* src = g + size_t(r) * cols;
          double* da = ga + size_t(m.ia[r]) * cols;
          double* db = gb + size_t(m.ib[r]) * cols;
          for (int c = 0; c < cols; ++c) {
            da[c] += src[c];
            db[c] += src[c];
          }
        }
        break;
      }
      case Op::kLinear: {
        Node& x = nodes_[n.a];
        Node& w = nodes_[n.b];
        Node& b = nodes_[n.c];
        int m = x.rows, in = x.cols, out = w.rows;
        for (int r = 0; r < m; ++r) {
          const double* gr = g + size_t(r) * out;
          // rows with no incoming gradient (e.g. losing WTA modes) cost nothing
          bool live = false;
          for (int o = 0; o < out && !live; ++o) live = gr[o] != 0.0;
          if (!live) continue;
          const double* xr = x.val + size_t(r) * in;
          double* gxr = x.grad + size_t(r) * in;
          int o = 0;
          for (; o + 2 <= out; o += 2) {
            double g0 = gr[o], g1 = gr[o + 1];
            b.grad[o] += g0;
            b.grad[o + 1] += g1;
            const double* w0 = w.val + size_t(o) * in;
            const double* w1 = w0 + in;
            double* gw0 = w.grad + size_t(o) * in;
            double* gw1 = gw0 + in;
            for (int i = 0; i < in; ++i) {
              double xi = xr[i];
              gxr[i] += g0 * w0[i] + g1 * w1[i];
              gw0[i] += g0 * xi;
              gw1[i] += g1 * xi;
            }
          }
          for (; o < out; ++o) {
            double go = gr[o];
            b.grad[o] += go;
            const double* wr = w.val + size_t(o) * in;
            double* gwr = w.grad + size_t(o) * in;
            for (int i = 0; i < in; ++i) {
              gxr[i] += go * wr[i];
              gwr[i] += go * xr[i];
            }
          }
        }
        break;
      }
      case Op::kLayerNorm: {
        Node& x = nodes_[n.a];
        Node& gain = nodes_[n.b];
        Node& bias = nodes_[n.c];
        const Meta& meta = metas_[n.meta];
        int m = x.rows, cols = x.cols;
        for (int r = 0; r < m; ++r) {
          const double* gr = g + size_t(r) * cols;
          const double* xh = meta.stash0 + size_t(r) * cols;
          double inv = meta.stash1[r];
          double sum_gxh = 0.0, sum_gxh_xh = 0.0;
          for (int c = 0; c < cols; ++c) {
            double gxh = gr[c] * gain.val[c];
            sum_gxh += gxh;
            sum_gxh_xh += gxh * xh[c];
            gain.grad[c] += gr[c] * xh[c];
            bias.grad[c] += gr[c];
          }
          double* gx = x.grad + size_t(r) * cols;
          for (int c = 0; c < cols; ++c) {
            double gxh = gr[c] * gain.val[c];
            gx[c] += inv * (gxh - (sum_gxh + xh[c] * sum_gxh_xh) / cols);
          }
        }
        break;
      }
      case Op::kGelu: {
        Node& x = nodes_[n.a];
        const Meta& meta = metas_[n.meta];
        size_t cnt = numel(id);
        for (size_t i = 0; i < cnt; ++i) {
          double xv = x.val[i];
          double t = meta.stash0[i];
          double du = kGeluC * (1.0 + 3.0 * kGeluA * xv * xv);
          x.grad[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du);
        }
        break;
      }
      case Op::kRelAttn:
        backward_rel_attn(id);
        break;
      case Op::kCeRows: {
        Node& logits = nodes_[n.a];
        const Meta& meta = metas_[n.meta];
        int m = n.rows, k = logits.cols;
        for (int r = 0; r < m; ++r) {
          double go = g[r];
          if (go == 0.0) continue;
          const double* probs = meta.stash0 + size_t(r) * k;
          double* gl = logits.grad + size_t(r) * k;
          int t = meta.ia[r];
          for (int c = 0; c < k; ++c)
            gl[c] += go * (probs[c] - (c == t ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kGaussNll: {
        Node& pred = nodes_[n.a];
        Node& ls = nodes_[n.b];
        const Meta& meta = metas_[n.meta];
        for (int r = 0; r < n.rows; ++r) {
          double go = g[r];
          if (go == 0.0) continue;
          for (int d = 0; d < 4; ++d) {
            size_t idx = size_t(r) * 4 + d;
            double lsv = ls.val[idx];
            double lsc = clamp_log_std(lsv);
            double sigma = std::exp(lsc);
            double res = pred.val[idx] - meta.fa[idx];
            if (d == 2) res = wrap_residual(res);
            double z = res / sigma;
            pred.grad[idx] += go * z / sigma;
            if (lsv > -5.0 && lsv < 2.0) ls.grad[idx] += go * (1.0 - z * z);
          }
        }
        break;
      }
      case Op::kIntegrate: {
        Node& disp = nodes_[n.a];
        const Meta& meta = metas_[n.meta];
        int horizon = meta.horizon;
        int groups = n.rows / horizon;
        for (int grp = 0; grp < groups; ++grp) {
          double gx = 0.0, gy = 0.0, gth = 0.0, gv = 0.0;
          for (int t = horizon - 1; t >= 0; --t) {
            size_t r = (size_t(grp) * horizon + t) * 4;
            gx += g[r + 0];
            gy += g[r + 1];
            gth += g[r + 2];
            gv += g[r + 3];
            double th_prev = t == 0 ? meta.fa[size_t(grp) * 4 + 2]
                                    : n.val[r - 4 + 2];
            double ct = std::cos(th_prev), st = std::sin(th_prev);
            double dx = disp.val[r + 0], dy = disp.val[r + 1];
            disp.grad[r + 0] += ct * gx + st * gy;
            disp.grad[r + 1] += -st * gx + ct * gy;
            disp.grad[r + 2] += gth;
            disp.grad[r + 3] += gv;
            // state_t gradient for the next (earlier) iteration
            gth += gx * (-st * dx - ct * dy) + gy * (ct * dx - st * dy);
          }
        }
        break;
      }
      case Op::kSumAll: {
        double go = g[0];
        double* ga = nodes_[n.a].grad;
        size_t cnt = numel(n.a);
        for (size_t i = 0; i < cnt; ++i) ga[i] += go;
        break;
      }
    }
  }

  bool grad_enabled_;
  detail::Arena arena_;
  std::vector<Node> nodes_;
  std::vector<Meta> metas_;
};

}  // namespace modeplan
