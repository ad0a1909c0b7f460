#pragma once

// Define-by-run reverse-mode autodiff tape. Forward values are computed at
// node creation; backward() walks the tape once in reverse order. The op
// inventory is exactly what the transformer needs; no general broadcasting.
//
// Every op output is checked finite; NaN/Inf anywhere is a hard error
// rather than a silent divergence.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lexstress/tensor.hpp"
#include "lexstress/util.hpp"

namespace lexstress::nn {

// C[m,n] += A[m,k] * B[k,n]
template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    Real* crow = c + static_cast<size_t>(i) * n;
    const Real* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const Real s = arow[p];
      const Real* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <class Real>
void gemm_nt(const Real* a, const Real* b, Real* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<size_t>(i) * n;
    Real* crow = c + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const Real* brow = b + static_cast<size_t>(j) * n;
      Real s = 0;
      for (int p = 0; p < n; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int p = 0; p < m; ++p) {
    const Real* arow = a + static_cast<size_t>(p) * k;
    const Real* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      const Real s = arow[i];
      Real* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

template <class Real>
class Graph {
 public:
  enum class Op {
    Leaf, MatMul, Add, AddBias, Scale, Relu, LayerNorm, Softmax, LogSoftmax,
    Dropout, Embedding, SplitHeads, MergeHeads, Attention, SmoothedNll, Dot,
    ReduceSum
  };

  static std::string_view op_name(Op op) {
    switch (op) {
      case Op::Leaf: return "leaf";
      case Op::MatMul: return "matmul";
      case Op::Add: return "add";
      case Op::AddBias: return "add_bias";
      case Op::Scale: return "scale";
      case Op::Relu: return "relu";
      case Op::LayerNorm: return "layer_norm";
      case Op::Softmax: return "softmax";
      case Op::LogSoftmax: return "log_softmax";
      case Op::Dropout: return "dropout";
      case Op::Embedding: return "embedding_lookup";
      case Op::SplitHeads: return "split_heads";
      case Op::MergeHeads: return "merge_heads";
      case Op::Attention: return "scaled_dot_attention";
      case Op::SmoothedNll: return "smoothed_nll";
      case Op::Dot: return "dot";
      case Op::ReduceSum: return "reduce_sum";
    }
    return "?";
  }

  struct Node {
    Op op = Op::Leaf;
    std::array<int, 3> parent{-1, -1, -1};
    Tensor<Real> value;                  // empty for external leaves
    Tensor<Real> grad;                   // allocated on demand in backward()
    const Tensor<Real>* external = nullptr;
    std::string name;
    bool trainable = false;
    bool requires_grad = false;
    Tensor<Real> aux;                    // op cache (mask/xhat/attention A/..)
    Tensor<Real> aux2;                   // secondary cache (LN inv-std, dot coeffs)
    std::vector<int> ids;                // embedding ids / loss targets
    Real r0 = 0, r1 = 0, r2 = 0;         // per-op scalars
    int i0 = 0;
  };

  const Tensor<Real>& value(int id) const {
    const Node& n = node_at(id);
    return n.external ? *n.external : n.value;
  }

  const Tensor<Real>& grad(int id) const {
    const Node& n = node_at(id);
    if (n.grad.size() == 0)
      throw ComputeError("gradient not computed for this node");
    return n.grad;
  }

  std::span<const Node> nodes() const { return nodes_; }

  // --- leaves ---------------------------------------------------------

  // Trainable parameter referencing storage owned by the caller; the same
  // name always maps to one node so gradients accumulate.
  int param(const Tensor<Real>& t, const std::string& name) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    Node n;
    n.op = Op::Leaf;
    n.external = &t;
    n.name = name;
    n.trainable = true;
    n.requires_grad = true;
    const int id = push(std::move(n));
    params_.emplace(name, id);
    return id;
  }

  // Non-trainable owned input (features, positional encodings, memory).
  int input(Tensor<Real> t) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    return push(std::move(n));
  }

  // --- ops -------------------------------------------------------------

  int matmul(int a, int b) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    Node n = make(Op::MatMul, a, b);
    if (ta.shape.nd == 2 && tb.shape.nd == 2) {
      if (ta.dim(1) != tb.dim(0)) shape_error("matmul", ta, tb);
      n.value = Tensor<Real>({ta.dim(0), tb.dim(1)});
      gemm_nn(ta.v.data(), tb.v.data(), n.value.v.data(), ta.dim(0), ta.dim(1),
              tb.dim(1));
    } else if (ta.shape.nd == 3 && tb.shape.nd == 3) {
      if (ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(1))
        shape_error("matmul", ta, tb);
      const int B = ta.dim(0), m = ta.dim(1), k = ta.dim(2), cols = tb.dim(2);
      n.value = Tensor<Real>({B, m, cols});
      for (int s = 0; s < B; ++s)
        gemm_nn(ta.v.data() + static_cast<size_t>(s) * m * k,
                tb.v.data() + static_cast<size_t>(s) * k * cols,
                n.value.v.data() + static_cast<size_t>(s) * m * cols, m, k,
                cols);
    } else {
      shape_error("matmul", ta, tb);
    }
    return push(std::move(n));
  }

  int add(int a, int b) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    if (ta.shape != tb.shape) shape_error("add", ta, tb);
    Node n = make(Op::Add, a, b);
    n.value = ta;
    for (int64_t i = 0; i < tb.size(); ++i) n.value.v[i] += tb.v[i];
    return push(std::move(n));
  }

  // rows of `a` plus a length-last-dim bias vector
  int add_bias(int a, int bias) {
    const auto& ta = value(a);
    const auto& tb = value(bias);
    if (tb.shape.nd != 1 || tb.dim(0) != ta.shape.last())
      shape_error("add_bias", ta, tb);
    Node n = make(Op::AddBias, a, bias);
    n.value = ta;
    const int cols = ta.shape.last();
    const int64_t rows = ta.size() / cols;
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < cols; ++j) n.value.v[r * cols + j] += tb.v[j];
    return push(std::move(n));
  }

  int scale(int a, Real c) {
    Node n = make(Op::Scale, a);
    n.r0 = c;
    n.value = value(a);
    for (auto& x : n.value.v) x *= c;
    return push(std::move(n));
  }

  int relu(int a) {
    Node n = make(Op::Relu, a);
    n.value = value(a);
    for (auto& x : n.value.v) x = x > 0 ? x : Real(0);
    return push(std::move(n));
  }

  static constexpr Real kLayerNormEps = Real(1e-6);

  int layer_norm(int a, int gamma, int beta) {
    const auto& ta = value(a);
    const auto& tg = value(gamma);
    const auto& tb = value(beta);
    const int cols = ta.shape.last();
    if (tg.shape.nd != 1 || tg.dim(0) != cols) shape_error("layer_norm", ta, tg);
    if (tb.shape.nd != 1 || tb.dim(0) != cols) shape_error("layer_norm", ta, tb);
    Node n = make3(Op::LayerNorm, a, gamma, beta);
    const int64_t rows = ta.size() / cols;
    n.value = Tensor<Real>(ta.shape);
    n.aux = Tensor<Real>(ta.shape);                       // xhat
    n.aux2 = Tensor<Real>({static_cast<int>(rows)});      // 1/std per row
    for (int64_t r = 0; r < rows; ++r) {
      const Real* x = ta.v.data() + r * cols;
      Real mu = 0;
      for (int j = 0; j < cols; ++j) mu += x[j];
      mu /= cols;
      Real var = 0;
      for (int j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= cols;
      const Real istd = Real(1) / std::sqrt(var + kLayerNormEps);
      n.aux2.v[r] = istd;
      for (int j = 0; j < cols; ++j) {
        const Real xh = (x[j] - mu) * istd;
        n.aux.v[r * cols + j] = xh;
        n.value.v[r * cols + j] = xh * tg.v[j] + tb.v[j];
      }
    }
    return push(std::move(n));
  }

  int softmax(int a) {
    Node n = make(Op::Softmax, a);
    n.value = value(a);
    softmax_rows(n.value);
    return push(std::move(n));
  }

  int log_softmax(int a) {
    const auto& ta = value(a);
    Node n = make(Op::LogSoftmax, a);
    n.value = ta;
    const int cols = ta.shape.last();
    const int64_t rows = ta.size() / cols;
    for (int64_t r = 0; r < rows; ++r) {
      Real* x = n.value.v.data() + r * cols;
      const Real mx = *std::max_element(x, x + cols);
      Real sum = 0;
      for (int j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
      const Real lse = mx + std::log(sum);
      for (int j = 0; j < cols; ++j) x[j] -= lse;
    }
    return push(std::move(n));
  }

  // Inverted dropout; eval mode is the identity (no node is added).
  int dropout(int a, Real p, Rng* rng, bool train) {
    if (!train || p <= Real(0)) return a;
    if (!(p < Real(1))) throw ComputeError("dropout rate must be < 1");
    if (!rng) throw ComputeError("dropout in train mode needs an rng");
    Node n = make(Op::Dropout, a);
    n.r0 = p;
    const auto& ta = value(a);
    n.aux = Tensor<Real>(ta.shape);
    const Real keep_scale = Real(1) / (Real(1) - p);
    for (auto& m : n.aux.v)
      m = rng->uniform() < static_cast<double>(p) ? Real(0) : keep_scale;
    n.value = ta;
    for (int64_t i = 0; i < ta.size(); ++i) n.value.v[i] *= n.aux.v[i];
    return push(std::move(n));
  }

  int embedding(int table, std::vector<int> ids) {
    const auto& tt = value(table);
    if (tt.shape.nd != 2)
      throw ComputeError(cat("embedding_lookup wants a 2D table, got ",
                             tt.shape.str()));
    Node n = make(Op::Embedding, table);
    const int d = tt.dim(1);
    n.value = Tensor<Real>({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tt.dim(0))
        throw ComputeError(cat("embedding id ", ids[i], " out of range [0,",
                               tt.dim(0), ")"));
      std::copy_n(tt.v.data() + static_cast<size_t>(ids[i]) * d, d,
                  n.value.v.data() + i * d);
    }
    n.ids = std::move(ids);
    return push(std::move(n));
  }

  // [L, H*dh] -> [H, L, dh]
  int split_heads(int a, int heads) {
    const auto& ta = value(a);
    if (ta.shape.nd != 2 || ta.dim(1) % heads != 0)
      throw ComputeError(cat("split_heads: shape ", ta.shape.str(),
                             " not divisible into ", heads, " heads"));
    Node n = make(Op::SplitHeads, a);
    n.i0 = heads;
    const int L = ta.dim(0), dh = ta.dim(1) / heads;
    n.value = Tensor<Real>({heads, L, dh});
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < L; ++l)
        std::copy_n(ta.v.data() + (static_cast<size_t>(l) * heads + h) * dh,
                    dh,
                    n.value.v.data() +
                        (static_cast<size_t>(h) * L + l) * dh);
    return push(std::move(n));
  }

  // [H, L, dh] -> [L, H*dh]
  int merge_heads(int a) {
    const auto& ta = value(a);
    if (ta.shape.nd != 3)
      throw ComputeError(cat("merge_heads wants 3D input, got ",
                             ta.shape.str()));
    Node n = make(Op::MergeHeads, a);
    const int H = ta.dim(0), L = ta.dim(1), dh = ta.dim(2);
    n.value = Tensor<Real>({L, H * dh});
    for (int h = 0; h < H; ++h)
      for (int l = 0; l < L; ++l)
        std::copy_n(ta.v.data() + (static_cast<size_t>(h) * L + l) * dh, dh,
                    n.value.v.data() +
                        (static_cast<size_t>(l) * H + h) * dh);
    return push(std::move(n));
  }

  // q [H,Lq,dh], k/v [H,Lk,dh]; additive mask [Lq,Lk] of 0 / -inf entries
  // shared across heads. Softmax weights are cached per head for
  // introspection (rows sum to 1).
  int scaled_dot_attention(int q, int k, int v,
                           const Tensor<Real>* mask = nullptr) {
    const auto& tq = value(q);
    const auto& tk = value(k);
    const auto& tv = value(v);
    if (tq.shape.nd != 3 || tk.shape.nd != 3 || tv.shape.nd != 3 ||
        tq.dim(0) != tk.dim(0) || tq.dim(2) != tk.dim(2) ||
        tk.shape != tv.shape)
      shape_error("scaled_dot_attention", tq, tk);
    const int H = tq.dim(0), lq = tq.dim(1), lk = tk.dim(1), dh = tq.dim(2);
    if (mask && (mask->shape.nd != 2 || mask->dim(0) != lq ||
                 mask->dim(1) != lk))
      throw ComputeError(cat("attention mask shape ", mask->shape.str(),
                             " does not match scores [", lq, ",", lk, "]"));
    Node n = make3(Op::Attention, q, k, v);
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    n.r0 = scale;
    n.aux = Tensor<Real>({H, lq, lk});  // softmax weights A
    n.value = Tensor<Real>({H, lq, dh});
    for (int h = 0; h < H; ++h) {
      const Real* qh = tq.v.data() + static_cast<size_t>(h) * lq * dh;
      const Real* kh = tk.v.data() + static_cast<size_t>(h) * lk * dh;
      const Real* vh = tv.v.data() + static_cast<size_t>(h) * lk * dh;
      Real* ah = n.aux.v.data() + static_cast<size_t>(h) * lq * lk;
      Real* oh = n.value.v.data() + static_cast<size_t>(h) * lq * dh;
      // scores
      std::fill(ah, ah + static_cast<size_t>(lq) * lk, Real(0));
      gemm_nt(qh, kh, ah, lq, dh, lk);
      for (int i = 0; i < lq; ++i) {
        Real* row = ah + static_cast<size_t>(i) * lk;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int j = 0; j < lk; ++j) {
          row[j] *= scale;
          if (mask) row[j] += mask->at(i, j);
          mx = std::max(mx, row[j]);
        }
        if (!(mx > -std::numeric_limits<Real>::infinity()))
          throw ComputeError(cat("attention row ", i,
                                 " has every position masked"));
        Real sum = 0;
        for (int j = 0; j < lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (int j = 0; j < lk; ++j) row[j] /= sum;
      }
      gemm_nn(ah, vh, oh, lq, lk, dh);
    }
    return push(std::move(n));
  }

  // Label-smoothed NLL over log-probabilities. Positions whose target is
  // pad_id are excluded; the sum is divided by `normalizer` (the batch-wide
  // non-pad count) so per-item losses add up to the batch loss.
  int smoothed_nll(int logp, std::vector<int> targets, Real smoothing,
                   int pad_id, Real normalizer) {
    const auto& tl = value(logp);
    if (tl.shape.nd != 2 ||
        tl.dim(0) != static_cast<int>(targets.size()))
      throw ComputeError(cat("smoothed_nll: logp ", tl.shape.str(), " vs ",
                             targets.size(), " targets"));
    if (normalizer <= Real(0))
      throw ComputeError("smoothed_nll: normalizer must be positive");
    const int V = tl.dim(1);
    Node n = make(Op::SmoothedNll, logp);
    n.r0 = smoothing;
    n.r1 = normalizer;
    n.i0 = pad_id;
    Real loss = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
      const int t = targets[i];
      if (t == pad_id) continue;
      if (t < 0 || t >= V)
        throw ComputeError(cat("target id ", t, " out of vocabulary [0,", V,
                               ")"));
      const Real* row = tl.v.data() + i * V;
      Real smooth_term = 0;
      for (int j = 0; j < V; ++j) smooth_term += row[j];
      loss -= (Real(1) - smoothing) * row[t] +
              smoothing / static_cast<Real>(V) * smooth_term;
    }
    n.value = Tensor<Real>({1});
    n.value.v[0] = loss / normalizer;
    n.ids = std::move(targets);
    return push(std::move(n));
  }

  // Linear functional with fixed coefficients; handy as a scalar head in
  // gradient tests.
  int dot(int a, Tensor<Real> coeffs) {
    const auto& ta = value(a);
    if (ta.shape != coeffs.shape) shape_error("dot", ta, coeffs);
    Node n = make(Op::Dot, a);
    Real s = 0;
    for (int64_t i = 0; i < ta.size(); ++i) s += ta.v[i] * coeffs.v[i];
    n.aux2 = std::move(coeffs);
    n.value = Tensor<Real>({1});
    n.value.v[0] = s;
    return push(std::move(n));
  }

  int reduce_sum(int a) {
    Node n = make(Op::ReduceSum, a);
    Real s = 0;
    for (Real x : value(a).v) s += x;
    n.value = Tensor<Real>({1});
    n.value.v[0] = s;
    return push(std::move(n));
  }

  // --- backward --------------------------------------------------------

  void backward(int loss) {
    if (nodes_.empty() || loss < 0 || loss >= static_cast<int>(nodes_.size()))
      throw ComputeError("backward called before forward");
    if (value(loss).size() != 1)
      throw ComputeError(cat("loss must be scalar, got shape ",
                             value(loss).shape.str()));
    for (auto& n : nodes_) n.grad = Tensor<Real>();
    ensure_grad(loss);
    nodes_[loss].grad.v[0] = Real(1);

    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      backprop(n);
    }
  }

  // Gradients for every trainable parameter in the graph; parameters that
  // the loss never touched get zeros.
  std::map<std::string, Tensor<Real>> trainable_grads() const {
    std::map<std::string, Tensor<Real>> out;
    for (const auto& [name, id] : params_) {
      const Node& n = nodes_[id];
      if (n.grad.size() != 0)
        out.emplace(name, n.grad);
      else
        out.emplace(name, Tensor<Real>(value(id).shape));
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, int> params_;

  const Node& node_at(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ComputeError(cat("invalid node id ", id));
    return nodes_[id];
  }

  Node make(Op op, int a, int b = -1) {
    Node n;
    n.op = op;
    n.parent = {a, b, -1};
    n.requires_grad = inherits_grad(a) || (b >= 0 && inherits_grad(b));
    return n;
  }

  Node make3(Op op, int a, int b, int c) {
    Node n;
    n.op = op;
    n.parent = {a, b, c};
    n.requires_grad =
        inherits_grad(a) || inherits_grad(b) || inherits_grad(c);
    return n;
  }

  bool inherits_grad(int id) const { return node_at(id).requires_grad; }

  int push(Node n) {
    const Tensor<Real>& out = n.external ? *n.external : n.value;
    if (!out.all_finite())
      throw ComputeError(cat("non-finite values in output of ",
                             op_name(n.op)));
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor<Real>(value(id).shape);
  }

  Tensor<Real>* grad_into(int id) {
    if (id < 0) return nullptr;
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    ensure_grad(id);
    return &n.grad;
  }

  static void softmax_rows(Tensor<Real>& t) {
    const int cols = t.shape.last();
    const int64_t rows = t.size() / cols;
    for (int64_t r = 0; r < rows; ++r) {
      Real* x = t.v.data() + r * cols;
      const Real mx = *std::max_element(x, x + cols);
      Real sum = 0;
      for (int j = 0; j < cols; ++j) {
        x[j] = std::exp(x[j] - mx);
        sum += x[j];
      }
      for (int j = 0; j < cols; ++j) x[j] /= sum;
    }
  }

  [[noreturn]] static void shape_error(std::string_view op,
                                       const Tensor<Real>& a,
                                       const Tensor<Real>& b) {
    throw ComputeError(cat(op, ": incompatible shapes ", a.shape.str(),
                           " and ", b.shape.str()));
  }

  void backprop(Node& n) {
    const Tensor<Real>& d = n.grad;
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::MatMul: {
        const auto& ta = value(n.parent[0]);
        const auto& tb = value(n.parent[1]);
        Tensor<Real>* da = grad_into(n.parent[0]);
        Tensor<Real>* db = grad_into(n.parent[1]);
        if (ta.shape.nd == 2) {
          const int m = ta.dim(0), k = ta.dim(1), cols = tb.dim(1);
          if (da) gemm_nt(d.v.data(), tb.v.data(), da->v.data(), m, cols, k);
          if (db) gemm_tn(ta.v.data(), d.v.data(), db->v.data(), m, k, cols);
        } else {
          const int B = ta.dim(0), m = ta.dim(1), k = ta.dim(2),
                    cols = tb.dim(2);
          for (int s = 0; s < B; ++s) {
            const size_t oa = static_cast<size_t>(s) * m * k;
            const size_t ob = static_cast<size_t>(s) * k * cols;
            const size_t oc = static_cast<size_t>(s) * m * cols;
            if (da)
              gemm_nt(d.v.data() + oc, tb.v.data() + ob, da->v.data() + oa, m,
                      cols, k);
            if (db)
              gemm_tn(ta.v.data() + oa, d.v.data() + oc, db->v.data() + ob, m,
                      k, cols);
          }
        }
        return;
      }
      case Op::Add: {
        for (int p = 0; p < 2; ++p)
          if (auto* g = grad_into(n.parent[p]))
            for (int64_t i = 0; i < d.size(); ++i) g->v[i] += d.v[i];
        return;
      }
      case Op::AddBias: {
        if (auto* g = grad_into(n.parent[0]))
          for (int64_t i = 0; i < d.size(); ++i) g->v[i] += d.v[i];
        if (auto* g = grad_into(n.parent[1])) {
          const int cols = d.shape.last();
          const int64_t rows = d.size() / cols;
          for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < cols; ++j) g->v[j] += d.v[r * cols + j];
        }
        return;
      }
      case Op::Scale: {
        if (auto* g = grad_into(n.parent[0]))
          for (int64_t i = 0; i < d.size(); ++i) g->v[i] += n.r0 * d.v[i];
        return;
      }
      case Op::Relu: {
        if (auto* g = grad_into(n.parent[0])) {
          const auto& x = value(n.parent[0]);
          for (int64_t i = 0; i < d.size(); ++i)
            if (x.v[i] > 0) g->v[i] += d.v[i];
        }
        return;
      }
      case Op::LayerNorm: {
        const auto& tg = value(n.parent[1]);
        const int cols = d.shape.last();
        const int64_t rows = d.size() / cols;
        Tensor<Real>* da = grad_into(n.parent[0]);
        Tensor<Real>* dg = grad_into(n.parent[1]);
        Tensor<Real>* db = grad_into(n.parent[2]);
        for (int64_t r = 0; r < rows; ++r) {
          const Real* drow = d.v.data() + r * cols;
          const Real* xh = n.aux.v.data() + r * cols;
          const Real istd = n.aux2.v[r];
          if (dg)
            for (int j = 0; j < cols; ++j) dg->v[j] += drow[j] * xh[j];
          if (db)
            for (int j = 0; j < cols; ++j) db->v[j] += drow[j];
          if (da) {
            Real m1 = 0, m2 = 0;
            for (int j = 0; j < cols; ++j) {
              const Real gj = drow[j] * tg.v[j];
              m1 += gj;
              m2 += gj * xh[j];
            }
            m1 /= cols;
            m2 /= cols;
            Real* garow = da->v.data() + r * cols;
            for (int j = 0; j < cols; ++j) {
              const Real gj = drow[j] * tg.v[j];
              garow[j] += istd * (gj - m1 - xh[j] * m2);
            }
          }
        }
        return;
      }
      case Op::Softmax: {
        if (auto* g = grad_into(n.parent[0])) {
          const auto& y = n.value;
          const int cols = d.shape.last();
          const int64_t rows = d.size() / cols;
          for (int64_t r = 0; r < rows; ++r) {
            const Real* drow = d.v.data() + r * cols;
            const Real* yrow = y.v.data() + r * cols;
            Real s = 0;
            for (int j = 0; j < cols; ++j) s += drow[j] * yrow[j];
            Real* grow = g->v.data() + r * cols;
            for (int j = 0; j < cols; ++j)
              grow[j] += (drow[j] - s) * yrow[j];
          }
        }
        return;
      }
      case Op::LogSoftmax: {
        if (auto* g = grad_into(n.parent[0])) {
          const auto& y = n.value;
          const int cols = d.shape.last();
          const int64_t rows = d.size() / cols;
          for (int64_t r = 0; r < rows; ++r) {
            const Real* drow = d.v.data() + r * cols;
            const Real* yrow = y.v.data() + r * cols;
            Real s = 0;
            for (int j = 0; j < cols; ++j) s += drow[j];
            Real* grow = g->v.data() + r * cols;
            for (int j = 0; j < cols; ++j)
              grow[j] += drow[j] - std::exp(yrow[j]) * s;
          }
        }
        return;
      }
      case Op::Dropout: {
        if (auto* g = grad_into(n.parent[0]))
          for (int64_t i = 0; i < d.size(); ++i)
            g->v[i] += d.v[i] * n.aux.v[i];
        return;
      }
      case Op::Embedding: {
        if (auto* g = grad_into(n.parent[0])) {
          const int cols = d.dim(1);
          for (size_t i = 0; i < n.ids.size(); ++i) {
            Real* grow = g->v.data() + static_cast<size_t>(n.ids[i]) * cols;
            const Real* drow = d.v.data() + i * cols;
            for (int j = 0; j < cols; ++j) grow[j] += drow[j];
          }
        }
        return;
      }
      case Op::SplitHeads: {
        if (auto* g = grad_into(n.parent[0])) {
          const int H = d.dim(0), L = d.dim(1), dh = d.dim(2);
          for (int h = 0; h < H; ++h)
            for (int l = 0; l < L; ++l) {
              const Real* src =
                  d.v.data() + (static_cast<size_t>(h) * L + l) * dh;
              Real* dst =
                  g->v.data() + (static_cast<size_t>(l) * H + h) * dh;
              for (int c = 0; c < dh; ++c) dst[c] += src[c];
            }
        }
        return;
      }
      case Op::MergeHeads: {
        if (auto* g = grad_into(n.parent[0])) {
          const int H = g->dim(0), L = g->dim(1), dh = g->dim(2);
          for (int h = 0; h < H; ++h)
            for (int l = 0; l < L; ++l) {
              const Real* src =
                  d.v.data() + (static_cast<size_t>(l) * H + h) * dh;
              Real* dst =
                  g->v.data() + (static_cast<size_t>(h) * L + l) * dh;
              for (int c = 0; c < dh; ++c) dst[c] += src[c];
            }
        }
        return;
      }
      case Op::Attention: {
        const auto& tq = value(n.parent[0]);
        const auto& tk = value(n.parent[1]);
        const auto& tv = value(n.parent[2]);
        const int H = tq.dim(0), lq = tq.dim(1), lk = tk.dim(1),
                  dh = tq.dim(2);
        Tensor<Real>* dq = grad_into(n.parent[0]);
        Tensor<Real>* dk = grad_into(n.parent[1]);
        Tensor<Real>* dv = grad_into(n.parent[2]);
        std::vector<Real> dA(static_cast<size_t>(lq) * lk);
        std::vector<Real> dS(static_cast<size_t>(lq) * lk);
        for (int h = 0; h < H; ++h) {
          const size_t off_q = static_cast<size_t>(h) * lq * dh;
          const size_t off_k = static_cast<size_t>(h) * lk * dh;
          const size_t off_a = static_cast<size_t>(h) * lq * lk;
          const Real* ah = n.aux.v.data() + off_a;
          const Real* dout = d.v.data() + off_q;
          if (dv)
            gemm_tn(ah, dout, dv->v.data() + off_k, lq, lk, dh);
          if (dq || dk) {
            std::fill(dA.begin(), dA.end(), Real(0));
            gemm_nt(dout, tv.v.data() + off_k, dA.data(), lq, dh, lk);
            for (int i = 0; i < lq; ++i) {
              const Real* arow = ah + static_cast<size_t>(i) * lk;
              const Real* darow = dA.data() + static_cast<size_t>(i) * lk;
              Real s = 0;
              for (int j = 0; j < lk; ++j) s += darow[j] * arow[j];
              Real* dsrow = dS.data() + static_cast<size_t>(i) * lk;
              for (int j = 0; j < lk; ++j)
                dsrow[j] = (darow[j] - s) * arow[j] * n.r0;
            }
            if (dq)
              gemm_nn(dS.data(), tk.v.data() + off_k, dq->v.data() + off_q,
                      lq, lk, dh);
            if (dk)
              gemm_tn(dS.data(), tq.v.data() + off_q, dk->v.data() + off_k,
                      lq, lk, dh);
          }
        }
        return;
      }
      case Op::SmoothedNll: {
        if (auto* g = grad_into(n.parent[0])) {
          const int V = g->dim(1);
          const Real dl = d.v[0];
          const Real uniform = n.r0 / static_cast<Real>(V);
          for (size_t i = 0; i < n.ids.size(); ++i) {
            if (n.ids[i] == n.i0) continue;
            Real* grow = g->v.data() + i * V;
            for (int j = 0; j < V; ++j)
              grow[j] -= dl * uniform / n.r1;
            grow[n.ids[i]] -= dl * (Real(1) - n.r0) / n.r1;
          }
        }
        return;
      }
      case Op::Dot: {
        if (auto* g = grad_into(n.parent[0])) {
          const Real dl = d.v[0];
          for (int64_t i = 0; i < g->size(); ++i)
            g->v[i] += dl * n.aux2.v[i];
        }
        return;
      }
      case Op::ReduceSum: {
        if (auto* g = grad_into(n.parent[0])) {
          const Real dl = d.v[0];
          for (auto& x : g->v) x += dl;
        }
        return;
      }
    }
  }
};

}  // namespace lexstress::nn
