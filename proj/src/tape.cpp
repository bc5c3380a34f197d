#include "spe/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spe/kernels.hpp"

namespace spe {

namespace detail {

void Node::accumulate(const Tensor& g) {
  check(g.same_shape(value), "gradient shape mismatch");
  if (!has_grad) {
    grad = g;  // first touch: assign instead of zero-fill-and-add
    has_grad = true;
    return;
  }
  grad.add_scaled(g, 1.0);
}

Tensor& Node::grad_ref() {
  if (!has_grad) {
    grad = Tensor::zeros(value.shape());
    has_grad = true;
  }
  return grad;
}

}  // namespace detail

namespace {
// Loops below this size are not worth an OpenMP region.
constexpr int64_t kParallelCutoff = 16384;
}  // namespace

const Tensor& Var::grad() const {
  check(node_ && node_->has_grad, "variable has no gradient");
  return node_->grad;
}

Tensor* GradMap::find(const Parameter& p) {
  for (auto& [param, g] : entries) {
    if (param == &p) return &g;
  }
  return nullptr;
}

const Tensor* GradMap::find(const Parameter& p) const {
  for (const auto& [param, g] : entries) {
    if (param == &p) return &g;
  }
  return nullptr;
}

double GradMap::global_norm() const {
  double s = 0;
  for (const auto& [param, g] : entries) s += g.squared_norm();
  return std::sqrt(s);
}

void GradMap::scale(double s) {
  for (auto& [param, g] : entries) {
    double* d = g.data();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) d[i] *= s;
  }
}

Tape::NodePtr Tape::make_node(Tensor value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var Tape::param(Parameter& p) {
  // One leaf per parameter per tape; repeated use shares the node so that
  // gradients from every use site accumulate into one array (weight tying).
  for (const auto& leaf : leaves_) {
    if (leaf->param == &p) return Var(leaf);
  }
  auto n = make_node(p.value, true);
  n->param = &p;
  leaves_.push_back(n);
  return Var(n);
}

Var Tape::input(Tensor v) { return Var(make_node(std::move(v), false)); }

Var Tape::unary(Var a, Tensor value, std::function<void(detail::Node&, detail::Node&)> back) {
  const bool rg = a.requires_grad();
  auto out = make_node(std::move(value), rg);
  if (rg) {
    ops_.push_back([an = a.node_, on = out, back = std::move(back)]() {
      if (on->has_grad) back(*an, *on);
    });
  }
  return Var(out);
}

Var Tape::binary(Var a, Var b, Tensor value,
                 std::function<void(detail::Node&, detail::Node&, detail::Node&)> back) {
  const bool rg = a.requires_grad() || b.requires_grad();
  auto out = make_node(std::move(value), rg);
  if (rg) {
    ops_.push_back([an = a.node_, bn = b.node_, on = out, back = std::move(back)]() {
      if (on->has_grad) back(*an, *bn, *on);
    });
  }
  return Var(out);
}

Var Tape::add(Var a, Var b) {
  check(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out = a.value();
  out.add_scaled(b.value(), 1.0);
  return binary(a, b, std::move(out), [](detail::Node& an, detail::Node& bn, detail::Node& on) {
    if (an.requires_grad) an.accumulate(on.grad);
    if (bn.requires_grad) bn.accumulate(on.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  check(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor out = a.value();
  out.add_scaled(b.value(), -1.0);
  return binary(a, b, std::move(out), [](detail::Node& an, detail::Node& bn, detail::Node& on) {
    if (an.requires_grad) an.accumulate(on.grad);
    if (bn.requires_grad) bn.grad_ref().add_scaled(on.grad, -1.0);
  });
}

Var Tape::mul(Var a, Var b) {
  check(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out = a.value();
  {
    double* d = out.data();
    const double* bv = b.value().data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] *= bv[i];
  }
  return binary(a, b, std::move(out), [](detail::Node& an, detail::Node& bn, detail::Node& on) {
    const double* g = on.grad.data();
    const int64_t n = on.grad.numel();
    if (an.requires_grad) {
      double* ag = an.grad_ref().data();
      const double* bv = bn.value.data();
      for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * bv[i];
    }
    if (bn.requires_grad) {
      double* bg = bn.grad_ref().data();
      const double* av = an.value.data();
      for (int64_t i = 0; i < n; ++i) bg[i] += g[i] * av[i];
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = a.value();
  {
    double* d = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] *= s;
  }
  return unary(a, std::move(out), [s](detail::Node& an, detail::Node& on) {
    an.grad_ref().add_scaled(on.grad, s);
  });
}

Var Tape::add_const(Var a, double c) {
  Tensor out = a.value();
  {
    double* d = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] += c;
  }
  return unary(a, std::move(out), [](detail::Node& an, detail::Node& on) {
    an.accumulate(on.grad);
  });
}

namespace {
double sigmoid_val(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_val(double x) {
  // log(1 + e^x), stable on both tails
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}
}  // namespace

Var Tape::sigmoid(Var a) {
  Tensor out = a.value();
  {
    double* d = out.data();
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) d[i] = sigmoid_val(d[i]);
  }
  return unary(a, std::move(out), [](detail::Node& an, detail::Node& on) {
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    const double* y = on.value.data();
    const int64_t n = on.value.numel();
    for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var Tape::tanh(Var a) {
  Tensor out = a.value();
  {
    double* d = out.data();
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) d[i] = std::tanh(d[i]);
  }
  return unary(a, std::move(out), [](detail::Node& an, detail::Node& on) {
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    const double* y = on.value.data();
    const int64_t n = on.value.numel();
    for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::softplus(Var a) {
  Tensor out = a.value();
  {
    double* d = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) d[i] = softplus_val(d[i]);
  }
  return unary(a, std::move(out), [](detail::Node& an, detail::Node& on) {
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    const double* x = an.value.data();
    const int64_t n = an.value.numel();
    for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * sigmoid_val(x[i]);
  });
}

Var Tape::detach(Var a) { return input(a.value()); }

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  check(!(trans_a && trans_b), "matmul: both operands transposed is unsupported");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check(av.rank() == 2 && bv.rank() == 2, "matmul: rank-2 tensors required");
  const int64_t m = trans_a ? av.cols() : av.rows();
  const int64_t k = trans_a ? av.rows() : av.cols();
  const int64_t kb = trans_b ? bv.cols() : bv.rows();
  const int64_t n = trans_b ? bv.rows() : bv.cols();
  check(k == kb, "matmul: inner dimensions disagree: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));

  Tensor out({m, n});
  if (trans_a) {
    mm_tn(av.data(), bv.data(), out.data(), m, k, n);
  } else if (trans_b) {
    mm_nt(av.data(), bv.data(), out.data(), m, k, n);
  } else {
    mm_nn(av.data(), bv.data(), out.data(), m, k, n);
  }

  return binary(a, b, std::move(out),
                [m, k, n, trans_a, trans_b](detail::Node& an, detail::Node& bn, detail::Node& on) {
    const Tensor& g = on.grad;
    if (an.requires_grad) {
      Tensor& ag = an.grad_ref();
      if (!trans_a) {
        // dA += dC * op(B)^T
        if (!trans_b) {
          mm_nt(g.data(), bn.value.data(), ag.data(), m, n, k);
        } else {
          mm_nn(g.data(), bn.value.data(), ag.data(), m, n, k);
        }
      } else {
        // A is [k x m] used transposed: dA += op(B) * dC^T = (dC^T * B^T)^T
        // computed directly as dA[p, i] += sum_j B[p, j] * dC[i, j]
        if (!trans_b) {
          mm_nt(bn.value.data(), g.data(), ag.data(), k, n, m);
        }
      }
    }
    if (bn.requires_grad) {
      Tensor& bg = bn.grad_ref();
      if (!trans_b) {
        // dB += op(A)^T * dC
        if (!trans_a) {
          mm_tn(an.value.data(), g.data(), bg.data(), k, m, n);
        } else {
          mm_nn(an.value.data(), g.data(), bg.data(), k, m, n);
        }
      } else {
        // B is [n x k] used transposed: dB[j, p] += sum_i dC[i, j] * A[i, p]
        mm_tn(g.data(), an.value.data(), bg.data(), n, m, k);
      }
    }
  });
}

Var Tape::linear2(Var x, Var wx, Var h, Var wh, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& hv = h.value();
  const Tensor& wxv = wx.value();
  const Tensor& whv = wh.value();
  const Tensor& bv = bias.value();
  check(xv.rank() == 2 && hv.rank() == 2 && xv.rows() == hv.rows(), "linear2: row mismatch");
  check(wxv.rank() == 2 && whv.rank() == 2 && wxv.cols() == whv.cols(), "linear2: output width mismatch");
  check(xv.cols() == wxv.rows() && hv.cols() == whv.rows(), "linear2: inner dimensions disagree");
  const int64_t m = xv.rows(), n = wxv.cols();
  check(bv.numel() == n, "linear2: bias length mismatch");

  Tensor out({m, n});
  {
    double* d = out.data();
    const double* b = bv.data();
#pragma omp parallel for schedule(static) if (m * n >= kParallelCutoff)
    for (int64_t r = 0; r < m; ++r) {
      for (int64_t c = 0; c < n; ++c) d[r * n + c] = b[c];
    }
  }
  mm_nn(xv.data(), wxv.data(), out.data(), m, xv.cols(), n);
  mm_nn(hv.data(), whv.data(), out.data(), m, hv.cols(), n);

  const bool rg = x.requires_grad() || wx.requires_grad() || h.requires_grad() ||
                  wh.requires_grad() || bias.requires_grad();
  auto node = make_node(std::move(out), rg);
  if (rg) {
    ops_.push_back([xn = x.node_, wxn = wx.node_, hn = h.node_, whn = wh.node_, bn = bias.node_,
                    on = node, m, n]() {
      if (!on->has_grad) return;
      const Tensor& g = on->grad;
      if (xn->requires_grad) {
        mm_nt(g.data(), wxn->value.data(), xn->grad_ref().data(), m, n, xn->value.cols());
      }
      if (wxn->requires_grad) {
        mm_tn(xn->value.data(), g.data(), wxn->grad_ref().data(), xn->value.cols(), m, n);
      }
      if (hn->requires_grad) {
        mm_nt(g.data(), whn->value.data(), hn->grad_ref().data(), m, n, hn->value.cols());
      }
      if (whn->requires_grad) {
        mm_tn(hn->value.data(), g.data(), whn->grad_ref().data(), hn->value.cols(), m, n);
      }
      if (bn->requires_grad) {
        double* bg = bn->grad_ref().data();
        const double* gd = g.data();
        for (int64_t r = 0; r < m; ++r) {
          for (int64_t c = 0; c < n; ++c) bg[c] += gd[r * n + c];
        }
      }
    });
  }
  return Var(node);
}

std::pair<Var, Var> Tape::lstm_cell(Var gates, Var c_prev) {
  const Tensor& gv = gates.value();
  const Tensor& cv = c_prev.value();
  check(gv.rank() == 2 && cv.rank() == 2 && gv.rows() == cv.rows() && gv.cols() == 4 * cv.cols(),
        "lstm_cell: gates must be [R x 4H] against cell [R x H]");
  const int64_t rows = gv.rows(), hidden = cv.cols();

  // activations stored for the backward pass: sigma(i), sigma(f), tanh(g),
  // sigma(o) packed like the gates, plus tanh(c)
  auto saved = std::make_shared<std::pair<Tensor, Tensor>>(Tensor({rows, 4 * hidden}), Tensor({rows, hidden}));
  Tensor h_out({rows, hidden});
  Tensor c_out({rows, hidden});
  {
    Tensor& acts = saved->first;
    Tensor& tanh_c = saved->second;
#pragma omp parallel for schedule(static) if (rows * hidden >= kParallelCutoff / 4)
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = gv.data() + r * 4 * hidden;
      double* a = acts.data() + r * 4 * hidden;
      const double* cp = cv.data() + r * hidden;
      double* co = c_out.data() + r * hidden;
      double* ho = h_out.data() + r * hidden;
      double* tc = tanh_c.data() + r * hidden;
      for (int64_t k = 0; k < hidden; ++k) {
        const double ai = sigmoid_val(g[k]);
        const double af = sigmoid_val(g[hidden + k]);
        const double ag = std::tanh(g[2 * hidden + k]);
        const double ao = sigmoid_val(g[3 * hidden + k]);
        a[k] = ai;
        a[hidden + k] = af;
        a[2 * hidden + k] = ag;
        a[3 * hidden + k] = ao;
        const double c = af * cp[k] + ai * ag;
        co[k] = c;
        const double t = std::tanh(c);
        tc[k] = t;
        ho[k] = ao * t;
      }
    }
  }

  const bool rg = gates.requires_grad() || c_prev.requires_grad();
  auto h_node = make_node(std::move(h_out), rg);
  auto c_node = make_node(std::move(c_out), rg);
  if (rg) {
    ops_.push_back([gn = gates.node_, cpn = c_prev.node_, hn = h_node, cn = c_node, saved, rows,
                    hidden]() {
      if (!hn->has_grad && !cn->has_grad) return;
      const double* dh = hn->has_grad ? hn->grad.data() : nullptr;
      const double* dc_ext = cn->has_grad ? cn->grad.data() : nullptr;
      const Tensor& acts = saved->first;
      const Tensor& tanh_c = saved->second;
      double* dg = gn->requires_grad ? gn->grad_ref().data() : nullptr;
      double* dcp = cpn->requires_grad ? cpn->grad_ref().data() : nullptr;
#pragma omp parallel for schedule(static) if (rows * hidden >= kParallelCutoff / 4)
      for (int64_t r = 0; r < rows; ++r) {
        const double* a = acts.data() + r * 4 * hidden;
        const double* tc = tanh_c.data() + r * hidden;
        const double* cp = cpn->value.data() + r * hidden;
        for (int64_t k = 0; k < hidden; ++k) {
          const double ai = a[k], af = a[hidden + k], ag = a[2 * hidden + k], ao = a[3 * hidden + k];
          const double dh_k = dh ? dh[r * hidden + k] : 0.0;
          double dc = dc_ext ? dc_ext[r * hidden + k] : 0.0;
          dc += dh_k * ao * (1.0 - tc[k] * tc[k]);
          if (dg) {
            double* dgr = dg + r * 4 * hidden;
            dgr[k] += dc * ag * ai * (1.0 - ai);                       // input gate
            dgr[hidden + k] += dc * cp[k] * af * (1.0 - af);           // forget gate
            dgr[2 * hidden + k] += dc * ai * (1.0 - ag * ag);          // cell candidate
            dgr[3 * hidden + k] += dh_k * tc[k] * ao * (1.0 - ao);     // output gate
          }
          if (dcp) dcp[r * hidden + k] += dc * af;
        }
      }
    });
  }
  return {Var(h_node), Var(c_node)};
}

Var Tape::add_row(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  check(av.rank() == 2 && bv.numel() == av.cols(), "add_row: bias length must equal column count");
  Tensor out = av;
  {
    const int64_t rows = av.rows(), cols = av.cols();
    double* d = out.data();
    const double* b = bv.data();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) d[r * cols + c] += b[c];
    }
  }
  return binary(a, bias, std::move(out), [](detail::Node& an, detail::Node& bn, detail::Node& on) {
    const int64_t rows = on.value.rows(), cols = on.value.cols();
    const double* g = on.grad.data();
    if (an.requires_grad) an.accumulate(on.grad);
    if (bn.requires_grad) {
      double* bg = bn.grad_ref().data();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) bg[c] += g[r * cols + c];
      }
    }
  });
}

Var Tape::slice_cols(Var a, int64_t c0, int64_t c1) {
  const Tensor& av = a.value();
  check(av.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= av.cols(), "slice_cols: bad range");
  const int64_t rows = av.rows(), cols = av.cols(), w = c1 - c0;
  Tensor out({rows, w});
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = av.data() + r * cols + c0;
    double* dst = out.data() + r * w;
    std::copy(src, src + w, dst);
  }
  return unary(a, std::move(out), [c0, w](detail::Node& an, detail::Node& on) {
    const int64_t rows = an.value.rows(), cols = an.value.cols();
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < w; ++c) ag[r * cols + c0 + c] += g[r * w + c];
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const int64_t cols = parts[0].value().cols();
  int64_t rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check(p.value().rank() <= 2 && p.value().cols() == cols, "concat_rows: column mismatch");
    rows += p.value().rows();
    rg = rg || p.requires_grad();
  }
  Tensor out({rows, cols});
  {
    double* dst = out.data();
    for (const auto& p : parts) {
      const Tensor& v = p.value();
      std::copy(v.data(), v.data() + v.numel(), dst);
      dst += v.numel();
    }
  }
  auto node = make_node(std::move(out), rg);
  if (rg) {
    std::vector<NodePtr> srcs;
    srcs.reserve(parts.size());
    for (const auto& p : parts) srcs.push_back(p.node_);
    ops_.push_back([srcs, on = node]() {
      if (!on->has_grad) return;
      const double* g = on->grad.data();
      for (const auto& s : srcs) {
        const int64_t n = s->value.numel();
        if (s->requires_grad) {
          double* sg = s->grad_ref().data();
          for (int64_t i = 0; i < n; ++i) sg[i] += g[i];
        }
        g += n;
      }
    });
  }
  return Var(node);
}

Var Tape::gather_rows(Var a, std::vector<int64_t> rows) {
  const Tensor& av = a.value();
  const int64_t src_rows = av.rows(), cols = av.cols();
  for (int64_t r : rows) check(0 <= r && r < src_rows, "gather_rows: index out of range");
  Tensor out({static_cast<int64_t>(rows.size()), cols});
  for (size_t i = 0; i < rows.size(); ++i) {
    const double* src = av.data() + rows[i] * cols;
    std::copy(src, src + cols, out.data() + static_cast<int64_t>(i) * cols);
  }
  return unary(a, std::move(out), [rows = std::move(rows)](detail::Node& an, detail::Node& on) {
    const int64_t cols = an.value.cols();
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    for (size_t i = 0; i < rows.size(); ++i) {
      double* dst = ag + rows[i] * cols;
      const double* src = g + static_cast<int64_t>(i) * cols;
      for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var Tape::concat_vec(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_vec: empty input");
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check(p.value().rank() == 1, "concat_vec: rank-1 required");
    total += p.value().numel();
    rg = rg || p.requires_grad();
  }
  Tensor out({total});
  {
    double* dst = out.data();
    for (const auto& p : parts) {
      const Tensor& v = p.value();
      std::copy(v.data(), v.data() + v.numel(), dst);
      dst += v.numel();
    }
  }
  auto node = make_node(std::move(out), rg);
  if (rg) {
    std::vector<NodePtr> srcs;
    srcs.reserve(parts.size());
    for (const auto& p : parts) srcs.push_back(p.node_);
    ops_.push_back([srcs, on = node]() {
      if (!on->has_grad) return;
      const double* g = on->grad.data();
      for (const auto& s : srcs) {
        const int64_t n = s->value.numel();
        if (s->requires_grad) {
          double* sg = s->grad_ref().data();
          for (int64_t i = 0; i < n; ++i) sg[i] += g[i];
        }
        g += n;
      }
    });
  }
  return Var(node);
}

Var Tape::gather_vec(Var v, std::vector<int64_t> idx) {
  const Tensor& vv = v.value();
  check(vv.rank() == 1, "gather_vec: rank-1 required");
  const int64_t n = vv.numel();
  Tensor out({static_cast<int64_t>(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) {
    check(0 <= idx[i] && idx[i] < n, "gather_vec: index out of range");
    out[static_cast<int64_t>(i)] = vv[idx[i]];
  }
  return unary(v, std::move(out), [idx = std::move(idx)](detail::Node& an, detail::Node& on) {
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    for (size_t i = 0; i < idx.size(); ++i) ag[idx[i]] += g[i];
  });
}

Var Tape::div_by_col(Var a, Var col) {
  const Tensor& av = a.value();
  const Tensor& cv = col.value();
  check(av.rank() == 2 && cv.numel() == av.rows(), "div_by_col: column vector length must equal row count");
  const int64_t rows = av.rows(), cols = av.cols();
  Tensor out = av;
  for (int64_t r = 0; r < rows; ++r) {
    const double inv = 1.0 / cv[r];
    double* d = out.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) d[c] *= inv;
  }
  return binary(a, col, std::move(out), [](detail::Node& an, detail::Node& cn, detail::Node& on) {
    const int64_t rows = on.value.rows(), cols = on.value.cols();
    const double* g = on.grad.data();
    const double* x = an.value.data();
    const double* t = cn.value.data();
    if (an.requires_grad) {
      double* ag = an.grad_ref().data();
      for (int64_t r = 0; r < rows; ++r) {
        const double inv = 1.0 / t[r];
        for (int64_t c = 0; c < cols; ++c) ag[r * cols + c] += g[r * cols + c] * inv;
      }
    }
    if (cn.requires_grad) {
      double* cg = cn.grad_ref().data();
      for (int64_t r = 0; r < rows; ++r) {
        const double inv2 = 1.0 / (t[r] * t[r]);
        double s = 0;
        for (int64_t c = 0; c < cols; ++c) s += g[r * cols + c] * x[r * cols + c];
        cg[r] -= s * inv2;
      }
    }
  });
}

Var Tape::log_softmax_rows(Var a) {
  const Tensor& av = a.value();
  check(av.rank() == 2, "log_softmax_rows: rank-2 required");
  const int64_t rows = av.rows(), cols = av.cols();
  Tensor out = av;
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelCutoff)
  for (int64_t r = 0; r < rows; ++r) {
    double* d = out.data() + r * cols;
    double mx = d[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, d[c]);
    double s = 0;
    for (int64_t c = 0; c < cols; ++c) s += std::exp(d[c] - mx);
    const double lse = mx + std::log(s);
    for (int64_t c = 0; c < cols; ++c) d[c] -= lse;
  }
  return unary(a, std::move(out), [](detail::Node& an, detail::Node& on) {
    const int64_t rows = on.value.rows(), cols = on.value.cols();
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    const double* y = on.value.data();
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelCutoff)
    for (int64_t r = 0; r < rows; ++r) {
      double gsum = 0;
      for (int64_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
      for (int64_t c = 0; c < cols; ++c) {
        ag[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gsum;
      }
    }
  });
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
  check(0.0 <= rate && rate < 1.0, "dropout: rate must be in [0, 1)");
  const int64_t n = a.value().numel();
  Tensor mask(a.value().shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int64_t i = 0; i < n; ++i) mask[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
  return mul(a, input(std::move(mask)));
}

Var Tape::pick(Var a, std::vector<std::pair<int64_t, int64_t>> entries) {
  const Tensor& av = a.value();
  check(av.rank() == 2, "pick: rank-2 required");
  const int64_t rows = av.rows(), cols = av.cols();
  Tensor out({static_cast<int64_t>(entries.size())});
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    check(0 <= r && r < rows && 0 <= c && c < cols, "pick: index out of range");
    out[static_cast<int64_t>(i)] = av.at(r, c);
  }
  return unary(a, std::move(out), [entries = std::move(entries)](detail::Node& an, detail::Node& on) {
    const int64_t cols = an.value.cols();
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    for (size_t i = 0; i < entries.size(); ++i) {
      ag[entries[i].first * cols + entries[i].second] += g[i];
    }
  });
}

Var Tape::sum(Var a) {
  double s = 0;
  const double* d = a.value().data();
  const int64_t n = a.value().numel();
  for (int64_t i = 0; i < n; ++i) s += d[i];
  return unary(a, Tensor::scalar(s), [](detail::Node& an, detail::Node& on) {
    const double g = on.grad[0];
    double* ag = an.grad_ref().data();
    const int64_t n = an.value.numel();
    for (int64_t i = 0; i < n; ++i) ag[i] += g;
  });
}

Var Tape::mean(Var a) {
  const int64_t n = a.value().numel();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Tape::segment_sum(Var v, std::vector<int64_t> seg, int64_t nseg) {
  const Tensor& vv = v.value();
  check(vv.rank() == 1 && static_cast<int64_t>(seg.size()) == vv.numel(), "segment_sum: segment map size mismatch");
  Tensor out({nseg});
  for (int64_t i = 0; i < vv.numel(); ++i) {
    check(0 <= seg[static_cast<size_t>(i)] && seg[static_cast<size_t>(i)] < nseg, "segment_sum: segment out of range");
    out[seg[static_cast<size_t>(i)]] += vv[i];
  }
  return unary(v, std::move(out), [seg = std::move(seg)](detail::Node& an, detail::Node& on) {
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    for (size_t i = 0; i < seg.size(); ++i) ag[i] += g[seg[i]];
  });
}

Var Tape::logsumexp_segments(Var v, std::vector<int64_t> seg, int64_t nseg) {
  const Tensor& vv = v.value();
  check(vv.rank() == 1 && static_cast<int64_t>(seg.size()) == vv.numel(), "logsumexp_segments: segment map size mismatch");
  const int64_t n = vv.numel();
  std::vector<double> mx(static_cast<size_t>(nseg), -std::numeric_limits<double>::infinity());
  for (int64_t i = 0; i < n; ++i) mx[static_cast<size_t>(seg[static_cast<size_t>(i)])] =
      std::max(mx[static_cast<size_t>(seg[static_cast<size_t>(i)])], vv[i]);
  Tensor out({nseg});
  for (int64_t s = 0; s < nseg; ++s) check(std::isfinite(mx[static_cast<size_t>(s)]), "logsumexp_segments: empty segment");
  std::vector<double> acc(static_cast<size_t>(nseg), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const auto s = static_cast<size_t>(seg[static_cast<size_t>(i)]);
    acc[s] += std::exp(vv[i] - mx[s]);
  }
  for (int64_t s = 0; s < nseg; ++s) out[s] = mx[static_cast<size_t>(s)] + std::log(acc[static_cast<size_t>(s)]);
  return unary(v, std::move(out), [seg = std::move(seg)](detail::Node& an, detail::Node& on) {
    double* ag = an.grad_ref().data();
    const double* g = on.grad.data();
    const double* lse = on.value.data();
    const double* x = an.value.data();
    for (size_t i = 0; i < seg.size(); ++i) {
      ag[i] += g[seg[i]] * std::exp(x[i] - lse[seg[i]]);
    }
  });
}

GradMap Tape::backward(const Var& loss) {
  check(!consumed_, "tape already consumed: backward may run once per forward pass");
  check(loss.valid() && loss.value().numel() == 1, "backward: loss must be a scalar");
  consumed_ = true;

  if (loss.node_->requires_grad) {
    loss.node_->grad_ref()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  GradMap out;
  out.entries.reserve(leaves_.size());
  for (const auto& leaf : leaves_) {
    Tensor g = leaf->has_grad ? leaf->grad : Tensor::zeros(leaf->value.shape());
    check(g.all_finite(), "non-finite gradient for parameter " + leaf->param->name);
    out.entries.emplace_back(leaf->param, std::move(g));
  }
  return out;
}

}  // namespace spe
