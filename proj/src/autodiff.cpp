#include "levo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "levo/kernels.hpp"

namespace levo::ad {

namespace {

template <typename T>
void transpose(const T* src, std::int64_t rows, std::int64_t cols, std::vector<T>& dst) {
  dst.resize(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// dx[n, in] += dy[n, out] * w[in, out]^T
template <typename T>
void accumulate_input_grad(const T* dy, std::int64_t n, std::int64_t out, const T* w,
                           std::int64_t in, T* dx) {
  std::vector<T> wt;
  transpose(w, in, out, wt);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* dyr = dy + i * out;
    T* dxr = dx + i * in;
    for (std::int64_t j = 0; j < out; ++j) {
      const T a = dyr[j];
      if (a == T(0)) continue;
      const T* wr = wt.data() + j * in;
      for (std::int64_t p = 0; p < in; ++p) dxr[p] += a * wr[p];
    }
  }
}

// dw[in, out] += x[n, in]^T * dy[n, out]
template <typename T>
void accumulate_weight_grad(const T* x, std::int64_t n, std::int64_t in, const T* dy,
                            std::int64_t out, T* dw) {
  for (std::int64_t i = 0; i < n; ++i) {
    const T* xr = x + i * in;
    const T* dyr = dy + i * out;
    for (std::int64_t p = 0; p < in; ++p) {
      const T a = xr[p];
      if (a == T(0)) continue;
      T* dwr = dw + p * out;
      for (std::int64_t j = 0; j < out; ++j) dwr[j] += a * dyr[j];
    }
  }
}

std::int64_t dim(const Shape& s, std::size_t i) { return i < s.size() ? s[i] : 1; }

}  // namespace

template <typename T>
Var Graph<T>::constant(BasicTensor<T> t) {
  Node n;
  n.shape = std::move(t.shape);
  n.value = std::move(t.data);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int64_t>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::constant(Shape shape, std::vector<T> values) {
  return constant(BasicTensor<T>(std::move(shape), std::move(values)));
}

template <typename T>
Var Graph<T>::parameter(const BasicParamStore<T>& store, const std::string& name) {
  if (auto it = params_.find(name); it != params_.end()) return it->second;
  const auto& t = store.at(name);
  Node n;
  n.shape = t.shape;
  n.value = t.data;
  n.needs_grad = grad_enabled_ && !store.is_frozen(name);
  n.param = name;
  nodes_.push_back(std::move(n));
  Var v{static_cast<std::int64_t>(nodes_.size()) - 1};
  params_.emplace(name, v);
  return v;
}

template <typename T>
Var Graph<T>::make(Shape shape, std::vector<T> value, std::initializer_list<Var> inputs) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  if (grad_enabled_)
    for (Var in : inputs)
      if (in.valid() && node(in).needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int64_t>(nodes_.size()) - 1};
}

template <typename T>
T Graph<T>::scalar(Var v) const {
  check(node(v).value.size() == 1, ErrorCode::kShapeMismatch, "scalar() on non-scalar node");
  return node(v).value[0];
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  check(node(loss).shape.empty() && node(loss).value.size() == 1, ErrorCode::kShapeMismatch,
        "backward requires a 0-dimensional loss, got shape " + shape_str(node(loss).shape));
  if (!node(loss).needs_grad) return;
  grad_buffer(loss)[0] = T(1);
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this);
  }
}

template <typename T>
GradMap<T> grad(Graph<T>& g, Var loss, const BasicParamStore<T>& params) {
  g.backward(loss);
  GradMap<T> out;
  for (const auto& [name, t] : params.tensors()) {
    if (params.is_frozen(name)) continue;
    BasicTensor<T> gt(t.shape);
    auto it = g.bound_params().find(name);
    if (it != g.bound_params().end() && !g.node(it->second).grad.empty())
      gt.data = g.node(it->second).grad;
    out.emplace(name, std::move(gt));
  }
  return out;
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  check(g.shape(a) == g.shape(b), ErrorCode::kShapeMismatch,
        "add: " + shape_str(g.shape(a)) + " vs " + shape_str(g.shape(b)));
  std::vector<T> v = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  Var out = g.make(g.shape(a), std::move(v), {a, b});
  if (g.needs_grad(out))
    g.set_backward(out, [a, b, out](Graph<T>& gr) {
      for (Var in : {a, b}) {
        if (!gr.needs_grad(in)) continue;
        auto& gi = gr.grad_buffer(in);
        const auto& go = gr.node(out).grad;
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
      }
    });
  return out;
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  check(g.shape(a) == g.shape(b), ErrorCode::kShapeMismatch, "sub: shape mismatch");
  std::vector<T> v = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  Var out = g.make(g.shape(a), std::move(v), {a, b});
  if (g.needs_grad(out))
    g.set_backward(out, [a, b, out](Graph<T>& gr) {
      const auto& go = gr.node(out).grad;
      if (gr.needs_grad(a)) {
        auto& ga = gr.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
      if (gr.needs_grad(b)) {
        auto& gb = gr.grad_buffer(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
      }
    });
  return out;
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  check(g.shape(a) == g.shape(b), ErrorCode::kShapeMismatch, "mul: shape mismatch");
  std::vector<T> v = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  Var out = g.make(g.shape(a), std::move(v), {a, b});
  if (g.needs_grad(out))
    g.set_backward(out, [a, b, out](Graph<T>& gr) {
      const auto& go = gr.node(out).grad;
      if (gr.needs_grad(a)) {
        auto& ga = gr.grad_buffer(a);
        const auto& bv = gr.value(b);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (gr.needs_grad(b)) {
        auto& gb = gr.grad_buffer(b);
        const auto& av = gr.value(a);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  return out;
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
  std::vector<T> v = g.value(a);
  for (auto& x : v) x *= s;
  Var out = g.make(g.shape(a), std::move(v), {a});
  if (g.needs_grad(out))
    g.set_backward(out, [a, out, s](Graph<T>& gr) {
      auto& ga = gr.grad_buffer(a);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * s;
    });
  return out;
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  T s = T(0);
  for (T x : g.value(a)) s += x;
  Var out = g.make(Shape{}, {s}, {a});
  if (g.needs_grad(out))
    g.set_backward(out, [a, out](Graph<T>& gr) {
      auto& ga = gr.grad_buffer(a);
      const T go = gr.node(out).grad[0];
      for (auto& x : ga) x += go;
    });
  return out;
}

template <typename T>
Var mean(Graph<T>& g, Var a) {
  const auto n = static_cast<T>(g.value(a).size());
  check(n > T(0), ErrorCode::kShapeMismatch, "mean of empty tensor");
  return scale(g, sum(g, a), T(1) / n);
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  return linear(g, a, b, Var{});
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(w);
  check(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[0], ErrorCode::kShapeMismatch,
        "linear: " + shape_str(xs) + " x " + shape_str(ws));
  const std::int64_t n = xs[0], in = xs[1], outd = ws[1];
  if (b.valid())
    check(g.shape(b).size() == 1 && g.shape(b)[0] == outd, ErrorCode::kShapeMismatch, "linear: bias shape");
  std::vector<T> y(static_cast<std::size_t>(n * outd));
  kernels::linear_rows(g.value(x).data(), n, in, g.value(w).data(),
                       b.valid() ? g.value(b).data() : nullptr, outd, y.data());
  Var out = g.make(Shape{n, outd}, std::move(y), {x, w, b});
  if (g.needs_grad(out))
    g.set_backward(out, [x, w, b, out, n, in, outd](Graph<T>& gr) {
      const auto& dy = gr.node(out).grad;
      if (gr.needs_grad(x))
        accumulate_input_grad(dy.data(), n, outd, gr.value(w).data(), in, gr.grad_buffer(x).data());
      if (gr.needs_grad(w))
        accumulate_weight_grad(gr.value(x).data(), n, in, dy.data(), outd, gr.grad_buffer(w).data());
      if (b.valid() && gr.needs_grad(b)) {
        auto& gb = gr.grad_buffer(b);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < outd; ++j) gb[j] += dy[i * outd + j];
      }
    });
  return out;
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  std::vector<T> v = g.value(x);
  for (auto& e : v) e = kernels::gelu(e);
  Var out = g.make(g.shape(x), std::move(v), {x});
  if (g.needs_grad(out))
    g.set_backward(out, [x, out](Graph<T>& gr) {
      auto& gx = gr.grad_buffer(x);
      const auto& xv = gr.value(x);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * kernels::gelu_grad(xv[i]);
    });
  return out;
}

template <typename T>
Var tanh(Graph<T>& g, Var x) {
  std::vector<T> v = g.value(x);
  for (auto& e : v) e = std::tanh(e);
  Var out = g.make(g.shape(x), std::move(v), {x});
  if (g.needs_grad(out))
    g.set_backward(out, [x, out](Graph<T>& gr) {
      auto& gx = gr.grad_buffer(x);
      const auto& yv = gr.value(out);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (T(1) - yv[i] * yv[i]);
    });
  return out;
}

template <typename T>
Var log_sigmoid(Graph<T>& g, Var x) {
  std::vector<T> v = g.value(x);
  // log sigma(x) = -softplus(-x), evaluated stably on both sides.
  for (auto& e : v) e = e >= T(0) ? -std::log1p(std::exp(-e)) : e - std::log1p(std::exp(e));
  Var out = g.make(g.shape(x), std::move(v), {x});
  if (g.needs_grad(out))
    g.set_backward(out, [x, out](Graph<T>& gr) {
      auto& gx = gr.grad_buffer(x);
      const auto& xv = gr.value(x);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        // d/dx log sigma(x) = sigma(-x)
        const T e = xv[i];
        const T s = e >= T(0) ? std::exp(-e) / (T(1) + std::exp(-e)) : T(1) / (T(1) + std::exp(e));
        gx[i] += go[i] * s;
      }
    });
  return out;
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta) {
  const Shape& xs = g.shape(x);
  check(xs.size() == 2, ErrorCode::kShapeMismatch, "layer_norm expects a matrix");
  const std::int64_t n = xs[0], d = xs[1];
  check(g.shape(gamma) == Shape{d} && g.shape(beta) == Shape{d}, ErrorCode::kShapeMismatch,
        "layer_norm: affine shape");
  std::vector<T> y(static_cast<std::size_t>(n * d));
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * d));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T* xv = g.value(x).data();
  for (std::int64_t i = 0; i < n; ++i)
    (*rstd)[i] = kernels::layer_norm_row(xv + i * d, d, g.value(gamma).data(), g.value(beta).data(),
                                         y.data() + i * d, xhat->data() + i * d);
  Var out = g.make(xs, std::move(y), {x, gamma, beta});
  if (g.needs_grad(out))
    g.set_backward(out, [x, gamma, beta, out, n, d, xhat, rstd](Graph<T>& gr) {
      const auto& dy = gr.node(out).grad;
      const auto& gv = gr.value(gamma);
      if (gr.needs_grad(gamma) || gr.needs_grad(beta)) {
        auto* gg = gr.needs_grad(gamma) ? gr.grad_buffer(gamma).data() : nullptr;
        auto* gb = gr.needs_grad(beta) ? gr.grad_buffer(beta).data() : nullptr;
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < d; ++j) {
            const T dyv = dy[i * d + j];
            if (gg) gg[j] += dyv * (*xhat)[i * d + j];
            if (gb) gb[j] += dyv;
          }
      }
      if (gr.needs_grad(x)) {
        auto& gx = gr.grad_buffer(x);
        std::vector<T> dxhat(static_cast<std::size_t>(d));
        for (std::int64_t i = 0; i < n; ++i) {
          T m1 = T(0), m2 = T(0);
          for (std::int64_t j = 0; j < d; ++j) {
            dxhat[j] = dy[i * d + j] * gv[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * (*xhat)[i * d + j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          for (std::int64_t j = 0; j < d; ++j)
            gx[i * d + j] += (*rstd)[i] * (dxhat[j] - m1 - (*xhat)[i * d + j] * m2);
        }
      }
    });
  return out;
}

template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const int> ids) {
  const Shape& ts = g.shape(table);
  check(ts.size() == 2, ErrorCode::kShapeMismatch, "embedding table must be a matrix");
  const std::int64_t vocab = ts[0], d = ts[1];
  const auto n = static_cast<std::int64_t>(ids.size());
  std::vector<T> y(static_cast<std::size_t>(n * d));
  const auto& tv = g.value(table);
  for (std::int64_t i = 0; i < n; ++i) {
    check(ids[i] >= 0 && ids[i] < vocab, ErrorCode::kInvalidArgument,
          "embedding id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(vocab) + ")");
    std::copy_n(tv.data() + ids[i] * d, d, y.data() + i * d);
  }
  Var out = g.make(Shape{n, d}, std::move(y), {table});
  if (g.needs_grad(out))
    g.set_backward(out, [table, out, ids = std::vector<int>(ids.begin(), ids.end()), d](Graph<T>& gr) {
      auto& gt = gr.grad_buffer(table);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::int64_t j = 0; j < d; ++j) gt[ids[i] * d + j] += go[i * d + j];
    });
  return out;
}

template <typename T>
Var gather_rows(Graph<T>& g, Var x, std::span<const int> rows) {
  const Shape& xs = g.shape(x);
  check(xs.size() == 2, ErrorCode::kShapeMismatch, "gather_rows expects a matrix");
  const std::int64_t nr = xs[0], d = xs[1];
  const auto n = static_cast<std::int64_t>(rows.size());
  std::vector<T> y(static_cast<std::size_t>(n * d));
  const auto& xv = g.value(x);
  for (std::int64_t i = 0; i < n; ++i) {
    check(rows[i] >= 0 && rows[i] < nr, ErrorCode::kInvalidArgument, "gather_rows: row out of range");
    std::copy_n(xv.data() + rows[i] * d, d, y.data() + i * d);
  }
  Var out = g.make(Shape{n, d}, std::move(y), {x});
  if (g.needs_grad(out))
    g.set_backward(out, [x, out, rows = std::vector<int>(rows.begin(), rows.end()), d](Graph<T>& gr) {
      auto& gx = gr.grad_buffer(x);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::int64_t j = 0; j < d; ++j) gx[rows[i] * d + j] += go[i * d + j];
    });
  return out;
}

template <typename T>
Var slice_rows(Graph<T>& g, Var x, std::int64_t begin, std::int64_t end) {
  const Shape& xs = g.shape(x);
  check(xs.size() == 2 && begin >= 0 && begin <= end && end <= xs[0], ErrorCode::kShapeMismatch,
        "slice_rows: bad range");
  const std::int64_t d = xs[1];
  std::vector<T> y(g.value(x).begin() + begin * d, g.value(x).begin() + end * d);
  Var out = g.make(Shape{end - begin, d}, std::move(y), {x});
  if (g.needs_grad(out))
    g.set_backward(out, [x, out, begin, d](Graph<T>& gr) {
      auto& gx = gr.grad_buffer(x);
      const auto& go = gr.node(out).grad;
      for (std::size_t i = 0; i < go.size(); ++i) gx[begin * d + static_cast<std::int64_t>(i)] += go[i];
    });
  return out;
}

template <typename T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts) {
  check(!parts.empty(), ErrorCode::kInvalidArgument, "concat_cols: no inputs");
  const std::int64_t n = g.shape(parts[0])[0];
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (Var p : parts) {
    check(g.shape(p).size() == 2 && g.shape(p)[0] == n, ErrorCode::kShapeMismatch, "concat_cols: row mismatch");
    widths.push_back(g.shape(p)[1]);
    total += g.shape(p)[1];
  }
  std::vector<T> y(static_cast<std::size_t>(n * total));
  std::int64_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = g.value(parts[k]);
    for (std::int64_t i = 0; i < n; ++i) std::copy_n(pv.data() + i * widths[k], widths[k], y.data() + i * total + off);
    off += widths[k];
  }
  Var out = g.make(Shape{n, total}, std::move(y), {});
  bool any = false;
  for (Var p : parts) any = any || g.needs_grad(p);
  g.node(out).needs_grad = g.grad_enabled() && any;
  if (g.needs_grad(out))
    g.set_backward(out, [ps = std::vector<Var>(parts.begin(), parts.end()), widths, out, n, total](Graph<T>& gr) {
      const auto& go = gr.node(out).grad;
      std::int64_t o = 0;
      for (std::size_t k = 0; k < ps.size(); ++k) {
        if (gr.needs_grad(ps[k])) {
          auto& gp = gr.grad_buffer(ps[k]);
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += go[i * total + o + j];
        }
        o += widths[k];
      }
    });
  return out;
}

template <typename T>
Var concat_rows(Graph<T>& g, std::span<const Var> parts) {
  check(!parts.empty(), ErrorCode::kInvalidArgument, "concat_rows: no inputs");
  const std::int64_t d = g.shape(parts[0])[1];
  std::int64_t n = 0;
  std::vector<T> y;
  bool any = false;
  for (Var p : parts) {
    check(g.shape(p).size() == 2 && g.shape(p)[1] == d, ErrorCode::kShapeMismatch, "concat_rows: width mismatch");
    n += g.shape(p)[0];
    y.insert(y.end(), g.value(p).begin(), g.value(p).end());
    any = any || g.needs_grad(p);
  }
  Var out = g.make(Shape{n, d}, std::move(y), {});
  g.node(out).needs_grad = g.grad_enabled() && any;
  if (g.needs_grad(out))
    g.set_backward(out, [ps = std::vector<Var>(parts.begin(), parts.end()), out](Graph<T>& gr) {
      const auto& go = gr.node(out).grad;
      std::size_t o = 0;
      for (Var p : ps) {
        const std::size_t sz = gr.value(p).size();
        if (gr.needs_grad(p)) {
          auto& gp = gr.grad_buffer(p);
          for (std::size_t i = 0; i < sz; ++i) gp[i] += go[o + i];
        }
        o += sz;
      }
    });
  return out;
}

template <typename T>
Var causal_attention(Graph<T>& g, Var qkv, std::int64_t heads) {
  const Shape& s = g.shape(qkv);
  check(s.size() == 2 && s[1] % 3 == 0, ErrorCode::kShapeMismatch, "causal_attention expects [n, 3d]");
  const std::int64_t n = s[0], d = s[1] / 3;
  check(heads >= 1 && d % heads == 0, ErrorCode::kShapeMismatch, "causal_attention: heads must divide width");
  const std::int64_t hd = d / heads, stride = 3 * d;
  const T sc = T(1) / std::sqrt(static_cast<T>(hd));
  // probs for row i, head h live at offset h * tri + i * (i + 1) / 2.
  const std::int64_t tri = n * (n + 1) / 2;
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(heads * tri));
  std::vector<T> y(static_cast<std::size_t>(n * d));
  const T* base = g.value(qkv).data();
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < n; ++i)
      kernels::attend_row(base + i * stride + h * hd, base + d + h * hd, base + 2 * d + h * hd, i + 1, hd, stride,
                          sc, probs->data() + h * tri + i * (i + 1) / 2, y.data() + i * d + h * hd);
  Var out = g.make(Shape{n, d}, std::move(y), {qkv});
  if (g.needs_grad(out))
    g.set_backward(out, [qkv, out, n, d, heads, hd, stride, sc, tri, probs](Graph<T>& gr) {
      const auto& go = gr.node(out).grad;
      const T* src = gr.value(qkv).data();
      auto& gq = gr.grad_buffer(qkv);
      std::vector<T> dp(static_cast<std::size_t>(n));
      for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < n; ++i) {
          const T* p = probs->data() + h * tri + i * (i + 1) / 2;
          const T* dout = go.data() + i * d + h * hd;
          T dot = T(0);
          for (std::int64_t j = 0; j <= i; ++j) {
            const T* vr = src + j * stride + 2 * d + h * hd;
            T acc = T(0);
            for (std::int64_t c = 0; c < hd; ++c) acc += dout[c] * vr[c];
            dp[j] = acc;
            dot += p[j] * acc;
            T* dv = gq.data() + j * stride + 2 * d + h * hd;
            for (std::int64_t c = 0; c < hd; ++c) dv[c] += p[j] * dout[c];
          }
          const T* qi = src + i * stride + h * hd;
          T* dqi = gq.data() + i * stride + h * hd;
          for (std::int64_t j = 0; j <= i; ++j) {
            const T ds = p[j] * (dp[j] - dot) * sc;
            if (ds == T(0)) continue;
            const T* kj = src + j * stride + d + h * hd;
            T* dkj = gq.data() + j * stride + d + h * hd;
            for (std::int64_t c = 0; c < hd; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }
    });
  return out;
}

template <typename T>
Var nll_sum(Graph<T>& g, Var logits, std::span<const int> targets) {
  const Shape& s = g.shape(logits);
  check(s.size() == 2 && s[0] == static_cast<std::int64_t>(targets.size()), ErrorCode::kShapeMismatch,
        "nll: logits rows must match targets");
  const std::int64_t n = s[0], v = dim(s, 1);
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * v));
  const T* lv = g.value(logits).data();
  T total = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (targets[i] < 0) continue;
    check(targets[i] < v, ErrorCode::kInvalidArgument, "nll: target outside vocabulary");
    T* pr = probs->data() + i * v;
    kernels::log_softmax_row(lv + i * v, v, pr);
    total -= pr[targets[i]];
    for (std::int64_t j = 0; j < v; ++j) pr[j] = std::exp(pr[j]);
  }
  Var out = g.make(Shape{}, {total}, {logits});
  if (g.needs_grad(out))
    g.set_backward(out, [logits, out, probs, tg = std::vector<int>(targets.begin(), targets.end()), n, v](Graph<T>& gr) {
      auto& gl = gr.grad_buffer(logits);
      const T go = gr.node(out).grad[0];
      for (std::int64_t i = 0; i < n; ++i) {
        if (tg[i] < 0) continue;
        const T* pr = probs->data() + i * v;
        for (std::int64_t j = 0; j < v; ++j) gl[i * v + j] += go * pr[j];
        gl[i * v + tg[i]] -= go;
      }
    });
  return out;
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets) {
  std::int64_t count = 0;
  for (int t : targets) count += t >= 0 ? 1 : 0;
  check(count > 0, ErrorCode::kInvalidArgument, "cross_entropy: every target is PAD");
  return scale(g, nll_sum(g, logits, targets), T(1) / static_cast<T>(count));
}

template <typename T>
Var round(Graph<T>& g, Var x) {
  std::vector<T> v = g.value(x);
  for (auto& e : v) e = std::round(e);
  Var out = g.make(g.shape(x), std::move(v), {x});
  if (g.needs_grad(out))
    g.set_backward(out, [](Graph<T>&) {
      fail(ErrorCode::kUnsupported, "graph contains an unsupported operation (round has no derivative)");
    });
  return out;
}

#define LEVO_INSTANTIATE(T)                                                     \
  template class Graph<T>;                                                      \
  template GradMap<T> grad(Graph<T>&, Var, const BasicParamStore<T>&);          \
  template Var add(Graph<T>&, Var, Var);                                        \
  template Var sub(Graph<T>&, Var, Var);                                        \
  template Var mul(Graph<T>&, Var, Var);                                        \
  template Var scale(Graph<T>&, Var, T);                                        \
  template Var sum(Graph<T>&, Var);                                             \
  template Var mean(Graph<T>&, Var);                                            \
  template Var matmul(Graph<T>&, Var, Var);                                     \
  template Var linear(Graph<T>&, Var, Var, Var);                                \
  template Var gelu(Graph<T>&, Var);                                            \
  template Var tanh(Graph<T>&, Var);                                            \
  template Var log_sigmoid(Graph<T>&, Var);                                     \
  template Var layer_norm(Graph<T>&, Var, Var, Var);                            \
  template Var embedding(Graph<T>&, Var, std::span<const int>);                 \
  template Var gather_rows(Graph<T>&, Var, std::span<const int>);               \
  template Var slice_rows(Graph<T>&, Var, std::int64_t, std::int64_t);          \
  template Var concat_cols(Graph<T>&, std::span<const Var>);                    \
  template Var concat_rows(Graph<T>&, std::span<const Var>);                    \
  template Var causal_attention(Graph<T>&, Var, std::int64_t);                  \
  template Var nll_sum(Graph<T>&, Var, std::span<const int>);                   \
  template Var cross_entropy(Graph<T>&, Var, std::span<const int>);             \
  template Var round(Graph<T>&, Var);

LEVO_INSTANTIATE(float)
LEVO_INSTANTIATE(double)

}  // namespace levo::ad
