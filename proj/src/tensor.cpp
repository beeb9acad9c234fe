#include "sni/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sni/error.hpp"

namespace sni {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, int rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <typename F>
Tensor unary_map(const Tensor& a, F&& f) {
  std::vector<float> out(a.numel());
  const float* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor(a.shape(), std::move(out));
}

// x[N,C,H,W] -> cols[C*K*K, N*H*W], zero padded by K/2.
void im2col(const float* x, int n, int c, int h, int w, int k, float* cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t row_len = static_cast<std::size_t>(n) * hw;
  for (int ci = 0; ci < c; ++ci) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        float* row = cols + ((static_cast<std::size_t>(ci) * k + kh) * k + kw) * row_len;
        const int dx = kw - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int ni = 0; ni < n; ++ni) {
          const float* plane = x + (static_cast<std::size_t>(ni) * c + ci) * hw;
          float* dst = row + ni * hw;
          for (int yi = 0; yi < h; ++yi) {
            const int sy = yi + kh - pad;
            float* d = dst + static_cast<std::size_t>(yi) * w;
            if (sy < 0 || sy >= h) {
              std::fill(d, d + w, 0.0f);
              continue;
            }
            const float* s = plane + static_cast<std::size_t>(sy) * w;
            for (int xi = 0; xi < x_lo; ++xi) d[xi] = 0.0f;
            for (int xi = x_lo; xi < x_hi; ++xi) d[xi] = s[xi + dx];
            for (int xi = std::max(x_hi, x_lo); xi < w; ++xi) d[xi] = 0.0f;
          }
        }
      }
    }
  }
}

// [N, C, HW] <-> [C, N*HW]
void nchw_to_cm(const float* x, int n, int c, std::size_t hw, float* out) {
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      std::copy_n(x + (static_cast<std::size_t>(ni) * c + ci) * hw, hw,
                  out + static_cast<std::size_t>(ci) * n * hw + ni * hw);
}

void cm_to_nchw(const float* x, int n, int c, std::size_t hw, float* out) {
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      std::copy_n(x + static_cast<std::size_t>(ci) * n * hw + ni * hw, hw,
                  out + (static_cast<std::size_t>(ni) * c + ci) * hw);
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape helpers

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeError("undefined tensor");
  return impl_->shape;
}

int Tensor::dim(int i) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(i)];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }
float* Tensor::data() { return impl_->data.data(); }
const float* Tensor::data() const { return impl_->data.data(); }
std::span<float> Tensor::values() { return impl_->data; }
std::span<const float> Tensor::values() const { return impl_->data; }
std::vector<float> Tensor::to_vector() const { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl_->grad_fn) throw ArgumentError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_ || !impl_->grad_fn; }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

const std::shared_ptr<detail::Node>& Tensor::grad_fn() const { return impl_->grad_fn; }

// ---------------------------------------------------------------------------
// Grad mode and engine

bool grad_enabled() noexcept { return g_grad_enabled; }

GradMode::GradMode(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradMode::~GradMode() { g_grad_enabled = previous_; }

Tensor detail::make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                           BackwardFn backward, const char* name, bool twice_differentiable) {
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  node->name = name;
  node->twice_differentiable = twice_differentiable;
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
  return out;
}

std::vector<Tensor> gradients(const Tensor& output, const std::vector<Tensor>& inputs,
                              const Tensor& grad_output, bool create_graph) {
  using detail::TensorImpl;
  std::unordered_set<const TensorImpl*> targets;
  for (const auto& t : inputs) targets.insert(t.impl());

  // Post-order DFS; `reaches` marks tensors with a path to a requested input.
  std::vector<Tensor> order;
  std::unordered_map<const TensorImpl*, bool> reaches;
  if (output.requires_grad()) {
    struct Frame {
      Tensor t;
      std::size_t next = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({output});
    reaches[output.impl()] = targets.count(output.impl()) > 0;
    while (!stack.empty()) {
      Frame& f = stack.back();
      const auto& fn = f.t.impl()->grad_fn;
      if (fn && f.next < fn->inputs.size()) {
        const Tensor& in = fn->inputs[f.next++];
        if (!in.requires_grad() || reaches.count(in.impl())) continue;
        reaches[in.impl()] = targets.count(in.impl()) > 0;
        stack.push_back({in});
        continue;
      }
      if (fn) {
        bool r = reaches[f.t.impl()];
        for (const auto& in : fn->inputs)
          if (in.requires_grad() && reaches[in.impl()]) r = true;
        reaches[f.t.impl()] = r;
      }
      order.push_back(f.t);
      stack.pop_back();
    }
  }

  GradMode mode(create_graph);
  std::unordered_map<const TensorImpl*, Tensor> grads;
  if (output.requires_grad()) {
    Tensor seed = grad_output.defined() ? grad_output : Tensor(output.shape(), 1.0f);
    require_same_shape(seed, output, "gradients(seed)");
    grads[output.impl()] = seed;
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    auto g = grads.find(t.impl());
    if (g == grads.end() || !reaches[t.impl()]) continue;
    const auto& fn = t.impl()->grad_fn;
    if (!fn) continue;
    if (create_graph && !fn->twice_differentiable) {
      throw ArgumentError(std::string("op '") + fn->name + "' is not twice differentiable");
    }
    std::vector<char> need(fn->inputs.size(), 0);
    for (std::size_t k = 0; k < need.size(); ++k)
      need[k] = fn->inputs[k].requires_grad() && reaches[fn->inputs[k].impl()];
    Tensor gout = g->second;
    if (!targets.count(t.impl())) grads.erase(g);
    std::vector<Tensor> gin = fn->backward(gout, need);
    for (std::size_t k = 0; k < gin.size() && k < need.size(); ++k) {
      if (!need[k] || !gin[k].defined()) continue;
      const TensorImpl* key = fn->inputs[k].impl();
      auto slot = grads.find(key);
      if (slot == grads.end()) {
        grads.emplace(key, gin[k]);
      } else {
        slot->second = add(slot->second, gin[k]);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto g = grads.find(in.impl());
    result.push_back(g != grads.end() ? g->second : Tensor(in.shape(), 0.0f));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  const float* x = a.data();
  const float* y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b},
      [](const Tensor& g, const std::vector<char>&) { return std::vector<Tensor>{g, g}; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  const float* x = a.data();
  const float* y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b},
      [](const Tensor& g, const std::vector<char>& need) {
        return std::vector<Tensor>{g, need[1] ? scale(g, -1.0f) : Tensor{}};
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  const float* x = a.data();
  const float* y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b},
      [a, b](const Tensor& g, const std::vector<char>& need) {
        return std::vector<Tensor>{need[0] ? mul(g, b) : Tensor{}, need[1] ? mul(g, a) : Tensor{}};
      },
      "mul");
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const float* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [s](const Tensor& g, const std::vector<char>&) { return std::vector<Tensor>{scale(g, s)}; },
      "scale");
}

Tensor add_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const float* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [](const Tensor& g, const std::vector<char>&) { return std::vector<Tensor>{g}; },
      "add_scalar");
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  Shape shape = a.shape();
  return detail::make_result(
      {1}, {static_cast<float>(acc)}, {a},
      [shape](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{expand(g, shape)};
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0f / static_cast<float>(std::max<std::size_t>(1, a.numel())));
}

Tensor expand(const Tensor& s, const Shape& shape) {
  if (s.numel() != 1) throw ShapeError("expand: source must hold one value");
  std::vector<float> out(shape_numel(shape), s.data()[0]);
  return detail::make_result(
      shape, std::move(out), {s},
      [](const Tensor& g, const std::vector<char>&) { return std::vector<Tensor>{sum(g)}; },
      "expand");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Shape original = a.shape();
  return detail::make_result(
      std::move(shape), a.to_vector(), {a},
      [original](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{reshape(g, original)};
      },
      "reshape");
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = trans_a ? a.dim(1) : a.dim(0);
  const int ka = trans_a ? a.dim(0) : a.dim(1);
  const int kb = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  CMapMat am(a.data(), a.dim(0), a.dim(1));
  CMapMat bm(b.data(), b.dim(0), b.dim(1));
  MapMat cm(out.data(), m, n);
  if (!trans_a && !trans_b) cm.noalias() = am * bm;
  else if (trans_a && !trans_b) cm.noalias() = am.transpose() * bm;
  else if (!trans_a && trans_b) cm.noalias() = am * bm.transpose();
  else cm.noalias() = am.transpose() * bm.transpose();

  return detail::make_result(
      {m, n}, std::move(out), {a, b},
      [a, b, trans_a, trans_b](const Tensor& g, const std::vector<char>& need) {
        Tensor ga, gb;
        if (need[0]) ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        if (need[1]) gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        return std::vector<Tensor>{ga, gb};
      },
      "matmul");
}

Tensor channel_broadcast(const Tensor& b, const Shape& shape) {
  require_rank(b, 1, "channel_broadcast");
  if (shape.size() < 2 || shape[1] != b.dim(0)) {
    throw ShapeError("channel_broadcast: " + shape_str(b.shape()) + " against " +
                     shape_str(shape));
  }
  const int n = shape[0];
  const int c = shape[1];
  const std::size_t inner = shape_numel(shape) / (static_cast<std::size_t>(n) * c);
  std::vector<float> out(shape_numel(shape));
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      std::fill_n(out.begin() + (static_cast<std::size_t>(ni) * c + ci) * inner, inner,
                  b.data()[ci]);
  return detail::make_result(
      shape, std::move(out), {b},
      [](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{channel_sum(g)};
      },
      "channel_broadcast");
}

Tensor channel_sum(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("channel_sum needs rank >= 2");
  const int n = x.dim(0);
  const int c = x.dim(1);
  const std::size_t inner = x.numel() / (static_cast<std::size_t>(n) * c);
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  const float* p = x.data();
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* q = p + (static_cast<std::size_t>(ni) * c + ci) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += q[i];
      acc[static_cast<std::size_t>(ci)] += s;
    }
  std::vector<float> out(acc.begin(), acc.end());
  Shape shape = x.shape();
  return detail::make_result(
      {c}, std::move(out), {x},
      [shape](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{channel_broadcast(g, shape)};
      },
      "channel_sum");
}

Tensor add_bias(const Tensor& x, const Tensor& b) { return add(x, channel_broadcast(b, x.shape())); }

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& x, const Tensor& w) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(h) * wd;
  const std::size_t cols_n = static_cast<std::size_t>(n) * hw;
  const std::size_t ckk = static_cast<std::size_t>(c) * k * k;
  std::vector<float> cols(ckk * cols_n);
  if (k == 1) nchw_to_cm(x.data(), n, c, hw, cols.data());
  else im2col(x.data(), n, c, h, wd, k, cols.data());
  std::vector<float> ym(static_cast<std::size_t>(o) * cols_n);
  MapMat(ym.data(), o, static_cast<Eigen::Index>(cols_n)).noalias() =
      CMapMat(w.data(), o, static_cast<Eigen::Index>(ckk)) *
      CMapMat(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols_n));
  std::vector<float> out(ym.size());
  cm_to_nchw(ym.data(), n, o, hw, out.data());
  return detail::make_result(
      {n, o, h, wd}, std::move(out), {x, w},
      [x, w, k](const Tensor& g, const std::vector<char>& need) {
        Tensor gx, gw;
        if (need[0]) gx = conv2d(g, flip_transpose(w));
        if (need[1]) gw = conv2d_weight_grad(x, g, k);
        return std::vector<Tensor>{gx, gw};
      },
      "conv2d");
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, int k) {
  require_rank(x, 4, "conv2d_weight_grad");
  require_rank(g, 4, "conv2d_weight_grad");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = g.dim(1);
  if (g.dim(0) != n || g.dim(2) != h || g.dim(3) != wd) {
    throw ShapeError("conv2d_weight_grad: " + shape_str(x.shape()) + " vs " +
                     shape_str(g.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(h) * wd;
  const std::size_t cols_n = static_cast<std::size_t>(n) * hw;
  const std::size_t ckk = static_cast<std::size_t>(c) * k * k;
  std::vector<float> cols(ckk * cols_n);
  if (k == 1) nchw_to_cm(x.data(), n, c, hw, cols.data());
  else im2col(x.data(), n, c, h, wd, k, cols.data());
  std::vector<float> gm(static_cast<std::size_t>(o) * cols_n);
  nchw_to_cm(g.data(), n, o, hw, gm.data());
  std::vector<float> out(static_cast<std::size_t>(o) * ckk);
  MapMat(out.data(), o, static_cast<Eigen::Index>(ckk)).noalias() =
      CMapMat(gm.data(), o, static_cast<Eigen::Index>(cols_n)) *
      CMapMat(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols_n))
          .transpose();
  return detail::make_result(
      {o, c, k, k}, std::move(out), {x, g},
      [x, g](const Tensor& gg, const std::vector<char>& need) {
        Tensor gx, ggo;
        if (need[0]) gx = conv2d(g, flip_transpose(gg));
        if (need[1]) ggo = conv2d(x, gg);
        return std::vector<Tensor>{gx, ggo};
      },
      "conv2d_weight_grad");
}

Tensor flip_transpose(const Tensor& w) {
  require_rank(w, 4, "flip_transpose");
  const int o = w.dim(0), c = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  std::vector<float> out(w.numel());
  const float* p = w.data();
  for (int oi = 0; oi < o; ++oi)
    for (int ci = 0; ci < c; ++ci)
      for (int a = 0; a < kh; ++a)
        for (int b = 0; b < kw; ++b)
          out[((static_cast<std::size_t>(ci) * o + oi) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)] =
              p[((static_cast<std::size_t>(oi) * c + ci) * kh + a) * kw + b];
  return detail::make_result(
      {c, o, kh, kw}, std::move(out), {w},
      [](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{flip_transpose(g)};
      },
      "flip_transpose");
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2 needs even spatial dims");
  const int h2 = h / 2, w2 = w / 2;
  std::vector<float> out(static_cast<std::size_t>(n) * c * h2 * w2);
  const float* p = x.data();
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(n) * c; ++plane) {
    const float* s = p + plane * h * w;
    float* d = out.data() + plane * h2 * w2;
    for (int yi = 0; yi < h2; ++yi)
      for (int xi = 0; xi < w2; ++xi) {
        const float* q = s + (2 * yi) * w + 2 * xi;
        d[yi * w2 + xi] = 0.25f * (q[0] + q[1] + q[w] + q[w + 1]);
      }
  }
  return detail::make_result(
      {n, c, h2, w2}, std::move(out), {x},
      [](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{scale(upsample2(g), 0.25f)};
      },
      "avg_pool2");
}

Tensor upsample2(const Tensor& x) {
  require_rank(x, 4, "upsample2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int w2 = 2 * w;
  std::vector<float> out(static_cast<std::size_t>(n) * c * h * w * 4);
  const float* p = x.data();
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(n) * c; ++plane) {
    const float* s = p + plane * h * w;
    float* d = out.data() + plane * h * w * 4;
    for (int yi = 0; yi < h; ++yi) {
      float* r0 = d + (2 * yi) * w2;
      for (int xi = 0; xi < w; ++xi) r0[2 * xi] = r0[2 * xi + 1] = s[yi * w + xi];
      std::copy_n(r0, w2, r0 + w2);
    }
  }
  return detail::make_result(
      {n, c, 2 * h, w2}, std::move(out), {x},
      [](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{scale(avg_pool2(g), 4.0f)};
      },
      "upsample2");
}

// ---------------------------------------------------------------------------
// Nonlinearities

Tensor leaky_relu(const Tensor& x, float slope) {
  Tensor mask = unary_map(x, [slope](float v) { return v < 0.0f ? slope : 1.0f; });
  return mul(x, mask);
}

Tensor tanh(const Tensor& x) {
  Tensor y = unary_map(x, [](float v) { return std::tanh(v); });
  return detail::make_result(
      x.shape(), y.to_vector(), {x},
      [x](const Tensor& g, const std::vector<char>&) {
        Tensor t = tanh(x);
        return std::vector<Tensor>{sub(g, mul(g, mul(t, t)))};
      },
      "tanh");
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = unary_map(x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  return detail::make_result(
      x.shape(), y.to_vector(), {x},
      [x](const Tensor& g, const std::vector<char>&) {
        Tensor s = sigmoid(x);
        return std::vector<Tensor>{mul(g, sub(s, mul(s, s)))};
      },
      "sigmoid");
}

Tensor softplus(const Tensor& x) {
  Tensor y = unary_map(x, [](float v) {
    return v > 0.0f ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  return detail::make_result(
      x.shape(), y.to_vector(), {x},
      [x](const Tensor& g, const std::vector<char>&) {
        return std::vector<Tensor>{mul(g, sigmoid(x))};
      },
      "softplus");
}

// ---------------------------------------------------------------------------
// Generator-only fused ops

Tensor adain(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 4, "adain");
  const int n = x.dim(0), c = x.dim(1);
  const Shape nc{n, c};
  if (gamma.shape() != nc || beta.shape() != nc) {
    throw ShapeError("adain: gamma/beta must be " + shape_str(nc));
  }
  const std::size_t m = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> sigma(static_cast<std::size_t>(n) * c);
  const float* px = x.data();
  for (std::size_t plane = 0; plane < sigma.size(); ++plane) {
    const float* s = px + plane * m;
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += s[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (s[i] - mu) * (s[i] - mu);
    var /= static_cast<double>(m);
    const double sd = std::sqrt(var);
    sigma[plane] = static_cast<float>(sd);
    const double inv = 1.0 / (sd + eps);
    const float gm = gamma.data()[plane];
    const float bt = beta.data()[plane];
    for (std::size_t i = 0; i < m; ++i) {
      const float xh = static_cast<float>((s[i] - mu) * inv);
      xhat[plane * m + i] = xh;
      out[plane * m + i] = gm * xh + bt;
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), sigma = std::move(sigma), m, eps, shape = x.shape()](
          const Tensor& g, const std::vector<char>& need) {
        const std::size_t planes = sigma.size();
        std::vector<float> gx(need[0] ? g.numel() : 0);
        std::vector<float> gg(planes), gb(planes);
        const float* pg = g.data();
        for (std::size_t plane = 0; plane < planes; ++plane) {
          const float* gp = pg + plane * m;
          const float* xh = xhat.data() + plane * m;
          double sg = 0.0, sgx = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            sg += gp[i];
            sgx += static_cast<double>(gp[i]) * xh[i];
          }
          gb[plane] = static_cast<float>(sg);
          gg[plane] = static_cast<float>(sgx);
          if (!need[0]) continue;
          // d/dx of gamma * (x - mu) / (sigma + eps), using x - mu = xhat * (sigma + eps).
          const double gm = gamma.data()[plane];
          const double s = sigma[plane] + eps;
          const double mean_g = gm * sg / static_cast<double>(m);
          const double mean_gx = gm * sgx / static_cast<double>(m);
          const double corr = sigma[plane] > 0.0f ? s / sigma[plane] : 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            gx[plane * m + i] =
                static_cast<float>((gm * gp[i] - mean_g - xh[i] * mean_gx * corr) / s);
          }
        }
        const Shape nc{shape[0], shape[1]};
        return std::vector<Tensor>{need[0] ? Tensor(shape, std::move(gx)) : Tensor{},
                                   Tensor(nc, std::move(gg)), Tensor(nc, std::move(gb))};
      },
      "adain", false);
}

Tensor add_noise(const Tensor& x, const Tensor& noise, const Tensor& strength) {
  require_rank(x, 4, "add_noise");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t m = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (noise.shape() != Shape{n, 1, x.dim(2), x.dim(3)} || strength.shape() != Shape{c}) {
    throw ShapeError("add_noise: noise " + shape_str(noise.shape()) + ", strength " +
                     shape_str(strength.shape()) + " vs " + shape_str(x.shape()));
  }
  std::vector<float> out(x.to_vector());
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float s = strength.data()[ci];
      const float* z = noise.data() + static_cast<std::size_t>(ni) * m;
      float* d = out.data() + (static_cast<std::size_t>(ni) * c + ci) * m;
      for (std::size_t i = 0; i < m; ++i) d[i] += s * z[i];
    }
  return detail::make_result(
      x.shape(), std::move(out), {x, noise, strength},
      [noise, n, c, m](const Tensor& g, const std::vector<char>& need) {
        std::vector<float> gs(static_cast<std::size_t>(c), 0.0f);
        if (need[2]) {
          for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
              const float* z = noise.data() + static_cast<std::size_t>(ni) * m;
              const float* gp = g.data() + (static_cast<std::size_t>(ni) * c + ci) * m;
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(gp[i]) * z[i];
              gs[static_cast<std::size_t>(ci)] += static_cast<float>(acc);
            }
        }
        return std::vector<Tensor>{g, Tensor{}, Tensor(Shape{c}, std::move(gs))};
      },
      "add_noise", false);
}

void check_finite(const Tensor& t, const char* where) {
  for (float v : t.values()) {
    if (!std::isfinite(v)) throw ModelFailure(std::string("non-finite activation in ") + where);
  }
}

}  // namespace sni
