#pragma once

// Dense float tensors with a small reverse-mode autodiff engine.
//
// Every differentiable op records a backward function built from other
// differentiable ops, so gradients can themselves be differentiated
// (create_graph = true). This is what the R1 penalty on the discriminator
// needs. Ops that only ever sit on the generator path (AdaIN, noise
// injection, the structured mapping) have hand-fused first-order
// backwards and refuse to be differentiated twice.
//
// Layout is row-major; image tensors are NCHW.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sni {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// need[k] tells the backward which input gradients are actually consumed;
/// entries for unneeded inputs may be left undefined.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad, const std::vector<char>& need)>;

struct Node {
  std::vector<Tensor> inputs;
  BackwardFn backward;
  const char* name = "";
  bool twice_differentiable = true;
};

/// Wraps freshly computed data into a tensor and, when grad mode is on and
/// any input requires grad, attaches the backward node.
Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   BackwardFn backward, const char* name, bool twice_differentiable = true);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Negative indices count from the back.
  int dim(int i) const;
  std::size_t numel() const;

  float* data();
  const float* data() const;
  std::span<float> values();
  std::span<const float> values() const;
  std::vector<float> to_vector() const;
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  /// Deep copy of the values, detached from any graph.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::Node>& grad_fn() const;

 private:
  friend Tensor detail::make_result(Shape, std::vector<float>, std::vector<Tensor>,
                                    detail::BackwardFn, const char*, bool);
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Grad mode

bool grad_enabled() noexcept;

/// RAII switch of the thread-local grad mode.
class GradMode {
 public:
  explicit GradMode(bool enabled);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradMode {
 public:
  NoGradGuard() : GradMode(false) {}
};

/// Gradients of `output` with respect to each of `inputs`. `grad_output`
/// defaults to ones. With create_graph the returned tensors are themselves
/// differentiable. Inputs unreachable from output receive zeros.
std::vector<Tensor> gradients(const Tensor& output, const std::vector<Tensor>& inputs,
                              const Tensor& grad_output = {}, bool create_graph = false);

// ---------------------------------------------------------------------------
// Ops. All shapes must match exactly unless stated otherwise.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

/// Sum of all entries, shape {1}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Broadcast a {1} tensor to `shape`.
Tensor expand(const Tensor& s, const Shape& shape);

Tensor reshape(const Tensor& a, Shape shape);

/// op(a) * op(b) for 2-D tensors, op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// Per-channel vector b[C] broadcast against x[N, C, ...].
Tensor channel_broadcast(const Tensor& b, const Shape& shape);
/// Sum over every axis except 1: x[N, C, ...] -> [C].
Tensor channel_sum(const Tensor& x);
Tensor add_bias(const Tensor& x, const Tensor& b);

/// Same-padded stride-1 convolution, x[N,C,H,W] * w[O,C,K,K] -> [N,O,H,W], K odd.
Tensor conv2d(const Tensor& x, const Tensor& w);
/// Weight gradient of conv2d: (x[N,C,H,W], g[N,O,H,W]) -> [O,C,K,K].
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, int kernel);
/// w[O,C,K,K] -> w'[C,O,K,K] with both spatial axes reversed.
Tensor flip_transpose(const Tensor& w);

Tensor avg_pool2(const Tensor& x);
Tensor upsample2(const Tensor& x);

Tensor leaky_relu(const Tensor& x, float slope = 0.2f);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + exp(x)), computed stably.
Tensor softplus(const Tensor& x);

/// Instance normalisation followed by per-sample affine:
/// y = gamma[n,c] * (x - mu) / (sigma + eps) + beta[n,c]. First order only.
Tensor adain(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-8f);

/// x[N,C,H,W] + strength[c] * noise[N,1,H,W]; noise is a constant. First order only.
Tensor add_noise(const Tensor& x, const Tensor& noise, const Tensor& strength);

/// Throws ModelFailure naming `where` when any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* where);

}  // namespace sni
