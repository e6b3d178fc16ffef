#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uemkit/tensor.hpp"

namespace uem::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Vector-Jacobian product of one primitive: accumulate into grad_in[i]
/// (null when input i does not need a gradient).
using Backward =
    std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  bool has(const Var& v) const;
  /// Gradient of the loss w.r.t. v; zeros if v did not influence the loss.
  Tensor of(const Var& v) const;

 private:
  std::vector<Tensor> grads_;
};

/// Append-only record of primitive applications. Nodes are stored in
/// creation order, which is a topological order by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Record a primitive's output. The backward closure is kept only when some
  /// input requires a gradient.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
             Backward backward);

  Gradients backward(const Var& loss) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    std::string_view op;
  };
  std::vector<Node> nodes_;
};

// Elementwise arithmetic. Operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
/// x * s where s is a one-element Var.
Var scale_by(const Var& x, const Var& s);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
/// |x| with subgradient 0 at x == 0.
Var abs(const Var& x);
Var square(const Var& x);
/// sqrt with zero gradient at 0.
Var sqrt(const Var& x);
Var reciprocal(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);

// Channel-major image ops on {C,H,W}.
Var channel_sums(const Var& x);
Var scale_channels(const Var& x, const Var& s);
Var add_channel_bias(const Var& x, const Var& bias);
Var broadcast_channels(const Var& x, std::size_t channels);
Var select_channels(const Var& x, std::vector<std::size_t> index);
Var concat_channels(const Var& a, const Var& b);

/// 1x1 channel mixing: out[o] = sum_i w[o][i] * x[i].
Var channel_mix(const Var& w, const Var& x);
Var transpose(const Var& w);
/// out[c] = sum_l w[c][l] * quad[l] * x[l]; quad holds the quadrature weights.
Var weighted_sum_over_lambda(const Var& x, const Var& w, std::span<const double> quad);

/// Dense multi-channel "same" convolution with zero padding. The kernel is
/// applied as a true convolution, so a delta input reproduces the kernel
/// centred on the delta. bias may be an invalid Var.
Var conv2d(const Var& x, const Var& w, const Var& bias = {});
/// Per-channel spatial convolution; kernel shape {C,kh,kw}, odd sizes.
Var depthwise_conv2d(const Var& x, const Var& kernel);
/// Spatial flip of a {C,kh,kw} kernel stack.
Var flip2d(const Var& kernel);

/// Integer translation per channel with zero fill: out[c](y,x) = x[c](y-dy, x-dx).
Var shift2d(const Var& x, std::vector<int> dy, std::vector<int> dx);
Var pad2d(const Var& x, std::size_t top, std::size_t left, std::size_t bottom,
          std::size_t right);
Var crop2d(const Var& x, std::size_t top, std::size_t left, std::size_t height,
           std::size_t width);
Var avg_pool2d(const Var& x, std::size_t factor);
Var upsample_nearest2d(const Var& x, std::size_t factor);

// Complex ops on tensors whose trailing dimension is 2 (real, imaginary).
// fft2/ifft2 act on the two dimensions before the trailing pair, with
// unitary 1/sqrt(N) scaling; the grid must be square and a power of two.
Var fft2(const Var& x);
Var ifft2(const Var& x);
/// exp(i * phase) for a real phase tensor.
Var complex_exp(const Var& phase);
Var complex_mul(const Var& a, const Var& b);
Var complex_abs2(const Var& z);

/// Scalar-valued graph builder used by the finite-difference checker.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

/// max over coordinates of |g_ad - g_fd| / max(|g_fd|, 1e-8), central
/// differences with step eps.
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                  double eps = 1e-5);

enum class FdScheme {
  Central2,  // (f(x+h) - f(x-h)) / 2h
  Central4,  // five-point central stencil
  // Central4 on the steps eps / 4^j, j = 1..6, keeping the estimate with the
  // smallest change from the previous step plus roundoff bound 10 ulp(f) / h.
  // Survives both roundoff on tiny gradients and nearby ReLU kinks.
  Adaptive,
};

/// Per-input maximum relative error. When max_coords is nonzero, at most that
/// many coordinates per input are checked, chosen by a seeded shuffle.
std::vector<double> grad_check(const GraphFn& f, std::span<const Tensor> inputs,
                               double eps = 1e-5, std::size_t max_coords = 0,
                               std::uint64_t seed = 0, FdScheme scheme = FdScheme::Central2);

}  // namespace uem::ad
