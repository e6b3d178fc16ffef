#include "uemkit/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "uemkit/fft.hpp"

namespace uem::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_same(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(std::string_view op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

void require_scalar(std::string_view op, const Var& x) {
  if (x.value().size() != 1) shape_fail(op, "expected a scalar, got " + shape_str(x.shape()));
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: use of an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: Vars from different tapes");
  return tape_of(a);
}

template <typename F>
Var unary(std::string_view op, const Var& x, F&& value_fn, Backward bw) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = value_fn(xv[i]);
  return tape_of(x).record(op, std::move(out), {x}, std::move(bw));
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

struct Dims3 {
  std::size_t c, h, w;
};

Dims3 dims3(const Var& x) { return {x.shape()[0], x.shape()[1], x.shape()[2]}; }

}  // namespace

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const { return tape_of(*this).value(id_); }

bool Var::requires_grad() const { return tape_of(*this).requires_grad(id_); }

bool Gradients::has(const Var& v) const {
  return v.id() < grads_.size() && !grads_[v.id()].empty();
}

Tensor Gradients::of(const Var& v) const {
  if (has(v)) return grads_[v.id()];
  return Tensor(v.shape());
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, "leaf"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 Backward backward) {
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument(std::string(op) + ": Var from another tape");
    if (nodes_[v.id()].requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) {
    node.inputs.reserve(inputs.size());
    for (const Var& v : inputs) node.inputs.push_back(v.id());
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(lv.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor(lv.shape(), 1.0);
  std::vector<Tensor*> gin;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || grads[i].empty()) continue;
    gin.assign(n.inputs.size(), nullptr);
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const std::size_t in = n.inputs[j];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape());
      gin[j] = &grads[in];
    }
    n.backward(grads[i], gin);
  }
  return Gradients(std::move(grads));
}

// ------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out = a.value();
  out += b.value();
  return tape_of(a, b).record("add", std::move(out), {a, b},
                              [](const Tensor& g, std::span<Tensor* const> gi) {
                                if (gi[0]) *gi[0] += g;
                                if (gi[1]) *gi[1] += g;
                              });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape_of(a, b).record("sub", std::move(out), {a, b},
                              [](const Tensor& g, std::span<Tensor* const> gi) {
                                if (gi[0]) *gi[0] += g;
                                if (gi[1]) {
                                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                                }
                              });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape_of(a, b).record("mul", std::move(out), {a, b},
                              [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                                const Tensor& av = a.value();
                                const Tensor& bv = b.value();
                                if (gi[0]) {
                                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
                                }
                                if (gi[1]) {
                                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
                                }
                              });
}

Var scale(const Var& x, double s) {
  return unary("scale", x, [s](double v) { return v * s; },
               [s](const Tensor& g, std::span<Tensor* const> gi) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
               });
}

Var scale_by(const Var& x, const Var& s) {
  require_scalar("scale_by", s);
  const double sv = s.value()[0];
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv;
  return tape_of(x, s).record("scale_by", std::move(out), {x, s},
                              [x, s](const Tensor& g, std::span<Tensor* const> gi) {
                                const double sv = s.value()[0];
                                if (gi[0]) {
                                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += sv * g[i];
                                }
                                if (gi[1]) (*gi[1])[0] += dot(g, x.value());
                              });
}

Var relu(const Var& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; },
               [x](const Tensor& g, std::span<Tensor* const> gi) {
                 const Tensor& xv = x.value();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (xv[i] > 0) (*gi[0])[i] += g[i];
                 }
               });
}

Var sigmoid(const Var& x) {
  return unary("sigmoid", x, stable_sigmoid,
               [x](const Tensor& g, std::span<Tensor* const> gi) {
                 const Tensor& xv = x.value();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double s = stable_sigmoid(xv[i]);
                   (*gi[0])[i] += g[i] * s * (1.0 - s);
                 }
               });
}

Var softplus(const Var& x) {
  return unary(
      "softplus", x,
      [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [x](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * stable_sigmoid(xv[i]);
      });
}

Var abs(const Var& x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [x](const Tensor& g, std::span<Tensor* const> gi) {
                 const Tensor& xv = x.value();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double s = xv[i] > 0 ? 1.0 : (xv[i] < 0 ? -1.0 : 0.0);
                   (*gi[0])[i] += g[i] * s;
                 }
               });
}

Var square(const Var& x) {
  return unary("square", x, [](double v) { return v * v; },
               [x](const Tensor& g, std::span<Tensor* const> gi) {
                 const Tensor& xv = x.value();
                 for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += 2.0 * xv[i] * g[i];
               });
}

Var sqrt(const Var& x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [x](const Tensor& g, std::span<Tensor* const> gi) {
                 const Tensor& xv = x.value();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double r = std::sqrt(xv[i]);
                   if (r > 0) (*gi[0])[i] += g[i] * 0.5 / r;
                 }
               });
}

Var reciprocal(const Var& x) {
  return unary("reciprocal", x, [](double v) { return 1.0 / v; },
               [x](const Tensor& g, std::span<Tensor* const> gi) {
                 const Tensor& xv = x.value();
                 for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] -= g[i] / (xv[i] * xv[i]);
               });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return tape_of(x).record("sum", Tensor::scalar(s), {x},
                           [](const Tensor& g, std::span<Tensor* const> gi) {
                             const double gv = g[0];
                             for (double& v : gi[0]->data()) v += gv;
                           });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record("reshape", std::move(out), {x},
                           [](const Tensor& g, std::span<Tensor* const> gi) {
                             auto dst = gi[0]->data();
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                           });
}

// ------------------------------------------------------------ channel ops

Var channel_sums(const Var& x) {
  if (x.shape().empty()) shape_fail("channel_sums", "rank-0 input");
  const Tensor& xv = x.value();
  const std::size_t c = xv.dim(0);
  const std::size_t plane = xv.size() / c;
  Tensor out(Shape{c});
  for (std::size_t k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[k * plane + p];
    out[k] = s;
  }
  return tape_of(x).record("channel_sums", std::move(out), {x},
                           [c, plane](const Tensor& g, std::span<Tensor* const> gi) {
                             for (std::size_t k = 0; k < c; ++k) {
                               for (std::size_t p = 0; p < plane; ++p) (*gi[0])[k * plane + p] += g[k];
                             }
                           });
}

Var scale_channels(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || s.shape() != Shape{xv.dim(0)}) {
    shape_fail("scale_channels", "input " + shape_str(xv.shape()) + " with scales " +
                                     shape_str(s.shape()));
  }
  const std::size_t c = xv.dim(0);
  const std::size_t plane = xv.size() / c;
  Tensor out(xv.shape());
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t p = 0; p < plane; ++p) out[k * plane + p] = xv[k * plane + p] * s.value()[k];
  }
  return tape_of(x, s).record(
      "scale_channels", std::move(out), {x, s},
      [x, s, c, plane](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = x.value();
        const Tensor& sv = s.value();
        for (std::size_t k = 0; k < c; ++k) {
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = k * plane + p;
            if (gi[0]) (*gi[0])[i] += g[i] * sv[k];
            acc += g[i] * xv[i];
          }
          if (gi[1]) (*gi[1])[k] += acc;
        }
      });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || bias.shape() != Shape{xv.dim(0)}) {
    shape_fail("add_channel_bias", "input " + shape_str(xv.shape()) + " with bias " +
                                       shape_str(bias.shape()));
  }
  const std::size_t c = xv.dim(0);
  const std::size_t plane = xv.size() / c;
  Tensor out = xv;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t p = 0; p < plane; ++p) out[k * plane + p] += bias.value()[k];
  }
  return tape_of(x, bias).record("add_channel_bias", std::move(out), {x, bias},
                                 [c, plane](const Tensor& g, std::span<Tensor* const> gi) {
                                   if (gi[0]) *gi[0] += g;
                                   if (gi[1]) {
                                     for (std::size_t k = 0; k < c; ++k) {
                                       double acc = 0.0;
                                       for (std::size_t p = 0; p < plane; ++p) acc += g[k * plane + p];
                                       (*gi[1])[k] += acc;
                                     }
                                   }
                                 });
}

Var broadcast_channels(const Var& x, std::size_t channels) {
  const Tensor& xv = x.value();
  Shape out_shape;
  if (xv.rank() == 2) {
    out_shape = {channels, xv.dim(0), xv.dim(1)};
  } else if (xv.rank() == 3 && xv.dim(0) == 1) {
    out_shape = {channels, xv.dim(1), xv.dim(2)};
  } else {
    shape_fail("broadcast_channels", "expected [H,W] or [1,H,W], got " + shape_str(xv.shape()));
  }
  const std::size_t plane = xv.size();
  Tensor out(out_shape);
  for (std::size_t k = 0; k < channels; ++k) {
    std::copy(xv.data().begin(), xv.data().end(), out.data().begin() + k * plane);
  }
  return tape_of(x).record("broadcast_channels", std::move(out), {x},
                           [channels, plane](const Tensor& g, std::span<Tensor* const> gi) {
                             for (std::size_t k = 0; k < channels; ++k) {
                               for (std::size_t p = 0; p < plane; ++p) (*gi[0])[p] += g[k * plane + p];
                             }
                           });
}

Var select_channels(const Var& x, std::vector<std::size_t> index) {
  require_rank("select_channels", x, 3);
  const auto [c, h, w] = dims3(x);
  const std::size_t plane = h * w;
  for (std::size_t i : index) {
    if (i >= c) shape_fail("select_channels", "index " + std::to_string(i) + " out of range for " +
                                                  shape_str(x.shape()));
  }
  const Tensor& xv = x.value();
  Tensor out(Shape{index.size(), h, w});
  for (std::size_t j = 0; j < index.size(); ++j) {
    std::copy_n(xv.ptr() + index[j] * plane, plane, out.ptr() + j * plane);
  }
  return tape_of(x).record("select_channels", std::move(out), {x},
                           [index = std::move(index), plane](const Tensor& g,
                                                             std::span<Tensor* const> gi) {
                             for (std::size_t j = 0; j < index.size(); ++j) {
                               for (std::size_t p = 0; p < plane; ++p) {
                                 (*gi[0])[index[j] * plane + p] += g[j * plane + p];
                               }
                             }
                           });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank("concat_channels", a, 3);
  require_rank("concat_channels", b, 3);
  if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2]) {
    shape_fail("concat_channels", "spatial mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(Shape{av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.data().begin(), av.data().end(), out.data().begin());
  std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + av.size());
  const std::size_t na = av.size();
  return tape_of(a, b).record("concat_channels", std::move(out), {a, b},
                              [na](const Tensor& g, std::span<Tensor* const> gi) {
                                if (gi[0]) {
                                  for (std::size_t i = 0; i < na; ++i) (*gi[0])[i] += g[i];
                                }
                                if (gi[1]) {
                                  for (std::size_t i = na; i < g.size(); ++i) (*gi[1])[i - na] += g[i];
                                }
                              });
}

Var channel_mix(const Var& w, const Var& x) {
  require_rank("channel_mix", w, 2);
  require_rank("channel_mix", x, 3);
  const std::size_t co = w.shape()[0];
  const std::size_t ci = w.shape()[1];
  if (x.shape()[0] != ci) {
    shape_fail("channel_mix", "weights " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t plane = x.shape()[1] * x.shape()[2];
  Tensor out(Shape{co, x.shape()[1], x.shape()[2]});
  MapMat(out.ptr(), co, plane).noalias() =
      CMapMat(w.value().ptr(), co, ci) * CMapMat(x.value().ptr(), ci, plane);
  return tape_of(w, x).record(
      "channel_mix", std::move(out), {w, x},
      [w, x, co, ci, plane](const Tensor& g, std::span<Tensor* const> gi) {
        CMapMat gm(g.ptr(), co, plane);
        if (gi[0]) MapMat(gi[0]->ptr(), co, ci).noalias() += gm * CMapMat(x.value().ptr(), ci, plane).transpose();
        if (gi[1]) MapMat(gi[1]->ptr(), ci, plane).noalias() += CMapMat(w.value().ptr(), co, ci).transpose() * gm;
      });
}

Var transpose(const Var& w) {
  require_rank("transpose", w, 2);
  const std::size_t r = w.shape()[0];
  const std::size_t c = w.shape()[1];
  Tensor out(Shape{c, r});
  MapMat(out.ptr(), c, r) = CMapMat(w.value().ptr(), r, c).transpose();
  return tape_of(w).record("transpose", std::move(out), {w},
                           [r, c](const Tensor& g, std::span<Tensor* const> gi) {
                             MapMat(gi[0]->ptr(), r, c) += CMapMat(g.ptr(), c, r).transpose();
                           });
}

Var weighted_sum_over_lambda(const Var& x, const Var& w, std::span<const double> quad) {
  require_rank("weighted_sum_over_lambda", x, 3);
  require_rank("weighted_sum_over_lambda", w, 2);
  const auto [l, h, wd] = dims3(x);
  const std::size_t c = w.shape()[0];
  if (w.shape()[1] != l || quad.size() != l) {
    shape_fail("weighted_sum_over_lambda", "cube " + shape_str(x.shape()) + ", weights " +
                                               shape_str(w.shape()) + ", " +
                                               std::to_string(quad.size()) + " quadrature weights");
  }
  const std::size_t plane = h * wd;
  std::vector<double> q(quad.begin(), quad.end());
  RowMat wq = CMapMat(w.value().ptr(), c, l);
  for (std::size_t j = 0; j < l; ++j) wq.col(static_cast<Eigen::Index>(j)) *= q[j];
  Tensor out(Shape{c, h, wd});
  MapMat(out.ptr(), c, plane).noalias() = wq * CMapMat(x.value().ptr(), l, plane);
  return tape_of(x, w).record(
      "weighted_sum_over_lambda", std::move(out), {x, w},
      [x, w, c, l, plane, q = std::move(q)](const Tensor& g, std::span<Tensor* const> gi) {
        CMapMat gm(g.ptr(), c, plane);
        if (gi[0]) {
          RowMat wq = CMapMat(w.value().ptr(), c, l);
          for (std::size_t j = 0; j < l; ++j) wq.col(static_cast<Eigen::Index>(j)) *= q[j];
          MapMat(gi[0]->ptr(), l, plane).noalias() += wq.transpose() * gm;
        }
        if (gi[1]) {
          RowMat gw = gm * CMapMat(x.value().ptr(), l, plane).transpose();
          for (std::size_t j = 0; j < l; ++j) gw.col(static_cast<Eigen::Index>(j)) *= q[j];
          MapMat(gi[1]->ptr(), c, l) += gw;
        }
      });
}

// ------------------------------------------------------------ convolution

namespace {

// col[(i*kh+ky)*kw+kx][y*W+x] = x[i](y-ky+rh, x-kx+rw), zero outside.
void im2col(const double* x, std::size_t ci, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, double* col) {
  const long rh = static_cast<long>(kh / 2);
  const long rw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h);
  const long W = static_cast<long>(w);
  for (std::size_t i = 0; i < ci; ++i) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = col + ((i * kh + ky) * kw + kx) * h * w;
        const long oy = rh - static_cast<long>(ky);
        const long ox = rw - static_cast<long>(kx);
        for (long y = 0; y < H; ++y) {
          const long sy = y + oy;
          double* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* src = x + (i * h + static_cast<std::size_t>(sy)) * w;
          for (long xx = 0; xx < W; ++xx) {
            const long sx = xx + ox;
            dst[xx] = (sx < 0 || sx >= W) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t ci, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, double* x) {
  const long rh = static_cast<long>(kh / 2);
  const long rw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h);
  const long W = static_cast<long>(w);
  for (std::size_t i = 0; i < ci; ++i) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = col + ((i * kh + ky) * kw + kx) * h * w;
        const long oy = rh - static_cast<long>(ky);
        const long ox = rw - static_cast<long>(kx);
        const long x0 = std::max(0L, -ox);
        const long x1 = std::min(W, W - ox);
        for (long y = 0; y < H; ++y) {
          const long sy = y + oy;
          if (sy < 0 || sy >= H) continue;
          double* dst = x + (i * h + static_cast<std::size_t>(sy)) * w;
          const double* src = row + y * W;
          for (long xx = x0; xx < x1; ++xx) dst[xx + ox] += src[xx];
        }
      }
    }
  }
}

void require_odd_kernel(std::string_view op, std::size_t kh, std::size_t kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    shape_fail(op, "kernel size " + std::to_string(kh) + "x" + std::to_string(kw) + " must be odd");
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  const auto [ci, h, wd] = dims3(x);
  const std::size_t co = w.shape()[0];
  const std::size_t kh = w.shape()[2];
  const std::size_t kw = w.shape()[3];
  if (w.shape()[1] != ci) {
    shape_fail("conv2d", "weights " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  }
  require_odd_kernel("conv2d", kh, kw);
  if (bias.valid() && bias.shape() != Shape{co}) {
    shape_fail("conv2d", "bias " + shape_str(bias.shape()) + " for " + std::to_string(co) + " outputs");
  }
  const std::size_t plane = h * wd;
  const std::size_t rows = ci * kh * kw;
  AlignedVector col(rows * plane);
  im2col(x.value().ptr(), ci, h, wd, kh, kw, col.data());
  Tensor out(Shape{co, h, wd});
  MapMat om(out.ptr(), co, plane);
  om.noalias() = CMapMat(w.value().ptr(), co, rows) * CMapMat(col.data(), rows, plane);
  if (bias.valid()) {
    for (std::size_t o = 0; o < co; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];
  }
  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  const bool need_col = w.requires_grad();
  if (!need_col) col.clear();
  return tape_of(x, w).record(
      "conv2d", std::move(out), std::move(inputs),
      [w, ci, h, wd, co, kh, kw, plane, rows, col = std::move(col)](
          const Tensor& g, std::span<Tensor* const> gi) {
        CMapMat gm(g.ptr(), co, plane);
        if (gi[0]) {
          AlignedVector gcol(rows * plane);
          MapMat(gcol.data(), rows, plane).noalias() = CMapMat(w.value().ptr(), co, rows).transpose() * gm;
          col2im_add(gcol.data(), ci, h, wd, kh, kw, gi[0]->ptr());
        }
        if (gi[1]) {
          MapMat(gi[1]->ptr(), co, rows).noalias() += gm * CMapMat(col.data(), rows, plane).transpose();
        }
        if (gi.size() > 2 && gi[2]) {
          for (std::size_t o = 0; o < co; ++o) (*gi[2])[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
        }
      });
}

Var depthwise_conv2d(const Var& x, const Var& kernel) {
  require_rank("depthwise_conv2d", x, 3);
  require_rank("depthwise_conv2d", kernel, 3);
  const auto [c, h, w] = dims3(x);
  const std::size_t kh = kernel.shape()[1];
  const std::size_t kw = kernel.shape()[2];
  if (kernel.shape()[0] != c) {
    shape_fail("depthwise_conv2d", "kernel " + shape_str(kernel.shape()) + " vs input " +
                                       shape_str(x.shape()));
  }
  require_odd_kernel("depthwise_conv2d", kh, kw);
  const long rh = static_cast<long>(kh / 2);
  const long rw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h);
  const long W = static_cast<long>(w);

  // Visits every (output, input, tap) triple inside the image.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long oy = rh - static_cast<long>(ky);
          const long ox = rw - static_cast<long>(kx);
          const long y0 = std::max(0L, -oy), y1 = std::min(H, H - oy);
          const long x0 = std::max(0L, -ox), x1 = std::min(W, W - ox);
          const std::size_t kidx = (ch * kh + ky) * kw + kx;
          for (long y = y0; y < y1; ++y) {
            const std::size_t orow = (ch * h + static_cast<std::size_t>(y)) * w;
            const std::size_t irow = (ch * h + static_cast<std::size_t>(y + oy)) * w;
            fn(kidx, orow, irow, x0, x1, ox);
          }
        }
      }
    }
  };

  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  Tensor out(x.shape());
  for_taps([&](std::size_t kidx, std::size_t orow, std::size_t irow, long x0, long x1, long ox) {
    const double k = kv[kidx];
    if (k == 0.0) return;
    for (long xx = x0; xx < x1; ++xx) out[orow + xx] += k * xv[irow + xx + ox];
  });
  return tape_of(x, kernel).record(
      "depthwise_conv2d", std::move(out), {x, kernel},
      [x, kernel, for_taps](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = x.value();
        const Tensor& kv = kernel.value();
        for_taps([&](std::size_t kidx, std::size_t orow, std::size_t irow, long x0, long x1, long ox) {
          if (gi[0]) {
            const double k = kv[kidx];
            for (long xx = x0; xx < x1; ++xx) (*gi[0])[irow + xx + ox] += k * g[orow + xx];
          }
          if (gi[1]) {
            double acc = 0.0;
            for (long xx = x0; xx < x1; ++xx) acc += g[orow + xx] * xv[irow + xx + ox];
            (*gi[1])[kidx] += acc;
          }
        });
      });
}

Var flip2d(const Var& kernel) {
  require_rank("flip2d", kernel, 3);
  const auto [c, kh, kw] = dims3(kernel);
  auto flip = [c, kh, kw](const Tensor& src, Tensor& dst) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < kh; ++y) {
        for (std::size_t x = 0; x < kw; ++x) dst.at(ch, kh - 1 - y, kw - 1 - x) += src.at(ch, y, x);
      }
    }
  };
  Tensor out(kernel.shape());
  flip(kernel.value(), out);
  return tape_of(kernel).record("flip2d", std::move(out), {kernel},
                                [flip](const Tensor& g, std::span<Tensor* const> gi) { flip(g, *gi[0]); });
}

// ------------------------------------------------------- spatial reshaping

Var shift2d(const Var& x, std::vector<int> dy, std::vector<int> dx) {
  require_rank("shift2d", x, 3);
  const auto [c, h, w] = dims3(x);
  if (dy.size() != c || dx.size() != c) {
    shape_fail("shift2d", "need one offset per channel for " + shape_str(x.shape()));
  }
  const long H = static_cast<long>(h);
  const long W = static_cast<long>(w);
  // out[c](y,x) = in[c](y-dy, x-dx); fn(out_index, in_index)
  auto for_pairs = [=](auto&& fn) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (long y = 0; y < H; ++y) {
        const long sy = y - dy[ch];
        if (sy < 0 || sy >= H) continue;
        for (long xx = 0; xx < W; ++xx) {
          const long sx = xx - dx[ch];
          if (sx < 0 || sx >= W) continue;
          fn((ch * h + y) * w + xx, (ch * h + sy) * w + sx);
        }
      }
    }
  };
  const Tensor& xv = x.value();
  Tensor out(x.shape());
  for_pairs([&](std::size_t o, std::size_t i) { out[o] = xv[i]; });
  return tape_of(x).record("shift2d", std::move(out), {x},
                           [for_pairs](const Tensor& g, std::span<Tensor* const> gi) {
                             for_pairs([&](std::size_t o, std::size_t i) { (*gi[0])[i] += g[o]; });
                           });
}

Var pad2d(const Var& x, std::size_t top, std::size_t left, std::size_t bottom, std::size_t right) {
  require_rank("pad2d", x, 3);
  const auto [c, h, w] = dims3(x);
  const std::size_t oh = h + top + bottom;
  const std::size_t ow = w + left + right;
  Tensor out(Shape{c, oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(xv.ptr() + (ch * h + y) * w, w, out.ptr() + (ch * oh + y + top) * ow + left);
    }
  }
  return tape_of(x).record("pad2d", std::move(out), {x},
                           [c, h, w, oh, ow, top, left](const Tensor& g, std::span<Tensor* const> gi) {
                             for (std::size_t ch = 0; ch < c; ++ch) {
                               for (std::size_t y = 0; y < h; ++y) {
                                 for (std::size_t xx = 0; xx < w; ++xx) {
                                   gi[0]->at(ch, y, xx) += g[(ch * oh + y + top) * ow + left + xx];
                                 }
                               }
                             }
                           });
}

Var crop2d(const Var& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  require_rank("crop2d", x, 3);
  const auto [c, h, w] = dims3(x);
  if (top + height > h || left + width > w) {
    shape_fail("crop2d", "window " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                             std::to_string(top) + "," + std::to_string(left) + ") exceeds " +
                             shape_str(x.shape()));
  }
  Tensor out(Shape{c, height, width});
  const Tensor& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      std::copy_n(xv.ptr() + (ch * h + y + top) * w + left, width, out.ptr() + (ch * height + y) * width);
    }
  }
  return tape_of(x).record(
      "crop2d", std::move(out), {x},
      [c, h, w, top, left, height, width](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t xx = 0; xx < width; ++xx) {
              (*gi[0])[(ch * h + y + top) * w + left + xx] += g[(ch * height + y) * width + xx];
            }
          }
        }
      });
}

Var avg_pool2d(const Var& x, std::size_t f) {
  require_rank("avg_pool2d", x, 3);
  const auto [c, h, w] = dims3(x);
  if (f == 0 || h % f != 0 || w % f != 0) {
    shape_fail("avg_pool2d", "factor " + std::to_string(f) + " does not divide " + shape_str(x.shape()));
  }
  const std::size_t oh = h / f, ow = w / f;
  const double inv = 1.0 / static_cast<double>(f * f);
  Tensor out(Shape{c, oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) out.at(ch, y / f, xx / f) += xv.at(ch, y, xx) * inv;
    }
  }
  return tape_of(x).record("avg_pool2d", std::move(out), {x},
                           [c, h, w, f, inv](const Tensor& g, std::span<Tensor* const> gi) {
                             for (std::size_t ch = 0; ch < c; ++ch) {
                               for (std::size_t y = 0; y < h; ++y) {
                                 for (std::size_t xx = 0; xx < w; ++xx) {
                                   gi[0]->at(ch, y, xx) += g.at(ch, y / f, xx / f) * inv;
                                 }
                               }
                             }
                           });
}

Var upsample_nearest2d(const Var& x, std::size_t f) {
  require_rank("upsample_nearest2d", x, 3);
  if (f == 0) shape_fail("upsample_nearest2d", "factor must be positive");
  const auto [c, h, w] = dims3(x);
  const std::size_t oh = h * f, ow = w * f;
  Tensor out(Shape{c, oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) out.at(ch, y, xx) = xv.at(ch, y / f, xx / f);
    }
  }
  return tape_of(x).record("upsample_nearest2d", std::move(out), {x},
                           [c, oh, ow, f](const Tensor& g, std::span<Tensor* const> gi) {
                             for (std::size_t ch = 0; ch < c; ++ch) {
                               for (std::size_t y = 0; y < oh; ++y) {
                                 for (std::size_t xx = 0; xx < ow; ++xx) {
                                   gi[0]->at(ch, y / f, xx / f) += g.at(ch, y, xx);
                                 }
                               }
                             }
                           });
}

// ------------------------------------------------------------------ complex

namespace {

std::size_t complex_grid(std::string_view op, const Var& x) {
  const Shape& s = x.shape();
  if (s.size() < 3 || s.back() != 2 || s[s.size() - 2] != s[s.size() - 3]) {
    shape_fail(op, "expected [..., N, N, 2] complex grid, got " + shape_str(s));
  }
  const std::size_t n = s[s.size() - 2];
  if (!is_power_of_two(n)) {
    shape_fail(op, "grid size " + std::to_string(n) + " is not a power of two");
  }
  return n;
}

void require_complex(std::string_view op, const Var& x) {
  if (x.shape().empty() || x.shape().back() != 2) {
    shape_fail(op, "expected trailing complex dimension of 2, got " + shape_str(x.shape()));
  }
}

Var fft_impl(std::string_view op, const Var& x, bool inverse) {
  const std::size_t n = complex_grid(op, x);
  Tensor out = x.value();
  fft2_unitary(out.data(), n, inverse);
  // The adjoint of a unitary transform is its inverse.
  return tape_of(x).record(op, std::move(out), {x},
                           [n, inverse](const Tensor& g, std::span<Tensor* const> gi) {
                             Tensor t = g;
                             fft2_unitary(t.data(), n, !inverse);
                             *gi[0] += t;
                           });
}

}  // namespace

Var fft2(const Var& x) { return fft_impl("fft2", x, false); }
Var ifft2(const Var& x) { return fft_impl("ifft2", x, true); }

Var complex_exp(const Var& phase) {
  const Tensor& pv = phase.value();
  Shape s = pv.shape();
  s.push_back(2);
  Tensor out(s);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    out[2 * i] = std::cos(pv[i]);
    out[2 * i + 1] = std::sin(pv[i]);
  }
  // d/dphi exp(i phi) = i exp(i phi); reuse the forward values.
  Tensor saved = phase.requires_grad() ? out : Tensor();
  return tape_of(phase).record("complex_exp", std::move(out), {phase},
                               [saved = std::move(saved)](const Tensor& g, std::span<Tensor* const> gi) {
                                 for (std::size_t i = 0; i < gi[0]->size(); ++i) {
                                   (*gi[0])[i] += -g[2 * i] * saved[2 * i + 1] + g[2 * i + 1] * saved[2 * i];
                                 }
                               });
}

Var complex_mul(const Var& a, const Var& b) {
  require_complex("complex_mul", a);
  require_same("complex_mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); i += 2) {
    out[i] = av[i] * bv[i] - av[i + 1] * bv[i + 1];
    out[i + 1] = av[i] * bv[i + 1] + av[i + 1] * bv[i];
  }
  // d/da = g * conj(b), d/db = g * conj(a)
  return tape_of(a, b).record("complex_mul", std::move(out), {a, b},
                              [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                                const Tensor& av = a.value();
                                const Tensor& bv = b.value();
                                for (std::size_t i = 0; i < g.size(); i += 2) {
                                  const double gr = g[i], gim = g[i + 1];
                                  if (gi[0]) {
                                    (*gi[0])[i] += gr * bv[i] + gim * bv[i + 1];
                                    (*gi[0])[i + 1] += gim * bv[i] - gr * bv[i + 1];
                                  }
                                  if (gi[1]) {
                                    (*gi[1])[i] += gr * av[i] + gim * av[i + 1];
                                    (*gi[1])[i + 1] += gim * av[i] - gr * av[i + 1];
                                  }
                                }
                              });
}

Var complex_abs2(const Var& z) {
  require_complex("complex_abs2", z);
  const Tensor& zv = z.value();
  Shape s = zv.shape();
  s.pop_back();
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = zv[2 * i] * zv[2 * i] + zv[2 * i + 1] * zv[2 * i + 1];
  }
  return tape_of(z).record("complex_abs2", std::move(out), {z},
                           [z](const Tensor& g, std::span<Tensor* const> gi) {
                             const Tensor& zv = z.value();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               (*gi[0])[2 * i] += 2.0 * g[i] * zv[2 * i];
                               (*gi[0])[2 * i + 1] += 2.0 * g[i] * zv[2 * i + 1];
                             }
                           });
}

// --------------------------------------------------------------- grad check

namespace {

double eval_scalar(const GraphFn& f, std::span<const Tensor> inputs) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(t.constant(x));
  return f(t, vars).value().item();
}

}  // namespace

std::vector<double> grad_check(const GraphFn& f, std::span<const Tensor> inputs, double eps,
                               std::size_t max_coords, std::uint64_t seed, FdScheme scheme) {
  Tape t;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(t.leaf(x, true));
  const Gradients grads = t.backward(f(t, vars));

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  std::vector<double> errors(inputs.size(), 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = grads.of(vars[k]);
    std::vector<std::size_t> coords(inputs[k].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords != 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double x0 = probe[k][i];
      auto at = [&](double h) {
        probe[k][i] = x0 + h;
        const double v = eval_scalar(f, probe);
        probe[k][i] = x0;
        return v;
      };
      // Terms paired so a locally constant f gives exactly 0.
      auto central4 = [&](double h) { return (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h); };
      double fd = 0.0;
      if (scheme == FdScheme::Central2) {
        fd = (at(eps) - at(-eps)) / (2.0 * eps);
      } else if (scheme == FdScheme::Central4) {
        fd = central4(eps);
      } else {
        // Truncation estimate |cur - prev| plus a roundoff bound on f.
        const double round = 10.0 * std::numeric_limits<double>::epsilon() * std::abs(at(0.0));
        double prev = central4(eps), best_err = std::numeric_limits<double>::infinity();
        double h = eps;
        for (int j = 0; j < 6; ++j) {
          h /= 4.0;
          const double cur = central4(h);
          const double err = std::abs(cur - prev) + round / h;
          if (err < best_err) {
            best_err = err;
            fd = cur;
          }
          prev = cur;
        }
      }
      const double rel = std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-8);
      errors[k] = std::max(errors[k], rel);
    }
  }
  return errors;
}

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double eps) {
  GraphFn wrapped = [&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); };
  std::vector<Tensor> inputs{x};
  return grad_check(wrapped, inputs, eps)[0];
}

}  // namespace uem::ad
