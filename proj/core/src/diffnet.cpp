#include "secmlops/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "secmlops/error.hpp"

namespace secmlops::diffnet {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorKind::kShapeMismatch, "negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw Error(ErrorKind::kShapeMismatch,
                "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw Error(ErrorKind::kLossNotScalar, "tensor is not a scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Node node) {
  if (!node.value.all_finite()) throw Error(ErrorKind::kNonFiniteInput, "non-finite value produced on tape");
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::conv3x3(Var xv, Var wv, Var bv) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  const Tensor& b = value(bv);
  if (x.shape().size() != 3 || w.shape().size() != 4 || w.dim(2) != 3 || w.dim(3) != 3 ||
      w.dim(1) != x.dim(0) || b.shape() != Shape{w.dim(0)}) {
    throw Error(ErrorKind::kShapeMismatch, "conv3x3: x " + shape_string(x.shape()) + ", w " +
                                               shape_string(w.shape()) + ", b " + shape_string(b.shape()));
  }
  const int cin = x.dim(0), H = x.dim(1), W = x.dim(2), cout = w.dim(0);
  Tensor y({cout, H, W});
  for (int co = 0; co < cout; ++co) {
    double* yp = y.data().data() + static_cast<std::size_t>(co) * H * W;
    std::fill(yp, yp + static_cast<std::size_t>(H) * W, b[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const double* xp = x.data().data() + static_cast<std::size_t>(ci) * H * W;
      for (int kr = 0; kr < 3; ++kr) {
        for (int kc = 0; kc < 3; ++kc) {
          const double k = w[((static_cast<std::size_t>(co) * cin + ci) * 3 + kr) * 3 + kc];
          const int dr = kr - 1, dc = kc - 1;
          const int r0 = std::max(0, -dr), r1 = std::min(H, H - dr);
          const int c0 = std::max(0, -dc), c1 = std::min(W, W - dc);
          for (int r = r0; r < r1; ++r) {
            double* yrow = yp + static_cast<std::size_t>(r) * W;
            const double* xrow = xp + static_cast<std::size_t>(r + dr) * W + dc;
#pragma omp simd
            for (int c = c0; c < c1; ++c) yrow[c] += k * xrow[c];
          }
        }
      }
    }
  }
  Node n;
  n.op = Op::kConv3x3;
  n.value = std::move(y);
  n.in0 = xv.id;
  n.in1 = wv.id;
  n.in2 = bv.id;
  n.requires_grad = requires_grad(xv) || requires_grad(wv) || requires_grad(bv);
  return push(std::move(n));
}

Var Tape::avg_pool(Var xv, int r) {
  const Tensor& x = value(xv);
  if (r < 1 || x.shape().size() != 3 || x.dim(1) % r != 0 || x.dim(2) % r != 0) {
    throw Error(ErrorKind::kShapeMismatch, "avg_pool: " + shape_string(x.shape()) + " by " + std::to_string(r));
  }
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2), h = H / r, w = W / r;
  Tensor y({C, h, w});
  const double inv = 1.0 / (r * r);
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < H; ++i) {
      double* yrow = y.data().data() + (static_cast<std::size_t>(c) * h + i / r) * w;
      const double* xrow = x.data().data() + (static_cast<std::size_t>(c) * H + i) * W;
      for (int j = 0; j < w; ++j)
        for (int jj = 0; jj < r; ++jj) yrow[j] += xrow[j * r + jj] * inv;
    }
  }
  Node n;
  n.op = Op::kAvgPool;
  n.value = std::move(y);
  n.in0 = xv.id;
  n.param = r;
  n.requires_grad = requires_grad(xv);
  return push(std::move(n));
}

Var Tape::relu(Var xv) {
  Tensor y = value(xv);
  for (double& v : y.values()) v = v > 0 ? v : 0.0;
  Node n;
  n.op = Op::kRelu;
  n.value = std::move(y);
  n.in0 = xv.id;
  n.requires_grad = requires_grad(xv);
  return push(std::move(n));
}

Var Tape::sigmoid(Var xv) {
  Tensor y = value(xv);
  for (double& v : y.values()) v = sigmoid_scalar(v);
  Node n;
  n.op = Op::kSigmoid;
  n.value = std::move(y);
  n.in0 = xv.id;
  n.requires_grad = requires_grad(xv);
  return push(std::move(n));
}

Var Tape::affine(Var xv, Var wv, std::optional<Var> bv) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  if (x.shape().empty() || w.shape().size() != 2 || w.dim(1) != x.dim(0)) {
    throw Error(ErrorKind::kShapeMismatch, "affine: x " + shape_string(x.shape()) + ", w " + shape_string(w.shape()));
  }
  const int in = w.dim(1), out = w.dim(0);
  const std::size_t cols = x.size() / static_cast<std::size_t>(in);
  Shape yshape = x.shape();
  yshape[0] = out;
  Tensor y(yshape);
  if (bv) {
    const Tensor& b = value(*bv);
    if (b.shape() != Shape{out}) throw Error(ErrorKind::kShapeMismatch, "affine: bias " + shape_string(b.shape()));
    for (int o = 0; o < out; ++o) std::fill_n(y.data().data() + o * cols, cols, b[o]);
  }
  for (int o = 0; o < out; ++o) {
    double* yrow = y.data().data() + o * cols;
    for (int i = 0; i < in; ++i) {
      const double k = w[static_cast<std::size_t>(o) * in + i];
      const double* xrow = x.data().data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) yrow[c] += k * xrow[c];
    }
  }
  Node n;
  n.op = Op::kAffine;
  n.value = std::move(y);
  n.in0 = xv.id;
  n.in1 = wv.id;
  n.in2 = bv ? bv->id : -1;
  n.requires_grad = requires_grad(xv) || requires_grad(wv) || (bv && requires_grad(*bv));
  return push(std::move(n));
}

Var Tape::bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights) {
  const Tensor& z = value(logits);
  require_same_size(z, targets, "bce_with_logits targets");
  require_same_size(z, weights, "bce_with_logits weights");
  if (!targets.all_finite() || !weights.all_finite())
    throw Error(ErrorKind::kNonFiniteInput, "bce_with_logits: non-finite targets or weights");
  double total = 0, wsum = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (weights[i] == 0) continue;
    const double v = z[i];
    total += weights[i] * (std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::abs(v))));
    wsum += weights[i];
  }
  Node n;
  n.op = Op::kBce;
  n.value = Tensor::scalar(wsum > 0 ? total / wsum : 0.0);
  n.in0 = logits.id;
  n.aux0 = targets;
  n.aux1 = weights;
  n.requires_grad = requires_grad(logits);
  return push(std::move(n));
}

Var Tape::l1_loss(Var pred, const Tensor& target, const Tensor& weights) {
  const Tensor& p = value(pred);
  require_same_size(p, target, "l1_loss target");
  require_same_size(p, weights, "l1_loss weights");
  if (!target.all_finite() || !weights.all_finite())
    throw Error(ErrorKind::kNonFiniteInput, "l1_loss: non-finite target or weights");
  double total = 0, wsum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (weights[i] == 0) continue;
    total += weights[i] * std::abs(p[i] - target[i]);
    wsum += weights[i];
  }
  Node n;
  n.op = Op::kL1;
  n.value = Tensor::scalar(wsum > 0 ? total / wsum : 0.0);
  n.in0 = pred.id;
  n.aux0 = target;
  n.aux1 = weights;
  n.requires_grad = requires_grad(pred);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor y = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  Node n;
  n.op = Op::kAdd;
  n.value = std::move(y);
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor y = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  Node n;
  n.op = Op::kMul;
  n.value = std::move(y);
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::mean(Var x) {
  const Tensor& v = value(x);
  if (v.size() == 0) throw Error(ErrorKind::kShapeMismatch, "mean of empty tensor");
  const double s = std::accumulate(v.values().begin(), v.values().end(), 0.0);
  Node n;
  n.op = Op::kMean;
  n.value = Tensor::scalar(s / static_cast<double>(v.size()));
  n.in0 = x.id;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

const Tensor& Tape::grad(Var v) const {
  const Tensor& g = grads_.at(v.id);
  return g;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw Error(ErrorKind::kLossNotScalar, "backward needs a scalar loss, got " + shape_string(value(loss).shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Tensor(nodes_[i].value.shape(), 0.0);
  grads_[loss.id][0] = 1.0;

  auto wants = [&](int id) { return id >= 0 && nodes_[id].requires_grad; };

  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::kLeaf) continue;
    const Tensor& gy = grads_[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kConv3x3: {
        const Tensor& x = nodes_[n.in0].value;
        const Tensor& w = nodes_[n.in1].value;
        const int cin = x.dim(0), H = x.dim(1), W = x.dim(2), cout = w.dim(0);
        Tensor* gx = wants(n.in0) ? &grads_[n.in0] : nullptr;
        Tensor* gw = wants(n.in1) ? &grads_[n.in1] : nullptr;
        if (wants(n.in2)) {
          Tensor& gb = grads_[n.in2];
          for (int co = 0; co < cout; ++co) {
            const double* gp = gy.data().data() + static_cast<std::size_t>(co) * H * W;
            gb[co] += std::accumulate(gp, gp + static_cast<std::size_t>(H) * W, 0.0);
          }
        }
        if (!gx && !gw) break;
        for (int co = 0; co < cout; ++co) {
          const double* gp = gy.data().data() + static_cast<std::size_t>(co) * H * W;
          for (int ci = 0; ci < cin; ++ci) {
            const double* xp = x.data().data() + static_cast<std::size_t>(ci) * H * W;
            double* gxp = gx ? gx->data().data() + static_cast<std::size_t>(ci) * H * W : nullptr;
            for (int kr = 0; kr < 3; ++kr) {
              for (int kc = 0; kc < 3; ++kc) {
                const std::size_t widx = ((static_cast<std::size_t>(co) * cin + ci) * 3 + kr) * 3 + kc;
                const double k = w[widx];
                const int dr = kr - 1, dc = kc - 1;
                const int r0 = std::max(0, -dr), r1 = std::min(H, H - dr);
                const int c0 = std::max(0, -dc), c1 = std::min(W, W - dc);
                double acc = 0;
                for (int r = r0; r < r1; ++r) {
                  const double* grow = gp + static_cast<std::size_t>(r) * W;
                  const std::size_t xoff = static_cast<std::size_t>(r + dr) * W + dc;
                  if (gw) {
                    const double* xrow = xp + xoff;
#pragma omp simd reduction(+ : acc)
                    for (int c = c0; c < c1; ++c) acc += grow[c] * xrow[c];
                  }
                  if (gxp) {
                    double* gxrow = gxp + xoff;
#pragma omp simd
                    for (int c = c0; c < c1; ++c) gxrow[c] += k * grow[c];
                  }
                }
                if (gw) (*gw)[widx] += acc;
              }
            }
          }
        }
        break;
      }
      case Op::kAvgPool: {
        if (!wants(n.in0)) break;
        Tensor& gx = grads_[n.in0];
        const int r = n.param;
        const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2), h = H / r, w = W / r;
        const double inv = 1.0 / (r * r);
        for (int c = 0; c < C; ++c) {
          for (int i = 0; i < H; ++i) {
            const double* grow = gy.data().data() + (static_cast<std::size_t>(c) * h + i / r) * w;
            double* gxrow = gx.data().data() + (static_cast<std::size_t>(c) * H + i) * W;
            for (int j = 0; j < w; ++j) {
              const double g = grow[j] * inv;
              for (int jj = 0; jj < r; ++jj) gxrow[j * r + jj] += g;
            }
          }
        }
        break;
      }
      case Op::kRelu: {
        if (!wants(n.in0)) break;
        Tensor& gx = grads_[n.in0];
        const Tensor& x = nodes_[n.in0].value;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (x[i] > 0) gx[i] += gy[i];
        break;
      }
      case Op::kSigmoid: {
        if (!wants(n.in0)) break;
        Tensor& gx = grads_[n.in0];
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double s = n.value[i];
          gx[i] += gy[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::kAffine: {
        const Tensor& x = nodes_[n.in0].value;
        const Tensor& w = nodes_[n.in1].value;
        const int in = w.dim(1), out = w.dim(0);
        const std::size_t cols = x.size() / static_cast<std::size_t>(in);
        if (wants(n.in2)) {
          Tensor& gb = grads_[n.in2];
          for (int o = 0; o < out; ++o) {
            const double* grow = gy.data().data() + o * cols;
            gb[o] += std::accumulate(grow, grow + cols, 0.0);
          }
        }
        if (wants(n.in1)) {
          Tensor& gw = grads_[n.in1];
          for (int o = 0; o < out; ++o) {
            const double* grow = gy.data().data() + o * cols;
            for (int i = 0; i < in; ++i) {
              const double* xrow = x.data().data() + i * cols;
              double acc = 0;
              for (std::size_t c = 0; c < cols; ++c) acc += grow[c] * xrow[c];
              gw[static_cast<std::size_t>(o) * in + i] += acc;
            }
          }
        }
        if (wants(n.in0)) {
          Tensor& gx = grads_[n.in0];
          for (int o = 0; o < out; ++o) {
            const double* grow = gy.data().data() + o * cols;
            for (int i = 0; i < in; ++i) {
              const double k = w[static_cast<std::size_t>(o) * in + i];
              double* gxrow = gx.data().data() + i * cols;
              for (std::size_t c = 0; c < cols; ++c) gxrow[c] += k * grow[c];
            }
          }
        }
        break;
      }
      case Op::kBce: {
        if (!wants(n.in0)) break;
        Tensor& gz = grads_[n.in0];
        const Tensor& z = nodes_[n.in0].value;
        double wsum = 0;
        for (double wi : n.aux1.values()) wsum += wi;
        if (wsum <= 0) break;
        const double scale = gy[0] / wsum;
        for (std::size_t i = 0; i < z.size(); ++i) {
          if (n.aux1[i] == 0) continue;
          gz[i] += scale * n.aux1[i] * (sigmoid_scalar(z[i]) - n.aux0[i]);
        }
        break;
      }
      case Op::kL1: {
        if (!wants(n.in0)) break;
        Tensor& gp = grads_[n.in0];
        const Tensor& p = nodes_[n.in0].value;
        double wsum = 0;
        for (double wi : n.aux1.values()) wsum += wi;
        if (wsum <= 0) break;
        const double scale = gy[0] / wsum;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (n.aux1[i] == 0) continue;
          const double d = p[i] - n.aux0[i];
          const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
          gp[i] += scale * n.aux1[i] * s;
        }
        break;
      }
      case Op::kAdd: {
        for (int in : {n.in0, n.in1}) {
          if (!wants(in)) continue;
          Tensor& g = grads_[in];
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& a = nodes_[n.in0].value;
        const Tensor& b = nodes_[n.in1].value;
        if (wants(n.in0)) {
          Tensor& g = grads_[n.in0];
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * b[i];
        }
        if (wants(n.in1)) {
          Tensor& g = grads_[n.in1];
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * a[i];
        }
        break;
      }
      case Op::kMean: {
        if (!wants(n.in0)) break;
        Tensor& g = grads_[n.in0];
        const double s = gy[0] / static_cast<double>(g.size());
        for (double& v : g.values()) v += s;
        break;
      }
    }
  }
}

void ParamSet::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second)
    throw Error(ErrorKind::kInvalidConfig, "duplicate parameter '" + name + "'");
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::kUnknownId, "no parameter '" + name + "'");
  return it->second;
}

void ParamSet::assign(const std::string& name, Tensor value) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::kUnknownId, "no parameter '" + name + "'");
  require_same_shape(it->second, value, "ParamSet::assign");
  it->second = std::move(value);
}

std::span<double> ParamSet::mutable_data(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::kUnknownId, "no parameter '" + name + "'");
  return it->second.data();
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

ParamVars bind(Tape& tape, const ParamSet& params) {
  ParamVars vars;
  for (const auto& [name, t] : params.tensors()) vars.emplace(name, tape.leaf(t, true));
  return vars;
}

ParamGrads collect_gradients(const Tape& tape, const ParamVars& vars) {
  ParamGrads grads;
  for (const auto& [name, v] : vars) grads.emplace(name, tape.grad(v));
  return grads;
}

void accumulate(ParamGrads& out, const ParamGrads& g, double scale) {
  for (const auto& [name, t] : g) {
    auto it = out.find(name);
    if (it == out.end()) it = out.emplace(name, Tensor(t.shape(), 0.0)).first;
    require_same_shape(it->second, t, "accumulate");
    for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += scale * t[i];
  }
}

void sgd_step(ParamSet& params, const ParamGrads& grads, double lr) {
  for (const auto& [name, t] : params.tensors()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw Error(ErrorKind::kMissingGradient, "no gradient for '" + name + "'");
    require_same_shape(t, it->second, "sgd_step");
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) continue;
    auto w = params.mutable_data(name);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
  params.set_step(params.step() + 1);
}

}  // namespace secmlops::diffnet
