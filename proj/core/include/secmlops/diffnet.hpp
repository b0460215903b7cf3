#pragma once

// Dense float64 tensors with a reverse-mode tape. The op set is exactly what
// the center-heatmap detector and the attacks need; gradients with respect to
// inputs are produced the same way as gradients with respect to parameters.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace secmlops::diffnet {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  int dim(std::size_t i) const { return shape_.at(i); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // x [Cin,H,W], w [Cout,Cin,3,3], b [Cout] -> [Cout,H,W]; stride 1, zero pad.
  Var conv3x3(Var x, Var w, Var b);
  // Non-overlapping r x r average pooling; [C,H,W] -> [C,H/r,W/r].
  Var avg_pool(Var x, int r);
  Var relu(Var x);
  Var sigmoid(Var x);
  // x [In, ...], w [Out, In], optional b [Out] -> [Out, ...]. Acts as a 1x1
  // convolution when x carries trailing spatial dims.
  Var affine(Var x, Var w, std::optional<Var> b = std::nullopt);
  // Weighted mean of elementwise BCE; targets/weights are constants.
  Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights);
  // Weighted mean absolute error; zero when all weights are zero.
  Var l1_loss(Var pred, const Tensor& target, const Tensor& weights);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var mean(Var x);

  // Reverse sweep from a scalar node. Each node is visited once, in reverse
  // recording order. Throws Error(kLossNotScalar).
  void backward(Var loss);
  // Gradient of the last backward() with respect to v; zeros if v did not
  // influence the loss.
  const Tensor& grad(Var v) const;

 private:
  enum class Op { kLeaf, kConv3x3, kAvgPool, kRelu, kSigmoid, kAffine, kBce, kL1, kAdd, kMul, kMean };

  struct Node {
    Op op = Op::kLeaf;
    Tensor value;
    int in0 = -1, in1 = -1, in2 = -1;
    int param = 0;
    Tensor aux0, aux1;
    bool requires_grad = false;
  };

  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Named parameter tensors. Names are unique and iteration is sorted by name,
// which fixes the checkpoint layout.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  // Replaces the values; the shape must match.
  void assign(const std::string& name, Tensor value);
  std::span<double> mutable_data(const std::string& name);

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }
  std::size_t parameter_count() const;

  bool operator==(const ParamSet&) const = default;

 private:
  std::map<std::string, Tensor> tensors_;
  std::uint64_t step_ = 0;
};

using ParamGrads = std::map<std::string, Tensor>;
using ParamVars = std::map<std::string, Var>;

// Records every parameter as a leaf that requires grad.
ParamVars bind(Tape& tape, const ParamSet& params);
ParamGrads collect_gradients(const Tape& tape, const ParamVars& vars);
// out += scale * g, elementwise per parameter (missing entries are created).
void accumulate(ParamGrads& out, const ParamGrads& g, double scale = 1.0);

// w <- w - lr * g for every parameter. Throws Error(kMissingGradient) when a
// parameter has no gradient, Error(kShapeMismatch) on shape disagreement.
void sgd_step(ParamSet& params, const ParamGrads& grads, double lr);

// Checkpoint = <stem>.json manifest (names, shapes, offsets, SHA-256 of the
// blob) + <stem>.bin blob of concatenated little-endian float64 values.
void save_checkpoint(const ParamSet& params, const std::filesystem::path& stem);
ParamSet load_checkpoint(const std::filesystem::path& stem);
// SHA-256 hex of the blob bytes (the manifest digest).
std::string params_digest(const ParamSet& params);

}  // namespace secmlops::diffnet
