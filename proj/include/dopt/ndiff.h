// Minimal reverse-mode differentiation over dense row-major arrays.
//
// A Tensor is a shared handle to a Node holding values and (lazily) a
// gradient buffer. Operations are free functions that take the Tape they
// record onto; Tape::Backward() walks the records in reverse creation order.
// Leaf tensors created with Tensor::Parameter() accumulate gradients across
// backward calls until zero_grad() is called.

#ifndef DOPT_NDIFF_H_
#define DOPT_NDIFF_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dopt::nd {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::string& detail);
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched by backward
  bool requires_grad = false;
  bool is_leaf = true;

  void EnsureGrad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor Constant(Shape shape, std::vector<double> values);
  static Tensor Parameter(Shape shape, std::vector<double> values);
  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Scalar(double v) { return Constant({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  // Empty span if no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->EnsureGrad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Ordered record of differentiable operations. Confined to one thread.
class Tape {
 public:
  // Receives the output node whose gradient is populated.
  using BackwardFn = std::function<void(const Node&)>;

  // Creates the output node; records `backward` only when some input
  // requires a gradient.
  Tensor Record(Shape shape, std::vector<double> value,
                std::initializer_list<Tensor> inputs, BackwardFn backward);
  Tensor Record(Shape shape, std::vector<double> value,
                const std::vector<Tensor>& inputs, BackwardFn backward);

  // Propagates d(loss)/d(.) to every reachable tensor. Intermediate
  // gradients are reset first, leaf gradients accumulate.
  void Backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void Clear() { records_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    BackwardFn backward;
  };
  std::vector<Entry> records_;
};

// ---- operations -----------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
Tensor MatMul(Tape& tape, const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]
Tensor MatMulTransposed(Tape& tape, const Tensor& a, const Tensor& b);
// Elementwise sum; b's shape must equal a's or be a suffix of it (broadcast
// over a's leading axes).
Tensor Add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor Sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor Mul(Tape& tape, const Tensor& a, const Tensor& b);
// alpha * a + beta
Tensor Affine(Tape& tape, const Tensor& a, double alpha, double beta);
Tensor Scale(Tape& tape, const Tensor& a, double alpha);

// Same values viewed with a new shape of equal element count.
Tensor Reshape(Tape& tape, const Tensor& a, Shape shape);
// Concatenates along axis 0 (any rank, trailing dims must agree).
Tensor ConcatRows(Tape& tape, const std::vector<Tensor>& parts);
// Concatenates 2-D tensors along the last axis.
Tensor ConcatCols(Tape& tape, const std::vector<Tensor>& parts);
// Stacks scalars into a [n] vector.
Tensor Stack(Tape& tape, const std::vector<Tensor>& scalars);
Tensor SliceRows(Tape& tape, const Tensor& a, std::size_t start,
                 std::size_t count);
Tensor SliceCols(Tape& tape, const Tensor& a, std::size_t start,
                 std::size_t count);
Tensor GatherRows(Tape& tape, const Tensor& a,
                  std::span<const std::size_t> rows);
// table [V,d], ids -> [n,d]; ids must be < V.
Tensor EmbeddingLookup(Tape& tape, const Tensor& table,
                       std::span<const std::int32_t> ids);

Tensor Tanh(Tape& tape, const Tensor& a);
Tensor Sigmoid(Tape& tape, const Tensor& a);
// tanh approximation of the Gaussian error linear unit.
Tensor Gelu(Tape& tape, const Tensor& a);
Tensor Log(Tape& tape, const Tensor& a);
Tensor Softmax(Tape& tape, const Tensor& a);
Tensor LayerNorm(Tape& tape, const Tensor& x, const Tensor& gain,
                 const Tensor& bias, double epsilon = 1e-12);
// Multiplies by a Bernoulli(1-rate) mask scaled by 1/(1-rate).
Tensor Dropout(Tape& tape, const Tensor& a, double rate, std::mt19937_64& rng);

inline constexpr double kCosineEpsilon = 1e-8;
// a.b / (|a||b| + eps) over flattened operands of equal size; scalar result.
Tensor CosineSimilarity(Tape& tape, const Tensor& a, const Tensor& b,
                        double epsilon = kCosineEpsilon);
// -log softmax(scores)[label] for a [n] score vector; scalar result.
Tensor CrossEntropy(Tape& tape, const Tensor& scores, std::size_t label);
Tensor Sum(Tape& tape, const Tensor& a);
Tensor Mean(Tape& tape, const Tensor& a);

// ---- finite differences ---------------------------------------------------

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

// Relative error |a-n| / max(|a|, |n|, floor). The floor keeps gradients
// that are zero up to roundoff from dominating the report.
inline constexpr double kGradCheckFloor = 1e-6;

using LossFn = std::function<Tensor(Tape&)>;

// Compares tape gradients with central differences for every element of
// every parameter. Parameter values are restored on return.
GradCheckReport FiniteDiffCheck(const LossFn& loss,
                                std::vector<Tensor> params,
                                std::vector<std::string> names, double eps);
double FiniteDiffCheck(const LossFn& loss, std::vector<Tensor> params,
                       double eps);

}  // namespace dopt::nd

#endif  // DOPT_NDIFF_H_
