#include "dopt/ndiff.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dopt::nd {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

double* GradOf(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  t.node()->EnsureGrad();
  return t.node()->grad.data();
}

void RequireRank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got " +
                             ShapeToString(t.shape()));
  }
}

void RequireSameShape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(op, ShapeToString(a.shape()) + " vs " +
                             ShapeToString(b.shape()));
  }
}

// Applies f elementwise; df(x, y) is the derivative given input and output.
template <typename F, typename DF>
Tensor Unary(Tape& tape, const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return tape.Record(a.shape(), std::move(out), {a}, [a, df](const Node& o) {
    double* ga = GradOf(a);
    const auto x = a.values();
    for (std::size_t i = 0; i < o.value.size(); ++i) {
      ga[i] += o.grad[i] * df(x[i], o.value[i]);
    }
  });
}

}  // namespace

std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": shape mismatch: " + detail) {}

Tensor Tensor::Constant(Shape shape, std::vector<double> values) {
  if (NumElements(shape) != values.size()) {
    throw ShapeError("Constant", ShapeToString(shape) + " with " +
                                     std::to_string(values.size()) +
                                     " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::Parameter(Shape shape, std::vector<double> values) {
  Tensor t = Constant(std::move(shape), std::move(values));
  t.node()->requires_grad = true;
  return t;
}

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  const std::size_t n = NumElements(shape);
  Tensor t = Constant(std::move(shape), std::vector<double>(n, 0.0));
  t.node()->requires_grad = requires_grad;
  return t;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item", "expected one element, got " +
                                 ShapeToString(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at", ShapeToString(shape()));
  return node_->value.at(r * node_->shape[1] + c);
}

Tensor Tape::Record(Shape shape, std::vector<double> value,
                    std::initializer_list<Tensor> inputs,
                    BackwardFn backward) {
  return Record(std::move(shape), std::move(value),
                std::vector<Tensor>(inputs), std::move(backward));
}

Tensor Tape::Record(Shape shape, std::vector<double> value,
                    const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->is_leaf = false;
  node->requires_grad =
      std::any_of(inputs.begin(), inputs.end(),
                  [](const Tensor& t) { return t.requires_grad(); });
  if (node->requires_grad) records_.push_back({node, std::move(backward)});
  return Tensor(std::move(node));
}

void Tape::Backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("Backward", "root must be scalar, got " +
                                     ShapeToString(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  for (auto& e : records_) e.output->grad.clear();
  loss.node()->EnsureGrad();
  loss.node()->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
}

Tensor MatMul(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireRank("MatMul", a, 2);
  RequireRank("MatMul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("MatMul", ShapeToString(a.shape()) + " x " +
                                   ShapeToString(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return tape.Record({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](const Node& o) {
                       ConstMap go(o.grad.data(), m, n);
                       if (double* ga = GradOf(a)) {
                         MutMap(ga, m, k).noalias() +=
                             go * ConstMap(b.values().data(), k, n).transpose();
                       }
                       if (double* gb = GradOf(b)) {
                         MutMap(gb, k, n).noalias() +=
                             ConstMap(a.values().data(), m, k).transpose() * go;
                       }
                     });
}

Tensor MatMulTransposed(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireRank("MatMulTransposed", a, 2);
  RequireRank("MatMulTransposed", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("MatMulTransposed", ShapeToString(a.shape()) + " x " +
                                             ShapeToString(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) *
      ConstMap(b.values().data(), n, k).transpose();
  return tape.Record({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](const Node& o) {
                       ConstMap go(o.grad.data(), m, n);
                       if (double* ga = GradOf(a)) {
                         MutMap(ga, m, k).noalias() +=
                             go * ConstMap(b.values().data(), n, k);
                       }
                       if (double* gb = GradOf(b)) {
                         MutMap(gb, n, k).noalias() +=
                             go.transpose() * ConstMap(a.values().data(), m, k);
                       }
                     });
}

namespace {

void RequireBroadcastable(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() &&
            std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  if (!ok) {
    throw ShapeError(op, ShapeToString(sa) + " vs " + ShapeToString(sb));
  }
}

}  // namespace

Tensor Add(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireBroadcastable("Add", a, b);
  const std::size_t n = a.size(), nb = b.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto vb = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] += vb[i % nb];
  return tape.Record(a.shape(), std::move(out), {a, b},
                     [a, b, n, nb](const Node& o) {
                       if (double* ga = GradOf(a)) {
                         for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
                       }
                       if (double* gb = GradOf(b)) {
                         for (std::size_t i = 0; i < n; ++i) {
                           gb[i % nb] += o.grad[i];
                         }
                       }
                     });
}

Tensor Sub(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireSameShape("Sub", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] - b.values()[i];
  return tape.Record(a.shape(), std::move(out), {a, b},
                     [a, b, n](const Node& o) {
                       if (double* ga = GradOf(a)) {
                         for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
                       }
                       if (double* gb = GradOf(b)) {
                         for (std::size_t i = 0; i < n; ++i) gb[i] -= o.grad[i];
                       }
                     });
}

Tensor Mul(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireSameShape("Mul", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] * b.values()[i];
  return tape.Record(a.shape(), std::move(out), {a, b},
                     [a, b, n](const Node& o) {
                       if (double* ga = GradOf(a)) {
                         for (std::size_t i = 0; i < n; ++i) {
                           ga[i] += o.grad[i] * b.values()[i];
                         }
                       }
                       if (double* gb = GradOf(b)) {
                         for (std::size_t i = 0; i < n; ++i) {
                           gb[i] += o.grad[i] * a.values()[i];
                         }
                       }
                     });
}

Tensor Affine(Tape& tape, const Tensor& a, double alpha, double beta) {
  return Unary(
      tape, a, [alpha, beta](double x) { return alpha * x + beta; },
      [alpha](double, double) { return alpha; });
}

Tensor Scale(Tape& tape, const Tensor& a, double alpha) {
  return Affine(tape, a, alpha, 0.0);
}

Tensor Reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (NumElements(shape) != a.size()) {
    throw ShapeError("Reshape", ShapeToString(a.shape()) + " -> " +
                                    ShapeToString(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return tape.Record(std::move(shape), std::move(out), {a}, [a](const Node& o) {
    double* ga = GradOf(a);
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
}

Tensor ConcatRows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("ConcatRows", "no inputs");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() == 0 ||
        !std::equal(trailing.begin(), trailing.end(), p.shape().begin() + 1,
                    p.shape().end())) {
      throw ShapeError("ConcatRows", ShapeToString(parts[0].shape()) + " vs " +
                                         ShapeToString(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), trailing.begin(), trailing.end());
  return tape.Record(std::move(shape), std::move(out), parts,
                     [parts](const Node& o) {
                       std::size_t offset = 0;
                       for (const auto& p : parts) {
                         if (double* gp = GradOf(p)) {
                           for (std::size_t i = 0; i < p.size(); ++i) {
                             gp[i] += o.grad[offset + i];
                           }
                         }
                         offset += p.size();
                       }
                     });
}

Tensor ConcatCols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("ConcatCols", "no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    RequireRank("ConcatCols", p, 2);
    if (p.dim(0) != m) {
      throw ShapeError("ConcatCols", ShapeToString(parts[0].shape()) + " vs " +
                                         ShapeToString(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<double> out(m * cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.values().data() + r * w, w, out.data() + r * cols + c0);
    }
    c0 += w;
  }
  return tape.Record({m, cols}, std::move(out), parts,
                     [parts, m, cols](const Node& o) {
                       std::size_t c0 = 0;
                       for (const auto& p : parts) {
                         const std::size_t w = p.dim(1);
                         if (double* gp = GradOf(p)) {
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t c = 0; c < w; ++c) {
                               gp[r * w + c] += o.grad[r * cols + c0 + c];
                             }
                           }
                         }
                         c0 += w;
                       }
                     });
}

Tensor Stack(Tape& tape, const std::vector<Tensor>& scalars) {
  std::vector<double> out;
  out.reserve(scalars.size());
  for (const auto& s : scalars) {
    if (s.size() != 1) {
      throw ShapeError("Stack", "non-scalar input " + ShapeToString(s.shape()));
    }
    out.push_back(s.values()[0]);
  }
  return tape.Record({scalars.size()}, std::move(out), scalars,
                     [scalars](const Node& o) {
                       for (std::size_t i = 0; i < scalars.size(); ++i) {
                         if (double* g = GradOf(scalars[i])) g[0] += o.grad[i];
                       }
                     });
}

Tensor SliceRows(Tape& tape, const Tensor& a, std::size_t start,
                 std::size_t count) {
  if (a.rank() == 0 || start + count > a.dim(0)) {
    throw ShapeError("SliceRows", ShapeToString(a.shape()) + " rows [" +
                                      std::to_string(start) + "," +
                                      std::to_string(start + count) + ")");
  }
  const std::size_t row = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  std::vector<double> out(a.values().begin() + start * row,
                          a.values().begin() + (start + count) * row);
  return tape.Record(std::move(shape), std::move(out), {a},
                     [a, start, row](const Node& o) {
                       double* ga = GradOf(a) + start * row;
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         ga[i] += o.grad[i];
                       }
                     });
}

Tensor SliceCols(Tape& tape, const Tensor& a, std::size_t start,
                 std::size_t count) {
  RequireRank("SliceCols", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (start + count > n) {
    throw ShapeError("SliceCols", ShapeToString(a.shape()) + " cols [" +
                                      std::to_string(start) + "," +
                                      std::to_string(start + count) + ")");
  }
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.values().data() + r * n + start, count,
                out.data() + r * count);
  }
  return tape.Record({m, count}, std::move(out), {a},
                     [a, start, count, m, n](const Node& o) {
                       double* ga = GradOf(a);
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t c = 0; c < count; ++c) {
                           ga[r * n + start + c] += o.grad[r * count + c];
                         }
                       }
                     });
}

Tensor GatherRows(Tape& tape, const Tensor& a,
                  std::span<const std::size_t> rows) {
  RequireRank("GatherRows", a, 2);
  const std::size_t d = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.dim(0)) {
      throw ShapeError("GatherRows", "row " + std::to_string(idx[i]) +
                                         " out of " +
                                         ShapeToString(a.shape()));
    }
    std::copy_n(a.values().data() + idx[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = idx.size();
  return tape.Record({n, d}, std::move(out), {a},
                     [a, idx = std::move(idx), d](const Node& o) {
                       double* ga = GradOf(a);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t c = 0; c < d; ++c) {
                           ga[idx[i] * d + c] += o.grad[i * d + c];
                         }
                       }
                     });
}

Tensor EmbeddingLookup(Tape& tape, const Tensor& table,
                       std::span<const std::int32_t> ids) {
  RequireRank("EmbeddingLookup", table, 2);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.dim(0)) {
      throw std::out_of_range("EmbeddingLookup: id " + std::to_string(id) +
                              " outside table " +
                              ShapeToString(table.shape()));
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return GatherRows(tape, table, rows);
}

Tensor Tanh(Tape& tape, const Tensor& a) {
  return Unary(
      tape, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Sigmoid(Tape& tape, const Tensor& a) {
  return Unary(
      tape, a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Gelu(Tape& tape, const Tensor& a) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return Unary(
      tape, a,
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
      },
      [](double x, double) {
        const double t = std::tanh(kC * (x + kA * x * x * x));
        return 0.5 * (1.0 + t) +
               0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

Tensor Log(Tape& tape, const Tensor& a) {
  return Unary(
      tape, a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor Softmax(Tape& tape, const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("Softmax", "scalar input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  std::vector<double> out(a.size());
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double* yr = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < d; ++c) yr[c] /= z;
  }
  return tape.Record(a.shape(), std::move(out), {a},
                     [a, d, rows](const Node& o) {
                       double* ga = GradOf(a);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = o.value.data() + r * d;
                         const double* gy = o.grad.data() + r * d;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < d; ++c) dot += gy[c] * y[c];
                         for (std::size_t c = 0; c < d; ++c) {
                           ga[r * d + c] += y[c] * (gy[c] - dot);
                         }
                       }
                     });
}

Tensor LayerNorm(Tape& tape, const Tensor& x, const Tensor& gain,
                 const Tensor& bias, double epsilon) {
  if (x.rank() == 0) throw ShapeError("LayerNorm", "scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("LayerNorm", ShapeToString(x.shape()) + " with gain " +
                                      ShapeToString(gain.shape()) +
                                      " bias " + ShapeToString(bias.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const auto v = x.values();
  const auto g = gain.values();
  const auto b = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mean) * inv_std[r];
      xhat[r * d + c] = h;
      out[r * d + c] = h * g[c] + b[c];
    }
  }
  return tape.Record(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const Node& o) {
        double* gx = GradOf(x);
        double* gg = GradOf(gain);
        double* gb = GradOf(bias);
        const auto g = gain.values();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = o.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          double mean_dxhat = 0.0, mean_dxhat_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = gy[c] * g[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_h += dxhat[c] * h[c];
            if (gg) gg[c] += gy[c] * h[c];
            if (gb) gb[c] += gy[c];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_h /= static_cast<double>(d);
          if (gx) {
            for (std::size_t c = 0; c < d; ++c) {
              gx[r * d + c] +=
                  inv_std[r] * (dxhat[c] - mean_dxhat - h[c] * mean_dxhat_h);
            }
          }
        }
      });
}

Tensor Dropout(Tape& tape, const Tensor& a, double rate,
               std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("Dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.size());
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < keep ? 1.0 / keep : 0.0;
  }
  return Mul(tape, a, Tensor::Constant(a.shape(), std::move(mask)));
}

Tensor CosineSimilarity(Tape& tape, const Tensor& a, const Tensor& b,
                        double epsilon) {
  if (a.size() != b.size()) {
    throw ShapeError("CosineSimilarity", ShapeToString(a.shape()) + " vs " +
                                             ShapeToString(b.shape()));
  }
  const auto va = a.values();
  const auto vb = b.values();
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
    aa += va[i] * va[i];
    bb += vb[i] * vb[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double denom = na * nb + epsilon;
  return tape.Record(
      {}, {dot / denom}, {a, b}, [a, b, dot, na, nb, denom](const Node& o) {
        const double g = o.grad[0];
        const auto va = a.values();
        const auto vb = b.values();
        // d/da = b/D - dot * nb * a / (na * D^2)
        if (double* ga = GradOf(a)) {
          const double ca = na > 0 ? dot * nb / (na * denom * denom) : 0.0;
          for (std::size_t i = 0; i < va.size(); ++i) {
            ga[i] += g * (vb[i] / denom - ca * va[i]);
          }
        }
        if (double* gb = GradOf(b)) {
          const double cb = nb > 0 ? dot * na / (nb * denom * denom) : 0.0;
          for (std::size_t i = 0; i < vb.size(); ++i) {
            gb[i] += g * (va[i] / denom - cb * vb[i]);
          }
        }
      });
}

Tensor CrossEntropy(Tape& tape, const Tensor& scores, std::size_t label) {
  RequireRank("CrossEntropy", scores, 1);
  const std::size_t n = scores.size();
  if (label >= n) {
    throw std::out_of_range("CrossEntropy: label " + std::to_string(label) +
                            " with " + std::to_string(n) + " scores");
  }
  const auto s = scores.values();
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return tape.Record({}, {lse - s[label]}, {scores},
                     [scores, label, lse, n](const Node& o) {
                       double* gs = GradOf(scores);
                       const auto s = scores.values();
                       for (std::size_t i = 0; i < n; ++i) {
                         const double p = std::exp(s[i] - lse);
                         gs[i] += o.grad[0] * (p - (i == label ? 1.0 : 0.0));
                       }
                     });
}

Tensor Sum(Tape& tape, const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return tape.Record({}, {total}, {a}, [a](const Node& o) {
    double* ga = GradOf(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += o.grad[0];
  });
}

Tensor Mean(Tape& tape, const Tensor& a) {
  if (a.size() == 0) throw ShapeError("Mean", "empty input");
  return Scale(tape, Sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

GradCheckReport FiniteDiffCheck(const LossFn& loss,
                                std::vector<Tensor> params,
                                std::vector<std::string> names, double eps) {
  names.resize(params.size());
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    tape.Backward(loss(tape));
  }
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    GradCheckEntry entry{names[pi].empty() ? "param" + std::to_string(pi)
                                           : names[pi],
                         p.size(), 0.0, 0.0};
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      double plus, minus;
      {
        Tape tape;
        plus = loss(tape).item();
      }
      values[i] = saved - eps;
      {
        Tape tape;
        minus = loss(tape).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double rel = abs_err / std::max({std::abs(analytic[i]),
                                             std::abs(numeric),
                                             kGradCheckFloor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  for (auto& p : params) p.zero_grad();
  return report;
}

double FiniteDiffCheck(const LossFn& loss, std::vector<Tensor> params,
                       double eps) {
  return FiniteDiffCheck(loss, std::move(params), {}, eps).max_rel_error;
}

}  // namespace dopt::nd
