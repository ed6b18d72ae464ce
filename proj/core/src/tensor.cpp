#include "stgat/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stgat/rng.hpp"

namespace stgat::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw InternalError(std::string(op) + ": bad shape " + shape_str(a.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw InternalError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t dim_rows(const Shape& s) { return s.empty() ? 0 : s[0]; }
std::size_t dim_cols(const Shape& s) { return s.size() >= 2 ? s[1] : 1; }

// Creates the result node; records it on the active tape when gradients are
// being tracked, otherwise drops parents so eval forwards hold no graph.
Tensor make_op(const char* op, Shape shape, std::vector<double> val,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->op = op;
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p->requires_grad;
  Tape* tape = g_active_tape;
  if (any_grad && tape != nullptr) {
    n->requires_grad = true;
    n->on_tape = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
    tape->record(n);
  }
  return Tensor(n);
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::leaf(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  std::size_t expect = 1;
  for (auto e : shape) expect *= e;
  if (expect != values.size()) {
    throw InternalError("leaf: value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

std::size_t Tensor::rows() const { return dim_rows(n_->shape); }
std::size_t Tensor::cols() const { return dim_cols(n_->shape); }

double Tensor::item() const {
  if (size() != 1) throw InternalError("item: tensor is not scalar");
  return n_->val[0];
}

Tensor constant(Shape shape, std::vector<double> values) {
  return Tensor::leaf(std::move(shape), std::move(values), false);
}

Tensor scalar(double v) { return Tensor::leaf({1, 1}, {v}, false); }

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
  if (g_active_tape != nullptr) {
    throw InternalError("Tape: another tape is already active on this thread");
  }
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<Node> n) { ops_.push_back(std::move(n)); }

void Tape::clear() { ops_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw InternalError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  }
  if (ops_.empty()) throw InternalError("backward: tape is empty");
  if (!loss.requires_grad()) {
    throw InternalError("backward: loss does not depend on any parameter");
  }
  // interior grads are owned by this pass; leaf grads accumulate across calls
  for (auto& n : ops_) n->grad.assign(n->val.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (std::size_t i = ops_.size(); i-- > 0;) {
    Node& n = *ops_[i];
    if (n.backward_fn) {
      for (auto& p : n.parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n.backward_fn(n);
    }
  }
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    shape_error("matmul", a, b);
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m);
  {
    CMap ma(a.value().data(), n, k), mb(b.value().data(), k, m);
    MMap mo(out.data(), n, m);
    mo.noalias() = ma * mb;
  }
  return make_op("matmul", {n, m}, std::move(out), {a.node(), b.node()},
                 [n, k, m](Node& c) {
                   CMap gc(c.grad.data(), n, m);
                   Node& pa = *c.parents[0];
                   Node& pb = *c.parents[1];
                   if (pa.requires_grad) {
                     CMap mb(pb.val.data(), k, m);
                     MMap ga(pa.grad.data(), n, k);
                     ga.noalias() += gc * mb.transpose();
                   }
                   if (pb.requires_grad) {
                     CMap ma(pa.val.data(), n, k);
                     MMap gb(pb.grad.data(), k, m);
                     gb.noalias() += ma.transpose() * gc;
                   }
                 });
}

namespace {

// shared skeleton for elementwise binary ops
template <typename FwdFn, typename BwdFn>
Tensor binary_same_shape(const char* op, const Tensor& a, const Tensor& b,
                         FwdFn fwd, BwdFn bwd) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  return make_op(op, a.shape(), std::move(out), {a.node(), b.node()},
                 [n, bwd](Node& c) {
                   Node& pa = *c.parents[0];
                   Node& pb = *c.parents[1];
                   for (std::size_t i = 0; i < n; ++i) {
                     auto [da, db] = bwd(pa.val[i], pb.val[i], c.val[i]);
                     if (pa.requires_grad) pa.grad[i] += c.grad[i] * da;
                     if (pb.requires_grad) pb.grad[i] += c.grad[i] * db;
                   }
                 });
}

template <typename FwdFn, typename BwdFn>
Tensor unary_op(const char* op, const Tensor& a, FwdFn fwd, BwdFn bwd) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  return make_op(op, a.shape(), std::move(out), {a.node()},
                 [n, bwd](Node& c) {
                   Node& pa = *c.parents[0];
                   if (!pa.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i) {
                     pa.grad[i] += c.grad[i] * bwd(pa.val[i], c.val[i]);
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double) { return std::pair{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double out) {
        return std::pair{1.0 / y, -out / y};
      });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = a.cols();
  if (b.size() != m) shape_error("add_rowvec", a, b);
  std::vector<double> out(n * m);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] + bv[j];
  }
  return make_op("add_rowvec", a.shape(), std::move(out), {a.node(), b.node()},
                 [n, m](Node& c) {
                   Node& pa = *c.parents[0];
                   Node& pb = *c.parents[1];
                   if (pa.requires_grad) {
                     for (std::size_t i = 0; i < n * m; ++i)
                       pa.grad[i] += c.grad[i];
                   }
                   if (pb.requires_grad) {
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < m; ++j)
                         pb.grad[j] += c.grad[i * m + j];
                   }
                 });
}

Tensor mul_rowvec(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = a.cols();
  if (b.size() != m) shape_error("mul_rowvec", a, b);
  std::vector<double> out(n * m);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] * bv[j];
  }
  return make_op("mul_rowvec", a.shape(), std::move(out), {a.node(), b.node()},
                 [n, m](Node& c) {
                   Node& pa = *c.parents[0];
                   Node& pb = *c.parents[1];
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < m; ++j) {
                       if (pa.requires_grad)
                         pa.grad[i * m + j] += c.grad[i * m + j] * pb.val[j];
                       if (pb.requires_grad)
                         pb.grad[j] += c.grad[i * m + j] * pa.val[i * m + j];
                     }
                   }
                 });
}

Tensor block_rowsum(const Tensor& a, std::size_t block) {
  const std::size_t n = a.rows(), m = a.cols();
  if (block == 0 || m % block != 0) shape_error("block_rowsum", a);
  const std::size_t k = m / block;
  std::vector<double> out(n * k, 0.0);
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < k; ++g) {
      double s = 0.0;
      for (std::size_t j = 0; j < block; ++j) s += av[i * m + g * block + j];
      out[i * k + g] = s;
    }
  }
  return make_op("block_rowsum", {n, k}, std::move(out), {a.node()},
                 [n, m, k, block](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t g = 0; g < k; ++g) {
                       const double gr = c.grad[i * k + g];
                       for (std::size_t j = 0; j < block; ++j)
                         p.grad[i * m + g * block + j] += gr;
                     }
                   }
                 });
}

Tensor block_expand(const Tensor& a, std::size_t block) {
  const std::size_t n = a.rows(), k = a.cols();
  if (block == 0) shape_error("block_expand", a);
  const std::size_t m = k * block;
  std::vector<double> out(n * m);
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < k; ++g) {
      const double v = av[i * k + g];
      for (std::size_t j = 0; j < block; ++j) out[i * m + g * block + j] = v;
    }
  }
  return make_op("block_expand", {n, m}, std::move(out), {a.node()},
                 [n, m, k, block](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t g = 0; g < k; ++g) {
                       double s = 0.0;
                       for (std::size_t j = 0; j < block; ++j)
                         s += c.grad[i * m + g * block + j];
                       p.grad[i * k + g] += s;
                     }
                   }
                 });
}

Tensor scale_rows(const Tensor& a, const Tensor& v) {
  const std::size_t n = a.rows(), m = a.cols();
  if (v.size() != n) shape_error("scale_rows", a, v);
  std::vector<double> out(n * m);
  const auto& av = a.value();
  const auto& vv = v.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] * vv[i];
  }
  return make_op("scale_rows", a.shape(), std::move(out), {a.node(), v.node()},
                 [n, m](Node& c) {
                   Node& pa = *c.parents[0];
                   Node& pv = *c.parents[1];
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < m; ++j) {
                       if (pa.requires_grad)
                         pa.grad[i * m + j] += c.grad[i * m + j] * pv.val[i];
                       if (pv.requires_grad)
                         pv.grad[i] += c.grad[i * m + j] * pa.val[i * m + j];
                     }
                   }
                 });
}

Tensor scalar_scale(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) shape_error("scalar_scale", a, s);
  const std::size_t n = a.size();
  const double sv = s.value()[0];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * sv;
  return make_op("scalar_scale", a.shape(), std::move(out),
                 {a.node(), s.node()}, [n](Node& c) {
                   Node& pa = *c.parents[0];
                   Node& ps = *c.parents[1];
                   const double sv = ps.val[0];
                   for (std::size_t i = 0; i < n; ++i) {
                     if (pa.requires_grad) pa.grad[i] += c.grad[i] * sv;
                     if (ps.requires_grad) ps.grad[0] += c.grad[i] * pa.val[i];
                   }
                 });
}

Tensor affine(const Tensor& a, double k, double c) {
  return unary_op(
      "affine", a, [k, c](double x) { return k * x + c; },
      [k](double, double) { return k; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary_op(
      "elu", a,
      [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(
      "leaky_relu", a,
      [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor powc(const Tensor& a, double p) {
  return unary_op(
      "powc", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op(
      "clamp", a,
      [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& a) {
  const bool vector_in = a.shape().size() == 1;
  const std::size_t n = vector_in ? 1 : a.rows();
  const std::size_t m = vector_in ? a.size() : a.cols();
  std::vector<double> out(n * m);
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = av[i * m];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, av[i * m + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = std::exp(av[i * m + j] - mx);
      sum += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= sum;
  }
  return make_op("softmax", a.shape(), std::move(out), {a.node()},
                 [n, m](Node& c) {
                   Node& pa = *c.parents[0];
                   if (!pa.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < m; ++j)
                       dot += c.grad[i * m + j] * c.val[i * m + j];
                     for (std::size_t j = 0; j < m; ++j)
                       pa.grad[i * m + j] +=
                           c.val[i * m + j] * (c.grad[i * m + j] - dot);
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InternalError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t m = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != n) shape_error("concat_cols", parts[0], p);
    widths.push_back(p.cols());
    m += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(n * m);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * m + off + j] = pv[i * w + j];
    off += w;
  }
  return make_op("concat_cols", {n, m}, std::move(out), std::move(parents),
                 [n, m, widths](Node& c) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     Node& p = *c.parents[k];
                     const std::size_t w = widths[k];
                     if (p.requires_grad) {
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           p.grad[i * w + j] += c.grad[i * m + off + j];
                     }
                     off += w;
                   }
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InternalError("concat_rows: no inputs");
  const std::size_t m = parts[0].cols();
  std::size_t n = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    if (p.cols() != m) shape_error("concat_rows", parts[0], p);
    heights.push_back(p.rows());
    n += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(n * m);
  for (const auto& p : parts)
    out.insert(out.end(), p.value().begin(), p.value().end());
  return make_op("concat_rows", {n, m}, std::move(out), std::move(parents),
                 [m, heights](Node& c) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < heights.size(); ++k) {
                     Node& p = *c.parents[k];
                     const std::size_t h = heights[k];
                     if (p.requires_grad) {
                       for (std::size_t i = 0; i < h * m; ++i)
                         p.grad[i] += c.grad[off + i];
                     }
                     off += h * m;
                   }
                 });
}

Tensor slice_cols(const Tensor& a, std::size_t j0, std::size_t j1) {
  const std::size_t n = a.rows(), m = a.cols();
  if (j0 >= j1 || j1 > m) shape_error("slice_cols", a);
  const std::size_t w = j1 - j0;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out[i * w + j] = a.value()[i * m + j0 + j];
  return make_op("slice_cols", {n, w}, std::move(out), {a.node()},
                 [n, m, j0, w](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < w; ++j)
                       p.grad[i * m + j0 + j] += c.grad[i * w + j];
                 });
}

Tensor slice_rows(const Tensor& a, std::size_t i0, std::size_t i1) {
  const std::size_t n = a.rows(), m = a.cols();
  if (i0 >= i1 || i1 > n) shape_error("slice_rows", a);
  const std::size_t h = i1 - i0;
  std::vector<double> out(a.value().begin() + i0 * m,
                          a.value().begin() + i1 * m);
  return make_op("slice_rows", {h, m}, std::move(out), {a.node()},
                 [m, i0, h](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < h * m; ++i)
                     p.grad[i0 * m + i] += c.grad[i];
                 });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  const std::size_t n = a.size();
  return make_op("sum_all", {1, 1}, {s}, {a.node()}, [n](Node& c) {
    Node& p = *c.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < n; ++i) p.grad[i] += c.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  const std::size_t n = a.size();
  return make_op("mean_all", {1, 1}, {s / static_cast<double>(n)}, {a.node()},
                 [n](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   const double g = c.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i) p.grad[i] += g;
                 });
}

Tensor sum_axis0(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += a.value()[i * m + j];
  return make_op("sum_axis0", {1, m}, std::move(out), {a.node()},
                 [n, m](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j)
                       p.grad[i * m + j] += c.grad[j];
                 });
}

Tensor sum_axis1(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += a.value()[i * m + j];
  return make_op("sum_axis1", {n, 1}, std::move(out), {a.node()},
                 [n, m](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j)
                       p.grad[i * m + j] += c.grad[i];
                 });
}

Tensor mean_axis0(const Tensor& a) {
  const std::size_t n = a.rows();
  return affine(sum_axis0(a), 1.0 / static_cast<double>(n), 0.0);
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  const std::size_t m = a.cols(), e = index.size(), n = a.rows();
  for (auto idx : index) {
    if (idx >= n) throw InternalError("gather_rows: index out of range");
  }
  std::vector<double> out(e * m);
  for (std::size_t r = 0; r < e; ++r)
    for (std::size_t j = 0; j < m; ++j)
      out[r * m + j] = a.value()[index[r] * m + j];
  return make_op("gather_rows", {e, m}, std::move(out), {a.node()},
                 [m, index](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t r = 0; r < index.size(); ++r)
                     for (std::size_t j = 0; j < m; ++j)
                       p.grad[index[r] * m + j] += c.grad[r * m + j];
                 });
}

Tensor segment_sum(const Tensor& a, const std::vector<std::size_t>& segment,
                   std::size_t n_segments) {
  const std::size_t e = a.rows(), m = a.cols();
  if (segment.size() != e) shape_error("segment_sum", a);
  for (auto s : segment) {
    if (s >= n_segments) throw InternalError("segment_sum: id out of range");
  }
  std::vector<double> out(n_segments * m, 0.0);
  for (std::size_t r = 0; r < e; ++r)
    for (std::size_t j = 0; j < m; ++j)
      out[segment[r] * m + j] += a.value()[r * m + j];
  return make_op("segment_sum", {n_segments, m}, std::move(out), {a.node()},
                 [m, segment](Node& c) {
                   Node& p = *c.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t r = 0; r < segment.size(); ++r)
                     for (std::size_t j = 0; j < m; ++j)
                       p.grad[r * m + j] += c.grad[segment[r] * m + j];
                 });
}

Tensor attn_aggregate(const Tensor& alpha, const Tensor& feats,
                      const std::vector<std::size_t>& src,
                      const std::vector<std::size_t>& dst) {
  const std::size_t e_count = alpha.rows(), k = alpha.cols();
  const std::size_t n = feats.rows(), m = feats.cols();
  if (m % k != 0 || src.size() != e_count || dst.size() != e_count) {
    shape_error("attn_aggregate", alpha, feats);
  }
  const std::size_t b = m / k;
  for (std::size_t e = 0; e < e_count; ++e) {
    if (src[e] >= n || dst[e] >= n) {
      throw InternalError("attn_aggregate: edge endpoint out of range");
    }
  }
  std::vector<double> out(n * m, 0.0);
  {
    const double* av = alpha.value().data();
    const double* fv = feats.value().data();
    for (std::size_t e = 0; e < e_count; ++e) {
      double* orow = out.data() + src[e] * m;
      const double* frow = fv + dst[e] * m;
      const double* arow = av + e * k;
      for (std::size_t g = 0; g < k; ++g) {
        const double w = arow[g];
        for (std::size_t j = 0; j < b; ++j) {
          orow[g * b + j] += w * frow[g * b + j];
        }
      }
    }
  }
  return make_op(
      "attn_aggregate", {n, m}, std::move(out), {alpha.node(), feats.node()},
      [e_count, k, b, m, src, dst](Node& c) {
        Node& pa = *c.parents[0];
        Node& pf = *c.parents[1];
        for (std::size_t e = 0; e < e_count; ++e) {
          const double* grow = c.grad.data() + src[e] * m;
          const double* frow = pf.val.data() + dst[e] * m;
          const double* arow = pa.val.data() + e * k;
          for (std::size_t g = 0; g < k; ++g) {
            if (pa.requires_grad) {
              double s = 0.0;
              for (std::size_t j = 0; j < b; ++j) {
                s += grow[g * b + j] * frow[g * b + j];
              }
              pa.grad[e * k + g] += s;
            }
            if (pf.requires_grad) {
              double* fgrow = pf.grad.data() + dst[e] * m;
              const double w = arow[g];
              for (std::size_t j = 0; j < b; ++j) {
                fgrow[g * b + j] += w * grow[g * b + j];
              }
            }
          }
        }
      });
}

Tensor segment_softmax(const Tensor& a, const std::vector<std::size_t>& segment,
                       std::size_t n_segments) {
  const std::size_t m = a.cols();
  if (segment.size() != a.rows()) shape_error("segment_softmax", a);
  // per-(segment, column) max shift is detached; exact for softmax
  std::vector<double> mx(n_segments * m, -1e300);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      double& slot = mx[segment[r] * m + j];
      slot = std::max(slot, a.value()[r * m + j]);
    }
  }
  std::vector<double> shift(segment.size() * m);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      shift[r * m + j] = mx[segment[r] * m + j];
    }
  }
  Tensor e = exp(sub(a, constant(a.shape(), std::move(shift))));
  Tensor denom = gather_rows(segment_sum(e, segment, n_segments), segment);
  return div(e, denom);
}

Tensor dropout(const Tensor& a, double p, const DropoutKey& key, bool train) {
  if (!train || p == 0.0) return a;
  if (p < 0.0 || p >= 1.0) throw InternalError("dropout: p outside [0,1)");
  const std::size_t n = a.size();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t h = mix_seed(key.seed, key.epoch, key.site, i);
    double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    mask[i] = u >= p ? keep_scale : 0.0;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * mask[i];
  return make_op("dropout", a.shape(), std::move(out), {a.node()},
                 [n, mask](Node& c) {
                   Node& pa = *c.parents[0];
                   if (!pa.requires_grad) return;
                   for (std::size_t i = 0; i < n; ++i)
                     pa.grad[i] += c.grad[i] * mask[i];
                 });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool train, double momentum,
                 double eps) {
  const std::size_t n = x.rows(), m = x.cols();
  if (gamma.size() != m || beta.size() != m) shape_error("batchnorm", x, gamma);
  if (state.running_mean.size() != m) state.init(m);

  std::vector<double> mean(m), inv_std(m), xhat(n * m), out(n * m);
  if (train) {
    if (n < 1) throw InternalError("batchnorm: empty batch");
    for (std::size_t j = 0; j < m; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += x.value()[i * m + j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double d = x.value()[i * m + j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);  // biased, used for normalization
      mean[j] = mu;
      inv_std[j] = 1.0 / std::sqrt(var + eps);
      double var_unbiased =
          n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1)
                : var;
      state.running_mean[j] =
          (1.0 - momentum) * state.running_mean[j] + momentum * mu;
      state.running_var[j] =
          (1.0 - momentum) * state.running_var[j] + momentum * var_unbiased;
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) {
      mean[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (x.value()[i * m + j] - mean[j]) * inv_std[j];
      out[i * m + j] = gamma.value()[j] * xhat[i * m + j] + beta.value()[j];
    }
  }
  return make_op(
      "batchnorm", x.shape(), std::move(out),
      {x.node(), gamma.node(), beta.node()},
      [n, m, inv_std, xhat, train](Node& c) {
        Node& px = *c.parents[0];
        Node& pg = *c.parents[1];
        Node& pb = *c.parents[2];
        for (std::size_t j = 0; j < m; ++j) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_g += c.grad[i * m + j];
            sum_gx += c.grad[i * m + j] * xhat[i * m + j];
          }
          if (pg.requires_grad) pg.grad[j] += sum_gx;
          if (pb.requires_grad) pb.grad[j] += sum_g;
          if (px.requires_grad) {
            const double gj = pg.val[j];
            if (train) {
              const double inv_n = 1.0 / static_cast<double>(n);
              for (std::size_t i = 0; i < n; ++i) {
                px.grad[i * m + j] +=
                    gj * inv_std[j] *
                    (c.grad[i * m + j] - sum_g * inv_n -
                     xhat[i * m + j] * sum_gx * inv_n);
              }
            } else {
              for (std::size_t i = 0; i < n; ++i)
                px.grad[i * m + j] += gj * inv_std[j] * c.grad[i * m + j];
            }
          }
        }
      });
}

}  // namespace stgat::ad
