#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stgat/errors.hpp"

namespace stgat::ad {

// Reverse-mode autodiff over dense 64-bit tensors (rank 1 and 2), sized for
// desk-scale graph models: a thread-local tape records ops in creation order
// and backward() replays it in reverse. One tape per training thread; eval
// code simply runs with no tape active and nothing is recorded.

using Shape = std::vector<std::size_t>;

struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  bool on_tape = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents
  const char* op = "leaf";

  std::size_t size() const { return val.size(); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor leaf(Shape shape, std::vector<double> values,
                     bool requires_grad);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->val.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& value() const { return n_->val; }
  std::vector<double>& value() { return n_->val; }
  const std::vector<double>& grad() const { return n_->grad; }
  std::vector<double>& grad() { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }

  double item() const;  // scalar tensors only

  void zero_grad() { n_->grad.assign(n_->val.size(), 0.0); }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// Convenience constructors (never require grad).
Tensor constant(Shape shape, std::vector<double> values);
Tensor scalar(double v);

// Recording scope. Constructing a Tape makes it the active tape for this
// thread; ops whose inputs require grad are recorded while one is active.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and walks the recorded ops in reverse,
  // accumulating (+=) into every requires_grad tensor reachable from loss.
  // Interior grads are reset here; leaf grads accumulate across calls.
  void backward(const Tensor& loss);

  // Drops the recorded ops so the tape can be reused for the next step.
  void clear();

  std::size_t size() const { return ops_.size(); }

  static Tape* active();
  void record(std::shared_ptr<Node> n);

 private:
  std::vector<std::shared_ptr<Node>> ops_;
};

// ---- forward ops ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// y = a + row vector b (b broadcast across rows; bias add)
Tensor add_rowvec(const Tensor& a, const Tensor& b);
// y = a * row vector b (b broadcast across rows)
Tensor mul_rowvec(const Tensor& a, const Tensor& b);
// y[i, :] = a[i, :] * v[i]  (v is n-vector or n x 1)
Tensor scale_rows(const Tensor& a, const Tensor& v);
// n x (K*B) -> n x K, summing each width-B block of columns
Tensor block_rowsum(const Tensor& a, std::size_t block);
// n x K -> n x (K*B), repeating each column B times
Tensor block_expand(const Tensor& a, std::size_t block);
// y = a * s where s is a scalar tensor (grad flows into s)
Tensor scalar_scale(const Tensor& a, const Tensor& s);
// y = k * a + c with plain constants
Tensor affine(const Tensor& a, double k, double c);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor powc(const Tensor& a, double p);
Tensor clamp(const Tensor& a, double lo, double hi);

// row-wise softmax; rank-1 input treated as a single row
Tensor softmax(const Tensor& a);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t j0, std::size_t j1);
Tensor slice_rows(const Tensor& a, std::size_t i0, std::size_t i1);

Tensor sum_all(const Tensor& a);   // -> 1x1
Tensor mean_all(const Tensor& a);  // -> 1x1
Tensor sum_axis0(const Tensor& a); // n x m -> 1 x m
Tensor sum_axis1(const Tensor& a); // n x m -> n x 1
Tensor mean_axis0(const Tensor& a);

// y[e, :] = a[index[e], :]
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index);
// out[s, :] = sum over rows e with segment[e] == s of a[e, :]
Tensor segment_sum(const Tensor& a, const std::vector<std::size_t>& segment,
                   std::size_t n_segments);

// Fused attention aggregation over an edge list. alpha is E x K (one
// coefficient per edge per head), feats is n x (K*B) with head k occupying
// columns [k*B, (k+1)*B). For every edge e: out[src[e], k*B+j] +=
// alpha[e,k] * feats[dst[e], k*B+j]. Equivalent to
// segment_sum(block_expand(alpha,B) * gather_rows(feats,dst), src, n) but
// never materializes the E x (K*B) intermediates.
Tensor attn_aggregate(const Tensor& alpha, const Tensor& feats,
                      const std::vector<std::size_t>& src,
                      const std::vector<std::size_t>& dst);

// column-wise softmax over the rows of `a` grouped by segment id; composed
// from exp/segment_sum/div with a detached per-segment max shift
Tensor segment_softmax(const Tensor& a, const std::vector<std::size_t>& segment,
                       std::size_t n_segments);

// Deterministic inverted dropout. The mask depends only on the key, so the
// same (seed, epoch, site) always yields the same mask.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t site = 0;
};
Tensor dropout(const Tensor& a, double p, const DropoutKey& key, bool train);

// Batch normalization over rows (features = columns). Running statistics
// live outside the graph and are updated only on train-mode forwards.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  void init(std::size_t features) {
    running_mean.assign(features, 0.0);
    running_var.assign(features, 1.0);
  }
};
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool train, double momentum = 0.1,
                 double eps = 1e-5);

}  // namespace stgat::ad
