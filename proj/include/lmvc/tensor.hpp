#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lmvc/common.hpp"

namespace lmvc {

struct AttnMask;  // masks.hpp

class Tensor;

struct AutogradNode {
  std::vector<Tensor> parents;
  // Reads out.grad and accumulates into the parents' grad buffers.
  std::function<void(const Tensor& out)> backward;
};

// Dense row-major fp64 tensor with optional gradient buffer and an optional
// autograd edge. Copies are shallow (shared storage); ops return fresh
// storage, so values behave immutably unless data() is written directly.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, bool requires_grad);

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, double stddev, Rng& rng, bool requires_grad = false);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  size_t numel() const;
  int rows() const;  // 2-D only
  int cols() const;

  bool defined() const { return data_ != nullptr; }
  bool requires_grad() const { return requires_grad_; }

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  // Mutable view of the (shared) gradient storage; backward passes accumulate
  // through const parent references without touching the tensor's value.
  std::vector<double>& grad_buffer() const;
  bool has_grad() const { return grad_ != nullptr; }
  void zero_grad();

  double value() const;  // scalar tensors
  double at(int r, int c) const { return (*data_)[static_cast<size_t>(r) * cols_cache_ + c]; }
  double& at(int r, int c) { return (*data_)[static_cast<size_t>(r) * cols_cache_ + c]; }

  // Runs reverse-mode accumulation from this scalar.
  void backward() const;

  std::shared_ptr<AutogradNode> node;

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
  size_t cols_cache_ = 0;
};

// Builds an op result: allocates storage, wires parents and the backward
// closure when gradients are enabled and any parent needs them.
Tensor make_op_output(std::vector<int> shape, std::vector<Tensor> parents,
                      std::function<void(const Tensor&)> backward);

// Thread-local switch; when off, ops skip building autograd edges.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// ---- differentiable ops -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sum(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Softmax per row with hard masking: disallowed entries get probability
// exactly 0 (additive -inf before the exp, then explicit zeroing).
Tensor masked_softmax_rows(const Tensor& logits, const AttnMask& mask);

// Mean of -log softmax(logits)[target] over rows whose target != ignore_id.
// All rows ignored yields 0 with zero gradient.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id);
// Sum-reduction variant used for position-weighted batch averages.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, int ignore_id,
                         int* active_count = nullptr);

Tensor embedding_rows(const Tensor& table, std::span<const int> row_ids);
// Per output row, sum of several table rows (codec layer sums in the PLM).
Tensor embedding_sum_rows(const Tensor& table, const std::vector<std::vector<int>>& row_ids);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int begin, int end);

// Fused multi-head self-attention: per head, softmax(Q Kt / sqrt(hd)) V with
// the boolean mask applied to the score matrix.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask& mask,
                            int num_heads);

// Inverted dropout; identity when rng is null or p == 0.
Tensor dropout(const Tensor& x, double p, Rng* rng);

// ---- raw kernels shared by autograd and inference paths -----------------

namespace detail {
// c[m,n] (+)= a[m,k] * b[k,n]; _nt means b given as [n,k], _tn a as [k,m].
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void layer_norm_row(const double* x, const double* gain, const double* bias, double* out, int n,
                    double eps, double* mean_out = nullptr, double* rstd_out = nullptr);
double gelu_one(double x);
double gelu_grad_one(double x);
// log softmax of a dense row.
void log_softmax_row(const double* x, double* out, int n);
}  // namespace detail

}  // namespace lmvc
