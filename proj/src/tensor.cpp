#include "lmvc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "lmvc/masks.hpp"

namespace lmvc {

namespace {

thread_local bool g_grad_enabled = true;

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor::Tensor(std::vector<int> shape, bool requires_grad)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)),
      requires_grad_(requires_grad) {
  cols_cache_ = shape_.empty() ? 1 : static_cast<size_t>(shape_.back());
  // Gradient storage is born with the tensor so every shallow copy shares it;
  // allocating later would scatter accumulation across copies.
  if (requires_grad_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  if (values.size() != t.numel()) throw ShapeError("value count does not match shape");
  t.data() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, double stddev, Rng& rng, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

int Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("rows() on non-2D tensor");
  return shape_[0];
}

int Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("cols() on non-2D tensor");
  return shape_[1];
}

std::vector<double>& Tensor::grad() {
  if (!grad_) throw NumericError("gradient buffer not allocated");
  return *grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw NumericError("gradient buffer not allocated");
  return *grad_;
}

std::vector<double>& Tensor::grad_buffer() const {
  if (!grad_) throw NumericError("gradient buffer not allocated");
  return *grad_;
}

void Tensor::zero_grad() {
  if (!grad_) {
    grad_ = std::make_shared<std::vector<double>>(numel(), 0.0);
  } else {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  }
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value() on non-scalar tensor");
  return (*data_)[0];
}

Tensor make_op_output(std::vector<int> shape, std::vector<Tensor> parents,
                      std::function<void(const Tensor&)> backward) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
  }
  Tensor out(std::move(shape), needs);
  if (needs) {
    out.node = std::make_shared<AutogradNode>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(backward);
  }
  return out;
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar loss");
  if (!requires_grad_) return;

  // Iterative topological order over the node graph.
  std::vector<const Tensor*> order;
  std::unordered_set<const AutogradNode*> seen;
  struct Frame {
    const Tensor* t;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (node) stack.push_back({this, 0});
  if (node) seen.insert(node.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& nd = *f.t->node;
    if (f.next_parent < nd.parents.size()) {
      const Tensor& p = nd.parents[f.next_parent++];
      if (p.node && !seen.contains(p.node.get())) {
        seen.insert(p.node.get());
        stack.push_back({&p, 0});
      }
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }

  (*grad_)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = **it;
    t.node->backward(t);
  }
}

// ---- raw kernels ----------------------------------------------------------

namespace detail {

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  // b is [n, k]; c[i,j] = dot(a_row_i, b_row_j)
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  // a is [k, m]; c[i,j] = sum_p a[p,i] * b[p,j]
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void layer_norm_row(const double* x, const double* gain, const double* bias, double* out, int n,
                    double eps, double* mean_out, double* rstd_out) {
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += x[i];
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + eps);
  for (int i = 0; i < n; ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
  if (mean_out) *mean_out = mean;
  if (rstd_out) *rstd_out = rstd;
}

double gelu_one(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad_one(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

void log_softmax_row(const double* x, double* out, int n) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
  const double lse = m + std::log(s);
  for (int i = 0; i < n; ++i) out[i] = x[i] - lse;
}

}  // namespace detail

// ---- differentiable ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul expects 2-D tensors");
  if (a.cols() != b.rows())
    throw ShapeError("matmul inner dimensions disagree: " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_op_output({m, n}, {a, b}, [m, k, n](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    if (pa.requires_grad())
      detail::mm_nt(o.grad().data(), pb.data().data(), pa.grad_buffer().data(), m, n, k, true);
    if (pb.requires_grad())
      detail::mm_tn(pa.data().data(), o.grad().data(), pb.grad_buffer().data(), k, m, n, true);
  });
  detail::mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add shape mismatch");
  Tensor out = make_op_output(a.shape(), {a, b}, [](const Tensor& o) {
    for (const Tensor& p : o.node->parents) {
      if (!p.requires_grad()) continue;
      auto& g = p.grad_buffer();
      const auto& og = o.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
  });
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.cols())
    throw ShapeError("add_rowwise expects [m,n] and [n]");
  const int m = x.rows(), n = x.cols();
  Tensor out = make_op_output({m, n}, {x, bias}, [m, n](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const auto& og = o.grad();
    if (px.requires_grad()) {
      auto& g = px.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
    if (pb.requires_grad()) {
      auto& g = pb.grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[j] += og[static_cast<size_t>(i) * n + j];
    }
  });
  const auto& xv = x.data();
  const auto& bv = bias.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] + bv[j];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul shape mismatch");
  Tensor out = make_op_output(a.shape(), {a, b}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const auto& og = o.grad();
    if (pa.requires_grad()) {
      auto& g = pa.grad_buffer();
      const auto& bv = pb.data();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i] * bv[i];
    }
    if (pb.requires_grad()) {
      auto& g = pb.grad_buffer();
      const auto& av = pa.data();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i] * av[i];
    }
  });
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = make_op_output(x.shape(), {x}, [c](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    auto& g = p.grad_buffer();
    const auto& og = o.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += c * og[i];
  });
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * xv[i];
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_op_output({1}, {x}, [](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    const double og = o.grad()[0];
    auto& g = p.grad_buffer();
    for (double& v : g) v += og;
  });
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc;
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = make_op_output(x.shape(), {x}, [](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    auto& g = p.grad_buffer();
    const auto& xv = p.data();
    const auto& og = o.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += og[i] * detail::gelu_grad_one(xv[i]);
  });
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = detail::gelu_one(xv[i]);
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() != 2) throw ShapeError("layer_norm_rows expects 2-D input");
  const int m = x.rows(), n = x.cols();
  if (gain.ndim() != 1 || gain.dim(0) != n || bias.ndim() != 1 || bias.dim(0) != n)
    throw ShapeError("layer_norm parameter shape mismatch");

  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * 2);
  Tensor out = make_op_output({m, n}, {x, gain, bias}, [m, n, stats](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    const Tensor& pg = o.node->parents[1];
    const Tensor& pb = o.node->parents[2];
    const auto& og = o.grad();
    const auto& xv = px.data();
    const auto& gv = pg.data();
    for (int i = 0; i < m; ++i) {
      const double mean = (*stats)[static_cast<size_t>(i) * 2];
      const double rstd = (*stats)[static_cast<size_t>(i) * 2 + 1];
      const double* xr = xv.data() + static_cast<size_t>(i) * n;
      const double* gr = og.data() + static_cast<size_t>(i) * n;
      // dxhat = og * gain; dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (int j = 0; j < n; ++j) {
        const double xh = (xr[j] - mean) * rstd;
        const double dxh = gr[j] * gv[j];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
      }
      sum_dxh /= n;
      sum_dxh_xh /= n;
      if (px.requires_grad()) {
        auto& gx = px.grad_buffer();
        double* gxr = gx.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          const double xh = (xr[j] - mean) * rstd;
          const double dxh = gr[j] * gv[j];
          gxr[j] += rstd * (dxh - sum_dxh - xh * sum_dxh_xh);
        }
      }
      if (pg.requires_grad()) {
        auto& gg = pg.grad_buffer();
        for (int j = 0; j < n; ++j) {
          const double xh = (xr[j] - mean) * rstd;
          gg[j] += gr[j] * xh;
        }
      }
      if (pb.requires_grad()) {
        auto& gb = pb.grad_buffer();
        for (int j = 0; j < n; ++j) gb[j] += gr[j];
      }
    }
  });

  const auto& xv = x.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i) {
    detail::layer_norm_row(xv.data() + static_cast<size_t>(i) * n, gain.data().data(),
                           bias.data().data(), ov.data() + static_cast<size_t>(i) * n, n, eps,
                           &(*stats)[static_cast<size_t>(i) * 2],
                           &(*stats)[static_cast<size_t>(i) * 2 + 1]);
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowwise(matmul(x, w), b);
}

Tensor masked_softmax_rows(const Tensor& logits, const AttnMask& mask) {
  if (logits.ndim() != 2) throw ShapeError("masked_softmax_rows expects 2-D logits");
  const int m = logits.rows(), n = logits.cols();
  if (mask.rows != m || mask.cols != n)
    throw ShapeError("mask shape does not match logits");
  Tensor out = make_op_output({m, n}, {logits}, [m, n](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    auto& g = p.grad_buffer();
    const auto& pv = o.data();  // probabilities (0 at disallowed entries)
    const auto& og = o.grad();
    for (int i = 0; i < m; ++i) {
      const double* pr = pv.data() + static_cast<size_t>(i) * n;
      const double* gr = og.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += pr[j] * gr[j];
      double* gxr = g.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) gxr[j] += pr[j] * (gr[j] - dot);
    }
  });
  const auto& xv = logits.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i) {
    const double* xr = xv.data() + static_cast<size_t>(i) * n;
    double* orow = ov.data() + static_cast<size_t>(i) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (mask.at(i, j)) mx = std::max(mx, xr[j]);
    if (std::isinf(mx))
      throw NumericError("masked_softmax_rows: fully masked row " + std::to_string(i));
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mask.at(i, j)) {
        orow[j] = std::exp(xr[j] - mx);
        s += orow[j];
      } else {
        orow[j] = 0.0;  // exact zero, not merely small
      }
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < n; ++j)
      if (mask.at(i, j)) orow[j] *= inv;
  }
  return out;
}

namespace {

Tensor cross_entropy_impl(const Tensor& logits, std::span<const int> targets, int ignore_id,
                          bool mean_reduce, int* active_count) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy expects 2-D logits");
  const int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m)
    throw ShapeError("cross_entropy: one target per logit row required");
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || t >= n)
      throw IndexError("cross_entropy target id " + std::to_string(t) + " out of vocabulary " +
                       std::to_string(n));
  }
  int active = 0;
  for (int t : targets) active += (t != ignore_id) ? 1 : 0;
  if (active_count) *active_count = active;

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * n);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  const double inv_count = active > 0 ? (mean_reduce ? 1.0 / active : 1.0) : 0.0;

  Tensor out =
      make_op_output({1}, {logits}, [m, n, probs, tgt, ignore_id, inv_count](const Tensor& o) {
        const Tensor& p = o.node->parents[0];
        if (!p.requires_grad()) return;
        auto& g = p.grad_buffer();
        const double og = o.grad()[0] * inv_count;
        for (int i = 0; i < m; ++i) {
          const int t = (*tgt)[static_cast<size_t>(i)];
          if (t == ignore_id) continue;
          const double* pr = probs->data() + static_cast<size_t>(i) * n;
          double* gr = g.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) gr[j] += og * (pr[j] - (j == t ? 1.0 : 0.0));
        }
      });

  const auto& xv = logits.data();
  double loss = 0.0;
  std::vector<double> logp(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    const double* xr = xv.data() + static_cast<size_t>(i) * n;
    detail::log_softmax_row(xr, logp.data(), n);
    double* pr = probs->data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) pr[j] = std::exp(logp[static_cast<size_t>(j)]);
    const int t = targets[static_cast<size_t>(i)];
    if (t != ignore_id) loss -= logp[static_cast<size_t>(t)];
  }
  out.data()[0] = active > 0 ? (mean_reduce ? loss / active : loss) : 0.0;
  return out;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  return cross_entropy_impl(logits, targets, ignore_id, true, nullptr);
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, int ignore_id,
                         int* active_count) {
  return cross_entropy_impl(logits, targets, ignore_id, false, active_count);
}

Tensor embedding_rows(const Tensor& table, std::span<const int> row_ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_rows expects 2-D table");
  const int rows = table.rows(), d = table.cols();
  for (int id : row_ids)
    if (id < 0 || id >= rows)
      throw IndexError("embedding row " + std::to_string(id) + " out of range " +
                       std::to_string(rows));
  const int m = static_cast<int>(row_ids.size());
  auto ids = std::make_shared<std::vector<int>>(row_ids.begin(), row_ids.end());
  Tensor out = make_op_output({m, d}, {table}, [m, d, ids](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    auto& g = p.grad_buffer();
    const auto& og = o.grad();
    for (int i = 0; i < m; ++i) {
      double* gr = g.data() + static_cast<size_t>((*ids)[static_cast<size_t>(i)]) * d;
      const double* orow = og.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) gr[j] += orow[j];
    }
  });
  const auto& tv = table.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i) {
    std::memcpy(ov.data() + static_cast<size_t>(i) * d,
                tv.data() + static_cast<size_t>(row_ids[static_cast<size_t>(i)]) * d,
                sizeof(double) * static_cast<size_t>(d));
  }
  return out;
}

Tensor embedding_sum_rows(const Tensor& table, const std::vector<std::vector<int>>& row_ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_sum_rows expects 2-D table");
  const int rows = table.rows(), d = table.cols();
  for (const auto& ids : row_ids)
    for (int id : ids)
      if (id < 0 || id >= rows)
        throw IndexError("embedding row " + std::to_string(id) + " out of range");
  const int m = static_cast<int>(row_ids.size());
  auto ids = std::make_shared<std::vector<std::vector<int>>>(row_ids);
  Tensor out = make_op_output({m, d}, {table}, [m, d, ids](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    auto& g = p.grad_buffer();
    const auto& og = o.grad();
    for (int i = 0; i < m; ++i) {
      const double* orow = og.data() + static_cast<size_t>(i) * d;
      for (int id : (*ids)[static_cast<size_t>(i)]) {
        double* gr = g.data() + static_cast<size_t>(id) * d;
        for (int j = 0; j < d; ++j) gr[j] += orow[j];
      }
    }
  });
  const auto& tv = table.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i) {
    double* orow = ov.data() + static_cast<size_t>(i) * d;
    for (int id : row_ids[static_cast<size_t>(i)]) {
      const double* tr = tv.data() + static_cast<size_t>(id) * d;
      for (int j = 0; j < d; ++j) orow[j] += tr[j];
    }
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
    throw ShapeError("concat_rows column mismatch");
  const int ma = a.rows(), mb = b.rows(), n = a.cols();
  Tensor out = make_op_output({ma + mb, n}, {a, b}, [ma, mb, n](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const auto& og = o.grad();
    if (pa.requires_grad()) {
      auto& g = pa.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
    if (pb.requires_grad()) {
      auto& g = pb.grad_buffer();
      const size_t off = static_cast<size_t>(ma) * n;
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[off + i];
    }
  });
  auto& ov = out.data();
  std::memcpy(ov.data(), a.data().data(), sizeof(double) * a.numel());
  std::memcpy(ov.data() + a.numel(), b.data().data(), sizeof(double) * b.numel());
  return out;
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  if (x.ndim() != 2) throw ShapeError("slice_rows expects 2-D input");
  if (begin < 0 || end > x.rows() || begin > end) throw ShapeError("slice_rows range invalid");
  const int n = x.cols(), m = end - begin;
  Tensor out = make_op_output({m, n}, {x}, [begin, m, n](const Tensor& o) {
    const Tensor& p = o.node->parents[0];
    if (!p.requires_grad()) return;
    auto& g = p.grad_buffer();
    const auto& og = o.grad();
    const size_t off = static_cast<size_t>(begin) * n;
    for (size_t i = 0; i < og.size(); ++i) g[off + i] += og[i];
  });
  std::memcpy(out.data().data(), x.data().data() + static_cast<size_t>(begin) * n,
              sizeof(double) * static_cast<size_t>(m) * n);
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask& mask,
                            int num_heads) {
  if (q.ndim() != 2 || k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("attention expects equal-shape q/k/v");
  const int t = q.rows(), d = q.cols();
  if (num_heads < 1 || d % num_heads != 0) throw ShapeError("embed dim not divisible by heads");
  if (mask.rows != t || mask.cols != t) throw ShapeError("attention mask size mismatch");
  const int hd = d / num_heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(hd));

  // Per-head probability matrices are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(num_heads) * t * t);

  auto head_scores = [&](const Tensor& qq, const Tensor& kk, int h, double* s) {
    const double* qv = qq.data().data() + static_cast<size_t>(h) * hd;
    const double* kv = kk.data().data() + static_cast<size_t>(h) * hd;
    for (int i = 0; i < t; ++i) {
      const double* qr = qv + static_cast<size_t>(i) * d;
      double* srow = s + static_cast<size_t>(i) * t;
      for (int j = 0; j < t; ++j) {
        if (!mask.at(i, j)) {
          srow[j] = 0.0;
          continue;
        }
        const double* kr = kv + static_cast<size_t>(j) * d;
        double acc = 0.0;
        for (int p = 0; p < hd; ++p) acc += qr[p] * kr[p];
        srow[j] = acc * alpha;
      }
    }
  };

  AttnMask mask_copy = mask;
  Tensor out = make_op_output(
      {t, d}, {q, k, v}, [t, d, hd, num_heads, alpha, probs, mask_copy](const Tensor& o) {
        const Tensor& pq = o.node->parents[0];
        const Tensor& pk = o.node->parents[1];
        const Tensor& pv = o.node->parents[2];
        const auto& og = o.grad();
        std::vector<double> dp(static_cast<size_t>(t) * t);
        std::vector<double> ds(static_cast<size_t>(t) * t);
        for (int h = 0; h < num_heads; ++h) {
          const size_t hoff = static_cast<size_t>(h) * hd;
          const double* pmat = probs->data() + static_cast<size_t>(h) * t * t;
          // dP = dC V^T  (per-head, strided columns)
          for (int i = 0; i < t; ++i) {
            const double* gor = og.data() + static_cast<size_t>(i) * d + hoff;
            double* dpr = dp.data() + static_cast<size_t>(i) * t;
            for (int j = 0; j < t; ++j) {
              if (!mask_copy.at(i, j)) {
                dpr[j] = 0.0;
                continue;
              }
              const double* vr = pv.data().data() + static_cast<size_t>(j) * d + hoff;
              double acc = 0.0;
              for (int p = 0; p < hd; ++p) acc += gor[p] * vr[p];
              dpr[j] = acc;
            }
          }
          // dS = P * (dP - rowdot(dP, P)); masked entries have P == 0.
          for (int i = 0; i < t; ++i) {
            const double* pr = pmat + static_cast<size_t>(i) * t;
            const double* dpr = dp.data() + static_cast<size_t>(i) * t;
            double dot = 0.0;
            for (int j = 0; j < t; ++j) dot += pr[j] * dpr[j];
            double* dsr = ds.data() + static_cast<size_t>(i) * t;
            for (int j = 0; j < t; ++j) dsr[j] = pr[j] * (dpr[j] - dot);
          }
          // dQ += alpha * dS K ; dK += alpha * dS^T Q ; dV += P^T dC
          if (pq.requires_grad()) {
            auto& gq = pq.grad_buffer();
            for (int i = 0; i < t; ++i) {
              double* gqr = gq.data() + static_cast<size_t>(i) * d + hoff;
              const double* dsr = ds.data() + static_cast<size_t>(i) * t;
              for (int j = 0; j < t; ++j) {
                const double w = dsr[j] * alpha;
                if (w == 0.0) continue;
                const double* kr = pk.data().data() + static_cast<size_t>(j) * d + hoff;
                for (int p = 0; p < hd; ++p) gqr[p] += w * kr[p];
              }
            }
          }
          if (pk.requires_grad()) {
            auto& gk = pk.grad_buffer();
            for (int i = 0; i < t; ++i) {
              const double* dsr = ds.data() + static_cast<size_t>(i) * t;
              const double* qr = pq.data().data() + static_cast<size_t>(i) * d + hoff;
              for (int j = 0; j < t; ++j) {
                const double w = dsr[j] * alpha;
                if (w == 0.0) continue;
                double* gkr = gk.data() + static_cast<size_t>(j) * d + hoff;
                for (int p = 0; p < hd; ++p) gkr[p] += w * qr[p];
              }
            }
          }
          if (pv.requires_grad()) {
            auto& gv = pv.grad_buffer();
            for (int i = 0; i < t; ++i) {
              const double* pr = pmat + static_cast<size_t>(i) * t;
              const double* gor = og.data() + static_cast<size_t>(i) * d + hoff;
              for (int j = 0; j < t; ++j) {
                const double w = pr[j];
                if (w == 0.0) continue;
                double* gvr = gv.data() + static_cast<size_t>(j) * d + hoff;
                for (int p = 0; p < hd; ++p) gvr[p] += w * gor[p];
              }
            }
          }
        }
      });

  auto& ov = out.data();
  std::vector<double> scores(static_cast<size_t>(t) * t);
  for (int h = 0; h < num_heads; ++h) {
    const size_t hoff = static_cast<size_t>(h) * hd;
    head_scores(q, k, h, scores.data());
    double* pmat = probs->data() + static_cast<size_t>(h) * t * t;
    for (int i = 0; i < t; ++i) {
      const double* srow = scores.data() + static_cast<size_t>(i) * t;
      double* pr = pmat + static_cast<size_t>(i) * t;
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < t; ++j)
        if (mask.at(i, j)) mx = std::max(mx, srow[j]);
      if (std::isinf(mx)) throw NumericError("attention: fully masked row " + std::to_string(i));
      double s = 0.0;
      for (int j = 0; j < t; ++j) {
        if (mask.at(i, j)) {
          pr[j] = std::exp(srow[j] - mx);
          s += pr[j];
        } else {
          pr[j] = 0.0;
        }
      }
      const double inv = 1.0 / s;
      for (int j = 0; j < t; ++j) pr[j] *= inv;
      // context row
      double* orow = ov.data() + static_cast<size_t>(i) * d + hoff;
      for (int p = 0; p < hd; ++p) orow[p] = 0.0;
      for (int j = 0; j < t; ++j) {
        const double w = pr[j];
        if (w == 0.0) continue;
        const double* vr = v.data().data() + static_cast<size_t>(j) * d + hoff;
        for (int p = 0; p < hd; ++p) orow[p] += w * vr[p];
      }
    }
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability out of range");
  if (rng == nullptr || p == 0.0) return x;
  auto keep = std::make_shared<std::vector<uint8_t>>(x.numel());
  std::bernoulli_distribution dist(1.0 - p);
  for (auto& k : *keep) k = dist(*rng) ? 1 : 0;
  const double scale_v = 1.0 / (1.0 - p);
  Tensor out = make_op_output(x.shape(), {x}, [keep, scale_v](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad()) return;
    auto& g = px.grad_buffer();
    const auto& og = o.grad();
    for (size_t i = 0; i < g.size(); ++i)
      if ((*keep)[i]) g[i] += og[i] * scale_v;
  });
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = (*keep)[i] ? xv[i] * scale_v : 0.0;
  return out;
}

}  // namespace lmvc
