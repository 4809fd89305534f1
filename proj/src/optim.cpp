#include "lmvc/optim.hpp"

#include <cmath>

namespace lmvc {

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void AdamW::step() {
  // Validate first so a rejected step leaves everything untouched.
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    if (!params_[pi]->has_grad()) throw NumericError("optimizer step without gradients");
    for (double g : params_[pi]->grad())
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter " + std::to_string(pi) +
                           "; step rejected");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    auto& data = p.data();
    const auto& grad = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    // Decay is decoupled and skipped for 1-D parameters (biases, norms).
    const double wd = p.ndim() > 1 ? cfg_.weight_decay : 0.0;
    for (size_t i = 0; i < data.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= lr_ * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * data[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

AdamW::State AdamW::export_state() const { return State{step_count_, lr_, m_, v_}; }

void AdamW::import_state(const State& s) {
  if (s.m.size() != params_.size() || s.v.size() != params_.size())
    throw ConfigError("optimizer state does not match parameter list");
  for (size_t i = 0; i < params_.size(); ++i)
    if (s.m[i].size() != params_[i]->numel() || s.v[i].size() != params_[i]->numel())
      throw ConfigError("optimizer moment shape mismatch at parameter " + std::to_string(i));
  step_count_ = s.step_count;
  lr_ = s.lr;
  m_ = s.m;
  v_ = s.v;
}

}  // namespace lmvc
