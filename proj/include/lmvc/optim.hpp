#pragma once

#include <string>
#include <vector>

#include "lmvc/tensor.hpp"

namespace lmvc {

// AdamW with decoupled weight decay. The learning rate is multiplied by
// decay_ratio at every declared epoch boundary (on_epoch_end).
struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double decay_ratio = 0.986;
};

class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig cfg);

  // One update from the gradients currently stored on the parameters.
  // Throws NumericError (leaving parameters untouched) on non-finite grads.
  void step();
  void on_epoch_end() { lr_ *= cfg_.decay_ratio; }
  void zero_grad();

  int64_t step_count() const { return step_count_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Flat state access for checkpointing; order matches the params vector.
  struct State {
    int64_t step_count;
    double lr;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
  };
  State export_state() const;
  void import_state(const State& s);

  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor*> params_;
  AdamWConfig cfg_;
  double lr_;
  int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace lmvc
