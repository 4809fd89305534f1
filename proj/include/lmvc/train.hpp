#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "lmvc/checkpoint.hpp"
#include "lmvc/model.hpp"
#include "lmvc/optim.hpp"
#include "lmvc/synth.hpp"

namespace lmvc {

struct TrainSchedule {
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double lr_decay = 0.986;    // multiplied in at each epoch boundary
  int steps_per_epoch = 0;    // 0: ceil(train split / batch)
  int log_every = 25;
  int eval_every = 250;       // validation-loss cadence; 0 disables
  int checkpoint_every = 500; // 0: only at the end
  int valid_batches = 8;      // cap on validation batches per evaluation
  uint64_t seed = 0;
  // MPLM masking: ratio drawn per batch from [lo, hi], spans of span_len.
  double mask_ratio_lo = 0.02;
  double mask_ratio_hi = 0.04;
  int span_len = 10;
  // PLM: acoustic prompt fraction drawn per item from [lo, hi].
  double plm_prompt_lo = 0.25;
  double plm_prompt_hi = 0.5;

  void validate() const;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  int64_t steps_done = 0;
  double last_train_loss = 0.0;
  double last_valid_loss = 0.0;
};

// Single-writer training loop over an in-memory corpus. Every random draw is
// derived from (seed, step), so a resumed run replays the exact remaining
// trajectory. Aborts with NumericError on divergence.
class Trainer {
 public:
  Trainer(LmModel& model, const Corpus& corpus, TrainSchedule sched,
          std::filesystem::path out_dir);

  // Continue a checkpointed run: restores the optimizer and the step counter.
  void restore(const TrainerState& state);

  TrainResult run();

  // Mean loss over (a capped number of batches of) the valid split; mask
  // draws use a fixed stream so successive evaluations are comparable.
  double validation_loss();

  int64_t step() const { return step_; }
  const AdamW& optimizer() const { return optim_; }

 private:
  void train_step();
  Tensor batch_loss(std::span<const UtterancePair* const> items, uint64_t stream, bool train_mode,
                    LossParts* parts);
  void save(const std::filesystem::path& path);
  void log_line(const LossParts& parts);

  LmModel& model_;
  TrainSchedule sched_;
  std::filesystem::path out_dir_;
  std::vector<UtterancePair> train_, valid_;
  AdamW optim_;
  int64_t step_ = 0;
  int steps_per_epoch_ = 1;
  LossParts last_parts_;
  std::ofstream log_;
};

}  // namespace lmvc
