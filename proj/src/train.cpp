#include "lmvc/train.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace lmvc {

namespace {

constexpr uint64_t kBatchStream = 0xb47c4;
constexpr uint64_t kDropStream = 0xd709;
constexpr uint64_t kValidStream = 0x7a11d;

}  // namespace

void TrainSchedule::validate() const {
  if (steps < 0 || batch_size < 1) throw ConfigError("bad training schedule counts");
  if (lr <= 0.0 || lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("bad learning-rate setup");
  if (mask_ratio_lo < 0.0 || mask_ratio_hi > 1.0 || mask_ratio_hi < mask_ratio_lo)
    throw ConfigError("mask ratio range invalid");
  if (span_len < 1) throw ConfigError("span length must be >= 1");
  if (plm_prompt_lo < 0.0 || plm_prompt_hi > 0.95 || plm_prompt_hi < plm_prompt_lo)
    throw ConfigError("PLM prompt fraction range invalid");
}

Trainer::Trainer(LmModel& model, const Corpus& corpus, TrainSchedule sched,
                 std::filesystem::path out_dir)
    : model_(model),
      sched_(sched),
      out_dir_(std::move(out_dir)),
      optim_(model.parameters(),
             AdamWConfig{sched.lr, 0.9, 0.999, 1e-8, sched.weight_decay, sched.lr_decay}) {
  sched_.validate();
  if (!(model.vocab() == corpus.config.vocab))
    throw ConfigError("model vocab does not match the corpus vocab");
  train_ = load_split(corpus, "train");
  valid_ = load_split(corpus, "valid");
  if (train_.empty()) throw ConfigError("corpus has no training split");
  steps_per_epoch_ = sched_.steps_per_epoch > 0
                         ? sched_.steps_per_epoch
                         : static_cast<int>((train_.size() + sched_.batch_size - 1) /
                                            static_cast<size_t>(sched_.batch_size));
  std::filesystem::create_directories(out_dir_);
  log_.open(out_dir_ / ("train_log_" + to_string(model_.kind()) + ".txt"), std::ios::app);
  if (!log_) throw IoError("cannot open training log in " + out_dir_.string());
}

void Trainer::restore(const TrainerState& state) {
  optim_.import_state(state.optim);
  step_ = state.train_step;
}

Tensor Trainer::batch_loss(std::span<const UtterancePair* const> items, uint64_t stream,
                           bool train_mode, LossParts* parts) {
  Rng rng = make_rng(derive_seed(sched_.seed, stream));
  Rng drop_rng = make_rng(derive_seed(sched_.seed, kDropStream, stream));
  DropoutCtx drop;
  if (train_mode && model_.config().dropout > 0.0) {
    drop.p = model_.config().dropout;
    drop.rng = &drop_rng;
  }
  const VocabConfig& vocab = model_.vocab();

  switch (model_.kind()) {
    case ModelKind::mplm: {
      std::uniform_real_distribution<double> ratio(sched_.mask_ratio_lo, sched_.mask_ratio_hi);
      const double r = ratio(rng);
      std::vector<MplmItem> batch;
      batch.reserve(items.size());
      for (const UtterancePair* p : items) {
        auto res = apply_span_mask(p->semantic, r, sched_.span_len, vocab.mask_id(), rng);
        batch.push_back(make_mplm_item(res.masked, res.plan, p->acoustic.layer(0), vocab));
      }
      return mplm_loss(model_, batch, drop, parts);
    }
    case ModelKind::elm: {
      std::vector<ElmItem> batch;
      batch.reserve(items.size());
      for (const UtterancePair* p : items) batch.push_back(make_elm_item(p->acoustic.layer(0), vocab));
      return elm_loss(model_, batch, drop, parts);
    }
    case ModelKind::plm: {
      std::uniform_int_distribution<int> layer(2, vocab.num_layers);
      std::uniform_real_distribution<double> frac(sched_.plm_prompt_lo, sched_.plm_prompt_hi);
      std::vector<PlmItem> batch;
      batch.reserve(items.size());
      for (const UtterancePair* p : items) {
        const int l = layer(rng);
        const int prompt = static_cast<int>(std::floor(frac(rng) * p->acoustic.length()));
        batch.push_back(make_plm_item(*p, l, prompt, vocab));
      }
      return plm_loss(model_, batch, drop, parts);
    }
  }
  throw ConfigError("unknown model kind");
}

void Trainer::train_step() {
  Rng pick_rng = make_rng(derive_seed(sched_.seed, kBatchStream, static_cast<uint64_t>(step_)));
  std::uniform_int_distribution<size_t> pick(0, train_.size() - 1);
  std::vector<const UtterancePair*> items;
  items.reserve(static_cast<size_t>(sched_.batch_size));
  for (int i = 0; i < sched_.batch_size; ++i) items.push_back(&train_[pick(pick_rng)]);

  optim_.zero_grad();
  LossParts parts;
  Tensor loss = batch_loss(items, derive_seed(0x57e9, static_cast<uint64_t>(step_)), true, &parts);
  if (!std::isfinite(parts.total))
    throw NumericError("training diverged at step " + std::to_string(step_) +
                       ": loss is non-finite");
  loss.backward();
  optim_.step();  // throws on non-finite gradients, leaving params intact
  last_parts_ = parts;

  ++step_;
  if (step_ % steps_per_epoch_ == 0) optim_.on_epoch_end();
}

double Trainer::validation_loss() {
  if (valid_.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard ng;
  double total = 0.0;
  int batches = 0;
  for (size_t begin = 0; begin < valid_.size() && batches < sched_.valid_batches;
       begin += static_cast<size_t>(sched_.batch_size), ++batches) {
    std::vector<const UtterancePair*> items;
    for (size_t i = begin; i < std::min(valid_.size(), begin + static_cast<size_t>(sched_.batch_size)); ++i)
      items.push_back(&valid_[i]);
    LossParts parts;
    batch_loss(items, derive_seed(kValidStream, static_cast<uint64_t>(batches)), false, &parts);
    total += parts.total;
  }
  return batches > 0 ? total / batches : std::numeric_limits<double>::quiet_NaN();
}

void Trainer::log_line(const LossParts& parts) {
  log_ << step_ << '\t' << std::setprecision(10) << parts.total << '\t' << parts.mask << '\t'
       << parts.ar << '\t' << optim_.lr() << '\n';
  log_.flush();
}

void Trainer::save(const std::filesystem::path& path) {
  TrainerState st;
  st.train_step = step_;
  st.optim = optim_.export_state();
  save_checkpoint(path, model_, &st);
}

TrainResult Trainer::run() {
  const auto ckpt_path = out_dir_ / ("ckpt_" + to_string(model_.kind()) + "_last.lmvcckpt");
  while (step_ < sched_.steps) {
    train_step();
    if (sched_.log_every > 0 && step_ % sched_.log_every == 0) log_line(last_parts_);
    if (sched_.eval_every > 0 && step_ % sched_.eval_every == 0) {
      const double vl = validation_loss();
      log_ << "# valid\t" << step_ << '\t' << std::setprecision(10) << vl << '\n';
      log_.flush();
    }
    if (sched_.checkpoint_every > 0 && step_ % sched_.checkpoint_every == 0) save(ckpt_path);
  }
  save(ckpt_path);
  TrainResult res;
  res.checkpoint = ckpt_path;
  res.steps_done = step_;
  res.last_train_loss = last_parts_.total;
  res.last_valid_loss = validation_loss();
  log_ << "# final\t" << step_ << '\t' << std::setprecision(10) << res.last_valid_loss << '\n';
  log_.flush();
  return res;
}

}  // namespace lmvc
