#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmvc/model.hpp"
#include "lmvc/tokens.hpp"

namespace lmvc {

struct SamplingConfig {
  enum class Mode { argmax, top_k };
  Mode mode = Mode::top_k;
  int k = 10;
  double temperature = 1.0;
  uint64_t seed = 0;
  double max_len_factor = 1.25;
  double fusion_lambda = 0.3;

  void validate() const;
};

// Shallow fusion of two log-probability vectors over the same vocabulary:
// elementwise logp_a + lambda * logp_b, no renormalization.
std::vector<double> fuse_logits(std::span<const double> logp_mplm,
                                std::span<const double> logp_elm, double lambda);

// Token choice over fused scores; argmax is deterministic, top-k samples the
// softmax of the k best at the configured temperature.
int select_token(std::span<const double> scores, const SamplingConfig& cfg, Rng& rng);

// Incremental MPLM decoding with per-layer key/value caches. The prompt is
// primed in one block pass (semantic block bidirectional, acoustic prefix
// causal); each pushed token then costs one row.
class MplmDecoder {
 public:
  MplmDecoder(const LmModel& mplm, std::span<const int> semantic_ids,
              std::span<const int> acoustic_prefix_with_bos);

  // log-softmax over the acoustic head for the next position
  const std::vector<double>& next_logprobs() const { return logprobs_; }
  void push(int token_id);
  int total_len() const { return len_; }

 private:
  void block_pass(const std::vector<int>& emb_rows, bool semantic_block);
  void finish_row(std::vector<double> hidden);

  const LmModel& m_;
  int t_sem_;
  int len_ = 0;
  std::vector<std::vector<double>> k_cache_, v_cache_;  // per layer, len*d
  std::vector<double> logprobs_;
};

// Sliding-window ELM scoring: each step re-runs the trailing slice that
// covers the stack's receptive bound, with absolute positions.
class ElmScorer {
 public:
  ElmScorer(const LmModel& elm, std::span<const int> acoustic_prefix_with_bos);
  const std::vector<double>& next_logprobs() const { return logprobs_; }
  void push(int token_id);

 private:
  void rescore();
  const LmModel& m_;
  std::vector<int> stream_;
  std::vector<double> logprobs_;
};

struct CoarseResult {
  std::vector<int> tokens;  // generated continuation; prompt and EOS excluded
  bool truncated = false;   // hit the hard length cap without EOS
};

// Autoregressive coarse generation: MPLM conditioned on the full prompt,
// optionally fused with the windowed ELM. elm may be null (pure MPLM).
CoarseResult generate_coarse(const LmModel& mplm, const LmModel* elm, const CoarsePrompt& prompt,
                             const SamplingConfig& cfg);

// Non-autoregressive fine reconstruction: one PLM pass per codec layer,
// greedy argmax over the non-prompt region; predicted layers feed the next
// pass. Returns an L x len(coarse) grid whose first row is the coarse input.
AcousticGrid generate_fine(const LmModel& plm, std::span<const int> semantic_ids,
                           const AcousticGrid& prompt_grid, const std::vector<int>& coarse);

struct ConversionResult {
  AcousticGrid grid;
  bool truncated = false;
};

// End-to-end conversion: prompt assembly, fused coarse generation, fine
// reconstruction. All three models must share the vocab config.
ConversionResult convert(const UtterancePair& source, const UtterancePair& target,
                         const LmModel& mplm, const LmModel* elm, const LmModel& plm,
                         const SamplingConfig& cfg);

}  // namespace lmvc
