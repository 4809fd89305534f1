#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmvc/common.hpp"
#include "lmvc/tokens.hpp"

namespace lmvc {

// Boolean attention matrix: entry (q, k) says whether query position q may
// attend key position k. Attention masks are square (rows == cols) with an
// always-allowed diagonal and no fully blocked row; the rectangular form
// exists for masked softmax over arbitrary logit matrices.
struct AttnMask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allowed;  // rows*cols, row-major

  static AttnMask blocked(int rows, int cols);

  bool square() const { return rows == cols; }
  bool at(int q, int k) const { return allowed[static_cast<size_t>(q) * cols + k] != 0; }
  void set(int q, int k, bool v) { allowed[static_cast<size_t>(q) * cols + k] = v ? 1 : 0; }
  void validate() const;           // square + diagonal + nonempty rows
  std::string text_art() const;    // '#' allowed, '.' blocked, one row per line
};

// Semantic prefix [0,Ts) is fully bidirectional but blind to the acoustic
// continuation; acoustic position Ts+t sees the whole prefix plus acoustic
// positions up to and including itself.
AttnMask mplm_mask(int t_sem, int t_ac);

AttnMask causal_mask(int t);

// (q, k) allowed iff max(0, q-w) <= k <= q.
AttnMask window_mask(int t, int w);

AttnMask full_mask(int t);

// Span masking of a semantic sequence: ceil(r*Ts) start indices drawn without
// replacement, spans [i, i+l) clipped at the end, masked with MASK.
struct SpanMaskPlan {
  double ratio = 0.0;
  int span_len = 0;
  std::vector<int> masked_positions;   // sorted, unique
  std::vector<int> original_tokens;    // parallel to masked_positions
};

struct SpanMaskResult {
  SemanticSeq masked;
  SpanMaskPlan plan;
};

SpanMaskResult apply_span_mask(const SemanticSeq& seq, double ratio, int span_len, int mask_id,
                               Rng& rng);

// Exact E[|M|] for the sampling scheme above (union of clipped spans whose
// starts are drawn without replacement); the oracle for the masking stats.
double expected_masked_count(int t_sem, double ratio, int span_len);

}  // namespace lmvc
