#include "lmvc/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lmvc {

namespace {

AttnMask make_mask(int n) {
  if (n < 1) throw ShapeError("attention mask needs at least one position");
  return AttnMask::blocked(n, n);
}

// ceil(r*T) robust against representation noise (0.02*100 -> 2, not 3).
int ceil_count(double r, int t) {
  return static_cast<int>(std::ceil(r * static_cast<double>(t) - 1e-9));
}

}  // namespace

AttnMask AttnMask::blocked(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ShapeError("attention mask needs at least one position");
  AttnMask m;
  m.rows = rows;
  m.cols = cols;
  m.allowed.assign(static_cast<size_t>(rows) * cols, 0);
  return m;
}

void AttnMask::validate() const {
  if (!square()) throw ShapeError("attention mask must be square");
  for (int q = 0; q < rows; ++q) {
    if (!at(q, q)) throw ShapeError("mask diagonal must be allowed at " + std::to_string(q));
    bool any = false;
    for (int k = 0; k < cols && !any; ++k) any = at(q, k);
    if (!any) throw ShapeError("mask row " + std::to_string(q) + " fully blocked");
  }
}

std::string AttnMask::text_art() const {
  std::string s;
  s.reserve(static_cast<size_t>(rows) * (cols + 1));
  for (int q = 0; q < rows; ++q) {
    for (int k = 0; k < cols; ++k) s += at(q, k) ? '#' : '.';
    s += '\n';
  }
  return s;
}

AttnMask mplm_mask(int t_sem, int t_ac) {
  if (t_sem < 1 || t_ac < 0) throw ShapeError("mplm_mask requires t_sem >= 1, t_ac >= 0");
  AttnMask m = make_mask(t_sem + t_ac);
  for (int q = 0; q < t_sem; ++q)
    for (int k = 0; k < t_sem; ++k) m.set(q, k, true);
  for (int t = 0; t < t_ac; ++t) {
    const int q = t_sem + t;
    for (int k = 0; k <= q; ++k) m.set(q, k, true);
  }
  return m;
}

AttnMask causal_mask(int t) {
  AttnMask m = make_mask(t);
  for (int q = 0; q < t; ++q)
    for (int k = 0; k <= q; ++k) m.set(q, k, true);
  return m;
}

AttnMask window_mask(int t, int w) {
  if (w < 1) throw ShapeError("window_mask requires w >= 1");
  AttnMask m = make_mask(t);
  for (int q = 0; q < t; ++q)
    for (int k = std::max(0, q - w); k <= q; ++k) m.set(q, k, true);
  return m;
}

AttnMask full_mask(int t) {
  AttnMask m = make_mask(t);
  std::fill(m.allowed.begin(), m.allowed.end(), 1);
  return m;
}

SpanMaskResult apply_span_mask(const SemanticSeq& seq, double ratio, int span_len, int mask_id,
                               Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mask ratio out of [0,1]");
  if (span_len < 1) throw ConfigError("span length must be >= 1");
  const int t = seq.length();

  SpanMaskResult res;
  res.masked = seq;
  res.plan.ratio = ratio;
  res.plan.span_len = span_len;
  const int n_starts = t > 0 ? ceil_count(ratio, t) : 0;
  if (n_starts == 0) return res;

  // Partial Fisher-Yates: first n_starts entries are a uniform draw without
  // replacement.
  std::vector<int> idx(static_cast<size_t>(t));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < n_starts; ++i) {
    std::uniform_int_distribution<int> pick(i, t - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }

  std::vector<uint8_t> hit(static_cast<size_t>(t), 0);
  for (int i = 0; i < n_starts; ++i) {
    const int start = idx[static_cast<size_t>(i)];
    for (int p = start; p < std::min(t, start + span_len); ++p) hit[static_cast<size_t>(p)] = 1;
  }
  for (int p = 0; p < t; ++p) {
    if (!hit[static_cast<size_t>(p)]) continue;
    res.plan.masked_positions.push_back(p);
    res.plan.original_tokens.push_back(seq.tokens[static_cast<size_t>(p)]);
    res.masked.tokens[static_cast<size_t>(p)] = mask_id;
  }
  return res;
}

double expected_masked_count(int t_sem, double ratio, int span_len) {
  const int n = t_sem > 0 ? ceil_count(ratio, t_sem) : 0;
  if (n == 0) return 0.0;
  double total = 0.0;
  for (int p = 0; p < t_sem; ++p) {
    // p is covered iff some start falls in [max(0, p-l+1), p].
    const int window = std::min(p + 1, span_len);
    double none = 1.0;
    if (t_sem - window < n) {
      none = 0.0;
    } else {
      for (int j = 0; j < n; ++j)
        none *= static_cast<double>(t_sem - window - j) / static_cast<double>(t_sem - j);
    }
    total += 1.0 - none;
  }
  return total;
}

}  // namespace lmvc
