#include "lmvc/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace lmvc {

void SamplingConfig::validate() const {
  if (k < 1) throw ConfigError("top-k needs k >= 1");
  if (mode == Mode::top_k && temperature <= 0.0)
    throw ConfigError("sampling temperature must be positive");
  if (max_len_factor < 1.0) throw ConfigError("max_len_factor must be >= 1");
  if (fusion_lambda < 0.0) throw ConfigError("fusion weight must be non-negative");
}

std::vector<double> fuse_logits(std::span<const double> logp_mplm,
                                std::span<const double> logp_elm, double lambda) {
  if (logp_mplm.size() != logp_elm.size())
    throw ShapeError("fuse_logits: vocabulary sizes disagree");
  std::vector<double> fused(logp_mplm.size());
  for (size_t i = 0; i < fused.size(); ++i) fused[i] = logp_mplm[i] + lambda * logp_elm[i];
  return fused;
}

int select_token(std::span<const double> scores, const SamplingConfig& cfg, Rng& rng) {
  if (scores.empty()) throw ShapeError("select_token on empty scores");
  if (cfg.mode == SamplingConfig::Mode::argmax) {
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
      if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
  }
  // top-k: stable order (score desc, index asc), softmax at temperature
  const int k = std::min<int>(cfg.k, static_cast<int>(scores.size()));
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  double mx = scores[static_cast<size_t>(idx[0])];
  std::vector<double> w(static_cast<size_t>(k));
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    w[static_cast<size_t>(i)] =
        std::exp((scores[static_cast<size_t>(idx[static_cast<size_t>(i)])] - mx) / cfg.temperature);
    total += w[static_cast<size_t>(i)];
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng) * total;
  for (int i = 0; i < k; ++i) {
    u -= w[static_cast<size_t>(i)];
    if (u <= 0.0) return idx[static_cast<size_t>(i)];
  }
  return idx[static_cast<size_t>(k - 1)];
}

// ---- incremental MPLM ------------------------------------------------------

namespace {

int acoustic_row_to_id(const VocabConfig& vocab, int row) {
  return row < vocab.acoustic_vocab ? row : vocab.special_base() + (row - vocab.acoustic_vocab);
}

}  // namespace

MplmDecoder::MplmDecoder(const LmModel& mplm, std::span<const int> semantic_ids,
                         std::span<const int> acoustic_prefix_with_bos)
    : m_(mplm), t_sem_(static_cast<int>(semantic_ids.size())) {
  if (m_.kind() != ModelKind::mplm) throw ConfigError("MplmDecoder needs an MPLM");
  if (t_sem_ < 1) throw ShapeError("decoder needs a semantic prompt");
  if (acoustic_prefix_with_bos.empty()) throw ShapeError("decoder needs the BOS-led prefix");
  const int layers = m_.config().num_layers;
  k_cache_.assign(static_cast<size_t>(layers), {});
  v_cache_.assign(static_cast<size_t>(layers), {});

  const VocabConfig& vocab = m_.vocab();
  std::vector<int> rows;
  rows.reserve(semantic_ids.size());
  for (int id : semantic_ids) rows.push_back(vocab.semantic_row(id));
  block_pass(rows, true);
  rows.clear();
  for (int id : acoustic_prefix_with_bos) rows.push_back(vocab.acoustic_row(id));
  block_pass(rows, false);
}

// One forward over a block of rows against (and extending) the cache. The
// semantic block is bidirectional within itself; acoustic rows attend the
// whole cache up to and including themselves. The last acoustic row's hidden
// state feeds the head.
void MplmDecoder::block_pass(const std::vector<int>& emb_rows, bool semantic_block) {
  const auto& cfg = m_.config();
  const int d = cfg.embed_dim;
  const int hd = d / cfg.num_heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(hd));
  const int n = static_cast<int>(emb_rows.size());
  const int start = len_;
  if (start + n > cfg.max_positions)
    throw CapacityError("decode length " + std::to_string(start + n) + " exceeds max_positions " +
                        std::to_string(cfg.max_positions));

  const Tensor& table = semantic_block ? m_.sem_embed() : m_.ac_embed();
  std::vector<double> x(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const double* emb = table.data().data() + static_cast<size_t>(emb_rows[static_cast<size_t>(i)]) * d;
    const double* pos = m_.pos_embed().data().data() + static_cast<size_t>(start + i) * d;
    double* xr = x.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) xr[j] = emb[j] + pos[j];
  }

  std::vector<double> h(x.size()), q(x.size()), kk(x.size()), vv(x.size()), att(x.size()),
      tmp(x.size());
  std::vector<double> ff(static_cast<size_t>(n) * cfg.ff_dim);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& b = m_.blocks()[static_cast<size_t>(l)];
    for (int i = 0; i < n; ++i)
      detail::layer_norm_row(x.data() + static_cast<size_t>(i) * d, b.ln1_g.data().data(),
                             b.ln1_b.data().data(), h.data() + static_cast<size_t>(i) * d, d, 1e-5);
    detail::mm_nn(h.data(), b.wq.data().data(), q.data(), n, d, d, false);
    detail::mm_nn(h.data(), b.wk.data().data(), kk.data(), n, d, d, false);
    detail::mm_nn(h.data(), b.wv.data().data(), vv.data(), n, d, d, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        q[static_cast<size_t>(i) * d + j] += b.bq.data()[static_cast<size_t>(j)];
        kk[static_cast<size_t>(i) * d + j] += b.bk.data()[static_cast<size_t>(j)];
        vv[static_cast<size_t>(i) * d + j] += b.bv.data()[static_cast<size_t>(j)];
      }
    // extend this layer's cache with the block
    auto& kc = k_cache_[static_cast<size_t>(l)];
    auto& vc = v_cache_[static_cast<size_t>(l)];
    kc.insert(kc.end(), kk.begin(), kk.end());
    vc.insert(vc.end(), vv.begin(), vv.end());

    for (int i = 0; i < n; ++i) {
      // key range for this query row
      const int limit = semantic_block ? start + n : start + i + 1;
      double* arow = att.data() + static_cast<size_t>(i) * d;
      std::fill(arow, arow + d, 0.0);
      std::vector<double> scores(static_cast<size_t>(limit));
      for (int hh = 0; hh < cfg.num_heads; ++hh) {
        const size_t hoff = static_cast<size_t>(hh) * hd;
        const double* qr = q.data() + static_cast<size_t>(i) * d + hoff;
        double mx = -std::numeric_limits<double>::infinity();
        for (int t = 0; t < limit; ++t) {
          const double* kr = kc.data() + static_cast<size_t>(t) * d + hoff;
          double acc = 0.0;
          for (int p = 0; p < hd; ++p) acc += qr[p] * kr[p];
          scores[static_cast<size_t>(t)] = acc * alpha;
          mx = std::max(mx, scores[static_cast<size_t>(t)]);
        }
        double s = 0.0;
        for (int t = 0; t < limit; ++t) {
          scores[static_cast<size_t>(t)] = std::exp(scores[static_cast<size_t>(t)] - mx);
          s += scores[static_cast<size_t>(t)];
        }
        const double inv = 1.0 / s;
        for (int t = 0; t < limit; ++t) {
          const double w = scores[static_cast<size_t>(t)] * inv;
          if (w == 0.0) continue;
          const double* vr = vc.data() + static_cast<size_t>(t) * d + hoff;
          for (int p = 0; p < hd; ++p) arow[hoff + p] += w * vr[p];
        }
      }
    }
    detail::mm_nn(att.data(), b.wo.data().data(), tmp.data(), n, d, d, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        x[static_cast<size_t>(i) * d + j] += tmp[static_cast<size_t>(i) * d + j] +
                                             b.bo.data()[static_cast<size_t>(j)];
    for (int i = 0; i < n; ++i)
      detail::layer_norm_row(x.data() + static_cast<size_t>(i) * d, b.ln2_g.data().data(),
                             b.ln2_b.data().data(), h.data() + static_cast<size_t>(i) * d, d, 1e-5);
    detail::mm_nn(h.data(), b.w1.data().data(), ff.data(), n, d, cfg.ff_dim, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cfg.ff_dim; ++j)
        ff[static_cast<size_t>(i) * cfg.ff_dim + j] = detail::gelu_one(
            ff[static_cast<size_t>(i) * cfg.ff_dim + j] + b.b1.data()[static_cast<size_t>(j)]);
    detail::mm_nn(ff.data(), b.w2.data().data(), tmp.data(), n, cfg.ff_dim, d, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        x[static_cast<size_t>(i) * d + j] += tmp[static_cast<size_t>(i) * d + j] +
                                             b.b2.data()[static_cast<size_t>(j)];
  }
  len_ = start + n;
  if (!semantic_block)
    finish_row(std::vector<double>(x.end() - d, x.end()));
}

void MplmDecoder::finish_row(std::vector<double> hidden) {
  const int d = m_.config().embed_dim;
  std::vector<double> normed(static_cast<size_t>(d));
  detail::layer_norm_row(hidden.data(), m_.lnf_g().data().data(), m_.lnf_b().data().data(),
                         normed.data(), d, 1e-5);
  const int v = m_.acoustic_head_dim();
  std::vector<double> logits(static_cast<size_t>(v));
  detail::mm_nn(normed.data(), m_.ac_head_w().data().data(), logits.data(), 1, d, v, false);
  for (int j = 0; j < v; ++j) logits[static_cast<size_t>(j)] += m_.ac_head_b().data()[static_cast<size_t>(j)];
  logprobs_.resize(static_cast<size_t>(v));
  detail::log_softmax_row(logits.data(), logprobs_.data(), v);
}

void MplmDecoder::push(int token_id) {
  block_pass({m_.vocab().acoustic_row(token_id)}, false);
}

// ---- ELM scorer -------------------------------------------------------------

ElmScorer::ElmScorer(const LmModel& elm, std::span<const int> acoustic_prefix_with_bos)
    : m_(elm), stream_(acoustic_prefix_with_bos.begin(), acoustic_prefix_with_bos.end()) {
  if (m_.kind() != ModelKind::elm) throw ConfigError("ElmScorer needs an ELM");
  if (stream_.empty()) throw ShapeError("ELM scorer needs the BOS-led prefix");
  rescore();
}

void ElmScorer::push(int token_id) {
  stream_.push_back(token_id);
  rescore();
}

void ElmScorer::rescore() {
  // A slice of receptive_bound()+1 trailing rows reproduces the full-stream
  // logits at the last position exactly: every key any layer of the last row
  // can reach lies inside the slice.
  const int bound = m_.receptive_bound();
  const int total = static_cast<int>(stream_.size());
  const int begin = std::max(0, total - bound - 1);
  std::span<const int> slice(stream_.data() + begin, static_cast<size_t>(total - begin));
  NoGradGuard ng;
  Tensor logits = m_.elm_forward(slice, {}, begin);
  const int v = logits.cols();
  logprobs_.resize(static_cast<size_t>(v));
  detail::log_softmax_row(logits.data().data() + static_cast<size_t>(logits.rows() - 1) * v,
                          logprobs_.data(), v);
}

// ---- generation -------------------------------------------------------------

CoarseResult generate_coarse(const LmModel& mplm, const LmModel* elm, const CoarsePrompt& prompt,
                             const SamplingConfig& cfg) {
  cfg.validate();
  if (elm && !(elm->vocab() == mplm.vocab()))
    throw ConfigError("MPLM and ELM vocab configs disagree");
  const VocabConfig& vocab = mplm.vocab();

  std::vector<int> prefix;
  prefix.reserve(prompt.acoustic_prefix.size() + 1);
  prefix.push_back(vocab.bos_id());
  prefix.insert(prefix.end(), prompt.acoustic_prefix.begin(), prompt.acoustic_prefix.end());

  MplmDecoder decoder(mplm, prompt.semantic, prefix);
  std::optional<ElmScorer> scorer;
  if (elm) scorer.emplace(*elm, prefix);

  const int cap = static_cast<int>(
      cfg.max_len_factor * vocab.expected_acoustic_len(prompt.source_semantic_len()));
  Rng rng = make_rng(cfg.seed);

  CoarseResult res;
  res.truncated = true;
  for (int t = 0; t < cap; ++t) {
    std::vector<double> fused;
    if (scorer)
      fused = fuse_logits(decoder.next_logprobs(), scorer->next_logprobs(), cfg.fusion_lambda);
    else
      fused = decoder.next_logprobs();
    const int row = select_token(fused, cfg, rng);
    const int token = acoustic_row_to_id(vocab, row);
    if (token == vocab.eos_id()) {
      res.truncated = false;
      break;
    }
    res.tokens.push_back(token);
    if (t + 1 < cap) {
      decoder.push(token);
      if (scorer) scorer->push(token);
    }
  }
  return res;
}

AcousticGrid generate_fine(const LmModel& plm, std::span<const int> semantic_ids,
                           const AcousticGrid& prompt_grid, const std::vector<int>& coarse) {
  if (plm.kind() != ModelKind::plm) throw ConfigError("generate_fine needs a PLM");
  const VocabConfig& vocab = plm.vocab();
  const int num_layers = vocab.num_layers;
  if (prompt_grid.num_layers() != num_layers)
    throw ShapeError("prompt grid layer count disagrees with the vocab");
  const int t_prompt = prompt_grid.length();
  const int t_out = static_cast<int>(coarse.size());

  AcousticGrid out;
  out.rows.assign(static_cast<size_t>(num_layers), std::vector<int>(static_cast<size_t>(t_out), 0));
  out.rows[0] = coarse;
  if (t_out == 0) return out;

  NoGradGuard ng;
  for (int l = 2; l <= num_layers; ++l) {
    std::vector<std::vector<int>> ac_tokens(static_cast<size_t>(t_prompt + t_out));
    for (int t = 0; t < t_prompt; ++t)
      for (int j = 0; j < num_layers; ++j)
        ac_tokens[static_cast<size_t>(t)].push_back(prompt_grid.layer(j)[static_cast<size_t>(t)]);
    for (int t = 0; t < t_out; ++t)
      for (int j = 0; j < l - 1; ++j)
        ac_tokens[static_cast<size_t>(t_prompt + t)].push_back(
            out.layer(j)[static_cast<size_t>(t)]);
    Tensor logits = plm.plm_forward(semantic_ids, ac_tokens, l);
    const int v = logits.cols();
    for (int t = 0; t < t_out; ++t) {
      const double* row = logits.data().data() + static_cast<size_t>(t_prompt + t) * v;
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      out.rows[static_cast<size_t>(l - 1)][static_cast<size_t>(t)] = acoustic_row_to_id(vocab, best);
    }
  }
  return out;
}

ConversionResult convert(const UtterancePair& source, const UtterancePair& target,
                         const LmModel& mplm, const LmModel* elm, const LmModel& plm,
                         const SamplingConfig& cfg) {
  if (!(plm.vocab() == mplm.vocab())) throw ConfigError("MPLM and PLM vocab configs disagree");
  CoarsePrompt prompt = build_coarse_prompt(target, source.semantic);
  CoarseResult coarse = generate_coarse(mplm, elm, prompt, cfg);
  ConversionResult res;
  res.truncated = coarse.truncated;
  res.grid = generate_fine(plm, prompt.semantic, target.acoustic, coarse.tokens);
  return res;
}

}  // namespace lmvc
