#include "lmvc/model.hpp"

#include <cmath>

namespace lmvc {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mplm: return "mplm";
    case ModelKind::elm: return "elm";
    case ModelKind::plm: return "plm";
  }
  throw ConfigError("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mplm") return ModelKind::mplm;
  if (s == "elm") return ModelKind::elm;
  if (s == "plm") return ModelKind::plm;
  throw ConfigError("unknown model kind '" + s + "'");
}

void ModelConfig::validate(ModelKind kind) const {
  if (num_layers < 1 || num_heads < 1 || embed_dim < 1 || ff_dim < 1)
    throw ConfigError("model dimensions must be positive");
  if (embed_dim % num_heads != 0) throw ConfigError("embed_dim not divisible by num_heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout outside [0,1)");
  if (max_positions < 2) throw ConfigError("max_positions too small");
  if (kind == ModelKind::elm && window < 1) throw ConfigError("ELM window must be >= 1");
}

LmModel::LmModel(ModelKind kind, ModelConfig cfg, VocabConfig vocab, uint64_t init_seed)
    : kind_(kind), cfg_(cfg), vocab_(vocab) {
  cfg.validate(kind);
  vocab.validate();
  if (kind == ModelKind::plm && vocab.num_layers < 2)
    throw ConfigError("PLM needs at least two codec layers");

  Rng rng = make_rng(derive_seed(init_seed, 0x6d6f64656cULL, static_cast<uint64_t>(kind)));
  const int d = cfg_.embed_dim;
  const double emb_std = 0.02;
  const double proj_std = 0.02;
  // residual-feeding projections scaled down with depth, GPT-2 style
  const double resid_std = 0.02 / std::sqrt(2.0 * cfg_.num_layers);

  const bool has_sem = kind != ModelKind::elm;
  if (has_sem) sem_embed_ = Tensor::randn({vocab_.semantic_rows(), d}, emb_std, rng, true);
  ac_embed_ = Tensor::randn({vocab_.acoustic_rows(), d}, emb_std, rng, true);
  pos_embed_ = Tensor::randn({cfg_.max_positions, d}, emb_std, rng, true);
  if (kind == ModelKind::plm)
    layer_embed_ = Tensor::randn({vocab_.num_layers - 1, d}, emb_std, rng, true);

  blocks_.reserve(static_cast<size_t>(cfg_.num_layers));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    Block b;
    b.ln1_g = Tensor::full({d}, 1.0, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.wq = Tensor::randn({d, d}, proj_std, rng, true);
    b.bq = Tensor::zeros({d}, true);
    b.wk = Tensor::randn({d, d}, proj_std, rng, true);
    b.bk = Tensor::zeros({d}, true);
    b.wv = Tensor::randn({d, d}, proj_std, rng, true);
    b.bv = Tensor::zeros({d}, true);
    b.wo = Tensor::randn({d, d}, resid_std, rng, true);
    b.bo = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::full({d}, 1.0, true);
    b.ln2_b = Tensor::zeros({d}, true);
    b.w1 = Tensor::randn({d, cfg_.ff_dim}, proj_std, rng, true);
    b.b1 = Tensor::zeros({cfg_.ff_dim}, true);
    b.w2 = Tensor::randn({cfg_.ff_dim, d}, resid_std, rng, true);
    b.b2 = Tensor::zeros({d}, true);
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = Tensor::full({d}, 1.0, true);
  lnf_b_ = Tensor::zeros({d}, true);

  // Output heads start at zero: an untrained model emits exactly uniform
  // distributions, which the loss sanity checks rely on.
  if (has_sem && kind != ModelKind::plm) {
    sem_head_w_ = Tensor::zeros({d, vocab_.semantic_rows()}, true);
    sem_head_b_ = Tensor::zeros({vocab_.semantic_rows()}, true);
  }
  ac_head_w_ = Tensor::zeros({d, vocab_.acoustic_rows()}, true);
  ac_head_b_ = Tensor::zeros({vocab_.acoustic_rows()}, true);
}

std::vector<std::pair<std::string, Tensor*>> LmModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto push = [&](const std::string& name, Tensor& t) {
    if (t.defined()) out.emplace_back(name, &t);
  };
  push("sem_embed", sem_embed_);
  push("ac_embed", ac_embed_);
  push("pos_embed", pos_embed_);
  push("layer_embed", layer_embed_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    Block& b = blocks_[i];
    push(p + "ln1_g", b.ln1_g);
    push(p + "ln1_b", b.ln1_b);
    push(p + "wq", b.wq);
    push(p + "bq", b.bq);
    push(p + "wk", b.wk);
    push(p + "bk", b.bk);
    push(p + "wv", b.wv);
    push(p + "bv", b.bv);
    push(p + "wo", b.wo);
    push(p + "bo", b.bo);
    push(p + "ln2_g", b.ln2_g);
    push(p + "ln2_b", b.ln2_b);
    push(p + "w1", b.w1);
    push(p + "b1", b.b1);
    push(p + "w2", b.w2);
    push(p + "b2", b.b2);
  }
  push("lnf_g", lnf_g_);
  push("lnf_b", lnf_b_);
  push("sem_head_w", sem_head_w_);
  push("sem_head_b", sem_head_b_);
  push("ac_head_w", ac_head_w_);
  push("ac_head_b", ac_head_b_);
  return out;
}

std::vector<Tensor*> LmModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t LmModel::num_params() const {
  int64_t n = 0;
  for (auto& [name, t] : const_cast<LmModel*>(this)->named_parameters())
    n += static_cast<int64_t>(t->numel());
  return n;
}

Tensor* LmModel::find_parameter(const std::string& name) {
  for (auto& [n, t] : named_parameters())
    if (n == name) return t;
  return nullptr;
}

Tensor LmModel::embed_positions(int n, int offset) const {
  if (offset < 0 || offset + n > cfg_.max_positions)
    throw CapacityError("sequence length " + std::to_string(offset + n) +
                        " exceeds max_positions " + std::to_string(cfg_.max_positions));
  return slice_rows(pos_embed_, offset, offset + n);
}

Tensor LmModel::backbone(Tensor x, const std::vector<AttnMask>& layer_masks,
                         const DropoutCtx& drop) const {
  if (layer_masks.size() != blocks_.size())
    throw ShapeError("one attention mask per layer required");
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    Tensor h = layer_norm_rows(x, b.ln1_g, b.ln1_b);
    Tensor q = linear(h, b.wq, b.bq);
    Tensor k = linear(h, b.wk, b.bk);
    Tensor v = linear(h, b.wv, b.bv);
    Tensor att = multi_head_attention(q, k, v, layer_masks[l], cfg_.num_heads);
    Tensor proj = dropout(linear(att, b.wo, b.bo), drop.p, drop.rng);
    x = add(x, proj);
    Tensor f = layer_norm_rows(x, b.ln2_g, b.ln2_b);
    f = linear(gelu(linear(f, b.w1, b.b1)), b.w2, b.b2);
    x = add(x, dropout(f, drop.p, drop.rng));
  }
  return layer_norm_rows(x, lnf_g_, lnf_b_);
}

LmModel::MplmOut LmModel::mplm_forward(std::span<const int> sem_in, std::span<const int> ac_in,
                                       const DropoutCtx& drop) const {
  if (kind_ != ModelKind::mplm) throw ConfigError("mplm_forward on a non-MPLM model");
  const int t_sem = static_cast<int>(sem_in.size());
  const int t_ac = static_cast<int>(ac_in.size());
  if (t_sem < 1) throw ShapeError("mplm_forward needs a semantic prefix");

  std::vector<int> sem_rows(sem_in.size());
  for (size_t i = 0; i < sem_in.size(); ++i) sem_rows[i] = vocab_.semantic_row(sem_in[i]);
  std::vector<int> ac_rows(ac_in.size());
  for (size_t i = 0; i < ac_in.size(); ++i) ac_rows[i] = vocab_.acoustic_row(ac_in[i]);

  Tensor emb = embedding_rows(sem_embed_, sem_rows);
  if (t_ac > 0) emb = concat_rows(emb, embedding_rows(ac_embed_, ac_rows));
  Tensor x = dropout(add(emb, embed_positions(t_sem + t_ac)), drop.p, drop.rng);

  const std::vector<AttnMask> masks(static_cast<size_t>(cfg_.num_layers),
                                    mplm_mask(t_sem, t_ac));
  Tensor h = backbone(std::move(x), masks, drop);

  MplmOut out;
  out.semantic_logits = linear(slice_rows(h, 0, t_sem), sem_head_w_, sem_head_b_);
  if (t_ac > 0)
    out.acoustic_logits = linear(slice_rows(h, t_sem, t_sem + t_ac), ac_head_w_, ac_head_b_);
  return out;
}

Tensor LmModel::elm_forward(std::span<const int> ac_in, const DropoutCtx& drop,
                            int pos_offset) const {
  if (kind_ != ModelKind::elm) throw ConfigError("elm_forward on a non-ELM model");
  const int t = static_cast<int>(ac_in.size());
  if (t < 1) throw ShapeError("elm_forward needs at least one token");
  std::vector<int> rows(ac_in.size());
  for (size_t i = 0; i < ac_in.size(); ++i) rows[i] = vocab_.acoustic_row(ac_in[i]);

  Tensor x = dropout(add(embedding_rows(ac_embed_, rows), embed_positions(t, pos_offset)),
                     drop.p, drop.rng);
  const std::vector<AttnMask> masks(static_cast<size_t>(cfg_.num_layers),
                                    window_mask(t, cfg_.window));
  Tensor h = backbone(std::move(x), masks, drop);
  return linear(h, ac_head_w_, ac_head_b_);
}

Tensor LmModel::plm_forward(std::span<const int> sem_in,
                            const std::vector<std::vector<int>>& ac_layer_tokens, int layer_index,
                            const DropoutCtx& drop) const {
  if (kind_ != ModelKind::plm) throw ConfigError("plm_forward on a non-PLM model");
  if (layer_index < 2 || layer_index > vocab_.num_layers)
    throw IndexError("PLM layer index " + std::to_string(layer_index) + " outside [2, L]");
  const int t_sem = static_cast<int>(sem_in.size());
  const int t_ac = static_cast<int>(ac_layer_tokens.size());
  if (t_sem < 1 || t_ac < 1) throw ShapeError("plm_forward needs semantic and acoustic spans");

  std::vector<int> sem_rows(sem_in.size());
  for (size_t i = 0; i < sem_in.size(); ++i) sem_rows[i] = vocab_.semantic_row(sem_in[i]);
  std::vector<std::vector<int>> ac_rows(ac_layer_tokens.size());
  for (size_t i = 0; i < ac_layer_tokens.size(); ++i) {
    if (ac_layer_tokens[i].empty()) throw ShapeError("acoustic position with no layer tokens");
    for (int id : ac_layer_tokens[i]) ac_rows[i].push_back(vocab_.acoustic_row(id));
  }

  Tensor ac_part = embedding_sum_rows(ac_embed_, ac_rows);
  // layer-index embedding joins every acoustic position
  const std::vector<int> layer_ids(static_cast<size_t>(t_ac), layer_index - 2);
  ac_part = add(ac_part, embedding_rows(layer_embed_, layer_ids));
  Tensor emb = concat_rows(embedding_rows(sem_embed_, sem_rows), ac_part);
  Tensor x = dropout(add(emb, embed_positions(t_sem + t_ac)), drop.p, drop.rng);

  const std::vector<AttnMask> masks(static_cast<size_t>(cfg_.num_layers),
                                    full_mask(t_sem + t_ac));
  Tensor h = backbone(std::move(x), masks, drop);
  return linear(slice_rows(h, t_sem, t_sem + t_ac), ac_head_w_, ac_head_b_);
}

// ---- batch construction ----------------------------------------------------

MplmItem make_mplm_item(const SemanticSeq& masked_semantic, const SpanMaskPlan& plan,
                        const std::vector<int>& layer0, const VocabConfig& vocab) {
  MplmItem item;
  item.sem_in = masked_semantic.tokens;
  item.sem_target.assign(item.sem_in.size(), -1);
  for (size_t i = 0; i < plan.masked_positions.size(); ++i)
    item.sem_target[static_cast<size_t>(plan.masked_positions[i])] =
        vocab.semantic_row(plan.original_tokens[i]);
  item.ac_in.reserve(layer0.size() + 1);
  item.ac_in.push_back(vocab.bos_id());
  item.ac_in.insert(item.ac_in.end(), layer0.begin(), layer0.end());
  item.ac_target.reserve(layer0.size() + 1);
  for (int id : layer0) item.ac_target.push_back(vocab.acoustic_row(id));
  item.ac_target.push_back(vocab.acoustic_row(vocab.eos_id()));
  return item;
}

ElmItem make_elm_item(const std::vector<int>& layer0, const VocabConfig& vocab) {
  ElmItem item;
  item.ac_in.reserve(layer0.size() + 1);
  item.ac_in.push_back(vocab.bos_id());
  item.ac_in.insert(item.ac_in.end(), layer0.begin(), layer0.end());
  for (int id : layer0) item.ac_target.push_back(vocab.acoustic_row(id));
  item.ac_target.push_back(vocab.acoustic_row(vocab.eos_id()));
  return item;
}

PlmItem make_plm_item(const UtterancePair& pair, int layer_index, int prompt_len,
                      const VocabConfig& vocab) {
  if (layer_index < 2 || layer_index > vocab.num_layers)
    throw IndexError("PLM layer index outside [2, L]");
  const int t_ac = pair.acoustic.length();
  if (prompt_len < 0 || prompt_len > t_ac) throw ConfigError("PLM prompt length out of range");
  PlmItem item;
  item.sem_in = pair.semantic.tokens;
  item.layer_index = layer_index;
  item.prompt_len = prompt_len;
  item.ac_layer_tokens.resize(static_cast<size_t>(t_ac));
  item.target.assign(static_cast<size_t>(t_ac), -1);
  for (int t = 0; t < t_ac; ++t) {
    const int depth = t < prompt_len ? vocab.num_layers : layer_index - 1;
    for (int l = 0; l < depth; ++l)
      item.ac_layer_tokens[static_cast<size_t>(t)].push_back(
          pair.acoustic.layer(l)[static_cast<size_t>(t)]);
    if (t >= prompt_len)
      item.target[static_cast<size_t>(t)] =
          vocab.acoustic_row(pair.acoustic.layer(layer_index - 1)[static_cast<size_t>(t)]);
  }
  return item;
}

// ---- losses ----------------------------------------------------------------

namespace {

Tensor weighted_mean(std::vector<Tensor> sums, int count) {
  if (sums.empty() || count == 0) return Tensor::scalar(0.0);
  Tensor total = sums[0];
  for (size_t i = 1; i < sums.size(); ++i) total = add(total, sums[i]);
  return scale(total, 1.0 / count);
}

}  // namespace

Tensor mplm_loss(const LmModel& model, std::span<const MplmItem> batch, const DropoutCtx& drop,
                 LossParts* parts) {
  if (batch.empty()) throw ConfigError("mplm_loss on an empty batch");
  std::vector<Tensor> mask_sums, ar_sums;
  int mask_count = 0, ar_count = 0;
  for (const MplmItem& item : batch) {
    auto out = model.mplm_forward(item.sem_in, item.ac_in, drop);
    int n = 0;
    mask_sums.push_back(cross_entropy_sum(out.semantic_logits, item.sem_target, -1, &n));
    mask_count += n;
    ar_sums.push_back(cross_entropy_sum(out.acoustic_logits, item.ac_target, -1, &n));
    ar_count += n;
  }
  Tensor l_mask = weighted_mean(std::move(mask_sums), mask_count);
  Tensor l_ar = weighted_mean(std::move(ar_sums), ar_count);
  Tensor total = add(l_mask, l_ar);
  if (parts)
    *parts = LossParts{total.value(), l_mask.value(), l_ar.value(), mask_count, ar_count};
  return total;
}

Tensor elm_loss(const LmModel& model, std::span<const ElmItem> batch, const DropoutCtx& drop,
                LossParts* parts) {
  if (batch.empty()) throw ConfigError("elm_loss on an empty batch");
  std::vector<Tensor> sums;
  int count = 0;
  for (const ElmItem& item : batch) {
    Tensor logits = model.elm_forward(item.ac_in, drop);
    int n = 0;
    sums.push_back(cross_entropy_sum(logits, item.ac_target, -1, &n));
    count += n;
  }
  Tensor total = weighted_mean(std::move(sums), count);
  if (parts) *parts = LossParts{total.value(), 0.0, total.value(), 0, count};
  return total;
}

Tensor plm_loss(const LmModel& model, std::span<const PlmItem> batch, const DropoutCtx& drop,
                LossParts* parts) {
  if (batch.empty()) throw ConfigError("plm_loss on an empty batch");
  std::vector<Tensor> sums;
  int count = 0;
  for (const PlmItem& item : batch) {
    Tensor logits = model.plm_forward(item.sem_in, item.ac_layer_tokens, item.layer_index, drop);
    int n = 0;
    sums.push_back(cross_entropy_sum(logits, item.target, -1, &n));
    count += n;
  }
  Tensor total = weighted_mean(std::move(sums), count);
  if (parts) *parts = LossParts{total.value(), 0.0, total.value(), 0, count};
  return total;
}

}  // namespace lmvc
