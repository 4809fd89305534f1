#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmvc/masks.hpp"
#include "lmvc/tensor.hpp"
#include "lmvc/tokens.hpp"
#include "lmvc/vocab.hpp"

namespace lmvc {

enum class ModelKind { mplm, elm, plm };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int embed_dim = 128;
  int ff_dim = 512;
  double dropout = 0.1;
  int max_positions = 1024;
  // ELM only: per-layer attention window length w. Windows compose across
  // layers, so a stack of n layers conditions on at most n*w past keys.
  int window = 20;

  static ModelConfig toy_default() { return ModelConfig{}; }
  static ModelConfig paper_scale() { return ModelConfig{12, 16, 1024, 4096, 0.1, 2048, 20}; }
  void validate(ModelKind kind) const;

  bool operator==(const ModelConfig&) const = default;
};

struct DropoutCtx {
  double p = 0.0;
  Rng* rng = nullptr;  // null disables dropout (eval / gradient checks)
};

// One decoder-only transformer instantiated as MPLM, ELM or PLM. Tables and
// heads exist per kind: the ELM has no semantic stream at all, only the PLM
// keys a codec-layer index embedding.
class LmModel {
 public:
  LmModel(ModelKind kind, ModelConfig cfg, VocabConfig vocab, uint64_t init_seed);

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  const VocabConfig& vocab() const { return vocab_; }

  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<Tensor*> parameters();
  int64_t num_params() const;

  int semantic_head_dim() const { return vocab_.semantic_rows(); }
  int acoustic_head_dim() const { return vocab_.acoustic_rows(); }

  // ELM: how far back (in key positions) a logit can depend on the input;
  // per-layer windows of w compose to num_layers * w.
  int receptive_bound() const { return cfg_.num_layers * cfg_.window; }

  struct MplmOut {
    Tensor semantic_logits;  // [T_sem x semantic_head_dim]
    Tensor acoustic_logits;  // [T_ac_in x acoustic_head_dim]
  };
  // sem_in: masked semantic ids; ac_in: BOS-led, teacher-forced layer-0 ids.
  MplmOut mplm_forward(std::span<const int> sem_in, std::span<const int> ac_in,
                       const DropoutCtx& drop = {}) const;

  // Window-limited causal LM over the acoustic stream only. pos_offset shifts
  // the absolute position ids, letting decode score a trailing slice of a
  // longer stream in place.
  Tensor elm_forward(std::span<const int> ac_in, const DropoutCtx& drop = {},
                     int pos_offset = 0) const;

  // Non-autoregressive pass for codec layer `layer_index` (2-based, following
  // the coarse layer 1). ac_layer_tokens lists, per acoustic position, the
  // token ids whose embeddings are summed (all layers in the prompt region,
  // layers 1..l-1 in the target region). Returns acoustic logits at every
  // acoustic position.
  Tensor plm_forward(std::span<const int> sem_in,
                     const std::vector<std::vector<int>>& ac_layer_tokens, int layer_index,
                     const DropoutCtx& drop = {}) const;

  // Raw parameter access for checkpointing.
  Tensor* find_parameter(const std::string& name);

  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
  };

  // Read-only views for the incremental decoder.
  const Tensor& sem_embed() const { return sem_embed_; }
  const Tensor& ac_embed() const { return ac_embed_; }
  const Tensor& pos_embed() const { return pos_embed_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Tensor& lnf_g() const { return lnf_g_; }
  const Tensor& lnf_b() const { return lnf_b_; }
  const Tensor& ac_head_w() const { return ac_head_w_; }
  const Tensor& ac_head_b() const { return ac_head_b_; }

 private:
  Tensor backbone(Tensor x, const std::vector<AttnMask>& layer_masks,
                  const DropoutCtx& drop) const;
  Tensor embed_positions(int n, int offset = 0) const;

  ModelKind kind_;
  ModelConfig cfg_;
  VocabConfig vocab_;
  Tensor sem_embed_, ac_embed_, pos_embed_, layer_embed_;
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_;
  Tensor sem_head_w_, sem_head_b_, ac_head_w_, ac_head_b_;
};

// ---- training batches ------------------------------------------------------

struct MplmItem {
  std::vector<int> sem_in;      // masked semantic ids
  std::vector<int> sem_target;  // head-row targets at masked positions, else -1
  std::vector<int> ac_in;       // BOS then the layer-0 row
  std::vector<int> ac_target;   // layer-0 row then EOS, as head rows
};

struct ElmItem {
  std::vector<int> ac_in;
  std::vector<int> ac_target;
};

struct PlmItem {
  std::vector<int> sem_in;
  std::vector<std::vector<int>> ac_layer_tokens;
  std::vector<int> target;  // head rows of layer `layer_index`, -1 in prompt
  int layer_index = 2;
  int prompt_len = 0;
};

MplmItem make_mplm_item(const SemanticSeq& masked_semantic, const SpanMaskPlan& plan,
                        const std::vector<int>& layer0, const VocabConfig& vocab);
ElmItem make_elm_item(const std::vector<int>& layer0, const VocabConfig& vocab);
// prompt_len acoustic positions keep all layers and produce no loss.
PlmItem make_plm_item(const UtterancePair& pair, int layer_index, int prompt_len,
                      const VocabConfig& vocab);

struct LossParts {
  double total = 0.0;
  double mask = 0.0;  // MPLM semantic-recovery component
  double ar = 0.0;    // left-to-right acoustic component
  int mask_positions = 0;
  int ar_positions = 0;
};

// L_mask + L_ar, each averaged over its active positions across the batch.
Tensor mplm_loss(const LmModel& model, std::span<const MplmItem> batch, const DropoutCtx& drop,
                 LossParts* parts = nullptr);
Tensor elm_loss(const LmModel& model, std::span<const ElmItem> batch, const DropoutCtx& drop,
                LossParts* parts = nullptr);
Tensor plm_loss(const LmModel& model, std::span<const PlmItem> batch, const DropoutCtx& drop,
                LossParts* parts = nullptr);

}  // namespace lmvc
