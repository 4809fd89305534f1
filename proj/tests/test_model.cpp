#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lmvc/gradcheck.hpp"
#include "lmvc/model.hpp"

using namespace lmvc;

namespace {

VocabConfig tiny_vocab() {
  VocabConfig v;
  v.semantic_vocab = 16;
  v.acoustic_vocab = 32;
  v.num_layers = 3;
  return v;
}

ModelConfig tiny_cfg(int layers = 2) {
  ModelConfig c;
  c.num_layers = layers;
  c.num_heads = 2;
  c.embed_dim = 16;
  c.ff_dim = 32;
  c.dropout = 0.0;
  c.max_positions = 128;
  c.window = 3;
  return c;
}

std::vector<int> random_ids(int n, int vocab, Rng& rng) {
  std::uniform_int_distribution<int> d(0, vocab - 1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int& v : out) v = d(rng);
  return out;
}

// The heads start at zero for the uniform-output contract; sensitivity tests
// need them moved off that fixed point.
void randomize_heads(LmModel& m, uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> d(0.0, 0.05);
  for (auto& [name, t] : m.named_parameters())
    if (name.find("head") != std::string::npos)
      for (double& x : t->data()) x = d(rng);
}

MplmItem random_mplm_item(const VocabConfig& v, int t_sem, int t_ac, Rng& rng, int n_masked = 2) {
  SemanticSeq sem{random_ids(t_sem, v.semantic_vocab, rng)};
  SpanMaskPlan plan;
  SemanticSeq masked = sem;
  for (int i = 0; i < std::min(n_masked, t_sem); ++i) {
    plan.masked_positions.push_back(i * 2 % t_sem);
    plan.original_tokens.push_back(sem.tokens[static_cast<size_t>(i * 2 % t_sem)]);
    masked.tokens[static_cast<size_t>(i * 2 % t_sem)] = v.mask_id();
  }
  return make_mplm_item(masked, plan, random_ids(t_ac, v.acoustic_vocab, rng), v);
}

}  // namespace

TEST_CASE("uniform-output initialization gives ln(effective vocab) losses") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(1);

  SUBCASE("mplm components") {
    LmModel m(ModelKind::mplm, tiny_cfg(), v, 7);
    std::vector<MplmItem> batch{random_mplm_item(v, 10, 12, rng)};
    LossParts parts;
    mplm_loss(m, batch, {}, &parts);
    CHECK(std::abs(parts.mask - std::log(m.semantic_head_dim())) < 1e-6);
    CHECK(std::abs(parts.ar - std::log(m.acoustic_head_dim())) < 1e-6);
    CHECK(std::abs(parts.total - (parts.mask + parts.ar)) < 1e-12);
  }
  SUBCASE("elm") {
    LmModel m(ModelKind::elm, tiny_cfg(), v, 7);
    std::vector<ElmItem> batch{make_elm_item(random_ids(14, v.acoustic_vocab, rng), v)};
    LossParts parts;
    elm_loss(m, batch, {}, &parts);
    CHECK(std::abs(parts.total - std::log(m.acoustic_head_dim())) < 1e-6);
  }
  SUBCASE("plm") {
    LmModel m(ModelKind::plm, tiny_cfg(), v, 7);
    UtterancePair pair;
    pair.semantic.tokens = random_ids(10, v.semantic_vocab, rng);
    pair.acoustic.rows.assign(static_cast<size_t>(v.num_layers), {});
    for (auto& row : pair.acoustic.rows) row = random_ids(16, v.acoustic_vocab, rng);
    std::vector<PlmItem> batch{make_plm_item(pair, 2, 4, v)};
    LossParts parts;
    plm_loss(m, batch, {}, &parts);
    CHECK(std::abs(parts.total - std::log(m.acoustic_head_dim())) < 1e-6);
  }
}

TEST_CASE("mplm loss with an empty mask set is pure L_ar") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(2);
  LmModel m(ModelKind::mplm, tiny_cfg(), v, 3);
  SemanticSeq sem{random_ids(8, v.semantic_vocab, rng)};
  SpanMaskPlan empty_plan;
  std::vector<MplmItem> batch{
      make_mplm_item(sem, empty_plan, random_ids(10, v.acoustic_vocab, rng), v)};
  LossParts parts;
  Tensor total = mplm_loss(m, batch, {}, &parts);
  CHECK(parts.mask == 0.0);
  CHECK(parts.mask_positions == 0);
  CHECK(total.value() == parts.ar);
}

TEST_CASE("mplm causality: future acoustic perturbation leaves logits bit-identical") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(3);
  LmModel m(ModelKind::mplm, tiny_cfg(3), v, 11);
  randomize_heads(m, 50);

  const auto sem = random_ids(9, v.semantic_vocab, rng);
  auto ac = random_ids(12, v.acoustic_vocab, rng);
  NoGradGuard ng;
  auto base = m.mplm_forward(sem, ac);

  const int t_perturb = 7;
  auto ac2 = ac;
  ac2[t_perturb] = (ac2[t_perturb] + 1) % v.acoustic_vocab;
  auto poked = m.mplm_forward(sem, ac2);

  const int cols = m.acoustic_head_dim();
  for (int t = 0; t < t_perturb; ++t)
    for (int c = 0; c < cols; ++c)
      CHECK(base.acoustic_logits.at(t, c) == poked.acoustic_logits.at(t, c));
  // prefix isolation: semantic logits never see acoustic tokens
  CHECK(base.semantic_logits.data() == poked.semantic_logits.data());
  // and the perturbed position itself must differ somewhere downstream
  bool any_diff = false;
  for (int c = 0; c < cols && !any_diff; ++c)
    any_diff = base.acoustic_logits.at(t_perturb + 1, c) != poked.acoustic_logits.at(t_perturb + 1, c);
  CHECK(any_diff);
}

TEST_CASE("elm window leak-freedom") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(4);

  SUBCASE("single layer: positions before t-w cannot move the logit at t") {
    ModelConfig cfg = tiny_cfg(1);
    cfg.window = 3;
    LmModel m(ModelKind::elm, cfg, v, 5);
    randomize_heads(m, 51);
    auto ac = random_ids(16, v.acoustic_vocab, rng);
    NoGradGuard ng;
    Tensor base = m.elm_forward(ac);
    const int t = 10;
    for (int p = 0; p < t - cfg.window; ++p) {
      auto poked_ids = ac;
      poked_ids[static_cast<size_t>(p)] = (poked_ids[static_cast<size_t>(p)] + 1) % v.acoustic_vocab;
      Tensor poked = m.elm_forward(poked_ids);
      for (int c = 0; c < m.acoustic_head_dim(); ++c) CHECK(base.at(t, c) == poked.at(t, c));
    }
    // inside the window the logit must react
    auto poked_ids = ac;
    poked_ids[t - 1] = (poked_ids[t - 1] + 1) % v.acoustic_vocab;
    Tensor poked = m.elm_forward(poked_ids);
    bool any_diff = false;
    for (int c = 0; c < m.acoustic_head_dim() && !any_diff; ++c)
      any_diff = base.at(t, c) != poked.at(t, c);
    CHECK(any_diff);
  }
  SUBCASE("stacked windows compose to num_layers * w") {
    ModelConfig cfg = tiny_cfg(2);
    cfg.window = 2;
    LmModel m(ModelKind::elm, cfg, v, 6);
    randomize_heads(m, 52);
    CHECK(m.receptive_bound() == 4);
    auto ac = random_ids(18, v.acoustic_vocab, rng);
    NoGradGuard ng;
    Tensor base = m.elm_forward(ac);
    const int t = 12;
    for (int p = 0; p < t - m.receptive_bound(); ++p) {
      auto poked_ids = ac;
      poked_ids[static_cast<size_t>(p)] = (poked_ids[static_cast<size_t>(p)] + 1) % v.acoustic_vocab;
      Tensor poked = m.elm_forward(poked_ids);
      for (int c = 0; c < m.acoustic_head_dim(); ++c) CHECK(base.at(t, c) == poked.at(t, c));
    }
  }
}

TEST_CASE("elm with w >= T-1 matches a causal run of the same weights") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(14);
  ModelConfig cfg = tiny_cfg(2);
  const int t = 9;
  cfg.window = t - 1;
  LmModel wide(ModelKind::elm, cfg, v, 77);
  ModelConfig causal_cfg = cfg;
  causal_cfg.window = 4 * t;  // far beyond the sequence: plain causal LM
  LmModel causal(ModelKind::elm, causal_cfg, v, 77);  // same seed, same weights

  std::vector<ElmItem> batch{make_elm_item(random_ids(t - 1, v.acoustic_vocab, rng), v)};
  LossParts a, b;
  elm_loss(wide, batch, {}, &a);
  elm_loss(causal, batch, {}, &b);
  CHECK(a.total == b.total);
}

TEST_CASE("elm owns no semantic machinery") {
  VocabConfig v = tiny_vocab();
  LmModel m(ModelKind::elm, tiny_cfg(), v, 8);
  for (auto& [name, t] : m.named_parameters()) {
    CHECK(name.find("sem_") == std::string::npos);
    CHECK(name.find("layer_embed") == std::string::npos);
  }
}

TEST_CASE("model initialization and forward are deterministic") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(9);
  const auto sem = random_ids(6, v.semantic_vocab, rng);
  const auto ac = random_ids(8, v.acoustic_vocab, rng);
  LmModel a(ModelKind::mplm, tiny_cfg(), v, 123);
  LmModel b(ModelKind::mplm, tiny_cfg(), v, 123);
  NoGradGuard ng;
  auto oa = a.mplm_forward(sem, ac);
  auto ob = b.mplm_forward(sem, ac);
  CHECK(oa.semantic_logits.data() == ob.semantic_logits.data());
  CHECK(oa.acoustic_logits.data() == ob.acoustic_logits.data());
}

TEST_CASE("plm forward contract") {
  VocabConfig v = tiny_vocab();
  Rng rng = make_rng(10);
  LmModel m(ModelKind::plm, tiny_cfg(), v, 21);
  randomize_heads(m, 53);
  UtterancePair pair;
  pair.semantic.tokens = random_ids(7, v.semantic_vocab, rng);
  pair.acoustic.rows.assign(static_cast<size_t>(v.num_layers), {});
  for (auto& row : pair.acoustic.rows) row = random_ids(11, v.acoustic_vocab, rng);

  SUBCASE("output covers every acoustic position for all layer indices") {
    for (int l = 2; l <= v.num_layers; ++l) {
      PlmItem item = make_plm_item(pair, l, 3, v);
      NoGradGuard ng;
      Tensor logits = m.plm_forward(item.sem_in, item.ac_layer_tokens, l);
      CHECK(logits.rows() == 11);
      CHECK(logits.cols() == m.acoustic_head_dim());
    }
  }
  SUBCASE("layer index bounds") {
    PlmItem item = make_plm_item(pair, 2, 0, v);
    NoGradGuard ng;
    CHECK_THROWS_AS(m.plm_forward(item.sem_in, item.ac_layer_tokens, 1), IndexError);
    CHECK_THROWS_AS(m.plm_forward(item.sem_in, item.ac_layer_tokens, v.num_layers + 1),
                    IndexError);
    CHECK_THROWS_AS(make_plm_item(pair, 1, 0, v), IndexError);
  }
  SUBCASE("two-layer codec always trains layer 2") {
    VocabConfig v2 = tiny_vocab();
    v2.num_layers = 2;
    CHECK_THROWS_AS(make_plm_item(pair, 3, 0, v2), IndexError);
  }
  SUBCASE("prompt positions carry every codec layer, target positions l-1") {
    PlmItem item = make_plm_item(pair, 3, 4, v);
    for (int t = 0; t < 11; ++t) {
      const size_t want = t < 4 ? static_cast<size_t>(v.num_layers) : 2;
      CHECK(item.ac_layer_tokens[static_cast<size_t>(t)].size() == want);
      CHECK((item.target[static_cast<size_t>(t)] == -1) == (t < 4));
    }
  }
  SUBCASE("a codec with one layer cannot host a PLM") {
    VocabConfig v1 = tiny_vocab();
    v1.num_layers = 1;
    CHECK_THROWS_AS(LmModel(ModelKind::plm, tiny_cfg(), v1, 3), ConfigError);
  }
  SUBCASE("position table orders the prompt region") {
    // swapping two prompt tokens must change logits: positions are learned
    PlmItem item = make_plm_item(pair, 2, 4, v);
    NoGradGuard ng;
    Tensor base = m.plm_forward(item.sem_in, item.ac_layer_tokens, 2);
    auto swapped = item.ac_layer_tokens;
    std::swap(swapped[0], swapped[1]);
    if (swapped[0] == swapped[1]) {
      // degenerate draw; perturb instead
      swapped[0][0] = (swapped[0][0] + 1) % v.acoustic_vocab;
    }
    Tensor poked = m.plm_forward(item.sem_in, swapped, 2);
    CHECK(base.data() != poked.data());
  }
}

TEST_CASE("capacity errors") {
  VocabConfig v = tiny_vocab();
  ModelConfig cfg = tiny_cfg();
  cfg.max_positions = 16;
  LmModel m(ModelKind::mplm, cfg, v, 2);
  Rng rng = make_rng(5);
  const auto sem = random_ids(10, v.semantic_vocab, rng);
  const auto ac = random_ids(10, v.acoustic_vocab, rng);
  NoGradGuard ng;
  CHECK_THROWS_AS(m.mplm_forward(sem, ac), CapacityError);
}

TEST_CASE("kind mismatch errors") {
  VocabConfig v = tiny_vocab();
  LmModel elm(ModelKind::elm, tiny_cfg(), v, 2);
  std::vector<int> ids{1, 2, 3};
  NoGradGuard ng;
  CHECK_THROWS_AS(elm.mplm_forward(ids, ids), ConfigError);
}

TEST_CASE("gradient check: all three losses on 2-layer toy configs") {
  VocabConfig v;
  v.semantic_vocab = 8;
  v.acoustic_vocab = 12;
  v.num_layers = 3;
  ModelConfig cfg = tiny_cfg(2);
  Rng rng = make_rng(31);

  SUBCASE("mplm L_mask + L_ar") {
    LmModel m(ModelKind::mplm, cfg, v, 41);
    std::vector<MplmItem> batch{random_mplm_item(v, 6, 7, rng)};
    auto f = [&] { return mplm_loss(m, batch, {}); };
    CHECK(gradient_check(f, m.parameters(), 1e-5, 120, rng) < 1e-4);
  }
  SUBCASE("elm L_war") {
    LmModel m(ModelKind::elm, cfg, v, 42);
    std::vector<ElmItem> batch{make_elm_item(random_ids(9, v.acoustic_vocab, rng), v)};
    auto f = [&] { return elm_loss(m, batch, {}); };
    CHECK(gradient_check(f, m.parameters(), 1e-5, 120, rng) < 1e-4);
  }
  SUBCASE("plm") {
    LmModel m(ModelKind::plm, cfg, v, 43);
    UtterancePair pair;
    pair.semantic.tokens = random_ids(6, v.semantic_vocab, rng);
    pair.acoustic.rows.assign(static_cast<size_t>(v.num_layers), {});
    for (auto& row : pair.acoustic.rows) row = random_ids(8, v.acoustic_vocab, rng);
    std::vector<PlmItem> batch{make_plm_item(pair, 3, 2, v)};
    auto f = [&] { return plm_loss(m, batch, {}); };
    CHECK(gradient_check(f, m.parameters(), 1e-5, 120, rng) < 1e-4);
  }
}

TEST_CASE("dropout is active in training mode and absent otherwise") {
  VocabConfig v = tiny_vocab();
  ModelConfig cfg = tiny_cfg();
  cfg.dropout = 0.5;
  LmModel m(ModelKind::elm, cfg, v, 3);
  randomize_heads(m, 54);
  Rng rng = make_rng(6);
  const auto ac = random_ids(8, v.acoustic_vocab, rng);
  NoGradGuard ng;
  Tensor a = m.elm_forward(ac);
  Tensor b = m.elm_forward(ac);
  CHECK(a.data() == b.data());  // no rng: dropout off
  Rng drop_rng = make_rng(7);
  DropoutCtx drop{cfg.dropout, &drop_rng};
  Tensor c = m.elm_forward(ac, drop);
  CHECK(a.data() != c.data());
}
