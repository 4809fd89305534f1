#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lmvc/decode.hpp"
#include "lmvc/synth.hpp"

using namespace lmvc;

namespace {

VocabConfig small_vocab() {
  VocabConfig v;
  v.semantic_vocab = 24;
  v.acoustic_vocab = 48;
  v.num_layers = 3;
  return v;
}

ModelConfig small_cfg(int layers = 2) {
  ModelConfig c;
  c.num_layers = layers;
  c.num_heads = 2;
  c.embed_dim = 16;
  c.ff_dim = 32;
  c.dropout = 0.0;
  c.max_positions = 256;
  c.window = 4;
  return c;
}

void randomize_all(LmModel& m, uint64_t seed, double scale = 0.05) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& [name, t] : m.named_parameters())
    if (name.find("head") != std::string::npos)
      for (double& x : t->data()) x = d(rng);
}

std::vector<int> random_ids(int n, int vocab, uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<int> d(0, vocab - 1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int& v : out) v = d(rng);
  return out;
}

std::vector<double> row_logprobs(const Tensor& logits, int row) {
  const int v = logits.cols();
  std::vector<double> out(static_cast<size_t>(v));
  detail::log_softmax_row(logits.data().data() + static_cast<size_t>(row) * v, out.data(), v);
  return out;
}

UtterancePair toy_pair(const VocabConfig& v, uint64_t seed, int t_sem) {
  UtterancePair p;
  p.speaker_id = 1;
  p.semantic.tokens = random_ids(t_sem, v.semantic_vocab, seed);
  const int t_ac = v.expected_acoustic_len(t_sem);
  p.acoustic.rows.assign(static_cast<size_t>(v.num_layers), {});
  for (int l = 0; l < v.num_layers; ++l)
    p.acoustic.rows[static_cast<size_t>(l)] = random_ids(t_ac, v.acoustic_vocab, seed + 17 + l);
  return p;
}

}  // namespace

TEST_CASE("fuse_logits") {
  SUBCASE("hand-computed example picks index 1") {
    std::vector<double> mp{-1.0, -1.1};
    std::vector<double> el{-3.0, -0.5};
    auto fused = fuse_logits(mp, el, 0.3);
    CHECK(fused[0] == doctest::Approx(-1.9).epsilon(1e-15));
    CHECK(fused[1] == doctest::Approx(-1.25).epsilon(1e-15));
    CHECK(fused[1] > fused[0]);
    // with lambda = 0 the MPLM wins at index 0
    auto alone = fuse_logits(mp, el, 0.0);
    CHECK(alone[0] > alone[1]);
  }
  SUBCASE("lambda 0 reproduces the MPLM scores exactly") {
    Rng rng = make_rng(3);
    std::normal_distribution<double> d(-2.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> a(16), b(16);
      for (auto& x : a) x = d(rng);
      for (auto& x : b) x = d(rng);
      auto fused = fuse_logits(a, b, 0.0);
      CHECK(fused == a);
    }
  }
  SUBCASE("large lambda hands the argmax to the ELM") {
    Rng rng = make_rng(4);
    std::normal_distribution<double> d(-2.0, 1.0);
    int agree = 0;
    const int trials = 50;
    for (int trial = 0; trial < trials; ++trial) {
      std::vector<double> a(16), b(16);
      for (auto& x : a) x = d(rng);
      for (auto& x : b) x = d(rng);
      auto fused = fuse_logits(a, b, 1e9);
      const auto am = [&](const std::vector<double>& v) {
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
      };
      agree += am(fused) == am(b) ? 1 : 0;
    }
    CHECK(agree == trials);
  }
  SUBCASE("argmax is invariant to constant shifts of either input") {
    Rng rng = make_rng(5);
    std::normal_distribution<double> d(-2.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<double> a(12), b(12);
      for (auto& x : a) x = d(rng);
      for (auto& x : b) x = d(rng);
      auto base = fuse_logits(a, b, 0.7);
      auto as = a, bs = b;
      for (auto& x : as) x += 3.25;
      for (auto& x : bs) x -= 1.5;
      auto shifted = fuse_logits(as, bs, 0.7);
      const auto am = [&](const std::vector<double>& v) {
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
      };
      CHECK(am(base) == am(shifted));
    }
  }
  SUBCASE("length mismatch is an error") {
    std::vector<double> a{1.0, 2.0}, b{1.0};
    CHECK_THROWS_AS(fuse_logits(a, b, 0.3), ShapeError);
  }
}

TEST_CASE("select_token") {
  SamplingConfig cfg;
  Rng rng = make_rng(1);
  SUBCASE("argmax picks the first maximum") {
    cfg.mode = SamplingConfig::Mode::argmax;
    std::vector<double> s{0.1, 0.9, 0.9, 0.2};
    CHECK(select_token(s, cfg, rng) == 1);
  }
  SUBCASE("top-k with k=1 equals argmax") {
    cfg.mode = SamplingConfig::Mode::top_k;
    cfg.k = 1;
    std::vector<double> s{0.1, 0.9, 0.3};
    for (int i = 0; i < 10; ++i) CHECK(select_token(s, cfg, rng) == 1);
  }
  SUBCASE("top-k sampling is deterministic given the rng state") {
    cfg.mode = SamplingConfig::Mode::top_k;
    cfg.k = 3;
    std::vector<double> s{0.5, 0.4, 0.3, 0.2};
    Rng a = make_rng(9), b = make_rng(9);
    for (int i = 0; i < 20; ++i) CHECK(select_token(s, cfg, a) == select_token(s, cfg, b));
  }
}

TEST_CASE("incremental MPLM decoding matches the block forward") {
  VocabConfig v = small_vocab();
  LmModel m(ModelKind::mplm, small_cfg(3), v, 99);
  randomize_all(m, 1);

  const auto sem = random_ids(9, v.semantic_vocab, 2);
  std::vector<int> prefix_tokens = random_ids(6, v.acoustic_vocab, 3);
  std::vector<int> ac_in{v.bos_id()};
  ac_in.insert(ac_in.end(), prefix_tokens.begin(), prefix_tokens.end());

  MplmDecoder dec(m, sem, ac_in);
  NoGradGuard ng;
  const auto generated = random_ids(5, v.acoustic_vocab, 4);
  for (int step = 0; step <= 5; ++step) {
    auto out = m.mplm_forward(sem, ac_in);
    const auto want = row_logprobs(out.acoustic_logits, out.acoustic_logits.rows() - 1);
    const auto& got = dec.next_logprobs();
    REQUIRE(got.size() == want.size());
    double worst = 0.0;
    for (size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(want[i] - got[i]));
    CHECK(worst < 1e-12);
    if (step < 5) {
      dec.push(generated[static_cast<size_t>(step)]);
      ac_in.push_back(generated[static_cast<size_t>(step)]);
    }
  }
}

TEST_CASE("ELM scorer matches the full-stream forward") {
  VocabConfig v = small_vocab();
  ModelConfig cfg = small_cfg(2);
  cfg.window = 3;
  LmModel m(ModelKind::elm, cfg, v, 7);
  randomize_all(m, 2);

  std::vector<int> stream{v.bos_id()};
  auto prefix = random_ids(4, v.acoustic_vocab, 5);
  stream.insert(stream.end(), prefix.begin(), prefix.end());
  ElmScorer scorer(m, stream);
  NoGradGuard ng;
  const auto more = random_ids(20, v.acoustic_vocab, 6);
  for (int step = 0; step <= 20; ++step) {
    Tensor logits = m.elm_forward(stream);
    const auto want = row_logprobs(logits, logits.rows() - 1);
    const auto& got = scorer.next_logprobs();
    double worst = 0.0;
    for (size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(want[i] - got[i]));
    CHECK(worst < 1e-12);
    if (step < 20) {
      scorer.push(more[static_cast<size_t>(step)]);
      stream.push_back(more[static_cast<size_t>(step)]);
    }
  }
}

TEST_CASE("coarse generation") {
  VocabConfig v = small_vocab();
  LmModel mplm(ModelKind::mplm, small_cfg(2), v, 11);
  LmModel elm(ModelKind::elm, small_cfg(1), v, 12);
  randomize_all(mplm, 3);
  randomize_all(elm, 4);

  UtterancePair target = toy_pair(v, 21, 10);
  UtterancePair source = toy_pair(v, 22, 10);
  CoarsePrompt prompt = build_coarse_prompt(target, source.semantic);

  // keep EOS out of reach so length behaviour is observable
  auto mute_eos = [&](LmModel& m) {
    m.find_parameter("ac_head_b")->data()[static_cast<size_t>(
        m.vocab().acoustic_row(m.vocab().eos_id()))] = -1e9;
  };

  SUBCASE("lambda 0 is bit-identical to decoding without the ELM") {
    mute_eos(mplm);
    for (auto mode : {SamplingConfig::Mode::argmax, SamplingConfig::Mode::top_k}) {
      SamplingConfig cfg;
      cfg.mode = mode;
      cfg.seed = 77;
      cfg.fusion_lambda = 0.0;
      CoarseResult with_elm = generate_coarse(mplm, &elm, prompt, cfg);
      CoarseResult without = generate_coarse(mplm, nullptr, prompt, cfg);
      CHECK(with_elm.tokens == without.tokens);
      CHECK(with_elm.truncated == without.truncated);
    }
  }
  SUBCASE("fixed seed reproduces the sampled sequence") {
    SamplingConfig cfg;
    cfg.mode = SamplingConfig::Mode::top_k;
    cfg.seed = 5;
    CoarseResult a = generate_coarse(mplm, &elm, prompt, cfg);
    CoarseResult b = generate_coarse(mplm, &elm, prompt, cfg);
    CHECK(a.tokens == b.tokens);
  }
  SUBCASE("the hard cap bounds generation and sets the truncation flag") {
    mute_eos(mplm);
    SamplingConfig cfg;
    cfg.mode = SamplingConfig::Mode::argmax;
    cfg.max_len_factor = 1.25;
    CoarseResult r = generate_coarse(mplm, nullptr, prompt, cfg);
    CHECK(r.truncated);
    const int cap = static_cast<int>(1.25 * v.expected_acoustic_len(10));
    CHECK(static_cast<int>(r.tokens.size()) == cap);
  }
  SUBCASE("an immediate EOS ends generation cleanly") {
    mplm.find_parameter("ac_head_b")->data()[static_cast<size_t>(
        v.acoustic_row(v.eos_id()))] = 1e9;
    SamplingConfig cfg;
    cfg.mode = SamplingConfig::Mode::argmax;
    CoarseResult r = generate_coarse(mplm, nullptr, prompt, cfg);
    CHECK(r.tokens.empty());
    CHECK_FALSE(r.truncated);
  }
}

TEST_CASE("fine generation") {
  VocabConfig v = small_vocab();
  LmModel plm(ModelKind::plm, small_cfg(2), v, 31);
  randomize_all(plm, 5);

  UtterancePair target = toy_pair(v, 41, 10);
  const auto coarse = random_ids(12, v.acoustic_vocab, 42);
  std::vector<int> sem = target.semantic.tokens;

  SUBCASE("grid covers all layers at the coarse length, layer 0 verbatim") {
    AcousticGrid g = generate_fine(plm, sem, target.acoustic, coarse);
    CHECK(g.num_layers() == v.num_layers);
    CHECK(g.length() == 12);
    CHECK(g.layer(0) == coarse);
  }
  SUBCASE("pure function of its inputs") {
    AcousticGrid a = generate_fine(plm, sem, target.acoustic, coarse);
    AcousticGrid b = generate_fine(plm, sem, target.acoustic, coarse);
    CHECK(a == b);
  }
  SUBCASE("empty coarse row short-circuits") {
    AcousticGrid g = generate_fine(plm, sem, target.acoustic, {});
    CHECK(g.length() == 0);
  }
}

TEST_CASE("convert is deterministic under a fixed seed") {
  VocabConfig v = small_vocab();
  LmModel mplm(ModelKind::mplm, small_cfg(2), v, 51);
  LmModel elm(ModelKind::elm, small_cfg(1), v, 52);
  LmModel plm(ModelKind::plm, small_cfg(2), v, 53);
  randomize_all(mplm, 6);
  randomize_all(elm, 7);
  randomize_all(plm, 8);

  UtterancePair source = toy_pair(v, 61, 10);
  UtterancePair target = toy_pair(v, 62, 15);
  SamplingConfig cfg;
  cfg.mode = SamplingConfig::Mode::top_k;
  cfg.seed = 4242;
  ConversionResult a = convert(source, target, mplm, &elm, plm, cfg);
  ConversionResult b = convert(source, target, mplm, &elm, plm, cfg);
  CHECK(a.grid == b.grid);
  CHECK(a.truncated == b.truncated);
}
