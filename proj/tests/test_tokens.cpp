#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lmvc/common.hpp"
#include "lmvc/tokens.hpp"
#include "lmvc/vocab.hpp"

using namespace lmvc;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "lmvc_token_tests";
  fs::create_directories(dir);
  return dir / name;
}

UtterancePair random_pair(const VocabConfig& vocab, Rng& rng, int t_sem) {
  UtterancePair p;
  p.speaker_id = static_cast<uint32_t>(rng() % 1000);
  std::uniform_int_distribution<int> sem(0, vocab.semantic_vocab - 1);
  std::uniform_int_distribution<int> ac(0, vocab.acoustic_vocab - 1);
  for (int i = 0; i < t_sem; ++i) p.semantic.tokens.push_back(sem(rng));
  const int t_ac = vocab.expected_acoustic_len(t_sem);
  p.acoustic.rows.assign(static_cast<size_t>(vocab.num_layers), {});
  for (auto& row : p.acoustic.rows)
    for (int i = 0; i < t_ac; ++i) row.push_back(ac(rng));
  return p;
}

}  // namespace

TEST_CASE("expected_acoustic_len") {
  VocabConfig v = VocabConfig::defaults();
  CHECK(v.expected_acoustic_len(500) == 800);
  CHECK(500 + v.expected_acoustic_len(500) == 1300);  // 10s of audio
  CHECK(v.expected_acoustic_len(0) == 0);
  CHECK(v.expected_acoustic_len(5) == 8);

  SUBCASE("monotone nondecreasing and exact on multiples of five") {
    int prev = 0;
    for (int t = 0; t <= 1000; ++t) {
      const int cur = v.expected_acoustic_len(t);
      CHECK(cur >= prev);
      prev = cur;
      if (t % 5 == 0) CHECK(cur == t * 8 / 5);
    }
  }
}

TEST_CASE("vocab special ids sit above both vocab ranges and are distinct") {
  VocabConfig v = VocabConfig::defaults();
  v.validate();
  const int base = std::max(v.semantic_vocab, v.acoustic_vocab);
  std::vector<int> specials{v.mask_id(), v.eos_id(), v.pad_id(), v.bos_id()};
  for (size_t i = 0; i < specials.size(); ++i) {
    CHECK(specials[i] >= base);
    for (size_t j = i + 1; j < specials.size(); ++j) CHECK(specials[i] != specials[j]);
  }
  CHECK(v.semantic_row(v.mask_id()) == v.semantic_vocab);
  CHECK(v.acoustic_row(v.eos_id()) == v.acoustic_vocab + 1);
  CHECK_THROWS_AS(v.semantic_row(v.semantic_vocab), IndexError);
}

TEST_CASE("build_coarse_prompt") {
  VocabConfig v = VocabConfig::defaults();
  Rng rng = make_rng(3);
  UtterancePair target = random_pair(v, rng, 10);
  UtterancePair source = random_pair(v, rng, 20);

  SUBCASE("concatenation lengths and offsets") {
    // force the acoustic prefix length from the example
    for (auto& row : target.acoustic.rows) row.resize(16);
    CoarsePrompt p = build_coarse_prompt(target, source.semantic);
    CHECK(p.semantic.size() == 30);
    CHECK(p.acoustic_prefix.size() == 16);
    CHECK(p.offsets == std::array<int, 3>{0, 10, 30});
    CHECK(p.target_semantic_len() == 10);
    CHECK(p.source_semantic_len() == 20);
  }
  SUBCASE("segments keep token order") {
    CoarsePrompt p = build_coarse_prompt(target, source.semantic);
    for (int i = 0; i < 10; ++i) CHECK(p.semantic[static_cast<size_t>(i)] == target.semantic.tokens[static_cast<size_t>(i)]);
    for (int i = 0; i < 20; ++i)
      CHECK(p.semantic[static_cast<size_t>(10 + i)] == source.semantic.tokens[static_cast<size_t>(i)]);
    CHECK(p.acoustic_prefix == target.acoustic.layer(0));
  }
  SUBCASE("self-conversion prompt doubles the semantic segment") {
    CoarsePrompt p = build_coarse_prompt(target, target.semantic);
    CHECK(p.offsets == std::array<int, 3>{0, 10, 20});
    CHECK(p.acoustic_prefix == target.acoustic.layer(0));
  }
  SUBCASE("empty source is an error") {
    SemanticSeq empty;
    CHECK_THROWS_AS(build_coarse_prompt(target, empty), ConfigError);
  }
}

TEST_CASE("token file round trip is the identity") {
  Rng rng = make_rng(1234);
  for (int iter = 0; iter < 25; ++iter) {
    VocabConfig v;
    v.semantic_vocab = 2 + static_cast<int>(rng() % 200);
    v.acoustic_vocab = 2 + static_cast<int>(rng() % 1024);
    v.num_layers = 1 + static_cast<int>(rng() % 8);
    UtterancePair p = random_pair(v, rng, 1 + static_cast<int>(rng() % 40));
    // sprinkle specials: EOS in semantic, PAD in acoustic
    if (p.semantic.length() > 2) p.semantic.tokens[1] = v.eos_id();
    if (p.acoustic.length() > 2) p.acoustic.rows[0][0] = v.pad_id();

    auto path = temp_file("roundtrip.tok");
    write_tokens(path, p, v);
    TokenFile tf = read_tokens(path);
    CHECK(tf.vocab == v);
    CHECK(tf.pair == p);
  }
}

TEST_CASE("default-config header carries the codec geometry") {
  VocabConfig v = VocabConfig::defaults();
  Rng rng = make_rng(8);
  UtterancePair p = random_pair(v, rng, 5);
  auto path = temp_file("defaults.tok");
  write_tokens(path, p, v);
  TokenFile tf = read_tokens(path);
  CHECK(tf.vocab.acoustic_vocab == 1024);
  CHECK(tf.vocab.num_layers == 6);
  CHECK(tf.vocab.semantic_frame_ms == 20.0);
  CHECK(tf.vocab.acoustic_frame_ms == 12.5);
}

TEST_CASE("malformed token files") {
  VocabConfig v = VocabConfig::defaults();
  Rng rng = make_rng(77);
  UtterancePair p = random_pair(v, rng, 10);
  auto path = temp_file("malformed.tok");
  write_tokens(path, p, v);

  auto file_bytes = [&]() {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  };

  SUBCASE("header declares more rows than the payload holds") {
    auto bytes = file_bytes();
    // drop the last acoustic row entirely
    bytes.resize(bytes.size() - static_cast<size_t>(p.acoustic.length()) * 2);
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(read_tokens(path), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("bad magic") {
    auto bytes = file_bytes();
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(read_tokens(path), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("unsupported version") {
    auto bytes = file_bytes();
    bytes[8] = 9;
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(read_tokens(path), doctest::Contains("version"), FormatError);
  }
  SUBCASE("token id beyond vocab and specials") {
    auto bytes = file_bytes();
    // first semantic id lives right after the 36-byte header
    bytes[36] = static_cast<char>(0xff);
    bytes[37] = static_cast<char>(0x7f);
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(read_tokens(path), doctest::Contains("out of range"), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.put(0);
    out.close();
    CHECK_THROWS_WITH_AS(read_tokens(path), doctest::Contains("trailing"), FormatError);
  }
  SUBCASE("error messages carry a byte offset") {
    auto bytes = file_bytes();
    bytes.resize(40);
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
      read_tokens(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
  }
}

TEST_CASE("write rejects ids that violate the vocab") {
  VocabConfig v = VocabConfig::defaults();
  Rng rng = make_rng(5);
  UtterancePair p = random_pair(v, rng, 5);
  p.semantic.tokens[0] = v.special_base() + VocabConfig::kNumSpecials + 3;
  CHECK_THROWS_AS(write_tokens(temp_file("reject.tok"), p, v), FormatError);
}

TEST_CASE("truncate_utterance keeps whole upsample blocks") {
  VocabConfig v = VocabConfig::defaults();
  Rng rng = make_rng(6);
  UtterancePair p = random_pair(v, rng, 40);
  UtterancePair cut = truncate_utterance(p, v, 17);
  CHECK(cut.semantic.length() == 15);
  CHECK(cut.acoustic.length() == 24);
  for (int i = 0; i < 15; ++i) CHECK(cut.semantic.tokens[static_cast<size_t>(i)] == p.semantic.tokens[static_cast<size_t>(i)]);
  UtterancePair same = truncate_utterance(p, v, 100);
  CHECK(same == p);
}
