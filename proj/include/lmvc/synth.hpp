#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lmvc/common.hpp"
#include "lmvc/tokens.hpp"
#include "lmvc/vocab.hpp"

namespace lmvc {

// Content sequences use the failure symbol below when the inverse oracle
// cannot resolve a token (wrong speaker, PAD frames, corrupted grids).
constexpr int kContentFailure = -1;

// Deterministic speaker-conditioned token process standing in for the real
// semantic/codec extractors. Layer 0 applies a speaker-keyed permutation to
// (content, sub-frame phase) pairs; upper layers are keyed hashes of the
// layer-0 token. Both directions are exact, which is what makes conversions
// objectively scoreable.
class SyntheticSpeaker {
 public:
  SyntheticSpeaker(uint32_t speaker_id, uint64_t mapping_seed, double leak_prob,
                   const VocabConfig& vocab, int content_vocab);

  uint32_t id() const { return id_; }
  double leak_prob() const { return leak_prob_; }
  int content_vocab() const { return content_vocab_; }

  // layer-0 token for (content, phase in [0, upsample_den))
  int encode_frame(int content, int phase) const;
  // inverse; kContentFailure when the token is not in this speaker's image
  // or its phase does not match.
  int decode_frame(int token, int phase) const;
  int upper_layer_token(int layer, int layer0_token) const;

  // speaker-specific alias id for a content symbol (the "tint"); decoding an
  // alias needs the speaker's offset, which is the leak channel.
  int tint(int content) const;
  int tint_offset() const { return tint_offset_; }

  const std::vector<int>& layer0_permutation() const { return perm_; }

 private:
  uint32_t id_;
  double leak_prob_;
  int content_vocab_;
  VocabConfig vocab_;
  int tint_offset_;
  std::vector<int> perm_;      // keyed permutation over [0, V_a)
  std::vector<int> perm_inv_;  // inverse
};

struct CorpusConfig {
  int num_speakers = 4;
  int utterances_per_speaker = 250;
  int content_len_min = 25;  // semantic frames
  int content_len_max = 60;
  int content_vocab = 64;     // base alphabet; tinted aliases double it
  int markov_order = 2;
  double leak_prob = 0.3;
  uint64_t seed = 1;
  VocabConfig vocab = [] {
    VocabConfig v;
    v.num_layers = 4;  // desk-scale default; 6 matches the codec paper setup
    return v;
  }();

  void validate() const;
};

// Order-k Markov chain over the content alphabet with sparse, peaked
// transition rows so masked recovery has context to exploit.
class ContentChain {
 public:
  ContentChain(int vocab, int order, uint64_t seed);
  std::vector<int> generate(int length, Rng& rng) const;
  // Per-symbol cross entropy (nats) of the chain's stationary unigram
  // distribution, estimated from sampled sequences.
  int vocab() const { return vocab_; }

 private:
  int vocab_;
  int order_;
  int support_;
  std::vector<std::vector<int>> successors_;   // per state, candidate symbols
  std::vector<std::vector<double>> cum_probs_; // per state, cumulative weights
  size_t state_index(const std::vector<int>& recent) const;
};

std::vector<int> gen_content(const CorpusConfig& cfg, Rng& rng);

AcousticGrid oracle_acoustic(const SyntheticSpeaker& speaker, const std::vector<int>& content,
                             const VocabConfig& vocab);

UtterancePair gen_utterance(const SyntheticSpeaker& speaker, const std::vector<int>& content,
                            const VocabConfig& vocab, Rng& rng);

// Inverts layer 0 and downsamples back to content; failures are in-band
// kContentFailure symbols, never exceptions.
std::vector<int> oracle_decode_content(const AcousticGrid& grid, const SyntheticSpeaker& speaker,
                                       const VocabConfig& vocab);

// ---- corpus on disk --------------------------------------------------------

struct ManifestEntry {
  std::string relpath;
  uint32_t speaker_id = 0;
  std::string split;  // train / valid / test
  int t_sem = 0;
  int t_ac = 0;
};

struct Corpus {
  CorpusConfig config;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;
};

// Writes one token file per utterance plus manifest.tsv; splits are disjoint
// by content sequence. Fully determined by the config.
Corpus gen_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

Corpus load_corpus(const std::filesystem::path& dir);

std::vector<SyntheticSpeaker> corpus_speakers(const CorpusConfig& cfg);

// In-memory utterances of one split, in manifest order.
std::vector<UtterancePair> load_split(const Corpus& corpus, const std::string& split);

}  // namespace lmvc
