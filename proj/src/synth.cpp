#include "lmvc/synth.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lmvc {

namespace {

// Upsample geometry from the frame-rate ratio (5 semantic -> 8 acoustic at
// the default 20ms/12.5ms rates).
struct BlockGeometry {
  int sem;  // semantic frames per block
  int ac;   // acoustic frames per block

  static BlockGeometry of(const VocabConfig& vocab) {
    const int s = vocab.semantic_frame_centi_ms();
    const int a = vocab.acoustic_frame_centi_ms();
    const int g = std::gcd(s, a);
    return BlockGeometry{a / g, s / g};
  }
  // semantic index read by acoustic slot j of a block
  int content_index(int j) const { return j * sem / ac; }
  // first acoustic slot of a block that reads semantic index i
  int first_slot(int i) const {
    for (int j = 0; j < ac; ++j)
      if (content_index(j) == i) return j;
    throw NumericError("upsample block has no slot for semantic index");
  }
};

}  // namespace

SyntheticSpeaker::SyntheticSpeaker(uint32_t speaker_id, uint64_t mapping_seed, double leak_prob,
                                   const VocabConfig& vocab, int content_vocab)
    : id_(speaker_id), leak_prob_(leak_prob), content_vocab_(content_vocab), vocab_(vocab) {
  if (leak_prob < 0.0 || leak_prob > 1.0) throw ConfigError("leak probability outside [0,1]");
  const BlockGeometry geo = BlockGeometry::of(vocab);
  if (content_vocab * geo.ac > vocab.acoustic_vocab)
    throw ConfigError("content alphabet times upsample factor exceeds the acoustic vocab");
  if (2 * content_vocab > vocab.semantic_vocab)
    throw ConfigError("semantic vocab too small for content alphabet plus tinted aliases");

  perm_.resize(static_cast<size_t>(vocab.acoustic_vocab));
  std::iota(perm_.begin(), perm_.end(), 0);
  Rng rng = make_rng(derive_seed(mapping_seed, 0x6c61796572ULL, speaker_id));
  for (size_t i = perm_.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<size_t> pick(0, i);
    std::swap(perm_[i], perm_[pick(rng)]);
  }
  perm_inv_.resize(perm_.size());
  for (size_t i = 0; i < perm_.size(); ++i) perm_inv_[static_cast<size_t>(perm_[i])] = static_cast<int>(i);

  // Tint offsets come from one shared keyed permutation of the content
  // alphabet, so distinct speakers always get distinct offsets.
  std::vector<int> offsets(static_cast<size_t>(content_vocab));
  std::iota(offsets.begin(), offsets.end(), 0);
  Rng trng = make_rng(derive_seed(mapping_seed, 0x74696e74ULL));
  for (size_t i = offsets.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<size_t> pick(0, i);
    std::swap(offsets[i], offsets[pick(trng)]);
  }
  tint_offset_ = offsets[speaker_id % static_cast<uint32_t>(content_vocab)];
}

int SyntheticSpeaker::encode_frame(int content, int phase) const {
  const BlockGeometry geo = BlockGeometry::of(vocab_);
  if (content < 0 || content >= content_vocab_) throw IndexError("content symbol out of range");
  if (phase < 0 || phase >= geo.ac) throw IndexError("sub-frame phase out of range");
  return perm_[static_cast<size_t>(content * geo.ac + phase)];
}

int SyntheticSpeaker::decode_frame(int token, int phase) const {
  if (token < 0 || token >= static_cast<int>(perm_inv_.size())) return kContentFailure;
  const BlockGeometry geo = BlockGeometry::of(vocab_);
  const int pair = perm_inv_[static_cast<size_t>(token)];
  if (pair >= content_vocab_ * geo.ac) return kContentFailure;
  if (pair % geo.ac != phase) return kContentFailure;
  return pair / geo.ac;
}

int SyntheticSpeaker::upper_layer_token(int layer, int layer0_token) const {
  if (layer < 1 || layer >= vocab_.num_layers) throw IndexError("upper layer index out of range");
  const uint64_t h = derive_seed(0x66696e65ULL, id_, static_cast<uint64_t>(layer),
                                 static_cast<uint64_t>(layer0_token));
  return static_cast<int>(h % static_cast<uint64_t>(vocab_.acoustic_vocab));
}

int SyntheticSpeaker::tint(int content) const {
  if (content < 0 || content >= content_vocab_) throw IndexError("content symbol out of range");
  return content_vocab_ + (content + tint_offset_) % content_vocab_;
}

void CorpusConfig::validate() const {
  if (num_speakers < 1 || utterances_per_speaker < 1) throw ConfigError("corpus counts must be >= 1");
  if (content_len_min < 1 || content_len_max < content_len_min)
    throw ConfigError("content length range is empty");
  if (content_vocab < 2) throw ConfigError("content alphabet too small");
  if (markov_order < 0) throw ConfigError("markov order must be >= 0");
  if (leak_prob < 0.0 || leak_prob > 1.0) throw ConfigError("leak probability outside [0,1]");
  vocab.validate();
  double states = 1.0;
  for (int i = 0; i < markov_order; ++i) states *= content_vocab;
  if (states > 1e6) throw ConfigError("markov state space too large");
}

ContentChain::ContentChain(int vocab, int order, uint64_t seed) : vocab_(vocab), order_(order) {
  size_t n_states = 1;
  for (int i = 0; i < order; ++i) n_states *= static_cast<size_t>(vocab);
  successors_.resize(n_states);
  cum_probs_.resize(n_states);
  // Order 0 degenerates to the uniform unigram chain.
  support_ = order == 0 ? vocab : std::min(vocab, 6);
  for (size_t s = 0; s < n_states; ++s) {
    Rng rng = make_rng(derive_seed(seed, 0x636861696eULL, static_cast<uint64_t>(s)));
    std::vector<int> cand(static_cast<size_t>(vocab));
    std::iota(cand.begin(), cand.end(), 0);
    for (int i = 0; i < support_; ++i) {
      std::uniform_int_distribution<size_t> pick(static_cast<size_t>(i), cand.size() - 1);
      std::swap(cand[static_cast<size_t>(i)], cand[pick(rng)]);
    }
    cand.resize(static_cast<size_t>(support_));
    successors_[s] = cand;
    // Zipf-like weights keep rows peaked; uniform when order == 0.
    std::vector<double> w(static_cast<size_t>(support_));
    double total = 0.0;
    for (int i = 0; i < support_; ++i) {
      w[static_cast<size_t>(i)] = order == 0 ? 1.0 : 1.0 / (1.0 + i);
      total += w[static_cast<size_t>(i)];
    }
    double acc = 0.0;
    cum_probs_[s].resize(static_cast<size_t>(support_));
    for (int i = 0; i < support_; ++i) {
      acc += w[static_cast<size_t>(i)] / total;
      cum_probs_[s][static_cast<size_t>(i)] = acc;
    }
    cum_probs_[s].back() = 1.0;
  }
}

size_t ContentChain::state_index(const std::vector<int>& recent) const {
  size_t idx = 0;
  for (int v : recent) idx = idx * static_cast<size_t>(vocab_) + static_cast<size_t>(v);
  return idx;
}

std::vector<int> ContentChain::generate(int length, Rng& rng) const {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(length));
  std::vector<int> recent(static_cast<size_t>(order_), 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < length; ++i) {
    const auto& cum = cum_probs_[state_index(recent)];
    const auto& succ = successors_[state_index(recent)];
    const double r = unit(rng);
    size_t j = 0;
    while (j + 1 < cum.size() && r > cum[j]) ++j;
    const int sym = succ[j];
    out.push_back(sym);
    if (order_ > 0) {
      recent.erase(recent.begin());
      recent.push_back(sym);
    }
  }
  return out;
}

std::vector<int> gen_content(const CorpusConfig& cfg, Rng& rng) {
  cfg.validate();
  ContentChain chain(cfg.content_vocab, cfg.markov_order, cfg.seed);
  std::uniform_int_distribution<int> len(cfg.content_len_min, cfg.content_len_max);
  return chain.generate(len(rng), rng);
}

AcousticGrid oracle_acoustic(const SyntheticSpeaker& speaker, const std::vector<int>& content,
                             const VocabConfig& vocab) {
  const BlockGeometry geo = BlockGeometry::of(vocab);
  const int t_sem = static_cast<int>(content.size());
  const int t_ac = vocab.expected_acoustic_len(t_sem);
  AcousticGrid grid;
  grid.rows.assign(static_cast<size_t>(vocab.num_layers), std::vector<int>(static_cast<size_t>(t_ac), 0));
  for (int t = 0; t < t_ac; ++t) {
    const int phase = t % geo.ac;
    const int sem = geo.sem * (t / geo.ac) + geo.content_index(phase);
    if (sem >= t_sem) throw NumericError("upsample overran the semantic sequence");
    const int tok0 = speaker.encode_frame(content[static_cast<size_t>(sem)], phase);
    grid.rows[0][static_cast<size_t>(t)] = tok0;
    for (int l = 1; l < vocab.num_layers; ++l)
      grid.rows[static_cast<size_t>(l)][static_cast<size_t>(t)] = speaker.upper_layer_token(l, tok0);
  }
  return grid;
}

UtterancePair gen_utterance(const SyntheticSpeaker& speaker, const std::vector<int>& content,
                            const VocabConfig& vocab, Rng& rng) {
  UtterancePair pair;
  pair.speaker_id = speaker.id();
  pair.semantic.tokens.reserve(content.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c : content) {
    const bool tinted = unit(rng) < speaker.leak_prob();
    pair.semantic.tokens.push_back(tinted ? speaker.tint(c) : c);
  }
  pair.acoustic = oracle_acoustic(speaker, content, vocab);
  return pair;
}

std::vector<int> oracle_decode_content(const AcousticGrid& grid, const SyntheticSpeaker& speaker,
                                       const VocabConfig& vocab) {
  const BlockGeometry geo = BlockGeometry::of(vocab);
  const int t_ac = grid.length();
  // inverse of expected_acoustic_len, rounding to the nearest semantic count
  const int t_sem = static_cast<int>((2LL * t_ac * geo.sem + geo.ac) / (2LL * geo.ac));
  std::vector<int> content(static_cast<size_t>(t_sem), kContentFailure);
  if (grid.num_layers() == 0) return content;
  const auto& layer0 = grid.layer(0);
  for (int i = 0; i < t_sem; ++i) {
    const int slot = geo.ac * (i / geo.sem) + geo.first_slot(i % geo.sem);
    if (slot >= t_ac) continue;
    content[static_cast<size_t>(i)] =
        speaker.decode_frame(layer0[static_cast<size_t>(slot)], slot % geo.ac);
  }
  return content;
}

std::vector<SyntheticSpeaker> corpus_speakers(const CorpusConfig& cfg) {
  std::vector<SyntheticSpeaker> speakers;
  speakers.reserve(static_cast<size_t>(cfg.num_speakers));
  for (int s = 0; s < cfg.num_speakers; ++s)
    speakers.emplace_back(static_cast<uint32_t>(s), cfg.seed, cfg.leak_prob, cfg.vocab,
                          cfg.content_vocab);
  // Distinctness is part of the generator contract.
  for (size_t a = 0; a < speakers.size(); ++a) {
    for (size_t b = a + 1; b < speakers.size(); ++b) {
      if (speakers[a].layer0_permutation() == speakers[b].layer0_permutation())
        throw NumericError("two speakers share a layer-0 mapping");
      if (speakers[a].tint_offset() == speakers[b].tint_offset())
        throw NumericError("two speakers share a tint offset");
    }
  }
  return speakers;
}

namespace {

std::string utt_filename(int speaker, int index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "utt_s%02d_i%04d.tok", speaker, index);
  return buf;
}

std::string split_for_index(int index) {
  switch (index % 10) {
    case 8: return "valid";
    case 9: return "test";
    default: return "train";
  }
}

nlohmann::json corpus_config_json(const CorpusConfig& cfg) {
  return nlohmann::json{{"num_speakers", cfg.num_speakers},
                        {"utterances_per_speaker", cfg.utterances_per_speaker},
                        {"content_len_min", cfg.content_len_min},
                        {"content_len_max", cfg.content_len_max},
                        {"content_vocab", cfg.content_vocab},
                        {"markov_order", cfg.markov_order},
                        {"leak_prob", cfg.leak_prob},
                        {"seed", cfg.seed},
                        {"vocab",
                         {{"semantic_vocab", cfg.vocab.semantic_vocab},
                          {"acoustic_vocab", cfg.vocab.acoustic_vocab},
                          {"num_layers", cfg.vocab.num_layers},
                          {"semantic_frame_ms", cfg.vocab.semantic_frame_ms},
                          {"acoustic_frame_ms", cfg.vocab.acoustic_frame_ms}}}};
}

CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig cfg;
  cfg.num_speakers = j.at("num_speakers").get<int>();
  cfg.utterances_per_speaker = j.at("utterances_per_speaker").get<int>();
  cfg.content_len_min = j.at("content_len_min").get<int>();
  cfg.content_len_max = j.at("content_len_max").get<int>();
  cfg.content_vocab = j.at("content_vocab").get<int>();
  cfg.markov_order = j.at("markov_order").get<int>();
  cfg.leak_prob = j.at("leak_prob").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  const auto& v = j.at("vocab");
  cfg.vocab.semantic_vocab = v.at("semantic_vocab").get<int>();
  cfg.vocab.acoustic_vocab = v.at("acoustic_vocab").get<int>();
  cfg.vocab.num_layers = v.at("num_layers").get<int>();
  cfg.vocab.semantic_frame_ms = v.at("semantic_frame_ms").get<double>();
  cfg.vocab.acoustic_frame_ms = v.at("acoustic_frame_ms").get<double>();
  return cfg;
}

}  // namespace

Corpus gen_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto speakers = corpus_speakers(cfg);
  const ContentChain chain(cfg.content_vocab, cfg.markov_order, cfg.seed);

  Corpus corpus;
  corpus.config = cfg;
  corpus.root = out_dir;

  std::set<std::pair<std::string, std::vector<int>>> seen;  // (split, content) disjointness
  std::set<std::vector<int>> contents;
  for (int s = 0; s < cfg.num_speakers; ++s) {
    for (int i = 0; i < cfg.utterances_per_speaker; ++i) {
      Rng rng = make_rng(derive_seed(cfg.seed, 0x757474ULL, static_cast<uint64_t>(s),
                                     static_cast<uint64_t>(i)));
      std::uniform_int_distribution<int> len(cfg.content_len_min, cfg.content_len_max);
      const std::vector<int> content = chain.generate(len(rng), rng);
      const std::string split = split_for_index(i);
      if (contents.contains(content) && !seen.contains({split, content}))
        throw NumericError("content sequence crosses splits; change the corpus seed");
      contents.insert(content);
      seen.insert({split, content});

      UtterancePair pair = gen_utterance(speakers[static_cast<size_t>(s)], content, cfg.vocab, rng);
      const std::string name = utt_filename(s, i);
      write_tokens(out_dir / name, pair, cfg.vocab);
      corpus.entries.push_back(ManifestEntry{name, pair.speaker_id, split, pair.semantic.length(),
                                             pair.acoustic.length()});
    }
  }

  std::ofstream manifest(out_dir / "manifest.tsv");
  if (!manifest) throw IoError("cannot write manifest in " + out_dir.string());
  for (const auto& e : corpus.entries)
    manifest << e.relpath << '\t' << e.speaker_id << '\t' << e.split << '\t' << e.t_sem << '\t'
             << e.t_ac << '\n';
  manifest.close();

  std::ofstream cfg_out(out_dir / "corpus_config.json");
  cfg_out << corpus_config_json(cfg).dump(2) << '\n';
  if (!cfg_out) throw IoError("cannot write corpus config in " + out_dir.string());
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream cfg_in(dir / "corpus_config.json");
  if (!cfg_in) throw IoError("missing corpus_config.json in " + dir.string());
  nlohmann::json j;
  cfg_in >> j;
  Corpus corpus;
  corpus.config = corpus_config_from_json(j);
  corpus.root = dir;

  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw IoError("missing manifest.tsv in " + dir.string());
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.relpath >> e.speaker_id >> e.split >> e.t_sem >> e.t_ac))
      throw FormatError("manifest.tsv line " + std::to_string(lineno) + " is malformed");
    corpus.entries.push_back(std::move(e));
  }
  return corpus;
}

std::vector<UtterancePair> load_split(const Corpus& corpus, const std::string& split) {
  std::vector<UtterancePair> out;
  for (const auto& e : corpus.entries) {
    if (e.split != split) continue;
    TokenFile tf = read_tokens(corpus.root / e.relpath);
    if (!(tf.vocab == corpus.config.vocab))
      throw FormatError(e.relpath + ": vocab header disagrees with the corpus config");
    out.push_back(std::move(tf.pair));
  }
  return out;
}

}  // namespace lmvc
