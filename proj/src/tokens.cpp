#include "lmvc/tokens.hpp"

#include <cstring>
#include <fstream>

#include "lmvc/common.hpp"

namespace lmvc {

namespace {

constexpr char kMagic[8] = {'L', 'M', 'V', 'C', 'T', 'O', 'K', 'S'};
constexpr uint16_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::filesystem::path& p) : out(p, std::ios::binary) {
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
  }
  void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u16(uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    bytes(b, 4);
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  size_t offset = 0;
  Reader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p.string()) {
    if (!in) throw IoError("cannot open " + path + " for reading");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path + ": " + what + " at byte offset " + std::to_string(offset));
  }
  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) fail("truncated payload");
    offset += n;
  }
  uint16_t u16() {
    unsigned char b[2];
    bytes(b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
};

void validate_pair(const UtterancePair& pair, const VocabConfig& vocab) {
  for (int id : pair.semantic.tokens)
    if (!vocab.valid_semantic_id(id))
      throw FormatError("semantic id " + std::to_string(id) + " invalid for vocab");
  pair.acoustic.validate_rectangular();
  if (pair.acoustic.num_layers() != vocab.num_layers)
    throw FormatError("acoustic grid has " + std::to_string(pair.acoustic.num_layers()) +
                      " layers, vocab declares " + std::to_string(vocab.num_layers));
  for (const auto& row : pair.acoustic.rows)
    for (int id : row)
      if (!vocab.valid_acoustic_id(id))
        throw FormatError("acoustic id " + std::to_string(id) + " invalid for vocab");
}

}  // namespace

void AcousticGrid::validate_rectangular() const {
  for (const auto& row : rows)
    if (row.size() != rows[0].size()) throw ShapeError("acoustic grid rows differ in length");
}

CoarsePrompt build_coarse_prompt(const UtterancePair& target, const SemanticSeq& source_semantic) {
  if (target.semantic.length() == 0 || target.acoustic.length() == 0)
    throw ConfigError("build_coarse_prompt: target utterance is empty");
  if (source_semantic.length() == 0)
    throw ConfigError("build_coarse_prompt: source semantic sequence is empty");
  CoarsePrompt p;
  p.semantic = target.semantic.tokens;
  p.semantic.insert(p.semantic.end(), source_semantic.tokens.begin(),
                    source_semantic.tokens.end());
  p.acoustic_prefix = target.acoustic.layer(0);
  p.offsets = {0, target.semantic.length(), target.semantic.length() + source_semantic.length()};
  return p;
}

UtterancePair truncate_utterance(const UtterancePair& utt, const VocabConfig& vocab,
                                 int max_semantic_len) {
  if (max_semantic_len < 1) throw ConfigError("truncate_utterance: budget must be >= 1");
  int t_sem = std::min(utt.semantic.length(), max_semantic_len);
  t_sem -= t_sem % 5;  // whole upsample blocks only
  if (t_sem == 0) t_sem = std::min(utt.semantic.length(), max_semantic_len);
  int t_ac = std::min(utt.acoustic.length(), vocab.expected_acoustic_len(t_sem));
  UtterancePair out;
  out.speaker_id = utt.speaker_id;
  out.semantic.tokens.assign(utt.semantic.tokens.begin(), utt.semantic.tokens.begin() + t_sem);
  out.acoustic.rows.reserve(static_cast<size_t>(utt.acoustic.num_layers()));
  for (const auto& row : utt.acoustic.rows)
    out.acoustic.rows.emplace_back(row.begin(), row.begin() + t_ac);
  return out;
}

void write_tokens(const std::filesystem::path& path, const UtterancePair& pair,
                  const VocabConfig& vocab) {
  vocab.validate();
  validate_pair(pair, vocab);

  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.u16(kVersion);
  w.u32(static_cast<uint32_t>(vocab.semantic_vocab));
  w.u32(static_cast<uint32_t>(vocab.acoustic_vocab));
  w.u16(static_cast<uint16_t>(vocab.num_layers));
  w.u16(static_cast<uint16_t>(vocab.semantic_frame_centi_ms()));
  w.u16(static_cast<uint16_t>(vocab.acoustic_frame_centi_ms()));
  w.u32(pair.speaker_id);
  w.u32(static_cast<uint32_t>(pair.semantic.length()));
  w.u32(static_cast<uint32_t>(pair.acoustic.length()));
  for (int id : pair.semantic.tokens) w.u16(static_cast<uint16_t>(id));
  for (const auto& row : pair.acoustic.rows)
    for (int id : row) w.u16(static_cast<uint16_t>(id));
  w.out.flush();
  if (!w.out) throw IoError("failed writing " + path.string());
}

TokenFile read_tokens(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    r.offset = 0;
    r.fail("bad magic (not a LMVCTOKS file)");
  }
  const uint16_t version = r.u16();
  if (version != kVersion) {
    r.offset -= 2;
    r.fail("unsupported version " + std::to_string(version));
  }

  TokenFile tf;
  tf.vocab.semantic_vocab = static_cast<int>(r.u32());
  tf.vocab.acoustic_vocab = static_cast<int>(r.u32());
  tf.vocab.num_layers = static_cast<int>(r.u16());
  tf.vocab.semantic_frame_ms = r.u16() / 100.0;
  tf.vocab.acoustic_frame_ms = r.u16() / 100.0;
  try {
    tf.vocab.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid header: ") + e.what());
  }
  tf.pair.speaker_id = r.u32();
  const uint32_t t_sem = r.u32();
  const uint32_t t_ac = r.u32();

  tf.pair.semantic.tokens.resize(t_sem);
  for (uint32_t i = 0; i < t_sem; ++i) {
    const int id = r.u16();
    if (!tf.vocab.valid_semantic_id(id)) {
      r.offset -= 2;
      r.fail("semantic id " + std::to_string(id) + " out of range");
    }
    tf.pair.semantic.tokens[i] = id;
  }
  tf.pair.acoustic.rows.assign(static_cast<size_t>(tf.vocab.num_layers),
                               std::vector<int>(t_ac, 0));
  for (int l = 0; l < tf.vocab.num_layers; ++l) {
    for (uint32_t i = 0; i < t_ac; ++i) {
      const int id = r.u16();
      if (!tf.vocab.valid_acoustic_id(id)) {
        r.offset -= 2;
        r.fail("acoustic id " + std::to_string(id) + " out of range (layer " + std::to_string(l) +
               ")");
      }
      tf.pair.acoustic.rows[static_cast<size_t>(l)][i] = id;
    }
  }
  // Trailing garbage is a malformed file too.
  char extra;
  r.in.read(&extra, 1);
  if (r.in.gcount() == 1) r.fail("unexpected trailing bytes");
  return tf;
}

}  // namespace lmvc
