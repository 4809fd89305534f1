#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lmvc/vocab.hpp"

namespace lmvc {

// 1-D semantic token stream.
struct SemanticSeq {
  std::vector<int> tokens;

  int length() const { return static_cast<int>(tokens.size()); }
  bool operator==(const SemanticSeq&) const = default;
};

// L x T grid of acoustic tokens; row 0 is the coarse (first-quantizer) stream.
struct AcousticGrid {
  std::vector<std::vector<int>> rows;

  int num_layers() const { return static_cast<int>(rows.size()); }
  int length() const { return rows.empty() ? 0 : static_cast<int>(rows[0].size()); }
  const std::vector<int>& layer(int l) const { return rows.at(static_cast<size_t>(l)); }
  std::vector<int>& layer(int l) { return rows.at(static_cast<size_t>(l)); }
  void validate_rectangular() const;
  bool operator==(const AcousticGrid&) const = default;
};

// Aligned (semantic, acoustic) streams for one utterance.
struct UtterancePair {
  uint32_t speaker_id = 0;
  SemanticSeq semantic;
  AcousticGrid acoustic;

  bool operator==(const UtterancePair&) const = default;
};

// Inference prompt for coarse generation: the concatenated semantic segment
// [target || source] plus the target's layer-0 acoustic prefix. Segment
// boundaries ride along out of band; positions run contiguously over the
// concatenation.
struct CoarsePrompt {
  std::vector<int> semantic;        // s_tilde followed by s
  std::vector<int> acoustic_prefix; // a_tilde, layer 0
  std::array<int, 3> offsets{0, 0, 0};  // [0, len(s_tilde), len(s_tilde)+len(s)]

  int target_semantic_len() const { return offsets[1] - offsets[0]; }
  int source_semantic_len() const { return offsets[2] - offsets[1]; }
};

CoarsePrompt build_coarse_prompt(const UtterancePair& target, const SemanticSeq& source_semantic);

// Keeps the leading whole 5-semantic-frame blocks so the acoustic prefix cuts
// on an exact upsample boundary; used to budget the speaker prompt.
UtterancePair truncate_utterance(const UtterancePair& utt, const VocabConfig& vocab,
                                 int max_semantic_len);

// ---- token-file format ---------------------------------------------------
// Little-endian binary, magic "LMVCTOKS", u16 version=1, then the header
// (u32 V_s, u32 V_a, u16 L, u16 semantic centi-ms, u16 acoustic centi-ms,
// u32 speaker, u32 T_s, u32 T_a), then T_s u16 semantic ids, then L*T_a u16
// acoustic ids row-major. This is the sole ingestion path for externally
// extracted codec tokens.

void write_tokens(const std::filesystem::path& path, const UtterancePair& pair,
                  const VocabConfig& vocab);

struct TokenFile {
  VocabConfig vocab;
  UtterancePair pair;
};

TokenFile read_tokens(const std::filesystem::path& path);

}  // namespace lmvc
