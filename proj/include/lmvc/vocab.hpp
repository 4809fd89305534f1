#pragma once

#include <cstdint>

namespace lmvc {

// Vocabulary sizes and codec geometry shared by the corpus, the models and
// the token-file format. Special ids live above both vocab ranges in the
// order MASK, EOS, PAD, BOS.
struct VocabConfig {
  int semantic_vocab = 128;   // includes the tinted alias half
  int acoustic_vocab = 1024;
  int num_layers = 6;
  double semantic_frame_ms = 20.0;
  double acoustic_frame_ms = 12.5;

  static constexpr int kNumSpecials = 4;

  int special_base() const { return semantic_vocab > acoustic_vocab ? semantic_vocab : acoustic_vocab; }
  int mask_id() const { return special_base() + 0; }
  int eos_id() const { return special_base() + 1; }
  int pad_id() const { return special_base() + 2; }
  int bos_id() const { return special_base() + 3; }

  bool is_special(int id) const { return id >= special_base() && id < special_base() + kNumSpecials; }
  bool valid_semantic_id(int id) const { return (id >= 0 && id < semantic_vocab) || is_special(id); }
  bool valid_acoustic_id(int id) const { return (id >= 0 && id < acoustic_vocab) || is_special(id); }

  // Embedding-table heights (per-stream compact layout: vocab then specials).
  int semantic_rows() const { return semantic_vocab + kNumSpecials; }
  int acoustic_rows() const { return acoustic_vocab + kNumSpecials; }
  int semantic_row(int id) const;  // token id -> table row, validating
  int acoustic_row(int id) const;

  // Frame-rate arithmetic in integer centi-ms so the rounding is exact.
  int semantic_frame_centi_ms() const;
  int acoustic_frame_centi_ms() const;
  int expected_acoustic_len(int t_sem) const;

  void validate() const;

  static VocabConfig defaults();  // V_a=1024, L=6, 20ms/12.5ms frames

  bool operator==(const VocabConfig&) const = default;
};

}  // namespace lmvc
