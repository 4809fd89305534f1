#include "lmvc/vocab.hpp"

#include <cmath>
#include <string>

#include "lmvc/common.hpp"

namespace lmvc {

int VocabConfig::semantic_row(int id) const {
  if (id >= 0 && id < semantic_vocab) return id;
  if (is_special(id)) return semantic_vocab + (id - special_base());
  throw IndexError("semantic token id " + std::to_string(id) + " out of range");
}

int VocabConfig::acoustic_row(int id) const {
  if (id >= 0 && id < acoustic_vocab) return id;
  if (is_special(id)) return acoustic_vocab + (id - special_base());
  throw IndexError("acoustic token id " + std::to_string(id) + " out of range");
}

int VocabConfig::semantic_frame_centi_ms() const {
  return static_cast<int>(std::llround(semantic_frame_ms * 100.0));
}

int VocabConfig::acoustic_frame_centi_ms() const {
  return static_cast<int>(std::llround(acoustic_frame_ms * 100.0));
}

int VocabConfig::expected_acoustic_len(int t_sem) const {
  if (t_sem < 0) throw ConfigError("semantic length must be non-negative");
  // round(t_sem * sem_ms / ac_ms) in exact integer arithmetic.
  const long long sem = semantic_frame_centi_ms();
  const long long ac = acoustic_frame_centi_ms();
  return static_cast<int>((2LL * t_sem * sem + ac) / (2LL * ac));
}

void VocabConfig::validate() const {
  if (semantic_vocab < 1 || acoustic_vocab < 1) throw ConfigError("vocab sizes must be >= 1");
  if (num_layers < 1) throw ConfigError("codec layer count must be >= 1");
  if (semantic_frame_ms <= 0.0 || acoustic_frame_ms <= 0.0)
    throw ConfigError("frame durations must be positive");
  if (semantic_frame_centi_ms() < 1 || semantic_frame_centi_ms() > 65535 ||
      acoustic_frame_centi_ms() < 1 || acoustic_frame_centi_ms() > 65535)
    throw ConfigError("frame durations out of representable range");
}

VocabConfig VocabConfig::defaults() { return VocabConfig{}; }

}  // namespace lmvc
