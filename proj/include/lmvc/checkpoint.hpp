#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "lmvc/model.hpp"
#include "lmvc/optim.hpp"

namespace lmvc {

// Self-describing binary checkpoint: magic "LMVCCKPT", version, model kind,
// ModelConfig, VocabConfig, a name-indexed parameter table and a flat fp64
// payload; optionally the optimizer moments plus the training step so a run
// can resume bit-exactly.
struct TrainerState {
  int64_t train_step = 0;
  AdamW::State optim;
};

void save_checkpoint(const std::filesystem::path& path, LmModel& model,
                     const TrainerState* trainer = nullptr);

struct LoadedCheckpoint {
  std::unique_ptr<LmModel> model;
  std::optional<TrainerState> trainer;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a of the file bytes, reported in conversion provenance records.
uint64_t checkpoint_fingerprint(const std::filesystem::path& path);

}  // namespace lmvc
