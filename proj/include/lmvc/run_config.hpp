#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmvc/decode.hpp"
#include "lmvc/eval.hpp"
#include "lmvc/model.hpp"
#include "lmvc/synth.hpp"
#include "lmvc/train.hpp"

namespace lmvc {

// Declarative run configuration: one JSON document covering corpus, models,
// schedules, sampling and evaluation. Key names in the JSON match the field
// names here; the echoed config carries a paper/toy provenance flag for every
// defaulted value.
struct RunConfig {
  uint64_t seed = 1;
  std::string run_root = "runs";
  CorpusConfig corpus;
  std::map<std::string, ModelConfig> model;    // keys mplm / elm / plm
  std::map<std::string, TrainSchedule> train;  // keys mplm / elm / plm
  SamplingConfig sampling;
  EvalProtocol eval;

  static RunConfig defaults();
  void validate() const;

  const ModelConfig& model_for(ModelKind kind) const;
  const TrainSchedule& train_for(ModelKind kind) const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Flat dotted-path map marking each default paper or toy.
const std::map<std::string, std::string>& defaults_provenance();

// Load (optional) file, overlay defaults, apply dotted key=value overrides.
RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides);
RunConfig load_run_config_default(const std::vector<std::string>& overrides);

// Resolved config + provenance, written verbatim into every run directory.
void write_config_echo(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace lmvc
