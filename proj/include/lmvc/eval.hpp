#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmvc/decode.hpp"
#include "lmvc/synth.hpp"

namespace lmvc {

// Normalized Levenshtein distance between two symbol sequences.
double edit_distance_rate(const std::vector<int>& a, const std::vector<int>& b);

// Oracle stand-in for the paper's WER: edit distance between the content
// decoded from the converted grid (under the claimed speaker's inverse map)
// and the source's underlying content.
double content_error_rate(const AcousticGrid& converted, const std::vector<int>& source_content,
                          const SyntheticSpeaker& claimed_speaker, const VocabConfig& vocab);

// Nearest-centroid classifier over layer-0 token histograms; exact on
// oracle-generated grids because the layer-0 mapping is speaker-keyed.
class SpeakerClassifier {
 public:
  SpeakerClassifier(const std::vector<SyntheticSpeaker>& speakers,
                    const std::vector<UtterancePair>& reference);

  uint32_t classify(const AcousticGrid& grid) const;
  double accuracy(const std::vector<const AcousticGrid*>& grids,
                  const std::vector<uint32_t>& target_speakers) const;

 private:
  int vocab_size_;
  std::vector<uint32_t> labels_;
  std::vector<std::vector<double>> centroids_;
};

// Half-width of the normal-approximation 95% confidence interval for a
// binomial proportion.
double binomial_ci_halfwidth(double p_hat, int n);

struct PairResult {
  std::string source;
  std::string target;
  uint32_t source_speaker = 0;
  uint32_t target_speaker = 0;
  double cer = 0.0;
  uint32_t classified_as = 0;
  bool truncated = false;
};

struct EvalReport {
  double content_error_rate = 0.0;  // mean over pairs
  double speaker_accuracy = 0.0;
  double speaker_accuracy_ci = 0.0;
  double truncation_rate = 0.0;
  std::vector<PairResult> pairs;
  std::string config_echo;

  std::string table() const;  // delimited text, one row per pair
};

struct EvalProtocol {
  int max_pairs = 24;
  int prompt_semantic_len = 15;   // target prompt budget, whole blocks
  int max_source_semantic_len = 60;
  std::string split = "test";
  bool cross_speaker_only = true;
};

// Runs conversions over split pairs (source utterance, target-speaker prompt)
// and scores them against the synthetic oracles.
EvalReport evaluate_conversions(const Corpus& corpus, const LmModel& mplm, const LmModel* elm,
                                const LmModel& plm, const SamplingConfig& sampling,
                                const EvalProtocol& protocol);

// ---- ablation over (w, lambda) ----------------------------------------------

struct AblationCell {
  int window = 0;
  double lambda = 0.0;
  uint64_t sampling_seed = 0;
  EvalReport report;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::string table() const;      // w, lambda, seed, cer, acc, trunc
  std::string plot_data() const;  // x=w, y=cer, series=lambda
};

// Callback supplies a trained ELM per window length (reuse when w matches).
using ElmProvider = std::function<const LmModel*(int window)>;

AblationTable ablate_fusion(const Corpus& corpus, const LmModel& mplm, const LmModel& plm,
                            const ElmProvider& elm_for_window, const std::vector<int>& windows,
                            const std::vector<double>& lambdas,
                            const std::vector<uint64_t>& sampling_seeds,
                            const SamplingConfig& base_sampling, const EvalProtocol& protocol);

// ---- disentanglement probe ---------------------------------------------------

struct ProbeRow {
  bool masked_training = false;
  uint64_t seed = 0;
  double source_leakage = 0.0;  // fraction of conversions classified as source
};

struct ProbeReport {
  std::vector<ProbeRow> rows;
  // majority verdict: masked leakage <= unmasked leakage per seed
  int seeds_where_masked_leaks_no_more = 0;
  int total_seeds = 0;
  std::string table() const;
};

// Scores coarse conversions from paired (masked, unmasked) MPLMs, reporting
// how often the source speaker shows through.
ProbeReport disentanglement_probe(
    const Corpus& corpus,
    const std::vector<std::pair<const LmModel*, const LmModel*>>& masked_unmasked_by_seed,
    const std::vector<uint64_t>& seeds, const EvalProtocol& protocol);

}  // namespace lmvc
