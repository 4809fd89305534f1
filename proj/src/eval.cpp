#include "lmvc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lmvc {

double edit_distance_rate(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  if (n == 0 && m == 0) return 0.0;
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

double content_error_rate(const AcousticGrid& converted, const std::vector<int>& source_content,
                          const SyntheticSpeaker& claimed_speaker, const VocabConfig& vocab) {
  const auto decoded = oracle_decode_content(converted, claimed_speaker, vocab);
  return edit_distance_rate(decoded, source_content);
}

SpeakerClassifier::SpeakerClassifier(const std::vector<SyntheticSpeaker>& speakers,
                                     const std::vector<UtterancePair>& reference) {
  if (speakers.empty()) throw ConfigError("classifier needs at least one speaker");
  vocab_size_ = static_cast<int>(speakers[0].layer0_permutation().size());
  for (const auto& sp : speakers) labels_.push_back(sp.id());
  centroids_.assign(labels_.size(), std::vector<double>(static_cast<size_t>(vocab_size_), 0.0));
  std::vector<int> counts(labels_.size(), 0);
  for (const auto& pair : reference) {
    auto it = std::find(labels_.begin(), labels_.end(), pair.speaker_id);
    if (it == labels_.end())
      throw IndexError("reference utterance from unknown speaker " +
                       std::to_string(pair.speaker_id));
    const size_t si = static_cast<size_t>(it - labels_.begin());
    if (pair.acoustic.num_layers() == 0 || pair.acoustic.length() == 0) continue;
    std::vector<double> hist(static_cast<size_t>(vocab_size_), 0.0);
    for (int tok : pair.acoustic.layer(0))
      if (tok >= 0 && tok < vocab_size_) hist[static_cast<size_t>(tok)] += 1.0;
    const double inv = 1.0 / pair.acoustic.length();
    for (size_t i = 0; i < hist.size(); ++i) centroids_[si][i] += hist[i] * inv;
    ++counts[si];
  }
  for (size_t s = 0; s < centroids_.size(); ++s) {
    if (counts[s] == 0) throw ConfigError("no reference utterances for speaker " +
                                          std::to_string(labels_[s]));
    for (double& v : centroids_[s]) v /= counts[s];
  }
}

uint32_t SpeakerClassifier::classify(const AcousticGrid& grid) const {
  if (grid.num_layers() == 0 || grid.length() == 0)
    throw ConfigError("cannot classify an empty grid");
  std::vector<double> hist(static_cast<size_t>(vocab_size_), 0.0);
  for (int tok : grid.layer(0))
    if (tok >= 0 && tok < vocab_size_) hist[static_cast<size_t>(tok)] += 1.0;
  const double inv = 1.0 / grid.length();
  for (double& v : hist) v *= inv;

  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t s = 0; s < centroids_.size(); ++s) {
    double d = 0.0;
    for (size_t i = 0; i < hist.size(); ++i) {
      const double diff = hist[i] - centroids_[s][i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = s;
    }
  }
  return labels_[best];
}

double SpeakerClassifier::accuracy(const std::vector<const AcousticGrid*>& grids,
                                   const std::vector<uint32_t>& target_speakers) const {
  if (grids.size() != target_speakers.size() || grids.empty())
    throw ConfigError("classifier accuracy needs matched, non-empty batches");
  int hits = 0;
  for (size_t i = 0; i < grids.size(); ++i)
    hits += classify(*grids[i]) == target_speakers[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(grids.size());
}

double binomial_ci_halfwidth(double p_hat, int n) {
  if (n <= 0) throw ConfigError("confidence interval needs n > 0");
  return 1.96 * std::sqrt(std::max(0.0, p_hat * (1.0 - p_hat)) / n);
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "source\ttarget\tsrc_speaker\ttgt_speaker\tcer\tclassified\ttruncated\n";
  for (const auto& p : pairs)
    os << p.source << '\t' << p.target << '\t' << p.source_speaker << '\t' << p.target_speaker
       << '\t' << p.cer << '\t' << p.classified_as << '\t' << (p.truncated ? 1 : 0) << '\n';
  os << "# mean_cer=" << content_error_rate << " speaker_accuracy=" << speaker_accuracy << "+-"
     << speaker_accuracy_ci << " truncation_rate=" << truncation_rate << '\n';
  return os.str();
}

namespace {

struct EvalPair {
  const UtterancePair* source;
  const UtterancePair* target;
  std::string source_name;
  std::string target_name;
};

std::vector<EvalPair> build_pairs(const std::vector<UtterancePair>& split,
                                  const std::vector<std::string>& names,
                                  const EvalProtocol& protocol) {
  std::vector<EvalPair> pairs;
  const size_t n = split.size();
  for (size_t i = 0; i < n && static_cast<int>(pairs.size()) < protocol.max_pairs; ++i) {
    for (size_t step = 1; step <= n; ++step) {
      const size_t j = (i + step) % n;
      if (protocol.cross_speaker_only && split[j].speaker_id == split[i].speaker_id) continue;
      pairs.push_back(EvalPair{&split[i], &split[j], names[i], names[j]});
      break;
    }
  }
  if (pairs.empty()) throw ConfigError("no evaluation pairs available in split");
  return pairs;
}

}  // namespace

EvalReport evaluate_conversions(const Corpus& corpus, const LmModel& mplm, const LmModel* elm,
                                const LmModel& plm, const SamplingConfig& sampling,
                                const EvalProtocol& protocol) {
  const VocabConfig& vocab = corpus.config.vocab;
  auto speakers = corpus_speakers(corpus.config);
  SpeakerClassifier classifier(speakers, load_split(corpus, "train"));

  std::vector<UtterancePair> split = load_split(corpus, protocol.split);
  std::vector<std::string> names;
  for (const auto& e : corpus.entries)
    if (e.split == protocol.split) names.push_back(e.relpath);

  auto pairs = build_pairs(split, names, protocol);

  EvalReport report;
  double cer_sum = 0.0;
  int acc_hits = 0, trunc = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const UtterancePair source =
        truncate_utterance(*pairs[i].source, vocab, protocol.max_source_semantic_len);
    const UtterancePair target =
        truncate_utterance(*pairs[i].target, vocab, protocol.prompt_semantic_len);

    SamplingConfig cfg = sampling;
    cfg.seed = derive_seed(sampling.seed, 0xe5a1ULL, static_cast<uint64_t>(i));
    ConversionResult conv = convert(source, target, mplm, elm, plm, cfg);

    PairResult pr;
    pr.source = pairs[i].source_name;
    pr.target = pairs[i].target_name;
    pr.source_speaker = source.speaker_id;
    pr.target_speaker = target.speaker_id;
    pr.truncated = conv.truncated;
    const auto content =
        oracle_decode_content(source.acoustic, speakers[source.speaker_id], vocab);
    if (conv.grid.length() == 0) {
      pr.cer = 1.0;  // empty conversion recovers nothing
      pr.classified_as = std::numeric_limits<uint32_t>::max();
    } else {
      pr.cer = content_error_rate(conv.grid, content, speakers[target.speaker_id], vocab);
      pr.classified_as = classifier.classify(conv.grid);
    }
    cer_sum += pr.cer;
    acc_hits += pr.classified_as == target.speaker_id ? 1 : 0;
    trunc += pr.truncated ? 1 : 0;
    report.pairs.push_back(std::move(pr));
  }
  const int n = static_cast<int>(report.pairs.size());
  report.content_error_rate = cer_sum / n;
  report.speaker_accuracy = static_cast<double>(acc_hits) / n;
  report.speaker_accuracy_ci = binomial_ci_halfwidth(report.speaker_accuracy, n);
  report.truncation_rate = static_cast<double>(trunc) / n;
  std::ostringstream echo;
  echo << "split=" << protocol.split << " pairs=" << n
       << " prompt_semantic_len=" << protocol.prompt_semantic_len
       << " max_source_semantic_len=" << protocol.max_source_semantic_len
       << " lambda=" << sampling.fusion_lambda << " seed=" << sampling.seed << " mode="
       << (sampling.mode == SamplingConfig::Mode::argmax ? "argmax" : "top_k");
  report.config_echo = echo.str();
  return report;
}

std::string AblationTable::table() const {
  std::ostringstream os;
  os << "window\tlambda\tseed\tcer\tspeaker_accuracy\ttruncation_rate\n";
  for (const auto& c : cells)
    os << c.window << '\t' << c.lambda << '\t' << c.sampling_seed << '\t'
       << c.report.content_error_rate << '\t' << c.report.speaker_accuracy << '\t'
       << c.report.truncation_rate << '\n';
  return os.str();
}

std::string AblationTable::plot_data() const {
  // x, y, series columns: window, cer, lambda (mean over seeds)
  std::map<std::pair<int, double>, std::pair<double, int>> agg;
  for (const auto& c : cells) {
    auto& slot = agg[{c.window, c.lambda}];
    slot.first += c.report.content_error_rate;
    slot.second += 1;
  }
  std::ostringstream os;
  os << "# x=window  y=mean_cer  series=lambda\n";
  for (const auto& [key, val] : agg)
    os << key.first << ' ' << val.first / val.second << ' ' << key.second << '\n';
  return os.str();
}

AblationTable ablate_fusion(const Corpus& corpus, const LmModel& mplm, const LmModel& plm,
                            const ElmProvider& elm_for_window, const std::vector<int>& windows,
                            const std::vector<double>& lambdas,
                            const std::vector<uint64_t>& sampling_seeds,
                            const SamplingConfig& base_sampling, const EvalProtocol& protocol) {
  if (windows.empty() || lambdas.empty() || sampling_seeds.empty())
    throw ConfigError("ablation grid is empty");
  AblationTable out;
  for (int w : windows) {
    const LmModel* elm = elm_for_window(w);
    for (double lambda : lambdas) {
      for (uint64_t seed : sampling_seeds) {
        SamplingConfig cfg = base_sampling;
        cfg.fusion_lambda = lambda;
        cfg.seed = seed;
        AblationCell cell;
        cell.window = w;
        cell.lambda = lambda;
        cell.sampling_seed = seed;
        cell.report = evaluate_conversions(corpus, mplm, elm, plm, cfg, protocol);
        out.cells.push_back(std::move(cell));
      }
    }
  }
  return out;
}

std::string ProbeReport::table() const {
  std::ostringstream os;
  os << "masked_training\tseed\tsource_leakage\n";
  for (const auto& r : rows)
    os << (r.masked_training ? 1 : 0) << '\t' << r.seed << '\t' << r.source_leakage << '\n';
  os << "# masked_leaks_no_more_in " << seeds_where_masked_leaks_no_more << " of " << total_seeds
     << " seeds\n";
  return os.str();
}

ProbeReport disentanglement_probe(
    const Corpus& corpus,
    const std::vector<std::pair<const LmModel*, const LmModel*>>& masked_unmasked_by_seed,
    const std::vector<uint64_t>& seeds, const EvalProtocol& protocol) {
  if (masked_unmasked_by_seed.size() != seeds.size() || seeds.empty())
    throw ConfigError("probe needs one (masked, unmasked) model pair per seed");
  const VocabConfig& vocab = corpus.config.vocab;
  auto speakers = corpus_speakers(corpus.config);
  SpeakerClassifier classifier(speakers, load_split(corpus, "train"));

  std::vector<UtterancePair> split = load_split(corpus, protocol.split);
  std::vector<std::string> names(split.size());
  auto pairs = build_pairs(split, names, protocol);

  auto leakage_of = [&](const LmModel& mplm) {
    int leaked = 0, counted = 0;
    for (size_t i = 0; i < pairs.size(); ++i) {
      const UtterancePair source =
          truncate_utterance(*pairs[i].source, vocab, protocol.max_source_semantic_len);
      const UtterancePair target =
          truncate_utterance(*pairs[i].target, vocab, protocol.prompt_semantic_len);
      SamplingConfig cfg;
      cfg.mode = SamplingConfig::Mode::argmax;
      CoarsePrompt prompt = build_coarse_prompt(target, source.semantic);
      CoarseResult coarse = generate_coarse(mplm, nullptr, prompt, cfg);
      if (coarse.tokens.empty()) continue;
      AcousticGrid g;
      g.rows.push_back(coarse.tokens);
      leaked += classifier.classify(g) == source.speaker_id ? 1 : 0;
      ++counted;
    }
    return counted > 0 ? static_cast<double>(leaked) / counted : 1.0;
  };

  ProbeReport report;
  report.total_seeds = static_cast<int>(seeds.size());
  for (size_t s = 0; s < seeds.size(); ++s) {
    const auto& [masked, unmasked] = masked_unmasked_by_seed[s];
    ProbeRow rm{true, seeds[s], leakage_of(*masked)};
    ProbeRow ru{false, seeds[s], leakage_of(*unmasked)};
    if (rm.source_leakage <= ru.source_leakage) ++report.seeds_where_masked_leaks_no_more;
    report.rows.push_back(rm);
    report.rows.push_back(ru);
  }
  return report;
}

}  // namespace lmvc
