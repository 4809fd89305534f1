#include "lmvc/run_config.hpp"

#include <fstream>

namespace lmvc {

namespace {

nlohmann::json vocab_to_json(const VocabConfig& v) {
  return {{"semantic_vocab", v.semantic_vocab},
          {"acoustic_vocab", v.acoustic_vocab},
          {"num_layers", v.num_layers},
          {"semantic_frame_ms", v.semantic_frame_ms},
          {"acoustic_frame_ms", v.acoustic_frame_ms}};
}

void vocab_from_json(const nlohmann::json& j, VocabConfig& v) {
  v.semantic_vocab = j.value("semantic_vocab", v.semantic_vocab);
  v.acoustic_vocab = j.value("acoustic_vocab", v.acoustic_vocab);
  v.num_layers = j.value("num_layers", v.num_layers);
  v.semantic_frame_ms = j.value("semantic_frame_ms", v.semantic_frame_ms);
  v.acoustic_frame_ms = j.value("acoustic_frame_ms", v.acoustic_frame_ms);
}

nlohmann::json corpus_to_json(const CorpusConfig& c) {
  return {{"num_speakers", c.num_speakers},
          {"utterances_per_speaker", c.utterances_per_speaker},
          {"content_len_min", c.content_len_min},
          {"content_len_max", c.content_len_max},
          {"content_vocab", c.content_vocab},
          {"markov_order", c.markov_order},
          {"leak_prob", c.leak_prob},
          {"seed", c.seed},
          {"vocab", vocab_to_json(c.vocab)}};
}

void corpus_from_json(const nlohmann::json& j, CorpusConfig& c) {
  c.num_speakers = j.value("num_speakers", c.num_speakers);
  c.utterances_per_speaker = j.value("utterances_per_speaker", c.utterances_per_speaker);
  c.content_len_min = j.value("content_len_min", c.content_len_min);
  c.content_len_max = j.value("content_len_max", c.content_len_max);
  c.content_vocab = j.value("content_vocab", c.content_vocab);
  c.markov_order = j.value("markov_order", c.markov_order);
  c.leak_prob = j.value("leak_prob", c.leak_prob);
  c.seed = j.value("seed", c.seed);
  if (j.contains("vocab")) vocab_from_json(j.at("vocab"), c.vocab);
}

nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"num_layers", m.num_layers}, {"num_heads", m.num_heads},
          {"embed_dim", m.embed_dim},   {"ff_dim", m.ff_dim},
          {"dropout", m.dropout},       {"max_positions", m.max_positions},
          {"window", m.window}};
}

void model_from_json(const nlohmann::json& j, ModelConfig& m) {
  m.num_layers = j.value("num_layers", m.num_layers);
  m.num_heads = j.value("num_heads", m.num_heads);
  m.embed_dim = j.value("embed_dim", m.embed_dim);
  m.ff_dim = j.value("ff_dim", m.ff_dim);
  m.dropout = j.value("dropout", m.dropout);
  m.max_positions = j.value("max_positions", m.max_positions);
  m.window = j.value("window", m.window);
}

nlohmann::json train_to_json(const TrainSchedule& t) {
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"lr_decay", t.lr_decay},
          {"steps_per_epoch", t.steps_per_epoch},
          {"log_every", t.log_every},
          {"eval_every", t.eval_every},
          {"checkpoint_every", t.checkpoint_every},
          {"valid_batches", t.valid_batches},
          {"seed", t.seed},
          {"mask_ratio_lo", t.mask_ratio_lo},
          {"mask_ratio_hi", t.mask_ratio_hi},
          {"span_len", t.span_len},
          {"plm_prompt_lo", t.plm_prompt_lo},
          {"plm_prompt_hi", t.plm_prompt_hi}};
}

void train_from_json(const nlohmann::json& j, TrainSchedule& t) {
  t.steps = j.value("steps", t.steps);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.lr_decay = j.value("lr_decay", t.lr_decay);
  t.steps_per_epoch = j.value("steps_per_epoch", t.steps_per_epoch);
  t.log_every = j.value("log_every", t.log_every);
  t.eval_every = j.value("eval_every", t.eval_every);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  t.valid_batches = j.value("valid_batches", t.valid_batches);
  t.seed = j.value("seed", t.seed);
  t.mask_ratio_lo = j.value("mask_ratio_lo", t.mask_ratio_lo);
  t.mask_ratio_hi = j.value("mask_ratio_hi", t.mask_ratio_hi);
  t.span_len = j.value("span_len", t.span_len);
  t.plm_prompt_lo = j.value("plm_prompt_lo", t.plm_prompt_lo);
  t.plm_prompt_hi = j.value("plm_prompt_hi", t.plm_prompt_hi);
}

nlohmann::json sampling_to_json(const SamplingConfig& s) {
  return {{"mode", s.mode == SamplingConfig::Mode::argmax ? "argmax" : "top_k"},
          {"k", s.k},
          {"temperature", s.temperature},
          {"seed", s.seed},
          {"max_len_factor", s.max_len_factor},
          {"fusion_lambda", s.fusion_lambda}};
}

void sampling_from_json(const nlohmann::json& j, SamplingConfig& s) {
  if (j.contains("mode")) {
    const std::string m = j.at("mode").get<std::string>();
    if (m == "argmax")
      s.mode = SamplingConfig::Mode::argmax;
    else if (m == "top_k")
      s.mode = SamplingConfig::Mode::top_k;
    else
      throw ConfigError("sampling.mode must be argmax or top_k");
  }
  s.k = j.value("k", s.k);
  s.temperature = j.value("temperature", s.temperature);
  s.seed = j.value("seed", s.seed);
  s.max_len_factor = j.value("max_len_factor", s.max_len_factor);
  s.fusion_lambda = j.value("fusion_lambda", s.fusion_lambda);
}

nlohmann::json eval_to_json(const EvalProtocol& e) {
  return {{"max_pairs", e.max_pairs},
          {"prompt_semantic_len", e.prompt_semantic_len},
          {"max_source_semantic_len", e.max_source_semantic_len},
          {"split", e.split},
          {"cross_speaker_only", e.cross_speaker_only}};
}

void eval_from_json(const nlohmann::json& j, EvalProtocol& e) {
  e.max_pairs = j.value("max_pairs", e.max_pairs);
  e.prompt_semantic_len = j.value("prompt_semantic_len", e.prompt_semantic_len);
  e.max_source_semantic_len = j.value("max_source_semantic_len", e.max_source_semantic_len);
  e.split = j.value("split", e.split);
  e.cross_speaker_only = j.value("cross_speaker_only", e.cross_speaker_only);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.corpus.vocab.num_layers = 4;

  ModelConfig mplm;
  mplm.num_layers = 3;
  mplm.num_heads = 4;
  mplm.embed_dim = 64;
  mplm.ff_dim = 256;
  mplm.max_positions = 512;
  ModelConfig elm = mplm;
  elm.num_layers = 2;
  elm.window = 20;
  ModelConfig plm = mplm;
  cfg.model = {{"mplm", mplm}, {"elm", elm}, {"plm", plm}};

  TrainSchedule mplm_t;
  mplm_t.steps = 2400;
  mplm_t.lr = 3e-3;
  TrainSchedule elm_t = mplm_t;
  elm_t.steps = 1000;
  TrainSchedule plm_t = mplm_t;
  plm_t.steps = 1400;
  plm_t.lr = 1.5e-3;
  cfg.train = {{"mplm", mplm_t}, {"elm", elm_t}, {"plm", plm_t}};
  return cfg;
}

void RunConfig::validate() const {
  corpus.validate();
  for (const auto& kind : {std::string("mplm"), std::string("elm"), std::string("plm")}) {
    if (!model.contains(kind)) throw ConfigError("missing model." + kind + " section");
    if (!train.contains(kind)) throw ConfigError("missing train." + kind + " section");
    model.at(kind).validate(model_kind_from_string(kind));
    train.at(kind).validate();
  }
  sampling.validate();
  if (eval.max_pairs < 1) throw ConfigError("eval.max_pairs must be >= 1");
  if (eval.prompt_semantic_len < 1 || eval.max_source_semantic_len < 1)
    throw ConfigError("eval lengths must be >= 1");
}

const ModelConfig& RunConfig::model_for(ModelKind kind) const { return model.at(to_string(kind)); }
const TrainSchedule& RunConfig::train_for(ModelKind kind) const {
  return train.at(to_string(kind));
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["run_root"] = cfg.run_root;
  j["corpus"] = corpus_to_json(cfg.corpus);
  for (const auto& [kind, m] : cfg.model) j["model"][kind] = model_to_json(m);
  for (const auto& [kind, t] : cfg.train) j["train"][kind] = train_to_json(t);
  j["sampling"] = sampling_to_json(cfg.sampling);
  j["eval"] = eval_to_json(cfg.eval);
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg = RunConfig::defaults();
  cfg.seed = j.value("seed", cfg.seed);
  cfg.run_root = j.value("run_root", cfg.run_root);
  if (j.contains("corpus")) corpus_from_json(j.at("corpus"), cfg.corpus);
  if (j.contains("model"))
    for (auto& [kind, sub] : j.at("model").items()) {
      if (!cfg.model.contains(kind)) throw ConfigError("unknown model section '" + kind + "'");
      model_from_json(sub, cfg.model.at(kind));
    }
  if (j.contains("train"))
    for (auto& [kind, sub] : j.at("train").items()) {
      if (!cfg.train.contains(kind)) throw ConfigError("unknown train section '" + kind + "'");
      train_from_json(sub, cfg.train.at(kind));
    }
  if (j.contains("sampling")) sampling_from_json(j.at("sampling"), cfg.sampling);
  if (j.contains("eval")) eval_from_json(j.at("eval"), cfg.eval);
  cfg.validate();
  return cfg;
}

const std::map<std::string, std::string>& defaults_provenance() {
  // paper: value stated in the source experiments; toy: desk-scale choice.
  static const std::map<std::string, std::string> flags = {
      {"corpus.vocab.acoustic_vocab", "paper"},
      {"corpus.vocab.semantic_frame_ms", "paper"},
      {"corpus.vocab.acoustic_frame_ms", "paper"},
      {"corpus.vocab.num_layers", "toy (paper uses 6)"},
      {"corpus.vocab.semantic_vocab", "toy"},
      {"corpus.num_speakers", "toy"},
      {"corpus.utterances_per_speaker", "toy"},
      {"corpus.content_len_min", "toy"},
      {"corpus.content_len_max", "toy"},
      {"corpus.content_vocab", "toy"},
      {"corpus.markov_order", "toy"},
      {"corpus.leak_prob", "toy"},
      {"model.*.num_layers", "toy (paper uses 12)"},
      {"model.*.num_heads", "toy (paper uses 16)"},
      {"model.*.embed_dim", "toy (paper uses 1024)"},
      {"model.*.ff_dim", "toy (paper uses 4096)"},
      {"model.*.dropout", "paper"},
      {"model.*.max_positions", "toy (paper caps 10s contexts)"},
      {"model.elm.window", "paper"},
      {"train.*.steps", "toy (paper trains 600K steps)"},
      {"train.*.batch_size", "toy (paper uses 12-20 per GPU)"},
      {"train.*.lr", "toy (paper uses 5e-4 / 1e-4)"},
      {"train.*.lr_decay", "paper"},
      {"train.*.mask_ratio_lo", "paper"},
      {"train.*.mask_ratio_hi", "paper"},
      {"train.*.span_len", "paper"},
      {"train.*.weight_decay", "toy (paper states AdamW only)"},
      {"sampling.fusion_lambda", "paper"},
      {"sampling.k", "toy"},
      {"sampling.temperature", "toy"},
      {"sampling.max_len_factor", "toy"},
      {"eval.*", "toy"},
  };
  return flags;
}

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config file " + file.string());
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config parse error in " + file.string() + ": " + e.what());
    }
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + ov + "' is not key=value");
    const std::string key = ov.substr(0, eq);
    const std::string val = ov.substr(eq + 1);
    nlohmann::json* node = &j;
    size_t begin = 0;
    while (true) {
      const size_t dot = key.find('.', begin);
      const std::string part = key.substr(begin, dot - begin);
      if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
      if (dot == std::string::npos) {
        nlohmann::json parsed;
        try {
          parsed = nlohmann::json::parse(val);
        } catch (const nlohmann::json::parse_error&) {
          parsed = val;  // plain string
        }
        (*node)[part] = parsed;
        break;
      }
      node = &(*node)[part];
      begin = dot + 1;
    }
  }
  return run_config_from_json(j);
}

RunConfig load_run_config_default(const std::vector<std::string>& overrides) {
  return load_run_config({}, overrides);
}

void write_config_echo(const std::filesystem::path& path, const RunConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j["_defaults_provenance"] = defaults_provenance();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config echo " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing config echo " + path.string());
}

}  // namespace lmvc
