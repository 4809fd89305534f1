// lmvc: corpus generation, training, conversion, evaluation and ablation for
// the two-stage token voice-conversion pipeline.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmvc/checkpoint.hpp"
#include "lmvc/decode.hpp"
#include "lmvc/eval.hpp"
#include "lmvc/run_config.hpp"
#include "lmvc/synth.hpp"
#include "lmvc/train.hpp"

namespace fs = std::filesystem;
using namespace lmvc;

namespace {

// Exit codes: 0 ok, 2 config, 3 missing file / io, 4 divergence,
// 5 malformed data / capacity, 1 anything else.
enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kDiverged = 4, kFormat = 5 };

void print_error(const std::string& type, const std::string& message) {
  nlohmann::json j{{"error", {{"type", type}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
}

fs::path make_run_dir(const RunConfig& cfg, const std::string& command, std::string out_override) {
  fs::path dir;
  if (!out_override.empty()) {
    dir = out_override;
  } else {
    const char* env_root = std::getenv("LMVC_RUN_ROOT");
    const fs::path root = env_root ? fs::path(env_root) : fs::path(cfg.run_root);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now).count();
    dir = root / (command + "-" + std::to_string(us));
  }
  fs::create_directories(dir);
  write_config_echo(dir / "config_echo.json", cfg);
  return dir;
}

std::unique_ptr<LmModel> load_model(const std::string& path, ModelKind expect) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
  auto loaded = load_checkpoint(path);
  if (loaded.model->kind() != expect)
    throw ConfigError(path + " holds a " + to_string(loaded.model->kind()) + ", expected " +
                      to_string(expect));
  return std::move(loaded.model);
}

UtterancePair load_pair(const std::string& path, const VocabConfig& want) {
  if (!fs::exists(path)) throw IoError("token file not found: " + path);
  TokenFile tf = read_tokens(path);
  if (!(tf.vocab == want))
    throw ConfigError(path + ": token-file vocab disagrees with the model vocab");
  return tf.pair;
}

int cmd_gen_corpus(const RunConfig& cfg, const std::string& out) {
  fs::path dir = make_run_dir(cfg, "corpus", out);
  Corpus corpus = gen_corpus(cfg.corpus, dir);
  std::cout << "corpus: " << corpus.entries.size() << " utterances in " << dir.string() << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, const std::string& kind_s, const std::string& corpus_dir,
              const std::string& resume, const std::string& out) {
  const ModelKind kind = model_kind_from_string(kind_s);
  Corpus corpus = load_corpus(corpus_dir);
  fs::path dir = make_run_dir(cfg, "train-" + kind_s, out);

  std::unique_ptr<LmModel> model;
  std::optional<TrainerState> state;
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw IoError("resume checkpoint not found: " + resume);
    auto loaded = load_checkpoint(resume);
    if (loaded.model->kind() != kind)
      throw ConfigError("resume checkpoint holds a " + to_string(loaded.model->kind()));
    if (!loaded.trainer) throw ConfigError("checkpoint lacks optimizer state; cannot resume");
    model = std::move(loaded.model);
    state = std::move(loaded.trainer);
  } else {
    model = std::make_unique<LmModel>(kind, cfg.model_for(kind), corpus.config.vocab, cfg.seed);
  }

  TrainSchedule sched = cfg.train_for(kind);
  if (sched.seed == 0) sched.seed = derive_seed(cfg.seed, static_cast<uint64_t>(kind));
  Trainer trainer(*model, corpus, sched, dir);
  if (state) trainer.restore(*state);
  TrainResult res = trainer.run();
  std::cout << "trained " << kind_s << " for " << res.steps_done
            << " steps; final train loss " << res.last_train_loss << ", valid loss "
            << res.last_valid_loss << "\ncheckpoint: " << res.checkpoint.string() << '\n';
  return kOk;
}

void write_provenance(const fs::path& path, const nlohmann::json& body) {
  std::ofstream out(path);
  out << body.dump(2) << '\n';
  if (!out) throw IoError("cannot write provenance " + path.string());
}

int cmd_convert(const RunConfig& cfg, const std::string& source_path,
                const std::string& target_path, const std::string& mplm_path,
                const std::string& elm_path, const std::string& plm_path,
                const std::string& out_path) {
  auto mplm = load_model(mplm_path, ModelKind::mplm);
  std::unique_ptr<LmModel> elm;
  if (!elm_path.empty()) elm = load_model(elm_path, ModelKind::elm);
  auto plm = load_model(plm_path, ModelKind::plm);

  UtterancePair source = load_pair(source_path, mplm->vocab());
  UtterancePair target = load_pair(target_path, mplm->vocab());

  ConversionResult res = convert(source, target, *mplm, elm.get(), *plm, cfg.sampling);

  UtterancePair converted;
  converted.speaker_id = target.speaker_id;
  converted.semantic = source.semantic;
  converted.acoustic = res.grid;
  write_tokens(out_path, converted, mplm->vocab());

  nlohmann::json prov{
      {"source", source_path},
      {"target", target_path},
      {"mplm", {{"path", mplm_path}, {"fingerprint", checkpoint_fingerprint(mplm_path)}}},
      {"plm", {{"path", plm_path}, {"fingerprint", checkpoint_fingerprint(plm_path)}}},
      {"sampling",
       {{"mode", cfg.sampling.mode == SamplingConfig::Mode::argmax ? "argmax" : "top_k"},
        {"k", cfg.sampling.k},
        {"temperature", cfg.sampling.temperature},
        {"seed", cfg.sampling.seed},
        {"max_len_factor", cfg.sampling.max_len_factor},
        {"fusion_lambda", cfg.sampling.fusion_lambda}}},
      {"truncated", res.truncated}};
  if (elm)
    prov["elm"] = {{"path", elm_path}, {"fingerprint", checkpoint_fingerprint(elm_path)}};
  write_provenance(fs::path(out_path).string() + ".prov.json", prov);

  std::cout << "converted " << res.grid.length() << " frames -> " << out_path
            << (res.truncated ? " (truncated)" : "") << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& corpus_dir, const std::string& mplm_path,
             const std::string& elm_path, const std::string& plm_path, const std::string& out) {
  Corpus corpus = load_corpus(corpus_dir);
  auto mplm = load_model(mplm_path, ModelKind::mplm);
  std::unique_ptr<LmModel> elm;
  if (!elm_path.empty()) elm = load_model(elm_path, ModelKind::elm);
  auto plm = load_model(plm_path, ModelKind::plm);

  fs::path dir = make_run_dir(cfg, "eval", out);
  EvalReport report =
      evaluate_conversions(corpus, *mplm, elm.get(), *plm, cfg.sampling, cfg.eval);
  std::ofstream tab(dir / "report.tsv");
  tab << report.table();
  if (!tab) throw IoError("cannot write report in " + dir.string());
  std::cout << "eval: cer=" << report.content_error_rate
            << " speaker_accuracy=" << report.speaker_accuracy << "+-"
            << report.speaker_accuracy_ci << " truncation_rate=" << report.truncation_rate
            << "\nreport: " << (dir / "report.tsv").string() << '\n';
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, const std::string& corpus_dir, const std::string& mplm_path,
               const std::string& plm_path, std::vector<int> windows,
               std::vector<double> lambdas, int n_seeds,
               const std::vector<std::string>& elm_specs, bool train_missing,
               const std::string& out) {
  Corpus corpus = load_corpus(corpus_dir);
  auto mplm = load_model(mplm_path, ModelKind::mplm);
  auto plm = load_model(plm_path, ModelKind::plm);
  fs::path dir = make_run_dir(cfg, "ablate", out);

  std::map<int, std::unique_ptr<LmModel>> elms;
  for (const std::string& spec : elm_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--elm expects w=checkpoint, got " + spec);
    elms[std::stoi(spec.substr(0, eq))] = load_model(spec.substr(eq + 1), ModelKind::elm);
  }
  auto provider = [&](int w) -> const LmModel* {
    auto it = elms.find(w);
    if (it != elms.end()) return it->second.get();
    if (!train_missing)
      throw ConfigError("no ELM supplied for window " + std::to_string(w) +
                        " (pass --elm w=ckpt or --train-missing)");
    ModelConfig mc = cfg.model_for(ModelKind::elm);
    mc.window = w;
    auto model = std::make_unique<LmModel>(ModelKind::elm, mc, corpus.config.vocab, cfg.seed);
    TrainSchedule sched = cfg.train_for(ModelKind::elm);
    if (sched.seed == 0) sched.seed = derive_seed(cfg.seed, 0xe1, static_cast<uint64_t>(w));
    Trainer trainer(*model, corpus, sched, dir / ("elm_w" + std::to_string(w)));
    trainer.run();
    auto* raw = model.get();
    elms[w] = std::move(model);
    return raw;
  };

  std::vector<uint64_t> seeds;
  for (int s = 0; s < n_seeds; ++s) seeds.push_back(derive_seed(cfg.sampling.seed, 0xab1a7e, s));

  AblationTable table = ablate_fusion(corpus, *mplm, *plm, provider, windows, lambdas, seeds,
                                      cfg.sampling, cfg.eval);
  std::ofstream tab(dir / "ablation.tsv");
  tab << table.table();
  std::ofstream plot(dir / "ablation_plot.dat");
  plot << table.plot_data();
  if (!tab || !plot) throw IoError("cannot write ablation outputs in " + dir.string());
  std::cout << table.table();
  std::cout << "ablation: " << (dir / "ablation.tsv").string() << '\n';
  return kOk;
}

int cmd_probe(const RunConfig& cfg, const std::string& corpus_dir, int n_seeds,
              const std::string& out) {
  Corpus corpus = load_corpus(corpus_dir);
  fs::path dir = make_run_dir(cfg, "probe", out);

  std::vector<std::unique_ptr<LmModel>> keep;
  std::vector<std::pair<const LmModel*, const LmModel*>> pairs;
  std::vector<uint64_t> seeds;
  for (int s = 0; s < n_seeds; ++s) {
    const uint64_t seed = derive_seed(cfg.seed, 0x9a0be, s);
    seeds.push_back(seed);
    const LmModel* masked = nullptr;
    const LmModel* unmasked = nullptr;
    for (bool mask_on : {true, false}) {
      auto model = std::make_unique<LmModel>(ModelKind::mplm, cfg.model_for(ModelKind::mplm),
                                             corpus.config.vocab, seed);
      TrainSchedule sched = cfg.train_for(ModelKind::mplm);
      sched.seed = derive_seed(seed, mask_on ? 1 : 2);
      if (!mask_on) {
        sched.mask_ratio_lo = 0.0;
        sched.mask_ratio_hi = 0.0;
      }
      Trainer trainer(*model, corpus, sched,
                      dir / ("mplm_s" + std::to_string(s) + (mask_on ? "_masked" : "_plain")));
      trainer.run();
      (mask_on ? masked : unmasked) = model.get();
      keep.push_back(std::move(model));
    }
    pairs.emplace_back(masked, unmasked);
  }

  ProbeReport report = disentanglement_probe(corpus, pairs, seeds, cfg.eval);
  std::ofstream tab(dir / "probe.tsv");
  tab << report.table();
  if (!tab) throw IoError("cannot write probe report in " + dir.string());
  std::cout << report.table();
  return kOk;
}

int cmd_inspect_mask(const std::string& kind, int t_sem, int t_ac, int t, int w) {
  AttnMask mask;
  if (kind == "mplm") {
    mask = mplm_mask(t_sem, t_ac);
  } else if (kind == "causal") {
    mask = causal_mask(t);
  } else if (kind == "window") {
    mask = window_mask(t, w);
  } else if (kind == "full") {
    mask = full_mask(t);
  } else {
    throw ConfigError("inspect-mask kind must be mplm, causal, window or full");
  }
  std::cout << mask.text_art();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LM-based two-stage voice conversion over discrete tokens"};
  app.require_subcommand(1);

  std::string config_file, out_dir;
  std::vector<std::string> overrides;
  app.add_option("--config", config_file, "JSON run configuration")->expected(1);
  app.add_option("--set", overrides, "dotted-path overrides, key=value");
  app.add_option("--out", out_dir, "run directory (default: under run_root)");

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic token corpus");

  auto* train = app.add_subcommand("train", "train one of the three models");
  std::string kind, corpus_dir, resume;
  train->add_option("--kind", kind, "mplm | elm | plm")->required();
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* conv = app.add_subcommand("convert", "convert a source utterance to a target voice");
  std::string source_path, target_path, mplm_path, elm_path, plm_path, out_path;
  conv->add_option("--source", source_path, "source token file")->required();
  conv->add_option("--target", target_path, "target-speaker prompt token file")->required();
  conv->add_option("--mplm", mplm_path, "MPLM checkpoint")->required();
  conv->add_option("--elm", elm_path, "ELM checkpoint (omit for MPLM-only decoding)");
  conv->add_option("--plm", plm_path, "PLM checkpoint")->required();
  conv->add_option("--output", out_path, "output token file")->required();

  auto* ev = app.add_subcommand("eval", "score conversions over a corpus split");
  ev->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ev->add_option("--mplm", mplm_path, "MPLM checkpoint")->required();
  ev->add_option("--elm", elm_path, "ELM checkpoint (optional)");
  ev->add_option("--plm", plm_path, "PLM checkpoint")->required();

  auto* ab = app.add_subcommand("ablate", "sweep fusion window and weight");
  std::vector<int> windows{20};
  std::vector<double> lambdas{0.0, 0.3};
  int n_seeds = 3;
  std::vector<std::string> elm_specs;
  bool train_missing = false;
  ab->add_option("--corpus", corpus_dir)->required();
  ab->add_option("--mplm", mplm_path)->required();
  ab->add_option("--plm", plm_path)->required();
  ab->add_option("--windows", windows, "window lengths");
  ab->add_option("--lambdas", lambdas, "fusion weights");
  ab->add_option("--seeds", n_seeds, "number of sampling seeds");
  ab->add_option("--elm", elm_specs, "w=checkpoint for a pre-trained ELM");
  ab->add_flag("--train-missing", train_missing, "train ELMs for windows without checkpoints");

  auto* pr = app.add_subcommand("probe", "masked vs unmasked disentanglement probe");
  pr->add_option("--corpus", corpus_dir)->required();
  pr->add_option("--seeds", n_seeds, "number of training seeds");

  auto* im = app.add_subcommand("inspect-mask", "print an attention mask as text art");
  std::string mask_kind;
  int t_sem = 0, t_ac = 0, t = 0, w = 0;
  im->add_option("kind", mask_kind, "mplm | causal | window | full")->required();
  im->add_option("--ts", t_sem, "semantic length (mplm)");
  im->add_option("--ta", t_ac, "acoustic length (mplm)");
  im->add_option("--t", t, "sequence length (causal/window/full)");
  im->add_option("--w", w, "window length");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_file.empty() ? load_run_config_default(overrides)
                                        : load_run_config(config_file, overrides);
    if (gen->parsed()) return cmd_gen_corpus(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, kind, corpus_dir, resume, out_dir);
    if (conv->parsed())
      return cmd_convert(cfg, source_path, target_path, mplm_path, elm_path, plm_path, out_path);
    if (ev->parsed()) return cmd_eval(cfg, corpus_dir, mplm_path, elm_path, plm_path, out_dir);
    if (ab->parsed())
      return cmd_ablate(cfg, corpus_dir, mplm_path, plm_path, windows, lambdas, n_seeds,
                        elm_specs, train_missing, out_dir);
    if (pr->parsed()) return cmd_probe(cfg, corpus_dir, n_seeds, out_dir);
    if (im->parsed()) return cmd_inspect_mask(mask_kind, t_sem, t_ac, t, w);
    print_error("usage", "no subcommand given");
    return kConfig;
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return kConfig;
  } catch (const IoError& e) {
    print_error("io", e.what());
    return kIo;
  } catch (const NumericError& e) {
    print_error("numeric", e.what());
    return kDiverged;
  } catch (const FormatError& e) {
    print_error("format", e.what());
    return kFormat;
  } catch (const ShapeError& e) {
    print_error("shape", e.what());
    return kFormat;
  } catch (const IndexError& e) {
    print_error("index", e.what());
    return kFormat;
  } catch (const CapacityError& e) {
    print_error("capacity", e.what());
    return kFormat;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kOther;
  }
}
