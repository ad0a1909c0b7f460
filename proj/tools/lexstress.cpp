// lexstress command-line front end.
//
// Subcommands: synth, featurize, train, decode, evaluate. Every run writes
// a resolved-config snapshot next to its outputs. Exit codes: 0 success,
// 2 input/data errors, 3 runtime failures, 1 anything else.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "lexstress/checkpoint.hpp"
#include "lexstress/dataset.hpp"
#include "lexstress/decoding.hpp"
#include "lexstress/features.hpp"
#include "lexstress/lexicon.hpp"
#include "lexstress/metrics.hpp"
#include "lexstress/model.hpp"
#include "lexstress/synthdata.hpp"
#include "lexstress/trainer.hpp"
#include "lexstress/wav.hpp"

namespace fs = std::filesystem;
using namespace lexstress;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

void write_snapshot(CLI::App* cmd, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "resolved_config.ini");
  f << "; resolved " << cmd->get_name() << " configuration\n"
    << cmd->config_to_str(true, false);
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char c : id)
    out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out.empty() ? "utt" : out;
}

// ----------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir;
  std::string spec_path;
  int n = 2000;
  int n_val = 200;
  int n_test = 200;
  uint64_t seed = 0;  // 0: keep the spec seed
  bool control = false;
};

int run_synth(const SynthArgs& a, CLI::App* cmd) {
  synth::SynthSpec spec = synth::default_spec();
  if (!a.spec_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(a.spec_path));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(cat("bad spec file ", a.spec_path, ": ", e.what()));
    }
    spec = synth::spec_from_json(j);
  }
  if (a.seed != 0) spec.seed = a.seed;
  if (a.control) spec = spec.control();
  spec.validate();

  fs::create_directories(a.out_dir);
  synth::write_lexicon(spec, (fs::path(a.out_dir) / "lexicon.txt").string());
  {
    std::ofstream f(fs::path(a.out_dir) / "spec.json");
    f << synth::spec_to_json(spec).dump(2) << "\n";
  }
  const struct {
    const char* split;
    int n;
  } splits[] = {{"train", a.n}, {"val", a.n_val}, {"test", a.n_test}};
  for (const auto& s : splits) {
    if (s.n <= 0) continue;
    auto utts = synth::generate_corpus(spec, s.n, s.split);
    synth::write_corpus(utts, a.out_dir, cat(s.split, ".jsonl"));
    std::cout << "wrote " << s.n << " " << s.split << " utterances\n";
  }
  write_snapshot(cmd, a.out_dir);
  return kExitOk;
}

// ------------------------------------------------------------- featurize

struct FeaturizeArgs {
  std::string manifest;
  std::string out_dir;
};

int run_featurize(const FeaturizeArgs& a, CLI::App* cmd) {
  const auto entries = train::read_manifest(a.manifest);
  fs::create_directories(a.out_dir);

  std::vector<train::ManifestEntry> index;
  int failures = 0;
  for (const auto& e : entries) {
    try {
      if (e.audio.empty())
        throw InputError("record has no \"audio\" field to featurize");
      const auto feats = dsp::extract_features(dsp::read_wav(e.audio));
      train::ManifestEntry out = e;
      out.audio.clear();
      out.features = sanitize_id(e.id) + ".feat";
      dsp::write_feature_file((fs::path(a.out_dir) / out.features).string(),
                              feats);
      index.push_back(std::move(out));
    } catch (const std::exception& ex) {
      ++failures;
      std::cerr << "featurize failed for " << e.id << ": " << ex.what()
                << "\n";
    }
  }
  train::write_manifest((fs::path(a.out_dir) / "index.jsonl").string(),
                        index);
  write_snapshot(cmd, a.out_dir);
  std::cout << "featurized " << index.size() << "/" << entries.size()
            << " utterances\n";
  return failures == 0 ? kExitOk : kExitInput;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest;
  std::string val_manifest;
  std::string lexicon;
  std::string out;
  std::string resume;
  model::ModelConfig mcfg;
  train::TrainConfig tcfg;
};

int run_train(const TrainArgs& a, CLI::App* cmd) {
  const auto train_entries = train::read_manifest(a.manifest);
  const auto val_entries = train::read_manifest(a.val_manifest);

  std::optional<lex::Lexicon> lexicon;
  if (!a.lexicon.empty()) lexicon = lex::parse_dictionary_file(a.lexicon);

  std::optional<model::ModelParameters> resume;
  train::AdamState<float> resume_opt;
  bool have_opt = false;
  model::ModelConfig mcfg = a.mcfg;
  if (!a.resume.empty()) {
    model::ParamMap<float> om, ov;
    resume = model::load_checkpoint(a.resume, &om, &ov);
    mcfg = resume->config;
    if (!om.empty()) {
      resume_opt.m = std::move(om);
      resume_opt.v = std::move(ov);
      resume_opt.step = resume->step;
      have_opt = true;
    }
  }

  const fs::path out_path(a.out);
  const fs::path out_dir =
      out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.csv");

  auto res = train::fit(train_entries, val_entries,
                        lexicon ? &*lexicon : nullptr, mcfg, a.tcfg, &log,
                        resume ? &*resume : nullptr,
                        have_opt ? &resume_opt : nullptr);

  model::save_checkpoint(res.best, a.out);
  model::save_checkpoint(res.last, a.out + ".last", &res.opt.m, &res.opt.v);
  write_snapshot(cmd, out_dir);
  std::cout << "trained " << res.steps_run << " steps"
            << (res.early_stopped ? " (early stop)" : "") << ", best val "
            << res.best_val << " at step " << res.best.step << "\n"
            << "checkpoint: " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- decode

struct DecodeArgs {
  std::string manifest;
  std::string lexicon;
  std::string checkpoint;
  std::string out;
  std::string mode = "constrained";
  int beam = 1;
  int stress_classes = 3;
  int max_len = 256;
  int threads = 0;
};

int run_decode(const DecodeArgs& a, CLI::App* cmd) {
  if (a.beam < 1) throw InputError("--beam must be >= 1");
  if (a.stress_classes != 2 && a.stress_classes != 3)
    throw InputError("--stress-classes must be 2 or 3");

  const auto entries = train::read_manifest(a.manifest);
  const auto mp = model::load_checkpoint(a.checkpoint);
  std::optional<lex::Lexicon> lexicon;
  if (!a.lexicon.empty()) lexicon = lex::parse_dictionary_file(a.lexicon);
  if (a.mode == "constrained" && !lexicon)
    throw InputError("constrained decoding needs --lexicon");

  lex::ConstraintConfig ccfg;
  ccfg.classes = a.stress_classes == 2 ? lex::StressClasses::Two
                                       : lex::StressClasses::Three;

  const int n = static_cast<int>(entries.size());
  std::vector<nlohmann::json> records(n);
  parallel_for(n, a.threads, [&](int i) {
    const auto& e = entries[i];
    try {
      auto feats = dsp::normalize(train::load_features(e), mp.stats);
      const auto memory = model::encode(feats, mp);
      const auto step = decoding::make_transformer_step(memory, mp);
      if (a.mode == "free") {
        const auto ids = decoding::unconstrained_greedy(step, a.max_len);
        std::string text;
        for (int id : ids) {
          if (!text.empty()) text += ' ';
          text += lex::Vocabulary::text_of(id);
        }
        records[i] = {{"id", e.id},
                      {"transcript", e.transcript},
                      {"mode", "free"},
                      {"predicted", text}};
        return;
      }
      const auto lattice = lex::build_constraint(
          lex::split_transcript(e.transcript), *lexicon, ccfg);
      const auto res =
          a.beam > 1 ? decoding::constrained_beam(step, lattice, a.beam)
                     : decoding::constrained_greedy(step, lattice);
      decoding::check_constraint_satisfied(res, lattice);
      const auto reference = train::reference_tokens(e, &*lexicon);
      if (lex::strip_stress(reference) != lattice.base)
        throw InputError(
            "reference phones do not match the transcript's base sequence");
      records[i] = decoding::decode_record(e.id, e.transcript, lattice, res,
                                           reference);
    } catch (const std::exception& ex) {
      records[i] = {{"id", e.id}, {"error", ex.what()}};
    }
  });

  const fs::path out_path(a.out);
  if (out_path.has_parent_path())
    fs::create_directories(out_path.parent_path());
  std::ofstream f(a.out);
  if (!f) throw InputError(cat("cannot write ", a.out));
  int failures = 0;
  for (const auto& r : records) {
    failures += r.contains("error") ? 1 : 0;
    f << r.dump() << "\n";
  }
  write_snapshot(cmd, out_path.has_parent_path() ? out_path.parent_path()
                                                 : fs::path("."));
  std::cout << "decoded " << (n - failures) << "/" << n << " utterances -> "
            << a.out << "\n";
  if (failures > 0)
    std::cerr << failures << " utterances failed (see \"error\" records)\n";
  return failures == 0 ? kExitOk : kExitInput;
}

// -------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string decodes;
  std::string manifest;
  std::string policy = "collapse-2-to-0";
  std::string out_dir = ".";
  std::string dataset_label = "dataset";
  std::string method_label = "transformer-constrained";
};

int run_evaluate(const EvaluateArgs& a, CLI::App* cmd) {
  const auto policy = metrics::parse_policy(a.policy);
  const auto entries = train::read_manifest(a.manifest);

  std::ifstream f(a.decodes);
  if (!f) throw InputError(cat("cannot open decodes ", a.decodes));
  std::map<std::string, nlohmann::json> records;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(cat(a.decodes, " line ", line_no, ": ", e.what()));
    }
    const std::string id = j.value("id", "");
    records[id] = std::move(j);
  }

  metrics::StressReport report;
  report.policy = policy;
  for (const auto& e : entries) {
    auto it = records.find(e.id);
    if (it == records.end()) {
      report.exclude(e.id, "no decode record");
      continue;
    }
    const auto& rec = it->second;
    if (rec.contains("error")) {
      report.exclude(e.id, rec.at("error").get<std::string>());
      continue;
    }
    try {
      const auto predicted =
          lex::parse_token_sequence(rec.at("predicted").get<std::string>());
      std::string ref_text = e.phones;
      if (ref_text.empty()) ref_text = rec.value("reference", "");
      if (ref_text.empty()) throw InputError("no reference stress available");
      const auto reference = lex::parse_token_sequence(ref_text);

      std::vector<lex::WordSpan> spans;
      for (const auto& s : rec.at("word_spans")) {
        lex::WordSpan span;
        span.start = s.at("start").get<int>();
        span.end = s.at("end").get<int>();
        span.word = s.at("word").get<std::string>();
        span.polysyllabic = s.at("polysyllabic").get<bool>();
        spans.push_back(std::move(span));
      }
      report.add(e.id, metrics::score(reference, predicted, spans, policy));
    } catch (const std::exception& ex) {
      report.exclude(e.id, ex.what());
    }
  }

  fs::create_directories(a.out_dir);
  {
    std::ofstream out(fs::path(a.out_dir) / "report.json");
    out << metrics::report_to_json(report).dump(2) << "\n";
  }
  const std::string table =
      metrics::report_table(report, a.dataset_label, a.method_label);
  {
    std::ofstream out(fs::path(a.out_dir) / "report.txt");
    out << table;
  }
  write_snapshot(cmd, a.out_dir);
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"End-to-end lexical stress detection toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI file")
      ->envname("LEXSTRESS_CONFIG");

  SynthArgs sa;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic feature corpus");
  synth_cmd->add_option("--out-dir", sa.out_dir, "Output directory")
      ->required();
  synth_cmd->add_option("--n", sa.n, "Training utterances");
  synth_cmd->add_option("--n-val", sa.n_val, "Validation utterances");
  synth_cmd->add_option("--n-test", sa.n_test, "Test utterances");
  synth_cmd->add_option("--spec", sa.spec_path, "SynthSpec JSON file");
  synth_cmd->add_option("--seed", sa.seed, "Override the spec RNG seed");
  synth_cmd->add_flag("--control", sa.control,
                      "Cue-free control corpus with randomized references");

  FeaturizeArgs fa;
  auto* feat_cmd =
      app.add_subcommand("featurize", "Extract log-mel features from WAVs");
  feat_cmd->add_option("--manifest", fa.manifest, "JSONL manifest of WAVs")
      ->required();
  feat_cmd->add_option("--out-dir", fa.out_dir, "Output directory")
      ->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--manifest", ta.manifest, "Training manifest")
      ->required();
  train_cmd->add_option("--val-manifest", ta.val_manifest,
                        "Validation manifest")
      ->required();
  train_cmd->add_option("--lexicon", ta.lexicon,
                        "CMU-format lexicon (needed unless every record "
                        "carries \"phones\")");
  train_cmd->add_option("--out", ta.out, "Best checkpoint path")->required();
  train_cmd->add_option("--resume", ta.resume,
                        "Checkpoint to continue from (keeps its model "
                        "config)");
  train_cmd->add_option("--d-model", ta.mcfg.d_model, "Model width");
  train_cmd->add_option("--n-heads", ta.mcfg.n_heads, "Attention heads");
  train_cmd->add_option("--enc-layers", ta.mcfg.n_enc_layers,
                        "Encoder layers");
  train_cmd->add_option("--dec-layers", ta.mcfg.n_dec_layers,
                        "Decoder layers");
  train_cmd->add_option("--d-ff", ta.mcfg.d_ff, "Feed-forward width");
  train_cmd->add_option("--dropout", ta.mcfg.dropout_rate, "Dropout rate");
  train_cmd->add_option("--max-positions", ta.mcfg.max_positions,
                        "Maximum sequence length");
  train_cmd->add_option("--batch-size", ta.tcfg.batch_size, "Batch size");
  train_cmd->add_option("--max-steps", ta.tcfg.max_steps,
                        "Absolute step budget");
  train_cmd->add_option("--eval-interval", ta.tcfg.eval_interval,
                        "Steps between validation passes");
  train_cmd->add_option("--patience", ta.tcfg.patience,
                        "Non-improving evaluations before early stop");
  train_cmd->add_option("--label-smoothing", ta.tcfg.label_smoothing,
                        "Label smoothing mass");
  train_cmd->add_option("--factor", ta.tcfg.schedule.factor,
                        "Learning-rate scale factor");
  train_cmd->add_option("--warmup", ta.tcfg.schedule.warmup_steps,
                        "Warmup steps");
  train_cmd->add_option("--constant-lr", ta.tcfg.schedule.constant_lr,
                        "Bypass the schedule with a constant rate");
  train_cmd->add_option("--seed", ta.tcfg.seed, "RNG seed");
  train_cmd->add_option("--threads", ta.tcfg.threads,
                        "Worker threads (0 = hardware)");
  train_cmd->add_option("--log-interval", ta.tcfg.log_interval,
                        "Steps between log rows");

  DecodeArgs da;
  auto* dec_cmd = app.add_subcommand("decode", "Decode a manifest");
  dec_cmd->add_option("--manifest", da.manifest, "Manifest to decode")
      ->required();
  dec_cmd->add_option("--lexicon", da.lexicon, "CMU-format lexicon");
  dec_cmd->add_option("--checkpoint", da.checkpoint, "Model checkpoint")
      ->required();
  dec_cmd->add_option("--out", da.out, "Output decodes JSONL")->required();
  dec_cmd->add_option("--mode", da.mode, "constrained | free")
      ->check(CLI::IsMember({"constrained", "free"}));
  dec_cmd->add_option("--beam", da.beam, "Beam width (1 = greedy)");
  dec_cmd->add_option("--stress-classes", da.stress_classes,
                      "Stress variants per vowel (2 or 3)");
  dec_cmd->add_option("--max-len", da.max_len, "Free-mode length cap");
  dec_cmd->add_option("--threads", da.threads, "Worker threads");

  EvaluateArgs ea;
  auto* eval_cmd =
      app.add_subcommand("evaluate", "Score decodes against references");
  eval_cmd->add_option("--decodes", ea.decodes, "Decodes JSONL")->required();
  eval_cmd->add_option("--manifest", ea.manifest, "Reference manifest")
      ->required();
  eval_cmd->add_option("--policy", ea.policy,
                       "three-class | collapse-2-to-0 | collapse-2-to-1");
  eval_cmd->add_option("--out-dir", ea.out_dir, "Report directory");
  eval_cmd->add_option("--dataset-label", ea.dataset_label,
                       "Dataset column in the report table");
  eval_cmd->add_option("--method-label", ea.method_label,
                       "Method column in the report table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(sa, synth_cmd);
    if (feat_cmd->parsed()) return run_featurize(fa, feat_cmd);
    if (train_cmd->parsed()) return run_train(ta, train_cmd);
    if (dec_cmd->parsed()) return run_decode(da, dec_cmd);
    if (eval_cmd->parsed()) return run_evaluate(ea, eval_cmd);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ComputeError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
