#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "lexstress/checkpoint.hpp"
#include "lexstress/dataset.hpp"
#include "lexstress/decoding.hpp"
#include "lexstress/optim.hpp"
#include "lexstress/trainer.hpp"
#include "lexstress/util.hpp"
#include "test_util.hpp"

using namespace lexstress;
namespace m = lexstress::model;
using namespace lexstress::train;

// ---------------------------------------------------------------- optimizer

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
  std::map<std::string, nn::Tensor<double>> params, grads;
  params["w"] = nn::Tensor<double>({2, 2}, {1.0, -2.0, 3.0, 4.0});
  grads["w"] = nn::Tensor<double>({2, 2});
  auto state = AdamState<double>::zeros_like(params);
  const auto before = params.at("w").v;
  adam_step(params, grads, state, 1, 0.1, {});
  adam_step(params, grads, state, 2, 0.1, {});
  REQUIRE(params.at("w").v == before);
}

TEST_CASE("two hand-computed Adam steps match within 1e-12") {
  // scalar parameter 1.0, gradient 0.5 both steps, lr 0.1,
  // beta1 0.9, beta2 0.997, eps 1e-9:
  //   step 1: m=0.05   v=0.00075    mhat=0.5 vhat=0.25
  //           theta = 1.0 - 0.1*0.5/(0.5+1e-9)   = 0.9000000002
  //   step 2: m=0.095  v=0.00149775 mhat=0.5 vhat=0.25
  //           theta = 0.9000000002 - 0.0999999998 = 0.8000000004
  std::map<std::string, nn::Tensor<double>> params, grads;
  params["w"] = nn::Tensor<double>({1}, {1.0});
  grads["w"] = nn::Tensor<double>({1}, {0.5});
  auto state = AdamState<double>::zeros_like(params);
  AdamConfig cfg;  // defaults: 0.9 / 0.997 / 1e-9

  adam_step(params, grads, state, 1, 0.1, cfg);
  REQUIRE(params.at("w").v[0] == Catch::Approx(0.9000000002).margin(1e-12));
  REQUIRE(state.m.at("w").v[0] == Catch::Approx(0.05).margin(1e-15));
  REQUIRE(state.v.at("w").v[0] == Catch::Approx(0.00075).margin(1e-15));

  adam_step(params, grads, state, 2, 0.1, cfg);
  REQUIRE(params.at("w").v[0] == Catch::Approx(0.8000000004).margin(1e-12));
  REQUIRE(state.m.at("w").v[0] == Catch::Approx(0.095).margin(1e-15));
  REQUIRE(state.v.at("w").v[0] == Catch::Approx(0.00149775).margin(1e-15));
}

TEST_CASE("adam rejects shape mismatches") {
  std::map<std::string, nn::Tensor<double>> params, grads;
  params["w"] = nn::Tensor<double>({2, 2});
  grads["w"] = nn::Tensor<double>({2, 3});
  auto state = AdamState<double>::zeros_like(params);
  REQUIRE_THROWS_AS(adam_step(params, grads, state, 1, 0.1, {}), ComputeError);
}

TEST_CASE("schedule follows factor * d^-0.5 * min(s^-0.5, s w^-1.5)") {
  LrSchedule sched;  // 0.15 / 4000
  const int d = 64;
  auto expect = [&](int64_t s) {
    return 0.15 * std::pow(64.0, -0.5) *
           std::min(std::pow(static_cast<double>(s), -0.5),
                    s * std::pow(4000.0, -1.5));
  };
  for (int64_t s : {1, 100, 2000, 4000, 4001, 30000})
    REQUIRE(sched.at(s, d) == Catch::Approx(expect(s)).epsilon(1e-12));
  // peak exactly at warmup
  REQUIRE(sched.at(4000, d) > sched.at(3999, d));
  REQUIRE(sched.at(4000, d) > sched.at(4001, d));

  LrSchedule constant;
  constant.constant_lr = 0.01;
  REQUIRE(constant.at(1, d) == 0.01);
  REQUIRE(constant.at(100000, d) == 0.01);
}

TEST_CASE("one adam step with lr 0 changes nothing") {
  std::map<std::string, nn::Tensor<double>> params, grads;
  params["w"] = nn::Tensor<double>({3}, {0.5, -0.25, 2.0});
  grads["w"] = nn::Tensor<double>({3}, {1.0, 2.0, -1.0});
  auto state = AdamState<double>::zeros_like(params);
  const auto before = params.at("w").v;
  adam_step(params, grads, state, 1, 0.0, {});
  for (int i = 0; i < 3; ++i)
    REQUIRE(params.at("w").v[i] == Catch::Approx(before[i]).margin(1e-15));
}

// ---------------------------------------------------------------- dataset

static dsp::FeatureSequence const_feats(int frames, float fill) {
  dsp::FeatureSequence fs;
  fs.frames = frames;
  fs.values.assign(static_cast<size_t>(frames) * dsp::kFeatureDim, fill);
  return fs;
}

TEST_CASE("manifest round-trip and defaults") {
  auto dir = testutil::scratch_dir("manifest");
  {
    std::ofstream f((dir / "m.jsonl").string());
    f << R"({"features": "u0.feat", "transcript": "CAT", "phones": "K AE1 T"})"
      << "\n";
    f << R"({"audio": "/abs/u1.wav", "transcript": "THE CAT", "id": "utt1"})"
      << "\n";
  }
  auto entries = read_manifest((dir / "m.jsonl").string());
  REQUIRE(entries.size() == 2);
  // relative paths resolve against the manifest directory
  REQUIRE(entries[0].features == (dir / "u0.feat").string());
  REQUIRE(entries[0].id == "u0.feat");
  REQUIRE(entries[1].audio == "/abs/u1.wav");
  REQUIRE(entries[1].id == "utt1");

  REQUIRE_THROWS_AS(read_manifest((dir / "missing.jsonl").string()),
                    InputError);

  {
    std::ofstream f((dir / "bad.jsonl").string());
    f << "{\"transcript\": \"no source\"}\n";
  }
  REQUIRE_THROWS_AS(read_manifest((dir / "bad.jsonl").string()), InputError);
}

TEST_CASE("reference tokens come from phones else lexicon") {
  std::istringstream dict("CAT  K AE1 T\nDOG  D AO1 G\n");
  auto lexicon = lex::parse_dictionary(dict);

  ManifestEntry with_phones;
  with_phones.id = "a";
  with_phones.features = "x";
  with_phones.transcript = "CAT";
  with_phones.phones = "K AE2 T";
  REQUIRE(reference_tokens(with_phones, &lexicon) ==
          lex::parse_token_sequence("K AE2 T"));

  ManifestEntry from_lex;
  from_lex.id = "b";
  from_lex.features = "x";
  from_lex.transcript = "dog cat";
  REQUIRE(reference_tokens(from_lex, &lexicon) ==
          lex::parse_token_sequence("D AO1 G K AE1 T"));

  ManifestEntry oov;
  oov.id = "c";
  oov.features = "x";
  oov.transcript = "BIRD";
  REQUIRE_THROWS_AS(reference_tokens(oov, &lexicon), InputError);
}

TEST_CASE("batch assembly pads and masks consistently") {
  std::vector<Utterance> utts(2);
  utts[0].id = "a";
  utts[0].feats = const_feats(5, 1.0f);
  utts[0].targets = {10, 30, 40};
  utts[1].id = "b";
  utts[1].feats = const_feats(8, 2.0f);
  utts[1].targets = {12, 33};

  std::vector<int> idx = {0, 1};
  auto b = assemble_batch(utts, idx);
  REQUIRE(b.size() == 2);
  REQUIRE(b.feats[0].shape == nn::Shape{8, dsp::kFeatureDim});
  REQUIRE(b.frame_len == std::vector<int>{5, 8});
  REQUIRE(b.dec_inputs[0] ==
          std::vector<int>{1, 10, 30, 40});  // <sos> + y, l_max+1 = 4
  REQUIRE(b.dec_targets[0] == std::vector<int>{10, 30, 40, 2});  // y + <eos>
  REQUIRE(b.dec_inputs[1] == std::vector<int>{1, 12, 33, 0});
  REQUIRE(b.dec_targets[1] == std::vector<int>{12, 33, 2, 0});
  REQUIRE(b.target_len == std::vector<int>{4, 3});
  REQUIRE(b.total_target_tokens() == 7);
  // padded feature rows are zero
  REQUIRE(b.feats[0].at(6, 0) == 0.0f);
}

TEST_CASE("buckets sort by frame length") {
  std::vector<Utterance> utts(5);
  const int lens[] = {30, 10, 50, 20, 40};
  for (int i = 0; i < 5; ++i) {
    utts[i].feats = const_feats(lens[i], 0.0f);
    utts[i].targets = {10};
  }
  auto buckets = make_buckets(utts, 2);
  REQUIRE(buckets.size() == 3);
  REQUIRE(buckets[0] == std::vector<int>{1, 3});
  REQUIRE(buckets[1] == std::vector<int>{0, 4});
  REQUIRE(buckets[2] == std::vector<int>{2});
}

// ---------------------------------------------------------------- training

static std::vector<Utterance> toy_utterances(int n, Rng& rng) {
  std::vector<Utterance> utts(n);
  for (int i = 0; i < n; ++i) {
    utts[i].id = cat("toy", i);
    const int frames = 6 + rng.uniform_int(0, 6);
    utts[i].feats.frames = frames;
    utts[i].feats.values.resize(static_cast<size_t>(frames) *
                                dsp::kFeatureDim);
    for (auto& v : utts[i].feats.values)
      v = static_cast<float>(rng.normal(0.0, 1.0));
    const int len = 2 + rng.uniform_int(0, 3);
    for (int k = 0; k < len; ++k)
      utts[i].targets.push_back(3 + rng.uniform_int(0, 68));
  }
  return utts;
}

static m::ModelConfig toy_model() {
  m::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.d_ff = 32;
  cfg.max_positions = 64;
  return cfg;
}

TEST_CASE("loss is invariant to extra padding") {
  Rng rng(55);
  auto utts = toy_utterances(3, rng);
  auto mp = m::init_parameters(toy_model(), 2);

  std::vector<int> idx = {0, 1, 2};
  auto plain = assemble_batch(utts, idx);
  auto padded = assemble_batch(utts, idx, 7, 3);
  const double norm = plain.total_target_tokens();
  REQUIRE(padded.total_target_tokens() == plain.total_target_tokens());

  const double a =
      batch_loss(mp, plain, 0.1, norm, false, 0, 0, 1, nullptr);
  const double b =
      batch_loss(mp, padded, 0.1, norm, false, 0, 0, 1, nullptr);
  REQUIRE(b == Catch::Approx(a).margin(1e-6));
}

TEST_CASE("batch gradients are identical across thread counts") {
  Rng rng(66);
  auto utts = toy_utterances(4, rng);
  auto mp = m::init_parameters(toy_model(), 3);
  std::vector<int> idx = {0, 1, 2, 3};
  auto batch = assemble_batch(utts, idx);
  const double norm = batch.total_target_tokens();

  m::ParamMap<float> g1, g2;
  const double l1 = batch_loss(mp, batch, 0.1, norm, true, 9, 5, 1, &g1);
  const double l2 = batch_loss(mp, batch, 0.1, norm, true, 9, 5, 2, &g2);
  REQUIRE(l1 == l2);
  REQUIRE(g1 == g2);
}

// Writes feature dumps + manifest so train() can consume them.
static std::vector<ManifestEntry> dump_split(
    const std::filesystem::path& dir, const std::string& name,
    std::span<const Utterance> utts) {
  std::vector<ManifestEntry> entries;
  for (size_t i = 0; i < utts.size(); ++i) {
    ManifestEntry e;
    e.id = cat(name, "_", i);
    e.features = (dir / (e.id + ".feat")).string();
    dsp::write_feature_file(e.features, utts[i].feats);
    std::string phones;
    for (size_t k = 0; k < utts[i].targets.size(); ++k) {
      if (k) phones += ' ';
      phones += lex::Vocabulary::text_of(utts[i].targets[k]);
    }
    e.phones = phones;
    e.transcript = "UNUSED";
    entries.push_back(std::move(e));
  }
  return entries;
}

TEST_CASE("single-utterance overfit drives the loss down 10x") {
  auto dir = testutil::scratch_dir("overfit");
  Rng rng(77);
  auto utts = toy_utterances(1, rng);
  auto entries = dump_split(dir, "t", utts);

  TrainConfig tcfg;
  tcfg.max_steps = 800;
  tcfg.batch_size = 1;
  tcfg.eval_interval = 100;
  tcfg.patience = 1000;  // effectively off
  tcfg.label_smoothing = 0.0;
  tcfg.schedule.factor = 1.0;
  tcfg.schedule.warmup_steps = 100;
  tcfg.seed = 4;
  tcfg.threads = 1;
  tcfg.log_interval = 100000;

  std::ostringstream log;
  auto res = fit(entries, entries, nullptr, toy_model(), tcfg, &log);

  // initial loss ~ log(72); memorizing one pair must cut it 10x
  const auto mp0 = m::init_parameters(toy_model(), tcfg.seed);
  std::vector<Utterance> norm_utts = utts;
  auto stats_src = std::vector<dsp::FeatureSequence>{utts[0].feats};
  auto stats = dsp::compute_stats(stats_src);
  norm_utts[0].feats = dsp::normalize(utts[0].feats, stats);
  const double initial =
      split_loss(mp0, norm_utts, 0.0, 1, 1);
  const double final_loss =
      split_loss(res.best, norm_utts, 0.0, 1, 1);
  INFO("initial " << initial << " final " << final_loss);
  REQUIRE(final_loss < 0.1 * initial);

  // the memorized model reproduces its training target in free decoding
  const auto memory = m::encode(norm_utts[0].feats, res.best);
  const auto step = decoding::make_transformer_step(memory, res.best);
  const auto free_run = decoding::unconstrained_greedy(
      step, static_cast<int>(utts[0].targets.size()) + 4);
  REQUIRE(free_run == utts[0].targets);
}

TEST_CASE("early stopping halts patience+1 evaluations after the best") {
  auto dir = testutil::scratch_dir("earlystop");
  Rng rng(88);
  auto utts = toy_utterances(2, rng);
  auto entries = dump_split(dir, "t", utts);

  TrainConfig tcfg;
  tcfg.max_steps = 100000;  // never reached
  tcfg.batch_size = 2;
  tcfg.eval_interval = 5;
  tcfg.patience = 2;
  tcfg.seed = 9;
  tcfg.threads = 1;
  tcfg.schedule.factor = 0.0;  // lr 0: validation loss exactly flat
  std::ostringstream log;
  auto res = fit(entries, entries, nullptr, toy_model(), tcfg, &log);

  // eval 1 improves over +inf (the best); evals 2..4 are flat, and the
  // patience+1'th non-improvement stops the run
  REQUIRE(res.early_stopped);
  REQUIRE(res.evaluations == 1 + tcfg.patience + 1);
  REQUIRE(res.steps_run == static_cast<int64_t>(res.evaluations) *
                               tcfg.eval_interval);

  SECTION("patience 0 stops at the first non-improving evaluation") {
    tcfg.patience = 0;
    auto res0 = fit(entries, entries, nullptr, toy_model(), tcfg, nullptr);
    REQUIRE(res0.early_stopped);
    REQUIRE(res0.evaluations == 2);
  }
}

TEST_CASE("training is deterministic given seed and data") {
  auto dir = testutil::scratch_dir("determinism");
  Rng rng(99);
  auto utts = toy_utterances(4, rng);
  auto entries = dump_split(dir, "t", utts);

  TrainConfig tcfg;
  tcfg.max_steps = 12;
  tcfg.batch_size = 2;
  tcfg.eval_interval = 6;
  tcfg.seed = 3;
  tcfg.threads = 2;

  auto a = fit(entries, entries, nullptr, toy_model(), tcfg);
  auto b = fit(entries, entries, nullptr, toy_model(), tcfg);
  REQUIRE(a.best.tensors == b.best.tensors);
  REQUIRE(a.best_val == b.best_val);

  const auto p1 = (dir / "a.ckpt").string();
  const auto p2 = (dir / "b.ckpt").string();
  m::save_checkpoint(a.best, p1);
  m::save_checkpoint(b.best, p2);
  REQUIRE(testutil::slurp(p1) == testutil::slurp(p2));
}

TEST_CASE("best-validation checkpoint is never worse than the final one") {
  auto dir = testutil::scratch_dir("bestval");
  Rng rng(111);
  auto utts = toy_utterances(6, rng);
  auto entries = dump_split(dir, "t", utts);

  TrainConfig tcfg;
  tcfg.max_steps = 60;
  tcfg.batch_size = 3;
  tcfg.eval_interval = 10;
  tcfg.patience = 1000;
  tcfg.seed = 12;
  tcfg.threads = 2;
  auto res = fit(entries, entries, nullptr, toy_model(), tcfg);
  REQUIRE(res.best_val <= res.final_val + 1e-12);
}

TEST_CASE("empty splits and OOV transcripts fail before step 1") {
  auto dir = testutil::scratch_dir("trainerr");
  Rng rng(13);
  auto utts = toy_utterances(1, rng);
  auto entries = dump_split(dir, "t", utts);

  REQUIRE_THROWS_AS(
      fit({}, entries, nullptr, toy_model(), TrainConfig{}),
      InputError);
  REQUIRE_THROWS_AS(
      fit(entries, {}, nullptr, toy_model(), TrainConfig{}),
      InputError);

  // transcript word missing from the lexicon
  std::istringstream dict("CAT  K AE1 T\n");
  auto lexicon = lex::parse_dictionary(dict);
  auto bad = entries;
  bad[0].phones.clear();
  bad[0].transcript = "NOTAWORD";
  REQUIRE_THROWS_MATCHES(
      fit(bad, bad, &lexicon, toy_model(), TrainConfig{}), InputError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("NOTAWORD")));
}

TEST_CASE("resume continues the step counter") {
  auto dir = testutil::scratch_dir("resume");
  Rng rng(14);
  auto utts = toy_utterances(2, rng);
  auto entries = dump_split(dir, "t", utts);

  TrainConfig tcfg;
  tcfg.max_steps = 10;
  tcfg.batch_size = 2;
  tcfg.eval_interval = 5;
  tcfg.patience = 1000;
  tcfg.seed = 7;
  tcfg.threads = 1;
  auto first = fit(entries, entries, nullptr, toy_model(), tcfg);
  REQUIRE(first.last.step == 10);

  tcfg.max_steps = 16;
  auto second = fit(entries, entries, nullptr, toy_model(), tcfg, nullptr,
                      &first.last, &first.opt);
  REQUIRE(second.last.step == 16);
  REQUIRE(second.steps_run == 16);
}
