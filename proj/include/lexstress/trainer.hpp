#pragma once

// Teacher-forced training with Adam, warmup/inverse-sqrt schedule, label
// smoothing and early stopping on validation loss.
//
// Batch items run forward/backward in parallel on separate graphs against
// shared frozen parameters; per-item gradients are reduced in item order,
// so checkpoints are byte-identical for a given seed regardless of thread
// count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lexstress/dataset.hpp"
#include "lexstress/graph.hpp"
#include "lexstress/model.hpp"
#include "lexstress/optim.hpp"
#include "lexstress/util.hpp"

namespace lexstress::train {

struct TrainConfig {
  AdamConfig adam;
  LrSchedule schedule;
  double label_smoothing = 0.1;
  int max_steps = 5000;
  int batch_size = 16;
  int eval_interval = 200;
  int patience = 5;
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  int log_interval = 50;

  void validate() const {
    adam.validate();
    schedule.validate();
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
      throw InputError("label_smoothing must be in [0,1)");
    if (max_steps < 1 || batch_size < 1 || eval_interval < 1 ||
        log_interval < 1)
      throw InputError("max_steps/batch_size/intervals must be >= 1");
    if (patience < 0) throw InputError("patience must be >= 0");
  }
};

// Scalar loss node for one padded item: encoder with key-padding mask,
// decoder over the gold prefix, label-smoothed NLL normalized by the
// batch-wide token count (so item losses sum to the batch loss).
template <class Real>
int build_item_loss(nn::Graph<Real>& g,
                    const model::ParamMap<Real>& params,
                    const model::ModelConfig& cfg,
                    const nn::Tensor<Real>& feats, int frame_len,
                    std::span<const int> dec_input,
                    std::span<const int> dec_target, Real smoothing,
                    Real normalizer, const model::ForwardOptions& opts) {
  const int t_max = feats.dim(0);
  const int l_max = static_cast<int>(dec_input.size());
  std::optional<nn::Tensor<Real>> enc_mask, cross_mask;
  if (frame_len < t_max) {
    enc_mask = model::key_padding_mask<Real>(t_max, t_max, frame_len);
    cross_mask = model::key_padding_mask<Real>(l_max, t_max, frame_len);
  }
  const int memory =
      model::build_encoder(g, params, cfg, g.input(feats), opts,
                           enc_mask ? &*enc_mask : nullptr);
  const int logits =
      model::build_decoder(g, params, cfg, memory, dec_input, opts,
                           cross_mask ? &*cross_mask : nullptr);
  return g.smoothed_nll(g.log_softmax(logits),
                        std::vector<int>(dec_target.begin(), dec_target.end()),
                        smoothing, lex::Vocabulary::kPad, normalizer);
}

// Batch loss (and, when grads_out is set, summed gradients). Dropout masks
// derive from (seed, step, item), never from thread placement.
inline double batch_loss(const model::ModelParameters& mp, const Batch& batch,
                         double smoothing, double normalizer, bool train_mode,
                         uint64_t seed, int64_t step, int threads,
                         model::ParamMap<float>* grads_out) {
  const int n = batch.size();
  std::vector<double> losses(n, 0.0);
  std::vector<model::ParamMap<float>> grads(grads_out ? n : 0);

  parallel_for(n, threads, [&](int i) {
    Rng rng(mix64(seed, static_cast<uint64_t>(step),
                  static_cast<uint64_t>(i) + 0x5eedull));
    model::ForwardOptions opts;
    opts.train = train_mode;
    opts.rng = &rng;
    nn::Graph<float> g;
    try {
      const int loss = build_item_loss<float>(
          g, mp.tensors, mp.config, batch.feats[i], batch.frame_len[i],
          batch.dec_inputs[i], batch.dec_targets[i],
          static_cast<float>(smoothing), static_cast<float>(normalizer),
          opts);
      losses[i] = g.value(loss).v[0];
      if (grads_out) {
        g.backward(loss);
        grads[i] = g.trainable_grads();
      }
    } catch (const ComputeError& e) {
      throw ComputeError(cat("utterance ", batch.ids[i], ": ", e.what()));
    }
  });

  if (grads_out) {
    *grads_out = std::move(grads[0]);
    for (int i = 1; i < n; ++i)
      for (auto& [name, acc] : *grads_out) {
        const auto& g = grads[i].at(name);
        for (int64_t k = 0; k < acc.size(); ++k) acc.v[k] += g.v[k];
      }
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total;
}

// Mean per-token smoothed loss over a split, eval mode.
inline double split_loss(const model::ModelParameters& mp,
                         std::span<const Utterance> utts, double smoothing,
                         int batch_size, int threads) {
  double normalizer = 0.0;
  for (const auto& u : utts)
    normalizer += static_cast<double>(u.targets.size()) + 1.0;
  double total = 0.0;
  for (const auto& bucket : make_buckets(utts, batch_size)) {
    const Batch b = assemble_batch(utts, bucket);
    total += batch_loss(mp, b, smoothing, normalizer, false, 0, 0, threads,
                        nullptr);
  }
  return total;
}

struct TrainResult {
  model::ModelParameters best;  // best-validation parameters
  AdamState<float> opt;         // optimizer state at the final step
  model::ModelParameters last;  // final-step parameters (resume point)
  double best_val = std::numeric_limits<double>::infinity();
  double final_val = std::numeric_limits<double>::infinity();
  int64_t steps_run = 0;
  int evaluations = 0;
  bool early_stopped = false;
};

// Optimizes from scratch or from `resume`; `max_steps` is the absolute
// step budget, so resuming continues the counter where it left off.
inline TrainResult fit(std::span<const ManifestEntry> train_entries,
                         std::span<const ManifestEntry> val_entries,
                         const lex::Lexicon* lexicon,
                         const model::ModelConfig& mcfg,
                         const TrainConfig& tcfg,
                         std::ostream* log_csv = nullptr,
                         const model::ModelParameters* resume = nullptr,
                         const AdamState<float>* resume_opt = nullptr) {
  mcfg.validate();
  tcfg.validate();
  if (train_entries.empty()) throw InputError("training split is empty");
  if (val_entries.empty()) throw InputError("validation split is empty");

  // all targets validated (and OOV words rejected) before step 1
  auto train_utts = load_utterances(train_entries, lexicon, tcfg.threads);
  auto val_utts = load_utterances(val_entries, lexicon, tcfg.threads);

  model::ModelParameters mp;
  AdamState<float> opt;
  if (resume) {
    if (!(resume->config == mcfg))
      throw InputError("resume checkpoint config does not match model config");
    mp = *resume;
    opt = resume_opt ? *resume_opt
                     : AdamState<float>::zeros_like(mp.tensors);
  } else {
    mp = model::init_parameters(mcfg, tcfg.seed);
    std::vector<dsp::FeatureSequence> train_feats;
    train_feats.reserve(train_utts.size());
    for (const auto& u : train_utts) train_feats.push_back(u.feats);
    mp.stats = dsp::compute_stats(train_feats);
    opt = AdamState<float>::zeros_like(mp.tensors);
  }
  for (auto& u : train_utts) u.feats = dsp::normalize(u.feats, mp.stats);
  for (auto& u : val_utts) u.feats = dsp::normalize(u.feats, mp.stats);

  const auto buckets = make_buckets(train_utts, tcfg.batch_size);

  TrainResult res;
  res.best = mp;
  int no_improve = 0;
  int64_t step = mp.step;
  if (log_csv) *log_csv << "step,lr,train_loss,val_loss\n";

  auto evaluate = [&]() {
    const double val = split_loss(mp, val_utts, tcfg.label_smoothing,
                                  tcfg.batch_size, tcfg.threads);
    if (!std::isfinite(val))
      throw ComputeError(cat("non-finite validation loss at step ", step));
    ++res.evaluations;
    res.final_val = val;
    if (val < res.best_val) {
      res.best_val = val;
      res.best = mp;
      res.best.step = step;
      no_improve = 0;
    } else {
      ++no_improve;
    }
    return val;
  };

  std::vector<size_t> order(buckets.size());
  size_t cursor = 0;
  int64_t epoch = -1;

  while (step < tcfg.max_steps) {
    if (cursor == 0) {
      ++epoch;
      std::iota(order.begin(), order.end(), size_t{0});
      Rng shuffle_rng(mix64(tcfg.seed, 0xba7c4ull,
                            static_cast<uint64_t>(epoch)));
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1],
                  order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);
    }
    const auto& bucket = buckets[order[cursor]];
    cursor = (cursor + 1) % order.size();

    ++step;
    const Batch batch = assemble_batch(train_utts, bucket);
    const double lr = tcfg.schedule.at(step, mcfg.d_model);
    model::ParamMap<float> grads;
    double loss;
    try {
      loss = batch_loss(mp, batch, tcfg.label_smoothing,
                        batch.total_target_tokens(), true, tcfg.seed, step,
                        tcfg.threads, &grads);
    } catch (const ComputeError& e) {
      throw ComputeError(cat("training aborted at step ", step, ": ",
                             e.what()));
    }
    if (!std::isfinite(loss))
      throw ComputeError(cat("non-finite training loss at step ", step));
    adam_step(mp.tensors, grads, opt, step, lr, tcfg.adam);
    mp.step = step;

    const bool eval_now =
        step % tcfg.eval_interval == 0 || step == tcfg.max_steps;
    double val = std::numeric_limits<double>::quiet_NaN();
    if (eval_now) val = evaluate();

    if (log_csv && (eval_now || step % tcfg.log_interval == 0)) {
      *log_csv << step << "," << lr << "," << loss << ",";
      if (eval_now) *log_csv << val;
      *log_csv << "\n";
    }

    if (eval_now && no_improve > tcfg.patience) {
      res.early_stopped = true;
      break;
    }
  }

  if (res.evaluations == 0) evaluate();
  res.steps_run = step;
  res.opt = opt;
  res.last = mp;
  return res;
}

}  // namespace lexstress::train
