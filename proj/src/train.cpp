#include "spe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spe/adam.hpp"
#include "spe/serialize.hpp"

namespace spe {

const char* sampler_kind_name(SamplerKind k) {
  return k == SamplerKind::kBatchNce ? "batch-nce" : "resampling";
}

SamplerKind sampler_kind_from(const std::string& name) {
  if (name == "batch-nce") return SamplerKind::kBatchNce;
  if (name == "resampling") return SamplerKind::kResampling;
  throw DataError("unknown sampler: " + name);
}

void TrainConfig::validate() const {
  check(batch_size >= 1, "train config: batch_size must be positive");
  check(epochs >= 0, "train config: epochs must be non-negative");
  check(checkpoint_interval >= 0, "train config: checkpoint_interval must be non-negative");
  if (sampler == SamplerKind::kBatchNce) {
    check(batch_size >= 2, "train config: batch NCE needs batch_size >= 2");
    check(nu == batch_size - 1, "train config: batch NCE requires nu = batch_size - 1, got nu = " +
                                    std::to_string(nu) + " with batch_size = " + std::to_string(batch_size));
  } else {
    check(nu >= 1, "train config: nu must be positive");
  }
}

namespace {

double or_null_sentinel(double v) { return v; }

nlohmann::json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::string epoch_log_json(const EpochLog& log) {
  nlohmann::json j{{"epoch", log.epoch},
                   {"mean_lw", number_or_null(log.mean_lw)},
                   {"mean_ls", number_or_null(log.mean_ls)},
                   {"mean_lc", number_or_null(log.mean_lc)},
                   {"mean_l", or_null_sentinel(log.mean_l)},
                   {"validation_mean_l", number_or_null(log.validation_mean_l)},
                   {"wall_seconds", log.wall_seconds}};
  return j.dump();
}

void save_checkpoint(const std::filesystem::path& stem, const LmParams& params, const CheckpointMeta& meta) {
  nlohmann::json extra{{"kind", "lm-checkpoint"},
                       {"arch", meta.arch.to_json()},
                       {"epoch", meta.epoch},
                       {"softmax_mode", softmax_mode_name(meta.arch.softmax)},
                       {"vocab_hash", meta.vocab_hash},
                       {"config_hash", meta.config_hash},
                       {"validation_metric", number_or_null(meta.validation_metric)}};
  save_named_tensors(stem, params.all_params(), extra);
}

LmParams load_checkpoint(const std::filesystem::path& stem, CheckpointMeta* meta_out) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(stem.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint manifest " + stem.string() + ".json: " + e.what());
  }
  check_data(manifest.value("kind", "") == "lm-checkpoint", "not an lm checkpoint: " + stem.string());
  LmConfig cfg = LmConfig::from_json(manifest.at("arch"));
  Rng rng(0);
  LmParams params(cfg, rng);
  load_named_tensors(stem, params.all_params());
  if (meta_out) {
    meta_out->arch = cfg;
    meta_out->epoch = manifest.value("epoch", int64_t{0});
    meta_out->softmax_mode = manifest.value("softmax_mode", "");
    meta_out->vocab_hash = manifest.value("vocab_hash", "");
    meta_out->config_hash = manifest.value("config_hash", "");
    meta_out->validation_metric = manifest.at("validation_metric").is_null()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : manifest.at("validation_metric").get<double>();
  }
  return params;
}

namespace {

std::vector<int64_t> epoch_order(size_t n, const Rng& base, int64_t epoch) {
  std::vector<int64_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int64_t>(i);
  Rng rng = base.derive("epoch-order", static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

// One word-CE update over a batch of sentences; shared by pretraining and by
// NCE training with the sentence-level path disabled.
double word_ce_step(LmParams& params, Adam& adam, const std::vector<const std::vector<int64_t>*>& batch,
                    Rng& dropout_rng) {
  Tape tape;
  Var loss = build_word_ce_batch_loss(tape, params, batch, true, dropout_rng);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("training loss is not finite");
  GradMap grads = tape.backward(loss);
  clip_by_batch_norm(grads, static_cast<int64_t>(batch.size()));
  adam.step(grads);
  return value;
}

double eval_word_ce(LmParams& params, const std::vector<std::vector<int64_t>>& sentences) {
  if (sentences.empty()) return std::numeric_limits<double>::quiet_NaN();
  Tape tape;
  Rng unused(0);
  std::vector<const std::vector<int64_t>*> ptrs;
  ptrs.reserve(sentences.size());
  for (const auto& s : sentences) ptrs.push_back(&s);
  return build_word_ce_batch_loss(tape, params, ptrs, false, unused).value().item();
}

}  // namespace

TrainOutput pretrain(LmParams& params, const std::vector<std::vector<int64_t>>& sentences,
                     const std::vector<std::vector<int64_t>>& validation_sentences,
                     const PretrainOptions& opts) {
  check_data(!sentences.empty(), "pretrain: empty corpus");
  for (const auto& s : sentences) check_data(!s.empty(), "pretrain: empty sentence in corpus");
  check(opts.epochs >= 0 && opts.batch_size >= 1, "pretrain: bad options");

  Adam adam(AdamConfig{opts.lr, 0.9, 0.999, 1e-8});
  Rng base(opts.seed);
  TrainOutput out;

  for (int64_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto start_time = std::chrono::steady_clock::now();
    const auto order = epoch_order(sentences.size(), base, epoch);

    double loss_sum = 0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      std::vector<const std::vector<int64_t>*> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(&sentences[static_cast<size_t>(order[i])]);
      Rng drop_rng = base.derive("dropout", static_cast<uint64_t>(epoch) * 1000003u + static_cast<uint64_t>(batches));
      loss_sum += word_ce_step(params, adam, batch, drop_rng);
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_lw = loss_sum / static_cast<double>(std::max<int64_t>(1, batches));
    log.mean_l = log.mean_lw;
    log.validation_mean_l = eval_word_ce(params, validation_sentences);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    out.logs.push_back(log);

    if (opts.checkpoint_interval > 0 && epoch % opts.checkpoint_interval == 0) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt-%05lld", static_cast<long long>(epoch));
      const auto stem = opts.checkpoint_dir / name;
      CheckpointMeta meta{params.config, epoch, softmax_mode_name(params.config.softmax),
                          opts.vocab_hash, opts.config_hash, log.validation_mean_l};
      save_checkpoint(stem, params, meta);
      out.checkpoint_stems.push_back(stem);
      out.checkpoint_epochs.push_back(epoch);
    }
  }
  return out;
}

TrainOutput train_nce(LmParams& params, const std::vector<SentencePair>& pairs,
                      const NceTrainOptions& opts) {
  const TrainConfig& cfg = opts.config;
  cfg.validate();
  opts.weights.validate();
  check_data(!pairs.empty(), "train_nce: empty pair set");
  for (const auto& p : pairs) {
    check_data(!p.a.empty() && !p.b.empty(), "train_nce: pair with an empty sentence");
  }
  const bool nce_path = opts.weights.beta > 0 || opts.weights.gamma > 0;
  if (nce_path && cfg.sampler == SamplerKind::kResampling) {
    check(opts.bilm != nullptr, "train_nce: resampling sampler needs a trained bilm");
  }

  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng base(cfg.seed);
  TrainOutput out;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start_time = std::chrono::steady_clock::now();
    const auto order = epoch_order(pairs.size(), base, epoch);

    double sum_l = 0, sum_lw = 0, sum_ls = 0, sum_lc = 0;
    int64_t batches = 0, with_lw = 0, with_ls = 0, with_lc = 0;

    // Full batches only: batch NCE defines nu = B - 1 against a full batch.
    for (size_t start = 0; start + static_cast<size_t>(cfg.batch_size) <= order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const SentencePair*> batch;
      batch.reserve(static_cast<size_t>(cfg.batch_size));
      for (size_t i = start; i < start + static_cast<size_t>(cfg.batch_size); ++i) {
        batch.push_back(&pairs[static_cast<size_t>(order[i])]);
      }

      Rng drop_rng = base.derive("dropout", static_cast<uint64_t>(epoch) * 1000003u + static_cast<uint64_t>(batches));

      if (!nce_path) {
        // Word-CE only: same batches, same updates as plain pretraining on
        // the b sentences (exactly, when alpha = 1).
        std::vector<const std::vector<int64_t>*> b_sentences;
        b_sentences.reserve(batch.size());
        for (const auto* p : batch) b_sentences.push_back(&p->b);
        Tape tape;
        Var lw = build_word_ce_batch_loss(tape, params, b_sentences, true, drop_rng);
        Var loss = opts.weights.alpha == 1.0 ? lw : tape.scale(lw, opts.weights.alpha);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("training loss is not finite");
        GradMap grads = tape.backward(loss);
        clip_by_batch_norm(grads, cfg.batch_size);
        adam.step(grads);
        sum_l += value;
        sum_lw += lw.value().item();
        ++with_lw;
        ++batches;
        continue;
      }

      std::vector<std::vector<const std::vector<int64_t>*>> negatives;
      ResampledNegatives resampled;  // keeps resampled sentences alive for the step
      if (cfg.sampler == SamplerKind::kBatchNce) {
        negatives = batch_negatives(batch);
      } else {
        Rng sample_rng =
            base.derive("resample", static_cast<uint64_t>(epoch) * 1000003u + static_cast<uint64_t>(batches));
        resampled = make_negatives_by_resampling(batch, *opts.bilm, cfg.nu, sample_rng);
        negatives.resize(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
          for (const auto& neg : resampled.negatives[i]) negatives[i].push_back(&neg);
        }
      }

      Tape tape;
      auto graph = build_pair_batch_loss(tape, params, batch, negatives, opts.weights, cfg.nu,
                                         cfg.detach_noise, true, drop_rng);
      const double value = graph.loss.value().item();
      if (!std::isfinite(value)) throw NumericError("training loss is not finite");
      GradMap grads = tape.backward(graph.loss);
      clip_by_batch_norm(grads, cfg.batch_size);
      adam.step(grads);

      sum_l += value;
      if (graph.loss_w.valid()) {
        sum_lw += graph.loss_w.value().item();
        ++with_lw;
      }
      if (graph.loss_s.valid()) {
        sum_ls += graph.loss_s.value().item();
        ++with_ls;
      }
      if (graph.loss_c.valid()) {
        sum_lc += graph.loss_c.value().item();
        ++with_lc;
      }
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_l = sum_l / static_cast<double>(std::max<int64_t>(1, batches));
    if (with_lw) log.mean_lw = sum_lw / static_cast<double>(with_lw);
    if (with_ls) log.mean_ls = sum_ls / static_cast<double>(with_ls);
    if (with_lc) log.mean_lc = sum_lc / static_cast<double>(with_lc);
    if (opts.validation_pairs && !opts.validation_pairs->empty()) {
      std::vector<std::vector<int64_t>> val_b;
      val_b.reserve(opts.validation_pairs->size());
      for (const auto& p : *opts.validation_pairs) val_b.push_back(p.b);
      log.validation_mean_l = eval_word_ce(params, val_b);
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    out.logs.push_back(log);

    if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt-%05lld", static_cast<long long>(epoch));
      const auto stem = opts.checkpoint_dir / name;
      CheckpointMeta meta{params.config, epoch, softmax_mode_name(params.config.softmax),
                          opts.vocab_hash, opts.config_hash, log.validation_mean_l};
      save_checkpoint(stem, params, meta);
      out.checkpoint_stems.push_back(stem);
      out.checkpoint_epochs.push_back(epoch);
    }
  }
  return out;
}

SelectionResult select_checkpoint(const std::vector<std::filesystem::path>& checkpoint_stems,
                                  const std::vector<ClozeQuestion>& validation_questions,
                                  const std::vector<ClozeQuestion>& holdout_questions, int criterion,
                                  const Vocabulary& vocab, CorpusKind kind,
                                  const std::filesystem::path& dump_dir) {
  check_data(!checkpoint_stems.empty(), "select_checkpoint: no checkpoints");
  check_data(!validation_questions.empty(), "select_checkpoint: empty validation question set");
  check_data(!holdout_questions.empty(), "select_checkpoint: empty holdout question set");

  // ascending epoch order so that accuracy ties resolve to the earliest epoch
  std::vector<std::filesystem::path> stems = checkpoint_stems;
  std::vector<int64_t> epochs(stems.size());
  for (size_t i = 0; i < stems.size(); ++i) {
    epochs[i] = nlohmann::json::parse(read_file(stems[i].string() + ".json")).value("epoch", int64_t{0});
  }
  std::vector<size_t> by_epoch(stems.size());
  for (size_t i = 0; i < stems.size(); ++i) by_epoch[i] = i;
  std::sort(by_epoch.begin(), by_epoch.end(), [&](size_t a, size_t b) { return epochs[a] < epochs[b]; });
  {
    std::vector<std::filesystem::path> sorted;
    sorted.reserve(stems.size());
    for (size_t i : by_epoch) sorted.push_back(stems[i]);
    stems = std::move(sorted);
  }

  SelectionResult result;
  std::vector<CheckpointMeta> metas(stems.size());
  for (size_t i = 0; i < stems.size(); ++i) {
    LmParams params = load_checkpoint(stems[i], &metas[i]);
    EvalReport report = grade_with_lm(validation_questions, params, criterion, vocab, kind);
    result.validation_accuracies.push_back(report.accuracy);
    if (!dump_dir.empty()) {
      std::filesystem::create_directories(dump_dir);
      write_score_dump(dump_dir / ("validation-" + std::to_string(metas[i].epoch) + ".jsonl"),
                       validation_questions, report.details);
    }
    if (result.best_index < 0 || report.accuracy > result.best_validation_accuracy) {
      // strict improvement only: ties keep the earliest epoch
      result.best_index = static_cast<int64_t>(i);
      result.best_epoch = metas[i].epoch;
      result.best_validation_accuracy = report.accuracy;
    }
  }

  LmParams best = load_checkpoint(stems[static_cast<size_t>(result.best_index)]);
  EvalReport holdout = grade_with_lm(holdout_questions, best, criterion, vocab, kind);
  result.holdout_accuracy = holdout.accuracy;
  if (!dump_dir.empty()) {
    write_score_dump(dump_dir / ("holdout-" + std::to_string(result.best_epoch) + ".jsonl"),
                     holdout_questions, holdout.details);
  }
  return result;
}

}  // namespace spe
