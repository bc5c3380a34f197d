#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spe/cloze.hpp"
#include "spe/losses.hpp"
#include "spe/sampling.hpp"

namespace spe {

enum class SamplerKind { kBatchNce, kResampling };

const char* sampler_kind_name(SamplerKind k);
SamplerKind sampler_kind_from(const std::string& name);

struct TrainConfig {
  int64_t batch_size = 16;
  int64_t nu = 15;
  int64_t epochs = 50;
  double lr = 1e-4;
  uint64_t seed = 0;
  SamplerKind sampler = SamplerKind::kBatchNce;
  int64_t checkpoint_interval = 5;
  bool detach_noise = false;  // stop gradients through the p_n ~ p_m branch

  // Under batch NCE the noise count is pinned to B - 1.
  void validate() const;
};

struct EpochLog {
  int64_t epoch = 0;
  // terms that were not computed (zero weight) are NaN and logged as null
  double mean_lw = std::numeric_limits<double>::quiet_NaN();
  double mean_ls = std::numeric_limits<double>::quiet_NaN();
  double mean_lc = std::numeric_limits<double>::quiet_NaN();
  double mean_l = 0;
  double validation_mean_l = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0;
};

std::string epoch_log_json(const EpochLog& log);

struct CheckpointMeta {
  LmConfig arch;
  int64_t epoch = 0;
  std::string softmax_mode;
  std::string vocab_hash;
  std::string config_hash;
  double validation_metric = std::numeric_limits<double>::quiet_NaN();
};

// Checkpoint layout: <stem>.json manifest + <stem>.bin tensor blob.
void save_checkpoint(const std::filesystem::path& stem, const LmParams& params, const CheckpointMeta& meta);
LmParams load_checkpoint(const std::filesystem::path& stem, CheckpointMeta* meta_out = nullptr);

struct PretrainOptions {
  int64_t epochs = 30;
  int64_t batch_size = 20;
  double lr = 1e-4;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 0;  // 0 = no checkpoints
  std::filesystem::path checkpoint_dir;
  std::string vocab_hash;
  std::string config_hash;
};

struct TrainOutput {
  std::vector<EpochLog> logs;
  std::vector<std::filesystem::path> checkpoint_stems;
  std::vector<int64_t> checkpoint_epochs;
};

// Word-level CE pretraining over individual sentences (zero initial state).
// Mean loss per batch, Adam with batch-normalized clipping.
TrainOutput pretrain(LmParams& params, const std::vector<std::vector<int64_t>>& sentences,
                     const std::vector<std::vector<int64_t>>& validation_sentences,
                     const PretrainOptions& opts);

struct NceTrainOptions {
  TrainConfig config;
  LossWeights weights;
  std::filesystem::path checkpoint_dir;
  std::string vocab_hash;
  std::string config_hash;
  BiLmParams* bilm = nullptr;  // required for the resampling sampler
  // optional per-epoch validation loss (mean combined L on these pairs)
  const std::vector<SentencePair>* validation_pairs = nullptr;
};

// Sentence-level NCE training over adjacent-sentence pairs. When beta and
// gamma are both zero the sentence-level path is skipped entirely, which
// makes the run reproduce plain word-CE training batch for batch.
TrainOutput train_nce(LmParams& params, const std::vector<SentencePair>& pairs,
                      const NceTrainOptions& opts);

struct SelectionResult {
  int64_t best_index = -1;  // into the checkpoint list
  int64_t best_epoch = -1;
  double best_validation_accuracy = 0;
  double holdout_accuracy = 0;
  std::vector<double> validation_accuracies;  // per checkpoint
};

// Grades every checkpoint on the validation questions, picks the best
// (earliest epoch on ties) and reports its holdout accuracy. Score dumps for
// every checkpoint land in dump_dir when provided (validation-<epoch>.jsonl,
// holdout-<epoch>.jsonl for the winner).
SelectionResult select_checkpoint(const std::vector<std::filesystem::path>& checkpoint_stems,
                                  const std::vector<ClozeQuestion>& validation_questions,
                                  const std::vector<ClozeQuestion>& holdout_questions, int criterion,
                                  const Vocabulary& vocab, CorpusKind kind,
                                  const std::filesystem::path& dump_dir = {});

}  // namespace spe
