#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spe/corpus.hpp"
#include "spe/lm.hpp"

namespace spe {

// Batch NCE: for each pair, the other pairs' second sentences are the noise
// sentences, in ascending batch order skipping the pair itself (nu = B - 1).
// Duplicate sentences inside a batch are intentionally not filtered.
std::vector<std::vector<const std::vector<int64_t>*>> batch_negatives(
    const std::vector<const SentencePair*>& batch);

struct MaskedSentence {
  std::vector<int64_t> tokens;     // <MASK> written over the masked positions
  std::vector<int64_t> positions;  // ascending
  std::vector<int64_t> originals;  // original ids at those positions
};

// Masks each position independently with probability `rate`. A draw that
// masks nothing is bumped to one uniformly random forced mask, so a sentence
// never survives as its own noise sample.
MaskedSentence mask_tokens(const std::vector<int64_t>& sentence, double rate, Rng& rng);

struct BiLmConfig {
  int64_t vocab_size = 0;
  int64_t embedding_dim = 200;
  int64_t hidden_dim = 600;
  int64_t num_layers = 2;
  double dropout = 0.5;
  double mask_rate = 0.15;

  nlohmann::json to_json() const;
  static BiLmConfig from_json(const nlohmann::json& j);
  bool operator==(const BiLmConfig&) const = default;
};

// Bidirectional masked LM used only to resample noise sentences. A single
// embedding array serves the forward inputs, the backward inputs and the
// output logits (triple-tied). Prediction at position i combines the forward
// state over tokens < i with the backward state over tokens > i.
class BiLmParams {
 public:
  BiLmParams(BiLmConfig cfg, Rng& rng);

  BiLmConfig config;
  Parameter embedding;  // [V x d_emb], shared by all three roles
  std::vector<LstmLayer> fwd_layers;
  std::vector<LstmLayer> bwd_layers;
  Parameter comb_fwd;  // [H x d_emb]
  Parameter comb_bwd;  // [H x d_emb]
  Parameter comb_b;    // [d_emb]

  std::vector<Parameter*> all_params();
  std::vector<const Parameter*> all_params() const;
};

// Per-position next-token log-distributions for same-length rows of token
// ids: out[t] is [R x V] for position t. Exposed for training, resampling
// and the tying tests.
std::vector<Var> bilm_position_logprobs(Tape& tape, BiLmParams& bilm,
                                        const std::vector<const std::vector<int64_t>*>& rows,
                                        bool train, Rng& rng);

// Masked-reconstruction CE: mean over all masked positions in the batch;
// unmasked positions contribute nothing.
Var bilm_masked_ce_loss(Tape& tape, BiLmParams& bilm, const std::vector<const MaskedSentence*>& batch,
                        bool train, Rng& rng);

struct BiLmTrainOptions {
  int64_t epochs = 50;
  int64_t batch_size = 20;
  double lr = 1e-4;
  uint64_t seed = 0;
};

struct BiLmEpochLog {
  int64_t epoch;
  double mean_masked_ce;
};

// Optimizes masked reconstruction over the corpus; masks are redrawn each
// epoch. The returned model is meant to be frozen afterwards.
std::vector<BiLmEpochLog> train_bilm(BiLmParams& bilm, const std::vector<std::vector<int64_t>>& sentences,
                                     const BiLmTrainOptions& opts);

// Fills the masked positions by sampling from the model's predicted
// distributions; unmasked positions pass through. Special tokens never enter
// the sample space. Each masked position is sampled independently from the
// single prediction pass.
std::vector<int64_t> resample(const MaskedSentence& masked, BiLmParams& bilm, Rng& rng);

struct ResampledNegatives {
  std::vector<std::vector<std::vector<int64_t>>> negatives;  // per pair, nu sentences
  std::vector<std::vector<int64_t>> attempts;                // draw attempts per negative
  int64_t kept_identical = 0;  // negatives equal to their source after the retry cap
};

inline constexpr int kResampleRetryCap = 10;

// nu independent mask+resample transformations of each pair's own b. A
// resample identical to the original is redrawn up to the retry cap, then
// kept and counted.
ResampledNegatives make_negatives_by_resampling(const std::vector<const SentencePair*>& batch,
                                                BiLmParams& bilm, int64_t nu, Rng& rng);

}  // namespace spe
