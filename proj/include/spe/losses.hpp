#pragma once

#include <cstdint>
#include <vector>

#include "spe/corpus.hpp"
#include "spe/lm.hpp"

namespace spe {

struct LossWeights {
  double alpha = 0;  // word-level CE
  double beta = 0;   // sentence-level NCE
  double gamma = 0;  // sentence-level classification CE

  void validate() const;
};

// Posterior probability that b is the true next sentence of a, given nu noise
// samples whose probability is approximated by the same model:
//     p_m(b|a) / (p_m(b|a) + nu * p_m(b))
// evaluated in log space, safe down to log-probabilities of -700 and below.
double nce_posterior(double log_pm_cond, double log_pm_uncond, int64_t nu);

// Formula layer over already-computed log-probabilities. Values are what the
// tape-level training loss computes; tests brute-force against these.
struct CandidateLogProbs {
  double log_cond;
  double log_uncond;
};

double sentence_nce_loss_value(const CandidateLogProbs& real,
                               const std::vector<CandidateLogProbs>& negatives, int64_t nu);
double sentence_ce_loss_value(double log_cond_real, const std::vector<double>& log_cond_negatives);
double combined_loss(double loss_w, double loss_s, double loss_c, const LossWeights& weights);

// Model-consuming loss operations (evaluation mode, values only).
double word_ce_loss(LmParams& params, const std::vector<int64_t>& b_real);
double sentence_nce_loss(LmParams& params, const std::vector<int64_t>& a,
                         const std::vector<int64_t>& b_real,
                         const std::vector<std::vector<int64_t>>& negatives);
double sentence_ce_loss(LmParams& params, const std::vector<int64_t>& a,
                        const std::vector<int64_t>& b_real,
                        const std::vector<std::vector<int64_t>>& negatives);

// --- tape-level batch loss ---------------------------------------------------

struct BatchLossGraph {
  Var loss;    // alpha * L_w + beta * L_s + gamma * L_c, each a batch mean
  Var loss_w;  // invalid Var when the term was not built (weight zero)
  Var loss_s;
  Var loss_c;
};

// Builds the combined loss for B real pairs with nu negatives each. Negative
// sentences live as pointers; batch NCE passes the other pairs' b sentences,
// so unconditional runs are deduplicated by address. Terms with zero weight
// are skipped entirely (no graph, no rng consumption).
BatchLossGraph build_pair_batch_loss(Tape& tape, LmParams& params,
                                     const std::vector<const SentencePair*>& pairs,
                                     const std::vector<std::vector<const std::vector<int64_t>*>>& negatives,
                                     const LossWeights& weights, int64_t nu, bool detach_noise,
                                     bool train, Rng& rng);

// Mean word-level CE over a batch of sentences; the pretraining objective.
Var build_word_ce_batch_loss(Tape& tape, LmParams& params,
                             const std::vector<const std::vector<int64_t>*>& sentences, bool train,
                             Rng& rng);

}  // namespace spe
