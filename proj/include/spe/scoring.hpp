#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spe/lm.hpp"

namespace spe {

struct ScorePair {
  double log_cond;    // log p_m(b | a)
  double log_uncond;  // log p_m(b)
};

// Answer-selection scores from sentence probability estimates. Criterion 1
// is log p(b|a) itself; criterion 2 subtracts the unconditional log p(b).
inline constexpr int kCriterionCond = 1;
inline constexpr int kCriterionCondMinusUncond = 2;

double criterion_score(const ScorePair& s, int criterion);

// Anything that can score a candidate continuation given a context. The LM
// is the production implementation; tests plug in table and stub scorers.
class SentenceScorer {
 public:
  virtual ~SentenceScorer() = default;

  virtual ScorePair score(const std::vector<int64_t>& a, const std::vector<int64_t>& b) = 0;

  // All choices share one context; the default implementation just loops.
  virtual std::vector<ScorePair> score_choices(const std::vector<int64_t>& a,
                                               const std::vector<std::vector<int64_t>>& choices);
};

class LmScorer : public SentenceScorer {
 public:
  explicit LmScorer(LmParams& params) : params_(params) {}

  ScorePair score(const std::vector<int64_t>& a, const std::vector<int64_t>& b) override;
  std::vector<ScorePair> score_choices(const std::vector<int64_t>& a,
                                       const std::vector<std::vector<int64_t>>& choices) override;

 private:
  LmParams& params_;
};

// log p(b | context) when a context is given, log p(b) otherwise; the sum of
// per-step log conditionals of b's tokens plus <EOS>.
double log_prob(LmParams& params, const std::vector<int64_t>& b,
                const std::vector<int64_t>* context = nullptr);

double score_candidate(SentenceScorer& scorer, const std::vector<int64_t>& a,
                       const std::vector<int64_t>& b, int criterion);

// Argmax with ties broken by lowest index.
int64_t argmax_lowest(const std::vector<double>& scores);

int64_t answer_question(SentenceScorer& scorer, const std::vector<int64_t>& context,
                        const std::vector<std::vector<int64_t>>& choices, int criterion);

}  // namespace spe
