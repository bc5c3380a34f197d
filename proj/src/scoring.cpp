#include "spe/scoring.hpp"

namespace spe {

double criterion_score(const ScorePair& s, int criterion) {
  switch (criterion) {
    case kCriterionCond: return s.log_cond;
    case kCriterionCondMinusUncond: return s.log_cond - s.log_uncond;
    default: throw UsageError("criterion must be 1 or 2");
  }
}

std::vector<ScorePair> SentenceScorer::score_choices(const std::vector<int64_t>& a,
                                                     const std::vector<std::vector<int64_t>>& choices) {
  std::vector<ScorePair> out;
  out.reserve(choices.size());
  for (const auto& b : choices) out.push_back(score(a, b));
  return out;
}

ScorePair LmScorer::score(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  auto scores = score_choices(a, {b});
  return scores[0];
}

std::vector<ScorePair> LmScorer::score_choices(const std::vector<int64_t>& a,
                                               const std::vector<std::vector<int64_t>>& choices) {
  check(!choices.empty(), "score_choices: no choices");
  for (const auto& b : choices) check(!b.empty(), "score_choices: empty candidate sentence");

  Tape tape;
  Rng rng(0);  // eval mode, no dropout

  std::vector<CondRef> combos;
  combos.reserve(choices.size());
  std::vector<const std::vector<int64_t>*> uncond;
  uncond.reserve(choices.size());
  for (const auto& b : choices) {
    combos.push_back({0, &b});
    uncond.push_back(&b);
  }

  std::vector<const std::vector<int64_t>*> ctx{&a};
  auto batch = encode_contexts(tape, params_, ctx, false, rng);
  Var cond = conditional_logprobs(tape, params_, batch, combos, false, rng);
  Var un = unconditional_logprobs(tape, params_, uncond, false, rng);

  std::vector<ScorePair> out(choices.size());
  for (size_t i = 0; i < choices.size(); ++i) {
    out[i] = {cond.value()[static_cast<int64_t>(i)], un.value()[static_cast<int64_t>(i)]};
  }
  return out;
}

double log_prob(LmParams& params, const std::vector<int64_t>& b, const std::vector<int64_t>* context) {
  check(!b.empty(), "log_prob: empty sentence");
  Tape tape;
  Rng rng(0);
  if (context) {
    std::vector<const std::vector<int64_t>*> ctx{context};
    auto batch = encode_contexts(tape, params, ctx, false, rng);
    Var cond = conditional_logprobs(tape, params, batch, {{0, &b}}, false, rng);
    return cond.value()[0];
  }
  Var un = unconditional_logprobs(tape, params, {&b}, false, rng);
  return un.value()[0];
}

double score_candidate(SentenceScorer& scorer, const std::vector<int64_t>& a,
                       const std::vector<int64_t>& b, int criterion) {
  return criterion_score(scorer.score(a, b), criterion);
}

int64_t argmax_lowest(const std::vector<double>& scores) {
  check(!scores.empty(), "argmax over empty score list");
  int64_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
  }
  return best;
}

int64_t answer_question(SentenceScorer& scorer, const std::vector<int64_t>& context,
                        const std::vector<std::vector<int64_t>>& choices, int criterion) {
  check(choices.size() >= 2, "answer_question: at least two choices required");
  auto pairs = scorer.score_choices(context, choices);
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) scores.push_back(criterion_score(p, criterion));
  return argmax_lowest(scores);
}

}  // namespace spe
