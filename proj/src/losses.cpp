#include "spe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace spe {

void LossWeights::validate() const {
  check(alpha >= 0 && beta >= 0 && gamma >= 0, "loss weights must be non-negative");
}

namespace {
double logsumexp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double softplus_stable(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}
}  // namespace

double nce_posterior(double log_pm_cond, double log_pm_uncond, int64_t nu) {
  check(nu >= 1, "nce_posterior: nu must be positive");
  check(std::isfinite(log_pm_cond) && std::isfinite(log_pm_uncond), "nce_posterior: non-finite input");
  const double noise = std::log(static_cast<double>(nu)) + log_pm_uncond;
  const double p = std::exp(log_pm_cond - logsumexp2(log_pm_cond, noise));
  // The exact value is strictly inside (0,1); keep it there when the gap
  // between the arguments exceeds double resolution.
  const double lo = std::numeric_limits<double>::denorm_min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return std::min(std::max(p, lo), hi);
}

double sentence_nce_loss_value(const CandidateLogProbs& real,
                               const std::vector<CandidateLogProbs>& negatives, int64_t nu) {
  check(static_cast<int64_t>(negatives.size()) == nu, "sentence_nce_loss: expected exactly nu negatives");
  const double log_nu = std::log(static_cast<double>(nu));
  // -log sigma(z) = softplus(-z) with z the log-odds of the posterior
  const double z_real = real.log_cond - real.log_uncond - log_nu;
  double loss = softplus_stable(-z_real);
  for (const auto& neg : negatives) {
    const double z = neg.log_cond - neg.log_uncond - log_nu;
    loss += softplus_stable(z);  // -log(1 - sigma(z))
  }
  return loss;
}

double sentence_ce_loss_value(double log_cond_real, const std::vector<double>& log_cond_negatives) {
  double mx = log_cond_real;
  for (double v : log_cond_negatives) mx = std::max(mx, v);
  double sum = std::exp(log_cond_real - mx);
  for (double v : log_cond_negatives) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  return lse - log_cond_real;
}

double combined_loss(double loss_w, double loss_s, double loss_c, const LossWeights& weights) {
  weights.validate();
  return weights.alpha * loss_w + weights.beta * loss_s + weights.gamma * loss_c;
}

namespace {

struct PairLogProbs {
  double real_cond;
  double real_uncond;
  std::vector<CandidateLogProbs> negs;
};

PairLogProbs eval_pair(LmParams& params, const std::vector<int64_t>& a, const std::vector<int64_t>& b_real,
                       const std::vector<std::vector<int64_t>>& negatives) {
  check(!b_real.empty(), "loss: empty real sentence");
  for (const auto& n : negatives) check(!n.empty(), "loss: empty negative sentence");
  Tape tape;
  Rng rng(0);  // eval mode, unused

  std::vector<const std::vector<int64_t>*> ctx{&a};
  auto batch = encode_contexts(tape, params, ctx, false, rng);

  std::vector<CondRef> combos;
  combos.push_back({0, &b_real});
  for (const auto& n : negatives) combos.push_back({0, &n});
  Var cond = conditional_logprobs(tape, params, batch, combos, false, rng);

  std::vector<const std::vector<int64_t>*> uncond_seqs{&b_real};
  for (const auto& n : negatives) uncond_seqs.push_back(&n);
  Var uncond = unconditional_logprobs(tape, params, uncond_seqs, false, rng);

  PairLogProbs out;
  out.real_cond = cond.value()[0];
  out.real_uncond = uncond.value()[0];
  for (size_t l = 0; l < negatives.size(); ++l) {
    out.negs.push_back({cond.value()[static_cast<int64_t>(l + 1)], uncond.value()[static_cast<int64_t>(l + 1)]});
  }
  return out;
}

}  // namespace

double word_ce_loss(LmParams& params, const std::vector<int64_t>& b_real) {
  check(!b_real.empty(), "word_ce_loss: empty sentence");
  Tape tape;
  Rng rng(0);
  Var lp = unconditional_logprobs(tape, params, {&b_real}, false, rng);
  return -lp.value()[0];
}

double sentence_nce_loss(LmParams& params, const std::vector<int64_t>& a,
                         const std::vector<int64_t>& b_real,
                         const std::vector<std::vector<int64_t>>& negatives) {
  check(!negatives.empty(), "sentence_nce_loss: at least one negative required");
  auto lp = eval_pair(params, a, b_real, negatives);
  return sentence_nce_loss_value({lp.real_cond, lp.real_uncond}, lp.negs,
                                 static_cast<int64_t>(negatives.size()));
}

double sentence_ce_loss(LmParams& params, const std::vector<int64_t>& a,
                        const std::vector<int64_t>& b_real,
                        const std::vector<std::vector<int64_t>>& negatives) {
  auto lp = eval_pair(params, a, b_real, negatives);
  std::vector<double> neg_conds;
  neg_conds.reserve(lp.negs.size());
  for (const auto& n : lp.negs) neg_conds.push_back(n.log_cond);
  return sentence_ce_loss_value(lp.real_cond, neg_conds);
}

BatchLossGraph build_pair_batch_loss(Tape& tape, LmParams& params,
                                     const std::vector<const SentencePair*>& pairs,
                                     const std::vector<std::vector<const std::vector<int64_t>*>>& negatives,
                                     const LossWeights& weights, int64_t nu, bool detach_noise,
                                     bool train, Rng& rng) {
  weights.validate();
  const int64_t batch = static_cast<int64_t>(pairs.size());
  check(batch >= 1, "build_pair_batch_loss: empty batch");
  check(negatives.size() == pairs.size(), "build_pair_batch_loss: negatives per pair mismatch");

  const bool need_cond = weights.beta > 0 || weights.gamma > 0;
  const bool need_uncond_neg = weights.beta > 0;
  const bool need_uncond_real = weights.alpha > 0 || weights.beta > 0;

  if (need_cond) {
    for (const auto& pair_negs : negatives) {
      check(static_cast<int64_t>(pair_negs.size()) == nu,
            "build_pair_batch_loss: sampler yielded wrong number of negatives");
    }
  }

  BatchLossGraph out;

  // Unconditional runs, deduplicated by sentence address.
  std::vector<const std::vector<int64_t>*> uncond_list;
  std::unordered_map<const std::vector<int64_t>*, int64_t> uncond_index;
  auto uncond_slot = [&](const std::vector<int64_t>* s) {
    auto [it, inserted] = uncond_index.try_emplace(s, static_cast<int64_t>(uncond_list.size()));
    if (inserted) uncond_list.push_back(s);
    return it->second;
  };

  std::vector<int64_t> real_uncond_slot(static_cast<size_t>(batch), -1);
  if (need_uncond_real) {
    for (int64_t i = 0; i < batch; ++i) real_uncond_slot[static_cast<size_t>(i)] = uncond_slot(&pairs[static_cast<size_t>(i)]->b);
  }

  // Combo layout: pair-major, the real b first, then its negatives in order.
  struct ComboInfo {
    int64_t pair;
    bool real;
    int64_t uncond;
  };
  std::vector<ComboInfo> combo_info;
  std::vector<CondRef> combos;
  if (need_cond) {
    for (int64_t i = 0; i < batch; ++i) {
      const auto* bp = &pairs[static_cast<size_t>(i)]->b;
      combos.push_back({i, bp});
      combo_info.push_back({i, true, need_uncond_neg ? uncond_slot(bp) : int64_t{-1}});
      for (const auto* neg : negatives[static_cast<size_t>(i)]) {
        combos.push_back({i, neg});
        combo_info.push_back({i, false, need_uncond_neg ? uncond_slot(neg) : int64_t{-1}});
      }
    }
  }

  // Graph build order is fixed: contexts, conditionals, unconditionals.
  Var cond;
  if (need_cond) {
    std::vector<const std::vector<int64_t>*> ctx;
    ctx.reserve(static_cast<size_t>(batch));
    for (const auto* p : pairs) ctx.push_back(&p->a);
    auto ctx_batch = encode_contexts(tape, params, ctx, train, rng);
    cond = conditional_logprobs(tape, params, ctx_batch, combos, train, rng);
  }

  Var uncond;
  if (!uncond_list.empty()) {
    uncond = unconditional_logprobs(tape, params, uncond_list, train, rng);
  }

  if (weights.alpha > 0) {
    std::vector<int64_t> idx(real_uncond_slot.begin(), real_uncond_slot.end());
    Var real_lp = tape.gather_vec(uncond, idx);
    out.loss_w = tape.neg(tape.mean(real_lp));
  }

  if (weights.beta > 0) {
    Var noise_lp = uncond;
    if (detach_noise) noise_lp = tape.detach(uncond);
    std::vector<int64_t> uncond_of_combo;
    uncond_of_combo.reserve(combo_info.size());
    for (const auto& ci : combo_info) uncond_of_combo.push_back(ci.uncond);
    Var lu = tape.gather_vec(noise_lp, uncond_of_combo);
    // z = log-odds of the NCE posterior
    Var z = tape.add_const(tape.sub(cond, lu), -std::log(static_cast<double>(nu)));
    Var sp_pos = tape.softplus(z);        // -log(1 - posterior)
    Var sp_neg = tape.softplus(tape.neg(z));  // -log posterior
    Tensor real_mask({static_cast<int64_t>(combo_info.size())});
    Tensor neg_mask({static_cast<int64_t>(combo_info.size())});
    for (size_t i = 0; i < combo_info.size(); ++i) {
      real_mask[static_cast<int64_t>(i)] = combo_info[i].real ? 1.0 : 0.0;
      neg_mask[static_cast<int64_t>(i)] = combo_info[i].real ? 0.0 : 1.0;
    }
    Var terms = tape.add(tape.mul(sp_neg, tape.input(std::move(real_mask))),
                         tape.mul(sp_pos, tape.input(std::move(neg_mask))));
    std::vector<int64_t> seg;
    seg.reserve(combo_info.size());
    for (const auto& ci : combo_info) seg.push_back(ci.pair);
    out.loss_s = tape.mean(tape.segment_sum(terms, std::move(seg), batch));
  }

  if (weights.gamma > 0) {
    std::vector<int64_t> seg;
    std::vector<int64_t> real_combo_idx(static_cast<size_t>(batch), -1);
    seg.reserve(combo_info.size());
    for (size_t i = 0; i < combo_info.size(); ++i) {
      seg.push_back(combo_info[i].pair);
      if (combo_info[i].real) real_combo_idx[static_cast<size_t>(combo_info[i].pair)] = static_cast<int64_t>(i);
    }
    Var lse = tape.logsumexp_segments(cond, std::move(seg), batch);
    Var real_cond = tape.gather_vec(cond, real_combo_idx);
    out.loss_c = tape.mean(tape.sub(lse, real_cond));
  }

  Var total;
  auto add_term = [&](const Var& term, double w) {
    if (!term.valid() || w == 0) return;
    Var scaled = tape.scale(term, w);
    total = total.valid() ? tape.add(total, scaled) : scaled;
  };
  add_term(out.loss_w, weights.alpha);
  add_term(out.loss_s, weights.beta);
  add_term(out.loss_c, weights.gamma);
  if (!total.valid()) total = tape.scalar(0.0);  // all-zero weights
  out.loss = total;
  return out;
}

Var build_word_ce_batch_loss(Tape& tape, LmParams& params,
                             const std::vector<const std::vector<int64_t>*>& sentences, bool train,
                             Rng& rng) {
  Var lp = unconditional_logprobs(tape, params, sentences, train, rng);
  return tape.neg(tape.mean(lp));
}

}  // namespace spe
