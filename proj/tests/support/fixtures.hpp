#pragma once

#include <cmath>
#include <vector>

#include "spe/lm.hpp"
#include "spe/scoring.hpp"

namespace spe::test {

inline spe::LmConfig small_config(int64_t vocab, int64_t emb = 6, int64_t hidden = 8,
                                  spe::SoftmaxMode mode = spe::SoftmaxMode::kRelaxed) {
  spe::LmConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embedding_dim = emb;
  cfg.hidden_dim = hidden;
  cfg.num_layers = 2;
  cfg.softmax = mode;
  cfg.dropout = 0.5;
  return cfg;
}

inline spe::LmParams make_lm(const spe::LmConfig& cfg, uint64_t seed) {
  spe::Rng rng(seed);
  return spe::LmParams(cfg, rng);
}

// All weights and biases exactly zero: every prediction is uniform and the
// recurrent state never moves, so context cannot influence anything.
inline spe::LmParams zero_lm(const spe::LmConfig& cfg) {
  spe::Rng rng(0);
  spe::LmParams params(cfg, rng);
  for (spe::Parameter* p : params.all_params()) p->value.fill(0.0);
  return params;
}

// Scorer backed by a fixed table of (log_cond, log_uncond) per candidate key.
class TableScorer : public spe::SentenceScorer {
 public:
  using Key = std::vector<int64_t>;

  void set(const Key& b, double log_cond, double log_uncond) {
    keys_.push_back(b);
    scores_.push_back({log_cond, log_uncond});
  }

  spe::ScorePair score(const std::vector<int64_t>&, const std::vector<int64_t>& b) override {
    for (size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i] == b) return scores_[i];
    }
    throw std::runtime_error("TableScorer: unknown candidate");
  }

 private:
  std::vector<Key> keys_;
  std::vector<spe::ScorePair> scores_;
};

}  // namespace spe::test
