#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spe/rng.hpp"

namespace spe {

// Synthetic ABC-style corpus. Each tune carries a latent key, a rhythm style
// and a melodic motif; every four-bar segment restates the motif with random
// variation, the way folk tunes repeat phrases. Consecutive segments of one
// tune therefore share most of their material while segments of different
// tunes rarely do. Key frequencies are skewed and durations depend on the
// style, so unconditional segment probabilities vary a lot between tunes.
// Bars hold a fixed number of notes: every segment has the same token
// layout, which keeps candidate rankings about content rather than length.
struct ToyGenConfig {
  int64_t tunes = 1250;
  int64_t sentences_per_tune = 5;
  int64_t bars_per_sentence = 4;
  int64_t notes_per_bar = 2;
  int64_t keys = 8;
  uint64_t seed = 7;

  double variation_rate = 0.35;    // chance a motif slot is resampled in a segment
  double out_of_scale_rate = 0.1;  // chance a resampled note ignores the key
  double style_flip_rate = 0.15;   // chance a tune uses the other duration style
};

// One line per tune, tokens space-separated, bars marked by `|`.
std::vector<std::string> generate_toy_abc(const ToyGenConfig& cfg);

}  // namespace spe
