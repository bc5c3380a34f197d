#include "spe/toygen.hpp"

#include <algorithm>
#include <array>

namespace spe {

namespace {

constexpr std::array<const char*, 14> kLetters = {"C", "D", "E", "F", "G", "A", "B",
                                                  "c", "d", "e", "f", "g", "a", "b"};
constexpr std::array<const char*, 4> kDurations = {"", "2", "3", "/"};

// duration distributions per rhythm style (cumulative)
constexpr std::array<double, 4> kStyle0 = {0.70, 0.85, 0.90, 1.00};
constexpr std::array<double, 4> kStyle1 = {0.25, 0.70, 0.90, 1.00};

size_t pick_duration(const std::array<double, 4>& cdf, Rng& rng) {
  const double u = rng.uniform01();
  for (size_t i = 0; i < cdf.size(); ++i) {
    if (u < cdf[i]) return i;
  }
  return cdf.size() - 1;
}

struct Note {
  int64_t letter;    // index into kLetters
  size_t duration;   // index into kDurations
};

std::string token_of(const Note& n) {
  return std::string(kLetters[static_cast<size_t>(n.letter)]) + kDurations[n.duration];
}

}  // namespace

std::vector<std::string> generate_toy_abc(const ToyGenConfig& cfg) {
  check(cfg.keys >= 1 && cfg.keys <= 14, "toygen: keys must be in [1, 14]");
  check(cfg.tunes >= 1 && cfg.sentences_per_tune >= 1 && cfg.bars_per_sentence >= 1 &&
            cfg.notes_per_bar >= 1,
        "toygen: bad sizes");
  Rng rng(cfg.seed);

  // skewed key popularity: weight 1 / (k + 1)
  std::vector<double> key_cdf(static_cast<size_t>(cfg.keys));
  {
    double total = 0;
    for (int64_t k = 0; k < cfg.keys; ++k) total += 1.0 / static_cast<double>(k + 1);
    double acc = 0;
    for (int64_t k = 0; k < cfg.keys; ++k) {
      acc += 1.0 / static_cast<double>(k + 1) / total;
      key_cdf[static_cast<size_t>(k)] = acc;
    }
  }

  const int64_t notes_per_sentence = cfg.bars_per_sentence * cfg.notes_per_bar;

  std::vector<std::string> lines;
  lines.reserve(static_cast<size_t>(cfg.tunes));
  for (int64_t tune = 0; tune < cfg.tunes; ++tune) {
    Rng trng = rng.derive("tune", static_cast<uint64_t>(tune));

    int64_t key = cfg.keys - 1;
    {
      const double u = trng.uniform01();
      for (int64_t k = 0; k < cfg.keys; ++k) {
        if (u < key_cdf[static_cast<size_t>(k)]) {
          key = k;
          break;
        }
      }
    }
    // seven-letter scale: a window into the letter circle, two steps per key
    auto scale_letter = [&](int64_t degree) {
      return (2 * key + degree) % static_cast<int64_t>(kLetters.size());
    };
    int64_t style = key < cfg.keys / 2 ? 0 : 1;
    if (trng.bernoulli(cfg.style_flip_rate)) style = 1 - style;
    const auto& dur_cdf = style == 0 ? kStyle0 : kStyle1;

    auto random_note = [&]() {
      Note n;
      if (trng.bernoulli(cfg.out_of_scale_rate)) {
        n.letter = static_cast<int64_t>(trng.uniform_int(kLetters.size()));
      } else {
        n.letter = scale_letter(static_cast<int64_t>(trng.uniform_int(7)));
      }
      n.duration = pick_duration(dur_cdf, trng);
      return n;
    };

    // The tune's motif covers half a segment and is stated twice per
    // segment, so phrase repetition is visible inside every sentence and
    // the repeat distance across a sentence boundary matches the one the
    // model sees within sentences.
    const int64_t motif_len = std::max<int64_t>(1, notes_per_sentence / 2);
    std::vector<Note> motif(static_cast<size_t>(motif_len));
    for (auto& n : motif) n = random_note();
    motif[0].letter = scale_letter(0);  // phrases anchor on the tonic

    std::string line = "K:" + std::to_string(key);
    for (int64_t sent = 0; sent < cfg.sentences_per_tune; ++sent) {
      int64_t slot = 0;
      for (int64_t bar = 0; bar < cfg.bars_per_sentence; ++bar) {
        for (int64_t n = 0; n < cfg.notes_per_bar; ++n, ++slot) {
          Note note = motif[static_cast<size_t>(slot % motif_len)];
          if (trng.bernoulli(cfg.variation_rate)) note = random_note();
          line += " ";
          line += token_of(note);
        }
        line += " |";
      }
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace spe
