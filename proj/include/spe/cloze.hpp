#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spe/corpus.hpp"
#include "spe/sampling.hpp"
#include "spe/scoring.hpp"

namespace spe {

enum class CorpusKind { kText, kAbc };

const char* corpus_kind_name(CorpusKind k);
CorpusKind corpus_kind_from(const std::string& name);

// Questions are stored as text so that external human-authored sets share one
// schema. ABC sentences are split on whitespace verbatim; natural-language
// text goes through the rule-based tokenizer.
std::vector<int64_t> encode_sentence(const Vocabulary& vocab, CorpusKind kind, const std::string& text);
std::string sentence_text(const Vocabulary& vocab, const std::vector<int64_t>& ids);

struct ClozeQuestion {
  std::string context;
  std::vector<std::string> choices;
  int64_t answer = 0;
  std::string provenance;  // batch-neg | resampled | external
};

enum class DistractorMode { kBatchNeg, kResampled };

struct GenerateOptions {
  int64_t k = 8;                 // choices per question
  DistractorMode mode = DistractorMode::kBatchNeg;
  int64_t questions_per_pair = 1;
  int64_t max_redraws = 10;      // per distractor slot
};

struct GenerateResult {
  std::vector<ClozeQuestion> questions;
  int64_t dropped = 0;  // questions discarded after redraw exhaustion
};

// One question per evaluation pair (times questions_per_pair): context = a,
// the true b at a uniformly random position, k-1 distinct distractors drawn
// from the other pairs' b sentences (batch-neg) or resampled from the pair's
// own b (resampled; needs the frozen bilm).
GenerateResult generate_questions(const std::vector<SentencePair>& pairs, const Vocabulary& vocab,
                                  const GenerateOptions& opts, BiLmParams* bilm, Rng& rng);

struct QuestionResult {
  int64_t selected = -1;
  bool correct = false;
  std::vector<ScorePair> scores;  // per choice
};

struct EvalReport {
  int criterion = 0;
  int64_t total = 0;
  int64_t correct = 0;
  double accuracy = 0;  // correct / total, exactly
  std::vector<QuestionResult> details;
};

// Sequential grading with any scorer (tests plug in stubs here).
EvalReport grade(const std::vector<ClozeQuestion>& questions, SentenceScorer& scorer, int criterion,
                 const Vocabulary& vocab, CorpusKind kind);

// Parallel grading over a frozen LM; one scorer per thread, deterministic
// output. Threads come from SPE_THREADS when positive, else the hardware.
EvalReport grade_with_lm(const std::vector<ClozeQuestion>& questions, LmParams& params, int criterion,
                         const Vocabulary& vocab, CorpusKind kind, int threads = 0);

// Grades both criteria from one scoring pass and returns {criterion1, criterion2}.
std::pair<EvalReport, EvalReport> grade_both_with_lm(const std::vector<ClozeQuestion>& questions,
                                                     LmParams& params, const Vocabulary& vocab,
                                                     CorpusKind kind, int threads = 0);

int eval_threads(int requested);  // SPE_THREADS / hardware fallback

// JSONL schema: one object per line with context (string), choices (array of
// strings), answer (integer); optional provenance. A malformed line is
// rejected with its line number.
std::vector<ClozeQuestion> load_external_questions(const std::filesystem::path& path);
void save_questions(const std::filesystem::path& path, const std::vector<ClozeQuestion>& questions);

// Score dumps: one JSONL record per (question, choice) with both log-probs.
void write_score_dump(const std::filesystem::path& path, const std::vector<ClozeQuestion>& questions,
                      const std::vector<QuestionResult>& details);

// Re-grades persisted dumps; used to audit checkpoint selection.
EvalReport grade_from_dump(const std::filesystem::path& dump_path,
                           const std::vector<ClozeQuestion>& questions, int criterion);

nlohmann::json report_to_json(const EvalReport& report);

}  // namespace spe
