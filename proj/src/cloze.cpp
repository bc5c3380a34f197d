#include "spe/cloze.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <omp.h>

#include <nlohmann/json.hpp>

#include "spe/serialize.hpp"

namespace spe {

const char* corpus_kind_name(CorpusKind k) { return k == CorpusKind::kText ? "text" : "abc"; }

CorpusKind corpus_kind_from(const std::string& name) {
  if (name == "text") return CorpusKind::kText;
  if (name == "abc") return CorpusKind::kAbc;
  throw DataError("unknown corpus kind: " + name);
}

namespace {
bool is_special_literal(const std::string& chunk) {
  for (int64_t s = 0; s < Vocabulary::kNumSpecials; ++s) {
    if (chunk == Vocabulary::special_token(s)) return true;
  }
  return false;
}
}  // namespace

std::vector<int64_t> encode_sentence(const Vocabulary& vocab, CorpusKind kind, const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string chunk;
  while (in >> chunk) {
    if (kind == CorpusKind::kAbc || is_special_literal(chunk)) {
      // ABC tokens pass through verbatim; special-token literals such as
      // <UNK> must survive a decode/encode round trip in either mode
      tokens.push_back(chunk);
    } else {
      for (auto& t : tokenize(chunk)) tokens.push_back(std::move(t));
    }
  }
  return vocab.encode(tokens);
}

std::string sentence_text(const Vocabulary& vocab, const std::vector<int64_t>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token_of(ids[i]);
  }
  return out;
}

GenerateResult generate_questions(const std::vector<SentencePair>& pairs, const Vocabulary& vocab,
                                  const GenerateOptions& opts, BiLmParams* bilm, Rng& rng) {
  check(opts.k >= 2, "generate_questions: k must be at least 2");
  check(opts.questions_per_pair >= 1, "generate_questions: questions_per_pair must be positive");
  if (opts.mode == DistractorMode::kBatchNeg) {
    check_data(static_cast<int64_t>(pairs.size()) >= opts.k,
               "generate_questions: batch-neg mode needs at least k evaluation pairs");
  } else {
    check(bilm != nullptr, "generate_questions: resampled mode needs a bilm");
  }

  GenerateResult out;
  for (size_t pi = 0; pi < pairs.size(); ++pi) {
    for (int64_t q = 0; q < opts.questions_per_pair; ++q) {
      const SentencePair& pair = pairs[pi];
      std::vector<std::vector<int64_t>> distractors;
      bool gave_up = false;

      Rng pair_rng = rng.derive("question", static_cast<uint64_t>(pi * 1000003 + static_cast<size_t>(q)));
      auto is_duplicate = [&](const std::vector<int64_t>& cand) {
        if (cand == pair.b) return true;
        return std::find(distractors.begin(), distractors.end(), cand) != distractors.end();
      };

      while (static_cast<int64_t>(distractors.size()) < opts.k - 1 && !gave_up) {
        std::vector<int64_t> cand;
        int64_t redraws = 0;
        do {
          if (opts.mode == DistractorMode::kBatchNeg) {
            size_t j;
            do {
              j = static_cast<size_t>(pair_rng.uniform_int(pairs.size()));
            } while (j == pi);
            cand = pairs[j].b;
          } else {
            MaskedSentence m = mask_tokens(pair.b, bilm->config.mask_rate, pair_rng);
            cand = resample(m, *bilm, pair_rng);
          }
          ++redraws;
        } while (is_duplicate(cand) && redraws <= opts.max_redraws);
        if (is_duplicate(cand)) {
          gave_up = true;
        } else {
          distractors.push_back(std::move(cand));
        }
      }

      if (gave_up) {
        ++out.dropped;
        continue;
      }

      ClozeQuestion question;
      question.context = sentence_text(vocab, pair.a);
      question.answer = static_cast<int64_t>(pair_rng.uniform_int(static_cast<uint64_t>(opts.k)));
      question.provenance = opts.mode == DistractorMode::kBatchNeg ? "batch-neg" : "resampled";
      size_t next_distractor = 0;
      for (int64_t slot = 0; slot < opts.k; ++slot) {
        if (slot == question.answer) {
          question.choices.push_back(sentence_text(vocab, pair.b));
        } else {
          question.choices.push_back(sentence_text(vocab, distractors[next_distractor++]));
        }
      }
      out.questions.push_back(std::move(question));
    }
  }
  return out;
}

namespace {

QuestionResult grade_one(const ClozeQuestion& q, SentenceScorer& scorer, int criterion,
                         const Vocabulary& vocab, CorpusKind kind) {
  check_data(q.choices.size() >= 2, "grade: question with fewer than two choices");
  const auto context = encode_sentence(vocab, kind, q.context);
  std::vector<std::vector<int64_t>> choices;
  choices.reserve(q.choices.size());
  for (const auto& c : q.choices) {
    choices.push_back(encode_sentence(vocab, kind, c));
    check_data(!choices.back().empty(), "grade: empty choice sentence");
  }

  QuestionResult res;
  res.scores = scorer.score_choices(context, choices);
  std::vector<double> s;
  s.reserve(res.scores.size());
  for (const auto& p : res.scores) s.push_back(criterion_score(p, criterion));
  res.selected = argmax_lowest(s);
  res.correct = res.selected == q.answer;
  return res;
}

EvalReport assemble(int criterion, std::vector<QuestionResult> details) {
  EvalReport report;
  report.criterion = criterion;
  report.total = static_cast<int64_t>(details.size());
  for (const auto& d : details) report.correct += d.correct ? 1 : 0;
  report.accuracy = report.total ? static_cast<double>(report.correct) / static_cast<double>(report.total) : 0.0;
  report.details = std::move(details);
  return report;
}

// selection from already-computed score pairs
QuestionResult result_from_scores(const ClozeQuestion& q, std::vector<ScorePair> scores, int criterion) {
  QuestionResult res;
  res.scores = std::move(scores);
  std::vector<double> s;
  s.reserve(res.scores.size());
  for (const auto& p : res.scores) s.push_back(criterion_score(p, criterion));
  res.selected = argmax_lowest(s);
  res.correct = res.selected == q.answer;
  return res;
}

}  // namespace

EvalReport grade(const std::vector<ClozeQuestion>& questions, SentenceScorer& scorer, int criterion,
                 const Vocabulary& vocab, CorpusKind kind) {
  check_data(!questions.empty(), "grade: empty question set");
  std::vector<QuestionResult> details;
  details.reserve(questions.size());
  for (const auto& q : questions) details.push_back(grade_one(q, scorer, criterion, vocab, kind));
  return assemble(criterion, std::move(details));
}

int eval_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalReport grade_with_lm(const std::vector<ClozeQuestion>& questions, LmParams& params, int criterion,
                         const Vocabulary& vocab, CorpusKind kind, int threads) {
  check_data(!questions.empty(), "grade: empty question set");
  const int nthreads = eval_threads(threads);
  std::vector<QuestionResult> details(questions.size());
#pragma omp parallel num_threads(nthreads)
  {
    LmScorer scorer(params);  // read-only over frozen parameters
#pragma omp for schedule(dynamic, 4)
    for (size_t i = 0; i < questions.size(); ++i) {
      details[i] = grade_one(questions[i], scorer, criterion, vocab, kind);
    }
  }
  return assemble(criterion, std::move(details));
}

std::pair<EvalReport, EvalReport> grade_both_with_lm(const std::vector<ClozeQuestion>& questions,
                                                     LmParams& params, const Vocabulary& vocab,
                                                     CorpusKind kind, int threads) {
  EvalReport c1 = grade_with_lm(questions, params, kCriterionCond, vocab, kind, threads);
  // reuse the score pairs: criterion 2 re-derives selections from them
  std::vector<QuestionResult> c2_details(questions.size());
  for (size_t i = 0; i < questions.size(); ++i) {
    c2_details[i] = result_from_scores(questions[i], c1.details[i].scores, kCriterionCondMinusUncond);
  }
  return {std::move(c1), assemble(kCriterionCondMinusUncond, std::move(c2_details))};
}

std::vector<ClozeQuestion> load_external_questions(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ClozeQuestion> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    check_data(j.is_object(), where + ": expected a JSON object");
    check_data(j.contains("context") && j["context"].is_string(), where + ": missing string field 'context'");
    check_data(j.contains("choices") && j["choices"].is_array(), where + ": missing array field 'choices'");
    check_data(j.contains("answer") && j["answer"].is_number_integer(), where + ": missing integer field 'answer'");

    ClozeQuestion q;
    q.context = j["context"].get<std::string>();
    for (const auto& c : j["choices"]) {
      check_data(c.is_string(), where + ": choices must be strings");
      q.choices.push_back(c.get<std::string>());
    }
    check_data(q.choices.size() >= 2, where + ": a question needs at least two choices");
    q.answer = j["answer"].get<int64_t>();
    check_data(0 <= q.answer && q.answer < static_cast<int64_t>(q.choices.size()),
               where + ": answer index out of range");
    q.provenance = j.value("provenance", std::string("external"));
    out.push_back(std::move(q));
  }
  return out;
}

void save_questions(const std::filesystem::path& path, const std::vector<ClozeQuestion>& questions) {
  std::ostringstream out;
  for (const auto& q : questions) {
    nlohmann::json j{{"context", q.context}, {"choices", q.choices}, {"answer", q.answer}};
    if (!q.provenance.empty()) j["provenance"] = q.provenance;
    out << j.dump() << "\n";
  }
  write_file_atomic(path, out.str());
}

void write_score_dump(const std::filesystem::path& path, const std::vector<ClozeQuestion>& questions,
                      const std::vector<QuestionResult>& details) {
  check(questions.size() == details.size(), "write_score_dump: size mismatch");
  std::ostringstream out;
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    for (size_t ci = 0; ci < details[qi].scores.size(); ++ci) {
      nlohmann::json j{{"question", qi},
                       {"choice", ci},
                       {"log_cond", details[qi].scores[ci].log_cond},
                       {"log_uncond", details[qi].scores[ci].log_uncond}};
      out << j.dump() << "\n";
    }
  }
  write_file_atomic(path, out.str());
}

EvalReport grade_from_dump(const std::filesystem::path& dump_path,
                           const std::vector<ClozeQuestion>& questions, int criterion) {
  std::istringstream in(read_file(dump_path));
  std::vector<std::vector<ScorePair>> scores(questions.size());
  for (size_t i = 0; i < questions.size(); ++i) scores[i].resize(questions[i].choices.size());

  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(dump_path.string() + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    const auto qi = j.at("question").get<size_t>();
    const auto ci = j.at("choice").get<size_t>();
    check_data(qi < scores.size() && ci < scores[qi].size(),
               dump_path.string() + ":" + std::to_string(line_no) + ": index out of range");
    scores[qi][ci] = {j.at("log_cond").get<double>(), j.at("log_uncond").get<double>()};
  }

  std::vector<QuestionResult> details(questions.size());
  for (size_t i = 0; i < questions.size(); ++i) {
    details[i] = result_from_scores(questions[i], std::move(scores[i]), criterion);
  }
  return assemble(criterion, std::move(details));
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json per_question = nlohmann::json::array();
  for (const auto& d : report.details) {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : d.scores) scores.push_back({{"log_cond", s.log_cond}, {"log_uncond", s.log_uncond}});
    per_question.push_back({{"selected", d.selected}, {"correct", d.correct}, {"scores", scores}});
  }
  return {{"criterion", report.criterion},
          {"total", report.total},
          {"correct", report.correct},
          {"accuracy", report.accuracy},
          {"questions", per_question}};
}

}  // namespace spe
