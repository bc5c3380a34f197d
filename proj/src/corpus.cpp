#include "spe/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace spe {

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

// Emit a whitespace-delimited chunk as tokens: leading punctuation, then the
// core split on apostrophes (each apostrophe its own token), then trailing
// punctuation in source order.
void emit_chunk(const std::string& chunk, std::vector<std::string>& out) {
  size_t begin = 0, end = chunk.size();
  std::vector<std::string> lead, trail;
  while (begin < end && is_punct(chunk[begin]) && chunk[begin] != '\'') {
    lead.emplace_back(1, chunk[begin]);
    ++begin;
  }
  while (end > begin && is_punct(chunk[end - 1]) && chunk[end - 1] != '\'') {
    trail.emplace_back(1, chunk[end - 1]);
    --end;
  }
  for (auto& t : lead) out.push_back(std::move(t));
  std::string core = chunk.substr(begin, end - begin);
  std::string word;
  for (char c : core) {
    if (c == '\'') {
      if (!word.empty()) {
        out.push_back(word);
        word.clear();
      }
      out.emplace_back(1, '\'');
    } else {
      word.push_back(c);
    }
  }
  if (!word.empty()) out.push_back(word);
  for (auto it = trail.rbegin(); it != trail.rend(); ++it) out.push_back(std::move(*it));
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  std::vector<std::string> tokens;
  std::istringstream in(lowered);
  std::string chunk;
  while (in >> chunk) emit_chunk(chunk, tokens);
  return tokens;
}

std::vector<Document> load_text_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  check_data(in.good(), "cannot open corpus file " + path.string());

  std::vector<Document> docs;
  Document current;
  int64_t doc_index = 0;
  auto flush = [&]() {
    if (!current.sentences.empty()) {
      current.id = "d" + std::to_string(doc_index++);
      docs.push_back(std::move(current));
      current = Document{};
    }
  };

  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto tokens = tokenize(line);
    if (tokens.empty()) {
      flush();  // blank line = document boundary; all-punct-free lines too
    } else {
      current.sentences.push_back(std::move(tokens));
    }
  }
  flush();
  return docs;
}

std::vector<std::vector<std::string>> segment_abc(const std::vector<std::string>& tokens,
                                                  int bars_per_sentence, const std::string& bar_token) {
  check(bars_per_sentence >= 1, "bars_per_sentence must be >= 1");
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> current;
  int bars = 0;
  bool any_bar = false;
  for (const auto& tok : tokens) {
    current.push_back(tok);
    if (tok == bar_token) {
      any_bar = true;
      if (++bars == bars_per_sentence) {
        sentences.push_back(std::move(current));
        current.clear();
        bars = 0;
      }
    }
  }
  if (!any_bar) return {};  // no bars, no sentences
  if (bars > 0) {
    // trailing short segment of 1..n-1 bars is kept
    sentences.push_back(std::move(current));
  } else if (!current.empty() && !sentences.empty()) {
    // tokens after the final bar delimiter stay with the last full segment
    auto& last = sentences.back();
    last.insert(last.end(), current.begin(), current.end());
  }
  return sentences;
}

std::vector<Document> load_abc_corpus(const std::filesystem::path& path, int bars_per_sentence) {
  std::ifstream in(path);
  check_data(in.good(), "cannot open corpus file " + path.string());

  std::vector<Document> docs;
  std::string line;
  int64_t tune_index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> tokens;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    ++tune_index;
    if (tokens.empty()) continue;
    auto sentences = segment_abc(tokens, bars_per_sentence);
    if (sentences.empty()) continue;
    Document doc;
    doc.id = "t" + std::to_string(tune_index - 1);
    doc.sentences = std::move(sentences);
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<SentencePair> make_pairs(const std::vector<Document>& docs, const Vocabulary& vocab) {
  std::vector<SentencePair> pairs;
  for (size_t d = 0; d < docs.size(); ++d) {
    const auto& sents = docs[d].sentences;
    for (size_t i = 0; i + 1 < sents.size(); ++i) {
      if (sents[i].empty() || sents[i + 1].empty()) continue;
      SentencePair p;
      p.a = vocab.encode(sents[i]);
      p.b = vocab.encode(sents[i + 1]);
      p.doc_index = static_cast<int64_t>(d);
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kHoldout: return "holdout";
  }
  return "?";
}

Split assign_split(const std::string& doc_id, uint64_t seed) {
  uint64_t h = fnv1a(doc_id);
  h ^= seed * 0x9e3779b97f4a7c15ull;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  const uint64_t bucket = h % 10;
  if (bucket < 8) return Split::kTrain;
  return bucket == 8 ? Split::kValidation : Split::kHoldout;
}

CorpusSplit split_corpus(const std::vector<Document>& docs, uint64_t seed) {
  CorpusSplit out;
  for (const auto& doc : docs) {
    switch (assign_split(doc.id, seed)) {
      case Split::kTrain: out.train.push_back(doc); break;
      case Split::kValidation: out.validation.push_back(doc); break;
      case Split::kHoldout: out.holdout.push_back(doc); break;
    }
  }
  return out;
}

std::vector<std::vector<std::string>> all_sentences(const std::vector<Document>& docs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& doc : docs) {
    for (const auto& s : doc.sentences) out.push_back(s);
  }
  return out;
}

std::vector<std::vector<int64_t>> encode_sentences(const std::vector<Document>& docs, const Vocabulary& vocab) {
  std::vector<std::vector<int64_t>> out;
  for (const auto& doc : docs) {
    for (const auto& s : doc.sentences) out.push_back(vocab.encode(s));
  }
  return out;
}

}  // namespace spe
