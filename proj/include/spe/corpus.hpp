#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spe/vocab.hpp"

namespace spe {

// Lowercase, split on whitespace, detach leading/trailing punctuation as
// separate tokens, split words on apostrophes. Empty text gives no tokens.
std::vector<std::string> tokenize(const std::string& text);

struct Document {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
};

// Text corpus: one sentence per line, blank line between documents.
std::vector<Document> load_text_corpus(const std::filesystem::path& path);

// ABC corpus: one pre-tokenized tune per line, tokens space-separated, bars
// marked by `|`. Each tune becomes a document of four-bar sentences.
std::vector<Document> load_abc_corpus(const std::filesystem::path& path, int bars_per_sentence = 4);

// Splits a token stream into sentences of `bars_per_sentence` bars. A bar is
// a token run terminated by the bar token; a trailing group of 1..n-1 bars is
// kept as a short sentence. A tune without any bar token yields nothing.
std::vector<std::vector<std::string>> segment_abc(const std::vector<std::string>& tokens,
                                                  int bars_per_sentence = 4,
                                                  const std::string& bar_token = "|");

struct SentencePair {
  std::vector<int64_t> a;  // preceding sentence
  std::vector<int64_t> b;  // following sentence
  int64_t doc_index = -1;
};

// One pair per adjacent sentence couple within a document; never across
// documents. Documents with fewer than two sentences contribute nothing.
std::vector<SentencePair> make_pairs(const std::vector<Document>& docs, const Vocabulary& vocab);

enum class Split { kTrain = 0, kValidation = 1, kHoldout = 2 };

const char* split_name(Split s);

// Stable 8:1:1 assignment from a hash of the document id and the seed, so a
// split never depends on load order and needs no stored state.
Split assign_split(const std::string& doc_id, uint64_t seed);

struct CorpusSplit {
  std::vector<Document> train;
  std::vector<Document> validation;
  std::vector<Document> holdout;
};

CorpusSplit split_corpus(const std::vector<Document>& docs, uint64_t seed);

// All sentences of all documents, in order.
std::vector<std::vector<std::string>> all_sentences(const std::vector<Document>& docs);
std::vector<std::vector<int64_t>> encode_sentences(const std::vector<Document>& docs, const Vocabulary& vocab);

}  // namespace spe
