#include "spe/vocab.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spe/serialize.hpp"

namespace spe {

const char* Vocabulary::special_token(int64_t id) {
  switch (id) {
    case kUnk: return "<UNK>";
    case kMask: return "<MASK>";
    case kBos: return "<BOS>";
    case kEos: return "<EOS>";
    case kPad: return "<PAD>";
    default: throw std::out_of_range("not a special id");
  }
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& sentences, int64_t cutoff) {
  std::unordered_map<std::string, int64_t> counts;
  for (const auto& sent : sentences) {
    for (const auto& tok : sent) ++counts[tok];
  }

  Vocabulary v;
  v.cutoff_ = cutoff;
  for (int64_t i = 0; i < kNumSpecials; ++i) {
    v.id_to_token_.emplace_back(special_token(i));
    v.counts_.push_back(0);
  }

  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [tok, c] : counts) {
    if (c > cutoff) kept.emplace_back(tok, c);
  }
  // Frequency order, ties alphabetical: deterministic ids independent of
  // unordered_map iteration.
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [tok, c] : kept) {
    v.id_to_token_.push_back(std::move(tok));
    v.counts_.push_back(c);
  }
  v.rebuild_index();
  v.compute_hash();
  return v;
}

void Vocabulary::rebuild_index() {
  token_to_id_.clear();
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_.emplace(id_to_token_[i], static_cast<int64_t>(i));
  }
}

void Vocabulary::compute_hash() {
  uint64_t h = fnv1a(std::to_string(cutoff_));
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    h = fnv1a(id_to_token_[i], h);
    h = fnv1a(std::to_string(counts_[i]), h);
  }
  hash_ = to_hex(h);
}

int64_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int64_t id) const {
  check(id >= 0 && id < size(), "token id out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

int64_t Vocabulary::count_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? 0 : counts_[static_cast<size_t>(it->second)];
}

std::vector<int64_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int64_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int64_t>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int64_t id : ids) tokens.push_back(token_of(id));
  return tokens;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  nlohmann::json header = {
      {"cutoff", cutoff_},
      {"hash", hash_},
      {"counts", counts_},
  };
  std::ostringstream out;
  out << header.dump() << "\n";
  for (const auto& tok : id_to_token_) out << tok << "\n";
  write_file_atomic(path, out.str());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string header_line;
  check_data(static_cast<bool>(std::getline(in, header_line)), "empty vocabulary file " + path.string());

  Vocabulary v;
  try {
    auto header = nlohmann::json::parse(header_line);
    v.cutoff_ = header.at("cutoff").get<int64_t>();
    v.hash_ = header.at("hash").get<std::string>();
    v.counts_ = header.at("counts").get<std::vector<int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad vocabulary header in " + path.string() + ": " + e.what());
  }

  std::string tok;
  while (std::getline(in, tok)) {
    if (!tok.empty()) v.id_to_token_.push_back(tok);
  }
  check_data(v.id_to_token_.size() == v.counts_.size(),
             "vocabulary token count disagrees with header in " + path.string());
  check_data(static_cast<int64_t>(v.id_to_token_.size()) >= kNumSpecials,
             "vocabulary too small in " + path.string());
  for (int64_t i = 0; i < kNumSpecials; ++i) {
    check_data(v.id_to_token_[static_cast<size_t>(i)] == special_token(i),
               "vocabulary specials are malformed in " + path.string());
  }
  v.rebuild_index();
  return v;
}

}  // namespace spe
