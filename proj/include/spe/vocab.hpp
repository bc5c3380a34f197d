#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "spe/common.hpp"

namespace spe {

// Token <-> id map with a frequency cutoff. Special tokens occupy the lowest
// ids; every other token occurred more than `cutoff` times in the corpus the
// vocabulary was built from. Unknown tokens encode to <UNK>.
class Vocabulary {
 public:
  static constexpr int64_t kUnk = 0;
  static constexpr int64_t kMask = 1;
  static constexpr int64_t kBos = 2;
  static constexpr int64_t kEos = 3;
  static constexpr int64_t kPad = 4;
  static constexpr int64_t kNumSpecials = 5;

  static const char* special_token(int64_t id);

  static Vocabulary build(const std::vector<std::vector<std::string>>& sentences, int64_t cutoff = 3);

  int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }
  int64_t cutoff() const { return cutoff_; }

  int64_t id_of(const std::string& token) const;
  const std::string& token_of(int64_t id) const;
  int64_t count_of(const std::string& token) const;

  std::vector<int64_t> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int64_t>& ids) const;

  // Content hash over cutoff, tokens in id order and their counts. Stages
  // compare it to catch checkpoint/vocabulary mismatches.
  const std::string& hash() const { return hash_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::unordered_map<std::string, int64_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<int64_t> counts_;  // aligned with id_to_token_, 0 for specials
  int64_t cutoff_ = 3;
  std::string hash_;

  void rebuild_index();
  void compute_hash();
};

}  // namespace spe
