#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spe {

// Error taxonomy mapped to CLI exit codes: UsageError -> 1, DataError -> 2,
// NumericError -> 3. Everything else is a plain logic/runtime error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline void check_data(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

// FNV-1a, used for stable content hashes (vocabulary, config, split buckets).
// std::hash is implementation-defined, so it never touches persisted state.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string to_hex(uint64_t v);

}  // namespace spe
