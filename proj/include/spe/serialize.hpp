#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spe/tape.hpp"

namespace spe {

// Atomic file writes: data lands in a temp file that is renamed into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_binary_atomic(const std::filesystem::path& path, const std::vector<char>& bytes);
std::string read_file(const std::filesystem::path& path);

// Named-tensor container: <stem>.bin holds raw little-endian doubles,
// <stem>.json the manifest (format version, name/shape/byte offset).
inline constexpr int kTensorFormatVersion = 1;

void save_named_tensors(const std::filesystem::path& stem,
                        const std::vector<const Parameter*>& params,
                        const nlohmann::json& extra_manifest);

// Loads into pre-built parameters; shapes must match the manifest.
// Returns the manifest's extra fields.
nlohmann::json load_named_tensors(const std::filesystem::path& stem,
                                  const std::vector<Parameter*>& params);

}  // namespace spe
