#include "spe/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace spe {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are not supported");

namespace {
void rename_into_place(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("failed to move temp file into place for " + path.string() + ": " + ec.message());
  }
}
}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    check_data(out.good(), "cannot open " + tmp + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    check_data(out.good(), "write failed for " + tmp);
  }
  rename_into_place(tmp, path);
}

void write_binary_atomic(const std::filesystem::path& path, const std::vector<char>& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    check_data(out.good(), "cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    check_data(out.good(), "write failed for " + tmp);
  }
  rename_into_place(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

void save_named_tensors(const std::filesystem::path& stem,
                        const std::vector<const Parameter*>& params,
                        const nlohmann::json& extra_manifest) {
  std::vector<char> blob;
  nlohmann::json tensors = nlohmann::json::array();
  size_t offset = 0;
  for (const auto* p : params) {
    const size_t bytes = static_cast<size_t>(p->value.numel()) * sizeof(double);
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    blob.resize(offset + bytes);
    std::memcpy(blob.data() + offset, p->value.data(), bytes);
    offset += bytes;
  }
  nlohmann::json manifest = extra_manifest;
  manifest["format_version"] = kTensorFormatVersion;
  manifest["tensors"] = std::move(tensors);

  write_binary_atomic(stem.string() + ".bin", blob);
  write_file_atomic(stem.string() + ".json", manifest.dump(2) + "\n");
}

nlohmann::json load_named_tensors(const std::filesystem::path& stem,
                                  const std::vector<Parameter*>& params) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(stem.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad tensor manifest " + stem.string() + ".json: " + e.what());
  }
  check_data(manifest.value("format_version", -1) == kTensorFormatVersion,
             "unsupported tensor format version in " + stem.string() + ".json");
  const std::string blob = read_file(stem.string() + ".bin");

  const auto& tensors = manifest.at("tensors");
  check_data(tensors.size() == params.size(),
             "tensor count mismatch in " + stem.string() + ": manifest has " +
                 std::to_string(tensors.size()) + ", expected " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensors[i];
    Parameter* p = params[i];
    check_data(entry.at("name").get<std::string>() == p->name,
               "tensor name mismatch: expected " + p->name);
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    check_data(shape == p->value.shape(),
               "tensor shape mismatch for " + p->name + ": file has " + shape_str(shape));
    const size_t offset = entry.at("offset").get<size_t>();
    const size_t bytes = static_cast<size_t>(p->value.numel()) * sizeof(double);
    check_data(offset + bytes <= blob.size(), "tensor blob truncated for " + p->name);
    std::memcpy(p->value.data(), blob.data() + offset, bytes);
  }
  return manifest;
}

}  // namespace spe
