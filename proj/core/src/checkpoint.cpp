#include <bit>
#include <fstream>

#include "json.hpp"
#include "secmlops/diffnet.hpp"
#include "secmlops/digest.hpp"
#include "secmlops/error.hpp"

namespace secmlops::diffnet {

namespace {

std::string blob_bytes(const ParamSet& params) {
  std::string out;
  out.reserve(params.parameter_count() * 8);
  for (const auto& [_, t] : params.tensors()) {
    for (double v : t.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  return out;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

std::string params_digest(const ParamSet& params) { return sha256_hex(blob_bytes(params)); }

void save_checkpoint(const ParamSet& params, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const std::string blob = blob_bytes(params);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  const auto blob_path = with_suffix(stem, ".bin");
  nlohmann::json manifest{{"format", "secmlops-params/1"},
                          {"blob", blob_path.filename().string()},
                          {"dtype", "float64-le"},
                          {"step", params.step()},
                          {"sha256", sha256_hex(blob)},
                          {"tensors", std::move(tensors)}};
  {
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + blob_path.string());
  }
  std::ofstream out(with_suffix(stem, ".json"), std::ios::trunc);
  out << manifest.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint manifest");
}

ParamSet load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream min(with_suffix(stem, ".json"));
  if (!min) throw Error(ErrorKind::kIo, "cannot open " + with_suffix(stem, ".json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("checkpoint manifest: ") + e.what());
  }
  const auto blob_path = stem.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw Error(ErrorKind::kIo, "cannot open " + blob_path.string());
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (sha256_hex(blob) != manifest.at("sha256").get<std::string>())
    throw Error(ErrorKind::kFormat, "checkpoint digest mismatch for " + blob_path.string());

  ParamSet params;
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != shape_size(shape) || (offset + count) * 8 > blob.size())
      throw Error(ErrorKind::kFormat, "checkpoint tensor out of range");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[(offset + i) * 8 + b])) << (8 * b);
      values[i] = std::bit_cast<double>(bits);
    }
    params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
  }
  params.set_step(manifest.at("step").get<std::uint64_t>());
  return params;
}

}  // namespace secmlops::diffnet
