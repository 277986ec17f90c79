#include "filtrank/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace filtrank::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'R', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

template <typename V>
void put(std::vector<std::uint8_t>& out, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(V));
}

template <typename V>
V get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(V) > in.size()) throw Error(ErrorCode::CheckpointError, "truncated header");
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<T>& tensors, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : tensors.entries()) {
    const std::uint64_t bytes = e.value.size() * sizeof(T);
    manifest["tensors"].push_back(
        {{"name", e.name}, {"dtype", dtype_name<T>()}, {"shape", e.value.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const std::string header = manifest.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const auto& e : tensors.entries()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.value.data());
    out.insert(out.end(), p, p + e.value.size() * sizeof(T));
  }
  return out;
}

template <typename T>
CheckpointData<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::CheckpointError, "bad magic");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::CheckpointError, "unsupported version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw Error(ErrorCode::CheckpointError, "truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CheckpointError, std::string("manifest: ") + e.what());
  }
  pos += len;
  const std::size_t payload = pos;

  CheckpointData<T> data;
  data.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw Error(ErrorCode::CheckpointError, "dtype mismatch for " + t.at("name").get<std::string>());
    }
    Shape shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto nbytes = t.at("bytes").get<std::uint64_t>();
    if (nbytes != numel(shape) * sizeof(T) || payload + offset + nbytes > bytes.size()) {
      throw Error(ErrorCode::CheckpointError, "bad extent for " + t.at("name").get<std::string>());
    }
    std::vector<T> values(numel(shape));
    std::memcpy(values.data(), bytes.data() + payload + offset, nbytes);
    data.tensors.add(t.at("name").get<std::string>(), Tensor<T>(std::move(shape), std::move(values)));
  }
  return data;
}

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& tensors,
                      const nlohmann::json& meta) {
  const auto bytes = encode_checkpoint(tensors, meta);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IOFailure, "short write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
CheckpointData<T> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

template std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<float>&, const nlohmann::json&);
template std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<double>&, const nlohmann::json&);
template CheckpointData<float> decode_checkpoint<float>(const std::vector<std::uint8_t>&);
template CheckpointData<double> decode_checkpoint<double>(const std::vector<std::uint8_t>&);
template void write_checkpoint(const std::filesystem::path&, const ParameterStore<float>&, const nlohmann::json&);
template void write_checkpoint(const std::filesystem::path&, const ParameterStore<double>&, const nlohmann::json&);
template CheckpointData<float> read_checkpoint<float>(const std::filesystem::path&);
template CheckpointData<double> read_checkpoint<double>(const std::filesystem::path&);

}  // namespace filtrank::ad
