#include "vera/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vera {

namespace {

constexpr char kMagic[8] = {'V', 'E', 'R', 'A', 'C', 'K', 'P', 'T'};

// The documented byte layout is little-endian; this implementation writes
// host-order scalars and verifies the host is little-endian once.
void require_little_endian() {
  const std::uint16_t probe = 0x0102;
  unsigned char bytes[2];
  std::memcpy(bytes, &probe, 2);
  if (bytes[0] != 0x02) throw NumericalError("checkpoint i/o requires a little-endian host");
}

template <typename T>
void put(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return value;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  require_little_endian();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  put(os, format_version);
  put(os, step);
  const std::string meta_str = meta.dump();
  put(os, static_cast<std::uint64_t>(meta_str.size()));
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  put(os, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    put(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<std::uint64_t>(tensor.rows()));
    put(os, static_cast<std::uint64_t>(tensor.cols()));
    os.write(reinterpret_cast<const char*>(tensor.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(tensor.size())));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  require_little_endian();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);

  Checkpoint ckpt;
  ckpt.format_version = get<std::uint32_t>(is);
  if (ckpt.format_version != kFormatVersion)
    throw DataError("unsupported checkpoint version in " + path);
  ckpt.step = get<std::uint64_t>(is);
  const auto meta_len = get<std::uint64_t>(is);
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw DataError("checkpoint: truncated metadata");
  ckpt.meta = nlohmann::json::parse(meta_str, nullptr, /*allow_exceptions=*/false);
  if (ckpt.meta.is_discarded()) throw DataError("checkpoint: invalid metadata JSON");

  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    Mat tensor(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!is) throw DataError("checkpoint: truncated tensor " + name);
    ckpt.tensors.emplace(std::move(name), std::move(tensor));
  }
  return ckpt;
}

}  // namespace vera
