#include "whitebox/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace whitebox {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'W', 'B', 'P', 'R', 'U', 'N', 'E', '1'};

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw_data("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw_data("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw_data("tensor name too long: " + name);
    write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
      write_pod<uint64_t>(os, static_cast<uint64_t>(t.dim(i)));
    }
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw_data("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw_data("bad checkpoint magic in " + path);
  }
  Checkpoint ckpt;
  uint32_t count = read_pod<uint32_t>(is, path);
  ckpt.tensors.reserve(count);
  for (uint32_t k = 0; k < count; ++k) {
    uint16_t name_len = read_pod<uint16_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw_data("truncated checkpoint: " + path);
    uint8_t rank = read_pod<uint8_t>(is, path);
    std::vector<int64_t> shape(rank);
    for (uint8_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw_data("truncated tensor payload in " + path);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace whitebox
