#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/tensor.hpp"
#include "xmodal/util.hpp"

namespace xmodal {

// Parameter checkpoint: magic "XMLB", u32 version, then a length-prefixed
// list of (name, shape, little-endian f32 payload). Round-trips bit-exactly.

inline constexpr char kCheckpointMagic[4] = {'X', 'M', 'L', 'B'};
inline constexpr uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

inline void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  write_pod<uint32_t>(os, kCheckpointVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_string(os, name);
    write_pod<uint32_t>(os, static_cast<uint32_t>(t->shape.size()));
    for (int d : t->shape) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
    write_f32s(os, t->data.data(), t->numel());
  }
  if (!os) fail("short write to checkpoint " + path.string());
}

struct LoadedTensor {
  std::string name;
  Tensor tensor;
};

inline std::vector<LoadedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    fail("not a checkpoint file: " + path.string());
  uint32_t version = read_pod<uint32_t>(is);
  if (version != kCheckpointVersion)
    fail("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = read_pod<uint32_t>(is);
  std::vector<LoadedTensor> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    LoadedTensor lt;
    lt.name = read_string(is);
    uint32_t rank = read_pod<uint32_t>(is);
    require(rank >= 1 && rank <= 4, "checkpoint tensor rank out of range");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_pod<uint32_t>(is));
    lt.tensor = Tensor(shape);
    read_f32s(is, lt.tensor.data.data(), lt.tensor.numel());
    out.push_back(std::move(lt));
  }
  return out;
}

// Restores values into an existing named-tensor registry; shapes must match.
inline void restore_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  auto loaded = load_checkpoint(path);
  require(loaded.size() == tensors.size(),
          "checkpoint tensor count mismatch for " + path.string());
  for (size_t i = 0; i < loaded.size(); ++i) {
    require(loaded[i].name == tensors[i].first,
            "checkpoint tensor name mismatch: " + loaded[i].name + " vs " + tensors[i].first);
    require(loaded[i].tensor.shape == tensors[i].second->shape,
            "checkpoint tensor shape mismatch for " + loaded[i].name);
    tensors[i].second->data = std::move(loaded[i].tensor.data);
  }
}

}  // namespace xmodal
