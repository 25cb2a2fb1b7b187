#pragma once

// TBNET1 checkpoints: magic "TBNET1", then per entry a u16 name length,
// name bytes, u8 rank, u32 dims and little-endian float32 values. Entries
// follow network order: every parameter, then every batch-norm buffer.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tbnet/error.hpp"
#include "tbnet/network.hpp"
#include "tbnet/tensor.hpp"

namespace tbnet {

inline constexpr std::string_view kCheckpointMagic = "TBNET1";

struct CheckpointEntry {
  std::string name;
  Shape dims;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t& pos, int bytes, const char* what) {
  if (in.size() - pos < static_cast<std::size_t>(bytes))
    throw DecodeError(std::string("checkpoint: truncated ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw PreconditionError("checkpoint: name too long");
    if (e.dims.size() > std::numeric_limits<std::uint8_t>::max()) throw PreconditionError("checkpoint: rank too large");
    if (shape_size(e.dims) != e.values.size()) throw ShapeError("checkpoint: entry " + e.name + " size mismatch");
    detail::put_le(out, e.name.size(), 2);
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put_le(out, e.dims.size(), 1);
    for (std::size_t d : e.dims) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw PreconditionError("checkpoint: dimension too large");
      detail::put_le(out, d, 4);
    }
    for (float v : e.values) detail::put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw DecodeError("checkpoint: bad magic (expected TBNET1)");
  std::size_t pos = kCheckpointMagic.size();
  std::vector<CheckpointEntry> entries;
  while (pos < bytes.size()) {
    CheckpointEntry e;
    const auto len = detail::get_le(bytes, pos, 2, "name length");
    if (bytes.size() - pos < len) throw DecodeError("checkpoint: truncated name");
    e.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    const auto rank = detail::get_le(bytes, pos, 1, "rank");
    for (std::uint64_t i = 0; i < rank; ++i) e.dims.push_back(detail::get_le(bytes, pos, 4, "dims"));
    const std::size_t n = shape_size(e.dims);
    if ((bytes.size() - pos) / 4 < n) throw DecodeError("checkpoint: truncated values of " + e.name);
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      e.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, pos, 4, "values")));
    entries.push_back(std::move(e));
  }
  return entries;
}

template <typename T>
std::vector<CheckpointEntry> checkpoint_entries(Network<T>& net) {
  std::vector<CheckpointEntry> out;
  auto add = [&out](const std::string& name, const Tensor<T>& t) {
    out.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
  };
  for (auto* p : net.parameters()) add(p->name, p->value);
  for (auto* b : net.buffers()) add(b->name, b->value);
  return out;
}

/// Copies entries into the network; names, order and shapes must match exactly.
template <typename T>
void load_checkpoint_entries(Network<T>& net, std::span<const CheckpointEntry> entries) {
  std::vector<std::pair<std::string, Tensor<T>*>> slots;
  for (auto* p : net.parameters()) slots.emplace_back(p->name, &p->value);
  for (auto* b : net.buffers()) slots.emplace_back(b->name, &b->value);
  if (slots.size() != entries.size())
    throw ShapeError("checkpoint has " + std::to_string(entries.size()) + " entries but network " + net.spec().name +
                     " expects " + std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& e = entries[i];
    if (e.name != slots[i].first)
      throw ShapeError("checkpoint entry " + std::to_string(i) + " is '" + e.name + "', network expects '" +
                       slots[i].first + "'");
    if (e.dims != slots[i].second->shape())
      throw ShapeError("checkpoint entry " + e.name + " has shape " + shape_string(e.dims) + ", network expects " +
                       shape_string(slots[i].second->shape()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i)
    std::copy(entries[i].values.begin(), entries[i].values.end(), slots[i].second->values().begin());
}

inline void write_checkpoint_file(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(entries);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

inline std::vector<CheckpointEntry> read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path) {
  write_checkpoint_file(path, checkpoint_entries(net));
}

template <typename T>
void load_checkpoint(Network<T>& net, const std::filesystem::path& path) {
  load_checkpoint_entries(net, read_checkpoint_file(path));
}

}  // namespace tbnet
