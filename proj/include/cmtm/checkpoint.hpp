#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmtm/tensor.hpp"

// Binary container for named float32 tensors.
//
// Layout (all integers little-endian):
//   "CMTM"                     4-byte magic
//   u32 version                currently 1
//   u32 tensor count
//   per tensor:
//     u32 name length, UTF-8 name bytes
//     u32 rank, u32 dims[rank]
//     float32 payload, row-major
//
// Save -> load -> save is byte-identical; structural corruption surfaces as
// IoError with a distinguishing kind, never as silently wrong values.

namespace cmtm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion-ordered

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::uint8_t* data, std::size_t size);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cmtm
