#include "cmtm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace cmtm {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'T', 'M'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32(const char* what) {
    if (pos_ + 4 > size_) {
      throw IoError(IoError::Kind::truncated,
                    std::string("checkpoint truncated while reading ") + what);
    }
    std::uint32_t v = static_cast<std::uint32_t>(data_[pos_]) |
                      (static_cast<std::uint32_t>(data_[pos_ + 1]) << 8) |
                      (static_cast<std::uint32_t>(data_[pos_ + 2]) << 16) |
                      (static_cast<std::uint32_t>(data_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string bytes(std::size_t n, const char* what) {
    if (pos_ + n > size_) {
      throw IoError(IoError::Kind::truncated,
                    std::string("checkpoint truncated while reading ") + what);
    }
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == size_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (const auto d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (const auto v : tensor.values()) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::uint8_t* data, std::size_t size) {
  Reader r(data, size);
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw IoError(IoError::Kind::bad_magic, "not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw IoError(IoError::Kind::bad_version,
                  "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("tensor count");
  Checkpoint ckpt;
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.bytes(name_len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > kMaxRank) {
      throw IoError(IoError::Kind::malformed,
                    "tensor '" + name + "' has implausible rank " + std::to_string(rank));
    }
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::int64_t>(r.u32("dimension"));
      numel *= static_cast<std::uint64_t>(shape[d]);
      if (numel > (std::uint64_t(1) << 32)) {
        throw IoError(IoError::Kind::malformed,
                      "tensor '" + name + "' has implausible element count");
      }
    }
    if (r.remaining() < numel * 4) {
      throw IoError(IoError::Kind::truncated,
                    "checkpoint truncated inside payload of tensor '" + name + "'");
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = r.f32("payload");
    ckpt.tensors.emplace_back(name, Tensor::from(std::move(shape), std::move(values)));
  }
  if (!r.exhausted()) {
    throw IoError(IoError::Kind::malformed, "trailing bytes after last tensor");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoError::Kind::io, "write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError(IoError::Kind::io, "cannot open '" + path + "' for reading");
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError(IoError::Kind::io, "read from '" + path + "' failed");
  return decode_checkpoint(bytes.data(), bytes.size());
}

}  // namespace cmtm
