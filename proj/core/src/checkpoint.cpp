#include "owcl/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <set>
#include <stdexcept>

namespace owcl {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > b.size())
      throw std::runtime_error("checkpoint: truncated at byte " + std::to_string(pos) +
                               " reading " + what);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v =
        static_cast<std::uint16_t>(b[pos] | (static_cast<std::uint16_t>(b[pos + 1]) << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t v = u64(what);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

std::size_t payload_count(const CheckpointEntry& e) {
  std::size_t n = 1;
  for (std::size_t d : e.dims) n *= d;
  return n;
}

}  // namespace

CheckpointEntry tensor_entry(const std::string& name, const Tensor& t) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::F64_TENSOR;
  e.dims = t.shape();
  e.f64 = t.values();
  return e;
}

CheckpointEntry bytes_entry(const std::string& name, const std::string& text) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::BYTES;
  e.dims = {text.size()};
  e.bytes.assign(text.begin(), text.end());
  return e;
}

CheckpointEntry u64_entry(const std::string& name, std::vector<std::uint64_t> values) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::U64_LIST;
  e.dims = {values.size()};
  e.u64 = std::move(values);
  return e;
}

Tensor entry_to_tensor(const CheckpointEntry& e) {
  if (e.type != EntryType::F64_TENSOR)
    throw std::runtime_error("checkpoint: entry '" + e.name + "' is not a tensor");
  return Tensor::from(e.dims, e.f64);
}

std::string entry_to_string(const CheckpointEntry& e) {
  if (e.type != EntryType::BYTES)
    throw std::runtime_error("checkpoint: entry '" + e.name + "' is not a byte payload");
  return std::string(e.bytes.begin(), e.bytes.end());
}

std::vector<std::uint8_t> serialize_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::set<std::string> seen;
  std::vector<std::uint8_t> out = {'O', 'W', 'C', 'L'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > 0xFFFF)
      throw std::runtime_error("checkpoint: bad entry name length");
    if (!seen.insert(e.name).second)
      throw std::runtime_error("checkpoint: duplicate entry '" + e.name + "'");
    if (e.dims.size() > 0xFF)
      throw std::runtime_error("checkpoint: entry '" + e.name + "' rank too large");
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.type));
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (std::size_t d : e.dims) put_u64(out, d);
    const std::size_t n = payload_count(e);
    switch (e.type) {
      case EntryType::F64_TENSOR:
        if (e.f64.size() != n)
          throw std::runtime_error("checkpoint: entry '" + e.name + "' payload/shape mismatch");
        for (double d : e.f64) put_f64(out, d);
        break;
      case EntryType::BYTES:
        if (e.bytes.size() != n)
          throw std::runtime_error("checkpoint: entry '" + e.name + "' payload/shape mismatch");
        out.insert(out.end(), e.bytes.begin(), e.bytes.end());
        break;
      case EntryType::U64_LIST:
        if (e.u64.size() != n)
          throw std::runtime_error("checkpoint: entry '" + e.name + "' payload/shape mismatch");
        for (std::uint64_t v : e.u64) put_u64(out, v);
        break;
    }
  }
  return out;
}

std::vector<CheckpointEntry> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader rd{bytes};
  rd.need(4, "magic");
  if (!(bytes[0] == 'O' && bytes[1] == 'W' && bytes[2] == 'C' && bytes[3] == 'L'))
    throw std::runtime_error("checkpoint: bad magic (want OWCL)");
  rd.pos = 4;
  const std::uint32_t version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = rd.u32("entry count");

  std::vector<CheckpointEntry> entries;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const std::uint16_t name_len = rd.u16("name length");
    rd.need(name_len, "name");
    e.name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(rd.pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(rd.pos + name_len));
    rd.pos += name_len;
    if (!seen.insert(e.name).second)
      throw std::runtime_error("checkpoint: duplicate entry '" + e.name + "'");
    rd.need(1, "dtype");
    const std::uint8_t tag = bytes[rd.pos++];
    if (tag > 2)
      throw std::runtime_error("checkpoint: entry '" + e.name + "' has unknown dtype " +
                               std::to_string(tag));
    e.type = static_cast<EntryType>(tag);
    rd.need(1, "rank");
    const std::uint8_t rank = bytes[rd.pos++];
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = rd.u64("dim");
      if (dim > (1ull << 32))
        throw std::runtime_error("checkpoint: entry '" + e.name + "' has implausible dim");
      e.dims.push_back(static_cast<std::size_t>(dim));
    }
    std::size_t n = 1;
    for (std::size_t d : e.dims) {
      if (d != 0 && n > (1ull << 40) / d)
        throw std::runtime_error("checkpoint: entry '" + e.name + "' has implausible size");
      n *= d;
    }
    switch (e.type) {
      case EntryType::F64_TENSOR:
        e.f64.reserve(n);
        for (std::size_t i = 0; i < n; ++i) e.f64.push_back(rd.f64("tensor payload"));
        break;
      case EntryType::BYTES:
        rd.need(n, "byte payload");
        e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(rd.pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(rd.pos + n));
        rd.pos += n;
        break;
      case EntryType::U64_LIST:
        e.u64.reserve(n);
        for (std::size_t i = 0; i < n; ++i) e.u64.push_back(rd.u64("u64 payload"));
        break;
    }
    entries.push_back(std::move(e));
  }
  if (rd.pos != bytes.size())
    throw std::runtime_error("checkpoint: " + std::to_string(bytes.size() - rd.pos) +
                             " trailing bytes at " + std::to_string(rd.pos));
  return entries;
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries,
                                  const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::runtime_error("checkpoint: missing entry '" + name + "'");
}

bool has_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw std::runtime_error("short write: " + path);
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(size > 0 ? static_cast<std::size_t>(size) : 0);
  const std::size_t n = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw std::runtime_error("short read: " + path);
  return bytes;
}

}  // namespace owcl
