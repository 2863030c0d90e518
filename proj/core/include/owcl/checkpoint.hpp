#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "owcl/tensor.hpp"

namespace owcl {

// "OWCL" container: magic, version u32, entry count u32, then per entry:
// name length u16, UTF-8 name, dtype tag u8, rank u8, dims as u64s, raw
// little-endian payload. Three entry kinds cover tensors, embedded documents
// (config snapshots), and integer lists (stage indices, class ids).
enum class EntryType : std::uint8_t { F64_TENSOR = 0, BYTES = 1, U64_LIST = 2 };

struct CheckpointEntry {
  std::string name;
  EntryType type = EntryType::F64_TENSOR;
  std::vector<std::size_t> dims;       // tensor shape; BYTES/U64_LIST use {length}
  std::vector<double> f64;             // F64_TENSOR payload
  std::vector<std::uint8_t> bytes;     // BYTES payload
  std::vector<std::uint64_t> u64;      // U64_LIST payload
};

CheckpointEntry tensor_entry(const std::string& name, const Tensor& t);
CheckpointEntry bytes_entry(const std::string& name, const std::string& text);
CheckpointEntry u64_entry(const std::string& name, std::vector<std::uint64_t> values);

Tensor entry_to_tensor(const CheckpointEntry& e);
std::string entry_to_string(const CheckpointEntry& e);

std::vector<std::uint8_t> serialize_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries,
                                  const std::string& name);
bool has_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);

void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_binary_file(const std::string& path);

}  // namespace owcl
