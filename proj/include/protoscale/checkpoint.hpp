#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoscale/image.hpp"
#include "protoscale/tensor.hpp"

// Little-endian record file:
//   "PSCALE01" | u32 version | records... | u32 crc32
// record = u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 payload
// The CRC covers every byte between the version field and the trailer.
namespace protoscale {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CorruptCheckpointError : IoError {
  using IoError::IoError;
};

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const Record&) const = default;
};

std::vector<std::uint8_t> encode_records(const std::vector<Record>& records);
/// Throws CorruptCheckpointError on bad magic, version, framing or CRC.
std::vector<Record> decode_records(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames it into place.
void save_records(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> load_records(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n);

}  // namespace protoscale
