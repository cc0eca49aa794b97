#include "protoscale/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace protoscale {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'S', 'C', 'A', 'L', 'E', '0', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == end_; }
  std::size_t position() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CorruptCheckpointError("checkpoint truncated inside a record");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_records(const std::vector<Record>& records) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::size_t body = out.size();
  for (const auto& r : records) {
    if (element_count(r.shape) != r.values.size()) {
      throw ContractError("record " + r.name + ": shape " + shape_str(r.shape) + " does not match payload");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.values.data());
    out.insert(out.end(), p, p + r.values.size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc32_of(out.data() + body, out.size() - body));
  return out;
}

std::vector<Record> decode_records(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw CorruptCheckpointError("not a checkpoint file (bad magic)");
  }
  const std::size_t end = bytes.size() - 4;
  Reader in(bytes, end);
  in.seek(8);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptCheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + end, 4);
  const std::uint32_t actual = crc32_of(bytes.data() + 12, end - 12);
  if (stored != actual) throw CorruptCheckpointError("checkpoint CRC mismatch");

  std::vector<Record> records;
  while (!in.done()) {
    Record r;
    r.name.resize(in.get<std::uint32_t>());
    in.read(r.name.data(), r.name.size());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw CorruptCheckpointError("record " + r.name + ": implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
    const std::size_t n = element_count(r.shape);
    if (n > (end - in.position()) / sizeof(double)) throw CorruptCheckpointError("record " + r.name + ": truncated");
    r.values.resize(n);
    in.read(r.values.data(), n * sizeof(double));
    records.push_back(std::move(r));
  }
  return records;
}

void save_records(const std::filesystem::path& path, const std::vector<Record>& records) {
  const auto bytes = encode_records(records);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

std::vector<Record> load_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_records(bytes);
  } catch (const CorruptCheckpointError& e) {
    throw CorruptCheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace protoscale
