#include "sagvit/sgt.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace sagvit {

static_assert(std::endian::native == std::endian::little, "SGT I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_sgt(const Tensor& tensor) {
  if (tensor.rank() > 255) throw FormatError("SGT supports rank <= 255");
  std::vector<std::uint8_t> out;
  out.reserve(4 + 1 + 4 * tensor.rank() + 8 * tensor.size() + 4);
  out.insert(out.end(), std::begin(kSgtMagic), std::end(kSgtMagic));
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  for (auto d : tensor.shape()) {
    if (d > 0xFFFFFFFFu) throw FormatError("SGT dimension exceeds 32 bits");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  const std::size_t payload_at = out.size();
  const auto* p = reinterpret_cast<const std::uint8_t*>(tensor.values().data());
  out.insert(out.end(), p, p + 8 * tensor.size());
  put<std::uint32_t>(out, crc32_of(std::span(out).subspan(payload_at)));
  return out;
}

Tensor decode_sgt(std::span<const std::uint8_t> bytes, std::size_t* consumed, const std::string& origin) {
  if (bytes.size() < 5) {
    throw FormatError(origin + ": truncated SGT header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kSgtMagic, 4) != 0) throw FormatError(origin + ": bad SGT magic");
  const std::size_t rank = bytes[4];
  const std::size_t header = 5 + 4 * rank;
  if (bytes.size() < header) {
    throw FormatError(origin + ": truncated SGT header, expected " + std::to_string(header) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get<std::uint32_t>(bytes, 5 + 4 * i);
  const std::size_t count = shape_size(shape);
  const std::size_t total = header + 8 * count + 4;
  if (bytes.size() < total) {
    throw FormatError(origin + ": truncated SGT file, expected " + std::to_string(total) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  const auto payload = bytes.subspan(header, 8 * count);
  const auto stored_crc = get<std::uint32_t>(bytes, header + 8 * count);
  if (crc32_of(payload) != stored_crc) throw FormatError(origin + ": SGT payload CRC mismatch");
  Eigen::VectorXd data(static_cast<Eigen::Index>(count));
  if (count > 0) std::memcpy(data.data(), payload.data(), payload.size());
  if (consumed) *consumed = total;
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_sgt(const std::filesystem::path& path, const Tensor& tensor) { write_file_bytes(path, encode_sgt(tensor)); }

Tensor read_sgt(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t consumed = 0;
  Tensor t = decode_sgt(bytes, &consumed, path.string());
  if (consumed != bytes.size()) {
    throw FormatError(path.string() + ": SGT declares " + std::to_string(consumed) + " bytes but file has " +
                      std::to_string(bytes.size()));
  }
  return t;
}

}  // namespace sagvit
