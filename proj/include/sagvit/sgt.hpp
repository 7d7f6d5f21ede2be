#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sagvit/tensor.hpp"

namespace sagvit {

// SGT tensor file layout (all integers little-endian):
//   "SGT1" | rank:u8 | dims:u32[rank] | payload:f64[prod(dims)] | crc32(payload):u32
inline constexpr char kSgtMagic[4] = {'S', 'G', 'T', '1'};

std::vector<std::uint8_t> encode_sgt(const Tensor& tensor);
// Decodes one SGT record starting at `bytes[0]`; `consumed` receives its length.
Tensor decode_sgt(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr,
                  const std::string& origin = "<memory>");

void write_sgt(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_sgt(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace sagvit
