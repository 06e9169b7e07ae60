#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "voplab/tensor/tensor.hpp"

namespace voplab {

// Tensor file layout, all little-endian:
//   bytes 0..3   magic "VPT1"
//   bytes 4..7   uint32 rank
//   bytes 8..15  uint64 element count
//   rank x uint64 dims, then element count x float32
inline constexpr char kTensorMagic[4] = {'V', 'P', 'T', '1'};
inline constexpr std::size_t kTensorHeaderBytes = 16;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& tensor);
// Throws FormatError on a bad magic, truncated payload or trailing bytes.
Tensor<float> read_tensor_file(const std::filesystem::path& path);

// FNV-1a 64 over raw bytes.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 14695981039346656037ull);
std::uint64_t file_checksum(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

// Host-order independent scalar encoding.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(const unsigned char* p);
std::uint64_t get_u64(const unsigned char* p);
float get_f32(const unsigned char* p);

std::string read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temporary, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace voplab
