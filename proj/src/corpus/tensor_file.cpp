#include "voplab/corpus/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace voplab {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& tensor) {
    std::string out;
    out.reserve(kTensorHeaderBytes + 8 * tensor.rank() + 4 * tensor.numel());
    out.append(kTensorMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    put_u64(out, tensor.numel());
    for (auto d : tensor.shape()) put_u64(out, d);
    for (float v : tensor.values()) put_f32(out, v);
    write_file_atomic(path, out);
}

Tensor<float> read_tensor_file(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::string where = "tensor file '" + path.string() + "'";
    if (bytes.size() < kTensorHeaderBytes || std::memcmp(p, kTensorMagic, 4) != 0) {
        throw FormatError(where + ": bad magic");
    }
    const std::uint32_t rank = get_u32(p + 4);
    const std::uint64_t numel = get_u64(p + 8);
    if (rank > 8 || bytes.size() < kTensorHeaderBytes + 8ull * rank) throw FormatError(where + ": bad rank");
    Shape shape;
    std::uint64_t product = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape.push_back(get_u64(p + kTensorHeaderBytes + 8 * i));
        product *= shape.back();
    }
    if (product != numel) throw FormatError(where + ": dims disagree with element count");
    const std::size_t offset = kTensorHeaderBytes + 8ull * rank;
    if (bytes.size() != offset + 4 * numel) throw FormatError(where + ": payload size mismatch");
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < numel; ++i) t[i] = get_f32(p + offset + 4 * i);
    return t;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    return fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
    return s;
}

}  // namespace voplab
