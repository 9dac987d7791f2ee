#include "graphmar/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace graphmar {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 4) throw std::invalid_argument("tensor rank must be 1..4");
  std::vector<std::uint8_t> out(kTensorMagic.begin(), kTensorMagic.end());
  out.reserve(9 + 4 * t.rank() + 4 * t.size());
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 9) throw FormatError("tensor file truncated: header incomplete");
  if (std::memcmp(bytes.data(), kTensorMagic.data(), kTensorMagic.size()) != 0)
    throw FormatError("tensor file magic mismatch");
  const int rank = bytes[8];
  if (rank < 1 || rank > 4) throw FormatError("tensor file has unsupported rank " + std::to_string(rank));
  std::size_t offset = 9;
  if (bytes.size() < offset + 4u * rank) throw FormatError("tensor file truncated: dims incomplete");
  Shape shape;
  for (int i = 0; i < rank; ++i, offset += 4) {
    const std::uint32_t d = get_u32(bytes.data() + offset);
    if (d > 0x7FFFFFFFu) throw FormatError("tensor dimension too large");
    shape.push_back(static_cast<int>(d));
  }
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != offset + 4 * n)
    throw FormatError(bytes.size() < offset + 4 * n ? "tensor file truncated: payload incomplete"
                                                    : "tensor file has trailing bytes");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, offset += 4) data[i] = std::bit_cast<float>(get_u32(bytes.data() + offset));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace graphmar
