#include "halo/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace halo {
namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b.data(), 4);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(b.data(), 8);
}

std::uint64_t get_le(std::istream& is, int nbytes) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), nbytes);
  if (is.gcount() != nbytes) throw IoError("tensor file truncated");
  std::uint64_t v = 0;
  for (int i = nbytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor<double>& t) {
  os.write(kTensorMagic, sizeof kTensorMagic);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (Index i = 0; i < t.size(); ++i) put_f64(os, t[i]);
  if (!os) throw IoError("failed writing tensor");
}

Tensor<double> read_tensor(std::istream& is) {
  char magic[sizeof kTensorMagic];
  is.read(magic, sizeof magic);
  if (is.gcount() != sizeof magic || std::memcmp(magic, kTensorMagic, sizeof magic) != 0) {
    throw IoError("bad tensor magic (expected HTNSR1)");
  }
  const auto rank = static_cast<Index>(get_le(is, 4));
  if (rank == 0 || rank > 16) throw IoError("unsupported tensor rank " + std::to_string(rank));
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    d = static_cast<Index>(get_le(is, 4));
    if (d == 0) throw IoError("zero-sized tensor dim");
  }
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_le(is, 8));
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor<double>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor<double> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace halo
