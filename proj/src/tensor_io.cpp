#include "wsiseg/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wsiseg {
namespace {

constexpr std::array<char, 4> kMagic{'T', 'N', 'S', '1'};

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> b;
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size()))
    throw std::runtime_error("TNS1: truncated stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  for (double v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw std::runtime_error("TNS1: write failed");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic;
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw std::runtime_error("TNS1: bad magic");
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 16) throw std::runtime_error("TNS1: implausible rank");
  Shape shape(rank);
  for (auto& e : shape) e = get_le<std::uint64_t>(in);
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

Tensor round_to_storage(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

}  // namespace wsiseg
