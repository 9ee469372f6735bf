#include "score/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

namespace score {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'C', 'R', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("SCR1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T, typename Bits>
void write_impl(std::ostream& out, const BasicTensor<T>& t, DType dtype) {
  out.write(kMagic.data(), 4);
  out.put(static_cast<char>(dtype));
  if (t.rank() > 255) throw IoError("SCR1: rank too large");
  out.put(static_cast<char>(t.rank()));
  for (auto d : t.shape()) {
    if (d > UINT32_MAX) throw IoError("SCR1: dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  std::string payload(t.size() * sizeof(T), '\0');
  std::size_t pos = 0;
  for (T v : t.data()) {
    auto bits = std::bit_cast<Bits>(v);
    for (std::size_t b = 0; b < sizeof(T); ++b) payload[pos++] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("SCR1: write failed");
}

template <typename T, typename Bits>
BasicTensor<T> read_payload(std::istream& in, Shape shape) {
  const std::size_t n = shape_size(shape);
  std::string payload(n * sizeof(T), '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
    throw IoError("SCR1: truncated payload");
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      bits |= static_cast<Bits>(static_cast<unsigned char>(payload[i * sizeof(T) + b])) << (8 * b);
    }
    data[i] = std::bit_cast<T>(bits);
  }
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace

void write_scr1(std::ostream& out, const Tensor& t) { write_impl<float, std::uint32_t>(out, t, DType::F32); }
void write_scr1(std::ostream& out, const Tensor64& t) { write_impl<double, std::uint64_t>(out, t, DType::F64); }

AnyTensor read_scr1_any(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) throw IoError("SCR1: bad magic");
  const int dtype = in.get();
  const int rank = in.get();
  if (!in) throw IoError("SCR1: truncated header");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    d = get_u32(in);
    if (d == 0) throw IoError("SCR1: zero dimension");
  }
  switch (dtype) {
    case 0:
      return read_payload<float, std::uint32_t>(in, std::move(shape));
    case 1:
      return read_payload<double, std::uint64_t>(in, std::move(shape));
    default:
      throw IoError("SCR1: unknown dtype tag " + std::to_string(dtype));
  }
}

template <typename T>
BasicTensor<T> read_scr1(std::istream& in) {
  AnyTensor any = read_scr1_any(in);
  if (auto* t = std::get_if<BasicTensor<T>>(&any)) return std::move(*t);
  throw IoError("SCR1: dtype mismatch");
}

template Tensor read_scr1<float>(std::istream&);
template Tensor64 read_scr1<double>(std::istream&);

std::string to_scr1_bytes(const Tensor& t) {
  std::ostringstream out(std::ios::binary);
  write_scr1(out, t);
  return std::move(out).str();
}

std::string to_scr1_bytes(const Tensor64& t) {
  std::ostringstream out(std::ios::binary);
  write_scr1(out, t);
  return std::move(out).str();
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, to_scr1_bytes(t)); }
void save_tensor(const std::filesystem::path& path, const Tensor64& t) {
  write_file_atomic(path, to_scr1_bytes(t));
}

template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_scr1<T>(in);
}

template Tensor load_tensor<float>(const std::filesystem::path&);
template Tensor64 load_tensor<double>(const std::filesystem::path&);

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

}  // namespace score
