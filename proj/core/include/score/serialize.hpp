#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>

#include "score/tensor.hpp"

// "SCR1" tensor files: magic, u8 dtype (0=f32, 1=f64), u8 rank,
// rank x u32 little-endian dims, row-major little-endian payload.
namespace score {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

using AnyTensor = std::variant<Tensor, Tensor64>;

void write_scr1(std::ostream& out, const Tensor& t);
void write_scr1(std::ostream& out, const Tensor64& t);
AnyTensor read_scr1_any(std::istream& in);

// Reads a tensor of the requested dtype; a dtype mismatch is an IoError.
template <typename T>
BasicTensor<T> read_scr1(std::istream& in);

std::string to_scr1_bytes(const Tensor& t);
std::string to_scr1_bytes(const Tensor64& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
void save_tensor(const std::filesystem::path& path, const Tensor64& t);
template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& path);

// Writes to a sibling temp file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace score
