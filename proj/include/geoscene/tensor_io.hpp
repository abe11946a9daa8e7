#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "geoscene/tensor.hpp"

// Binary tensor files: magic "GAMK", u32 version (1), u32 ndim, ndim x u32
// dims, then row-major f32 payload. All integers and floats little-endian.

namespace geoscene {

inline constexpr char kTensorMagic[4] = {'G', 'A', 'M', 'K'};
inline constexpr uint32_t kTensorVersion = 1;

void write_tensor(std::ostream& os, const TensorT<float>& t);
TensorT<float> read_tensor(std::istream& is, const std::string& origin = "<stream>");

void save_tensor(const std::filesystem::path& path, const TensorT<float>& t);
TensorT<float> load_tensor(const std::filesystem::path& path);

} // namespace geoscene
