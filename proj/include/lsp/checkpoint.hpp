#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "lsp/tensor.hpp"

namespace lsp {

// Blob layout, all integers little-endian:
//   "LPT1" | precision u8 (0 single, 1 double) | count u32 |
//   per array: name_len u16 | name | rank u8 | extents u32 x rank | raw elements
// Decoding converts to the requested scalar type.

template <typename Scalar>
std::string encode_checkpoint(const ParameterSet<Scalar>& params);

template <typename Scalar>
ParameterSet<Scalar> decode_checkpoint(std::string_view blob);

Precision checkpoint_precision(std::string_view blob);

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<Scalar>& params);

template <typename Scalar>
ParameterSet<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Short hex digest of the single-precision encoding, so a model keeps its
/// identity when loaded at either precision.
template <typename Scalar>
std::string fingerprint(const ParameterSet<Scalar>& params);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lsp
