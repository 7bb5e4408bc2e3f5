#pragma once

#include <string>

#include "edgedoc/tensor.hpp"

namespace edgedoc {

// Binary tensor file: "BTF1" | u32 ndim | ndim x u32 dims | f32 LE payload,
// row-major. Round-trips bit-exactly.
void write_btf(const std::string& path, const Tensor& t);
Tensor read_btf(const std::string& path);

}  // namespace edgedoc
