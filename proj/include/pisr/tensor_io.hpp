#pragma once

#include <string>

#include "pisr/tensor.hpp"

namespace pisr {

// Binary tensor container:
//   8 bytes magic "PISRTEN1" | 1 byte dtype (0=f32, 1=f64) | 1 byte rank |
//   6 zero pad bytes | rank x u64 LE dims | payload row-major LE.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Serialized forms of the above, for tests and in-memory round trips.
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

}  // namespace pisr
