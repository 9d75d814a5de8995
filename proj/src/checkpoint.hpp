#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace unitok {

// Flat binary store of named f64 tensors. Record layout, little-endian:
//   u32 name_len | name bytes | u32 dtype_len | "f64" | u32 rank |
//   u64 shape[rank] | f64 data[prod(shape)]
// A sibling JSON manifest at <path>.json lists names and shapes in file order.
// Round-trips are bit-exact.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& entries);

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

}  // namespace unitok
