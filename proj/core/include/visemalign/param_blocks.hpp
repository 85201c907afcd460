#pragma once

#include <string_view>
#include <vector>

#include "visemalign/numerics.hpp"

namespace visemalign {

// Non-owning view of one named trainable matrix inside a parameter set.
// is_weight is false for bias vectors (weight decay skips them).
struct ParamBlock {
  std::string_view name;
  Matrix* value;
  bool is_weight;
};

using ParamBlocks = std::vector<ParamBlock>;

std::size_t total_size(const ParamBlocks& blocks);

// Concatenate all blocks, in order, into one vector.
Vec flatten(const ParamBlocks& blocks);
// Inverse of flatten. Throws ShapeError on length mismatch.
void unflatten(std::span<const double> flat, const ParamBlocks& blocks);

// Throws NumericError naming the first block containing NaN/Inf.
void require_finite(const ParamBlocks& blocks, std::string_view what);

}  // namespace visemalign
