#pragma once

#include <cstdint>

namespace dstg {

// Storage scalar for tensors and model weights. The finite-difference
// build compiles the whole core with DSTG_SCALAR_F64 so composed-model
// gradient checks are not drowned by f32 rounding.
#ifdef DSTG_SCALAR_F64
using real = double;
#else
using real = float;
#endif

// Runtime toggle: matmul and long reductions accumulate in double.
bool accum_f64() noexcept;
void set_accum_f64(bool on) noexcept;

} // namespace dstg
