#include "dstg/scalar.hpp"

namespace dstg {

namespace {
bool g_accum_f64 = false;
}

bool accum_f64() noexcept { return g_accum_f64; }
void set_accum_f64(bool on) noexcept { g_accum_f64 = on; }

} // namespace dstg
