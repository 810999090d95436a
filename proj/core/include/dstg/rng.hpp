#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dstg {

// Counter-based splittable generator. A generator is a (key, counter)
// pair; derive() produces an independent stream without consuming state,
// so the draw history of one purpose never shifts another. Training code
// keys streams by (seed, purpose, step, slot), which makes checkpoint
// resume exact: the state is reconstructible from the step counter alone.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    Rng derive(uint64_t stream) const {
        return Rng(FromKey{}, mix(key_ ^ mix(stream + 0x632be59bd9b4e019ull)));
    }
    Rng derive(std::string_view name) const { return derive(fnv1a(name)); }

    uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // [0, 1); 53-bit mantissa
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // unbiased integer in [0, n)
    uint32_t below(uint32_t n) {
        uint64_t threshold = (~uint64_t(0) - n + 1) % n; // 2^64 mod n
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return uint32_t(r % n);
        }
    }

    // standard normal, Box-Muller with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        double mag = std::sqrt(-2.0 * std::log1p(-u1)); // log(1-u1), u1 < 1
        double ang = 6.283185307179586 * u2;
        spare_ = mag * std::sin(ang);
        has_spare_ = true;
        return mag * std::cos(ang);
    }

private:
    struct FromKey {};
    Rng(FromKey, uint64_t key) : key_(key) {}

    static uint64_t mix(uint64_t z) noexcept { // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    static uint64_t fnv1a(std::string_view s) noexcept {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= uint8_t(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace dstg
