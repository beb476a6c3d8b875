#include "trideform/core/rng.hpp"

#include <cmath>

#include "trideform/core/error.hpp"

namespace trideform {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// 64-bit finalizer with full avalanche (xorshift-multiply rounds).
inline uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

inline double to_unit(uint64_t raw) {
    return static_cast<double>(raw >> 11) * 0x1.0p-53;
}

}  // namespace

uint64_t RngStream::value_at(uint64_t ctr) const {
    const uint64_t base = mix64(seed ^ mix64(stream_id + kGolden));
    return mix64(base + (ctr + 1) * kGolden);
}

uint64_t RngStream::next_u64() {
    return value_at(counter++);
}

double RngStream::next_uniform() {
    return to_unit(next_u64());
}

double RngStream::next_gaussian() {
    // Box-Muller on a counter pair; the sine half is discarded so that the
    // draw count per value is fixed.
    const uint64_t r0 = next_u64();
    const uint64_t r1 = next_u64();
    const double u1 = static_cast<double>((r0 >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = to_unit(r1);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    return radius * std::cos(2.0 * M_PI * u2);
}

RngStream RngStream::substream(uint64_t key) const {
    RngStream sub;
    sub.seed = seed;
    sub.stream_id = mix64(stream_id ^ mix64(key + kGolden));
    return sub;
}

std::vector<float> gaussian(RngStream& rng, std::size_t n) {
    if (n == 0) throw ValidationError("gaussian: n must be positive");
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; i += 2) {
        const uint64_t r0 = rng.next_u64();
        const uint64_t r1 = rng.next_u64();
        const double u1 = static_cast<double>((r0 >> 11) + 1) * 0x1.0p-53;
        const double u2 = to_unit(r1);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        out[i] = static_cast<float>(radius * std::cos(2.0 * M_PI * u2));
        if (i + 1 < n) out[i + 1] = static_cast<float>(radius * std::sin(2.0 * M_PI * u2));
    }
    return out;
}

std::vector<double> uniform(RngStream& rng, std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = rng.next_uniform();
    return out;
}

}  // namespace trideform
