#pragma once

#include <cstdint>
#include <vector>

namespace trideform {

// Counter-based random stream. A value is a pure function of
// (seed, stream_id, counter), so streams can be copied, replayed, and split
// into independent substreams without shared state. The concrete mapping is
// frozen by tests/golden/rng_seed1_stream0.txt; any implementation that
// reproduces that file is conformant.
struct RngStream {
    uint64_t seed = 0;
    uint64_t stream_id = 0;
    uint64_t counter = 0;

    RngStream() = default;
    RngStream(uint64_t seed_, uint64_t stream_id_) : seed(seed_), stream_id(stream_id_) {}

    // Raw 64-bit draw; advances the counter by one.
    uint64_t next_u64();

    // Uniform in [0, 1), 53 mantissa bits.
    double next_uniform();

    // Single standard-normal draw (consumes two raw values).
    double next_gaussian();

    // Derived stream, independent of the parent and of other keys.
    RngStream substream(uint64_t key) const;

private:
    uint64_t value_at(uint64_t ctr) const;
};

// n i.i.d. standard-normal draws as float32. Consumes 2*ceil(n/2) raw values.
std::vector<float> gaussian(RngStream& rng, std::size_t n);

// n uniform draws in [0, 1).
std::vector<double> uniform(RngStream& rng, std::size_t n);

}  // namespace trideform
