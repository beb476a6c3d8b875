#pragma once

#include <cstddef>
#include <functional>

namespace trideform {

// Runs fn(begin, end) over [0, n) split into fixed-size chunks. Chunk
// boundaries depend only on (n, chunk), never on the thread count, so any
// fn that writes disjoint per-index outputs produces identical bytes for
// every `threads` value. threads <= 1 runs inline.
void parallel_for(std::size_t n, std::size_t chunk, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace trideform
