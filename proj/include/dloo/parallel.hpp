#pragma once

#include <cstddef>
#include <functional>

namespace dloo {

// Runs body(i) for i in [0, n). With threads > 1 the indices are spread over
// an OpenMP team (dynamic schedule, one index per chunk); otherwise they run
// in order on the calling thread. `body` must not throw.
void for_each_index(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

// Reference path kept for tests and benchmarks: plain in-order loop.
void for_each_index_serial(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dloo
