#include "dloo/parallel.hpp"

#include <omp.h>

namespace dloo {

void for_each_index_serial(std::size_t n, const std::function<void(std::size_t)>& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

void for_each_index(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for_each_index_serial(n, body);
    return;
  }
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long long i = 0; i < count; ++i) {
    body(static_cast<std::size_t>(i));
  }
}

}  // namespace dloo
