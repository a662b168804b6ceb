#ifndef PDM_PARALLEL_HPP
#define PDM_PARALLEL_HPP

#include <cstdint>

namespace pdm {

// Fixed chunk count for parallel reductions. Partial results are produced
// per chunk and merged in chunk order, so the floating-point result does not
// depend on the number of OpenMP threads.
inline constexpr int kReduceChunks = 16;

// Splits [0, n) into kReduceChunks contiguous ranges and invokes
// body(chunk_index, begin, end) for each, in parallel. Ranges are identical
// for every thread count.
template <class Body>
void for_chunks(int64_t n, Body&& body) {
  const int chunks = kReduceChunks;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < chunks; ++ci) {
    int64_t begin = n * ci / chunks;
    int64_t end = n * (ci + 1) / chunks;
    if (begin < end) body(ci, begin, end);
  }
}

}  // namespace pdm

#endif
