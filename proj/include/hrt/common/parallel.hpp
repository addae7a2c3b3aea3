#pragma once

#include <algorithm>
#include <cstddef>

namespace hrt {

// Process-wide thread budget for tensor kernels. The CLI sets it once;
// kernels never exceed it.
void set_num_threads(int n);
int num_threads();

// Splits [0, n) into at most num_threads() contiguous ranges of at least
// `grain` items and calls f(begin, end) on each. The partition depends only
// on n, grain and the thread budget, so results are reproducible per profile.
template <class F>
void parallel_for(std::size_t n, std::size_t grain, F&& f) {
  const std::size_t threads = static_cast<std::size_t>(num_threads());
  std::size_t chunks = grain == 0 ? threads : std::min(threads, n / std::max<std::size_t>(grain, 1));
  if (chunks <= 1 || n == 0) {
    if (n > 0) f(std::size_t{0}, n);
    return;
  }
  const std::size_t step = (n + chunks - 1) / chunks;
  const long long count = static_cast<long long>(chunks);
#pragma omp parallel for num_threads(static_cast<int>(chunks)) schedule(static, 1)
  for (long long c = 0; c < count; ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * step;
    const std::size_t end = std::min(n, begin + step);
    if (begin < end) f(begin, end);
  }
}

}  // namespace hrt
