#pragma once

#include <cstddef>
#include <functional>

namespace srfm {

/// Run `fn(i)` for every i in [0, n) on up to `threads` workers
/// (0 = hardware concurrency). The first exception is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace srfm
