#pragma once

#include <cstddef>
#include <functional>

namespace ldct {

/// Worker thread cap. Defaults to LDCT_FORGE_THREADS when set, otherwise the
/// hardware concurrency.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(begin, end) over a static partition of [0, n). Partitions never
/// depend on timing, so results are reproducible for a fixed thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& fn);

}  // namespace ldct
