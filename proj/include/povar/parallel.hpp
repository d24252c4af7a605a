#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace povar {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency; POVAR_THREADS overrides it.
std::size_t worker_count();
void set_worker_count(std::size_t n);

/// Calls fn(i) for i in [0, n). Work is split into contiguous chunks, one per
/// worker. Callers must only write to index-owned outputs so that results do
/// not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Pairwise (cascade) summation in a fixed order. Bit-reproducible for a given
/// input sequence, independent of thread count.
double pairwise_sum(std::span<const double> values);

}  // namespace povar
