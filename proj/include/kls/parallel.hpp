#pragma once

#include <cstddef>
#include <functional>

namespace kls {

/// Worker count: KLS_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) across up to worker_count() threads. Work is
/// handed out by index, so results written to slot i are order independent.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace kls
