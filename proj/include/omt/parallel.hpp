#pragma once

#include <cstddef>
#include <functional>

namespace omt::parallel {

// Worker count used by parallel_for. 0 means hardware_concurrency().
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs body(begin, end) over disjoint contiguous chunks of [0, n). Every index
// is processed by exactly one invocation, so results written per index do not
// depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace omt::parallel
