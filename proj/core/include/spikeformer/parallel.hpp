#pragma once

#include <cstddef>
#include <functional>

namespace spikeformer {

// Worker cap for intra-op parallelism. Initialised from SPIKEFORMER_THREADS
// (default: logical CPU count) on first use.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Static contiguous partition of [begin, end) over thread_count() workers.
// Each index is visited exactly once; callers must write disjoint outputs so
// results do not depend on the partition.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& body);

}  // namespace spikeformer
