#pragma once

#include <functional>

namespace oap {

// Worker count for per-image fan-out: OAP_THREADS when set, else the
// hardware count. Callers write results into index-addressed slots so the
// merge order is deterministic regardless of the pool size.
int worker_threads();

void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace oap
