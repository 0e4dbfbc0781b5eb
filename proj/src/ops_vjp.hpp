#pragma once

#include <functional>
#include <vector>

#include "oap/tape.hpp"

namespace oap::detail {

// Accumulates the vector-Jacobian product of one node into the buffers
// returned by grad_buf(slot); slots returning nullptr are skipped.
void op_vjp(const TapeNode& nd, const std::vector<float>& g,
            const std::function<float*(int)>& grad_buf);

}  // namespace oap::detail
