#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fka/tensor.hpp"

namespace fka {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

using GradCheckFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Compares reverse-mode gradients of `fn` against central finite
/// differences at `inputs`. Non-scalar outputs are reduced with a fixed
/// random weighting so every output element contributes.
///
/// Relative error per element is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(const GradCheckFn& fn, const std::vector<TensorD>& inputs, double eps = 1e-5,
                           std::uint64_t seed = 17);

} // namespace fka
