#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cpunet/tensor.hpp"

namespace cpunet {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradcheckOptions {
    double eps = 1e-5;
    /// Coordinates sampled per tensor; tensors at or below this size are
    /// checked exhaustively.
    std::size_t max_coords_per_tensor = 12;
    std::uint64_t seed = 7;
};

struct GradcheckResult {
    /// max |analytic - central| / max(1, |central|)
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t coords_checked = 0;
};

/// Compares the reverse-mode gradient of `program` against central finite
/// differences. `program` must be deterministic and return a one-element
/// loss; it is re-run twice per sampled coordinate.
/// Throws NumericalError naming the tensor when any value is non-finite.
GradcheckResult gradient_check(const std::function<Tensor()>& program, const std::vector<NamedTensor>& inputs,
                               const GradcheckOptions& options = {});

}  // namespace cpunet
