#include "cpunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cpunet/errors.hpp"

namespace cpunet {

namespace {

double evaluate(const std::function<Tensor()>& program) {
    ad::NoGradGuard guard;
    return program().item();
}

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n <= limit) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GradcheckResult gradient_check(const std::function<Tensor()>& program, const std::vector<NamedTensor>& inputs,
                               const GradcheckOptions& options) {
    std::vector<NamedTensor> params = inputs;
    for (auto& p : params) {
        if (!p.tensor.requires_grad()) throw ContractError("gradient_check: '" + p.name + "' is not a variable");
        p.tensor.zero_grad();
        for (double v : p.tensor.values()) {
            if (!std::isfinite(v)) throw NumericalError("gradient_check: non-finite value in '" + p.name + "'");
        }
    }

    const Tensor loss = program();
    if (!std::isfinite(loss.item())) throw NumericalError("gradient_check: non-finite loss");
    backward(loss);

    std::mt19937_64 rng(options.seed);
    GradcheckResult result;
    for (auto& p : params) {
        const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        auto values = p.tensor.mutable_values();
        for (std::size_t i : sample_coords(values.size(), options.max_coords_per_tensor, rng)) {
            const double saved = values[i];
            values[i] = saved + options.eps;
            const double up = evaluate(program);
            values[i] = saved - options.eps;
            const double down = evaluate(program);
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.eps);
            if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
                throw NumericalError("gradient_check: non-finite gradient for '" + p.name + "' at index " +
                                     std::to_string(i));
            }
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            ++result.coords_checked;
            if (err >= result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_tensor = p.name;
            }
        }
        p.tensor.zero_grad();
        for (double v : p.tensor.values()) {
            if (!std::isfinite(v)) throw NumericalError("gradient_check: non-finite value in '" + p.name + "'");
        }
    }
    return result;
}

}  // namespace cpunet
