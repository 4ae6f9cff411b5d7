#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpunet/errors.hpp"
#include "cpunet/tensor.hpp"

namespace cpunet::loss {

constexpr double kProbClamp = 1e-7;
constexpr double kDiceSmooth = 1.0;

struct LossBreakdown {
    double bce = 0.0;
    double dice = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

/// Raised when a loss component is NaN or infinite; carries the breakdown.
class TrainingAbort : public NumericalError {
public:
    TrainingAbort(const std::string& what, LossBreakdown breakdown)
        : NumericalError(what), breakdown_(breakdown) {}
    const LossBreakdown& breakdown() const noexcept { return breakdown_; }

private:
    LossBreakdown breakdown_;
};

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
/// Clamped entries receive no gradient.
Tensor bce_loss(const Tensor& pred, std::span<const double> target);

/// 1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1).
Tensor dice_loss(const Tensor& pred, std::span<const double> target);

struct LossTerms {
    Tensor total;
    LossBreakdown breakdown;
};

/// bce + dice + kl with unit weights. `kl` may be undefined (CPM disabled or
/// inference), in which case it contributes 0.
LossTerms total_loss(const Tensor& pred, std::span<const double> target, const Tensor& kl);

/// Sums the components; throws TrainingAbort if any is non-finite.
LossBreakdown combine(double bce, double dice, double kl);

struct Metrics {
    double iou = 0.0;
    double dice = 0.0;
};

/// IoU and Dice of two binary masks; both are 1 when the masks are empty.
Metrics iou_dice_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);

std::vector<std::uint8_t> threshold(std::span<const double> probs, double level = 0.5);

}  // namespace cpunet::loss
