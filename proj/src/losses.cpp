#include "cpunet/losses.hpp"

#include <algorithm>
#include <cmath>

namespace cpunet::loss {

namespace {

void check_shape(const char* op, const Tensor& pred, std::span<const double> target) {
    if (pred.numel() != target.size()) {
        throw_dimension(op, "prediction " + shape_str(pred.shape()) + " vs " + std::to_string(target.size()) +
                                " target values");
    }
    if (target.empty()) throw ContractError(std::string(op) + ": empty input");
}

}  // namespace

Tensor bce_loss(const Tensor& pred, std::span<const double> target) {
    check_shape("bce_loss", pred, target);
    const auto p = pred.values();
    const std::size_t n = p.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        total -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
    }
    std::vector<double> t(target.begin(), target.end());
    return make_op({1}, {total / static_cast<double>(n)}, {pred}, [t = std::move(t)](ad::Node& self) {
        double* gp = ad::input_grad(self, 0);
        if (!gp) return;
        const auto& p = self.inputs[0]->value;
        const double g = self.grad[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
            gp[i] += g * (-t[i] / p[i] + (1.0 - t[i]) / (1.0 - p[i]));
        }
    });
}

Tensor dice_loss(const Tensor& pred, std::span<const double> target) {
    check_shape("dice_loss", pred, target);
    const auto p = pred.values();
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * target[i];
        sp += p[i];
        st += target[i];
    }
    const double num = 2.0 * inter + kDiceSmooth;
    const double den = sp + st + kDiceSmooth;
    std::vector<double> t(target.begin(), target.end());
    return make_op({1}, {1.0 - num / den}, {pred}, [t = std::move(t), num, den](ad::Node& self) {
        double* gp = ad::input_grad(self, 0);
        if (!gp) return;
        const double g = self.grad[0];
        const double den2 = den * den;
        for (std::size_t i = 0; i < t.size(); ++i) gp[i] -= g * (2.0 * t[i] * den - num) / den2;
    });
}

LossBreakdown combine(double bce, double dice, double kl) {
    LossBreakdown b{bce, dice, kl, (bce + dice) + kl};
    if (!std::isfinite(bce) || !std::isfinite(dice) || !std::isfinite(kl) || !std::isfinite(b.total)) {
        throw TrainingAbort("non-finite loss: bce=" + std::to_string(bce) + " dice=" + std::to_string(dice) +
                                " kl=" + std::to_string(kl),
                            b);
    }
    return b;
}

LossTerms total_loss(const Tensor& pred, std::span<const double> target, const Tensor& kl) {
    Tensor bce = bce_loss(pred, target);
    Tensor dice = dice_loss(pred, target);
    LossTerms terms;
    if (kl.defined()) {
        if (kl.item() < 0.0 && std::isfinite(kl.item())) {
            throw ContractError("total_loss: negative KL " + std::to_string(kl.item()));
        }
        terms.breakdown = combine(bce.item(), dice.item(), kl.item());
        terms.total = add(add(bce, dice), kl);
    } else {
        terms.breakdown = combine(bce.item(), dice.item(), 0.0);
        terms.total = add(bce, dice);
    }
    return terms;
}

Metrics iou_dice_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
    if (pred.size() != target.size()) {
        throw_dimension("iou_dice_metrics", std::to_string(pred.size()) + " vs " + std::to_string(target.size()) +
                                                " pixels");
    }
    std::size_t inter = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = target[i] != 0;
        inter += (p && t) ? 1 : 0;
        np += p ? 1 : 0;
        nt += t ? 1 : 0;
    }
    if (np == 0 && nt == 0) return {1.0, 1.0};
    const double i = static_cast<double>(inter);
    return {i / static_cast<double>(np + nt - inter), 2.0 * i / static_cast<double>(np + nt)};
}

std::vector<std::uint8_t> threshold(std::span<const double> probs, double level) {
    std::vector<std::uint8_t> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= level ? 1 : 0;
    return out;
}

}  // namespace cpunet::loss
