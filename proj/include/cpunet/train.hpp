#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cpunet/losses.hpp"
#include "cpunet/network.hpp"
#include "cpunet/synth.hpp"

namespace cpunet::train {

struct TrainConfig {
    double lr0 = 1e-3;
    double momentum = 0.9;
    double weight_decay = 0.01;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    std::uint64_t seed = 1;
    /// Evaluate every N steps (0: once per epoch). The last step always evaluates.
    std::size_t eval_every = 0;
    /// Stop after this many steps (0: epochs * batches per epoch).
    std::size_t max_steps = 0;
    double val_fraction = 0.2;

    void validate() const;
};

/// 0.5 * lr0 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// Classic SGD with L2 decay folded into the gradient and heavy-ball
/// momentum; gradients are zeroed afterwards. Throws NumericalError naming
/// the first parameter with a non-finite gradient (no parameter is touched).
void sgd_step(ParameterStore& params, double lr, const TrainConfig& config);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Seed-fixed shuffle; the first floor(n * val_fraction) indices go to val.
Split split_dataset(std::size_t count, double val_fraction, std::uint64_t seed);

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    loss::LossBreakdown loss;
};

struct EvalRecord {
    std::size_t step = 0;
    double iou = 0.0;
    double dice = 0.0;
};

struct EvalReport {
    double mean_iou = 0.0;
    double mean_dice = 0.0;
    std::vector<loss::Metrics> per_sample;
};

/// Inference-mode metrics (no target branch, no KL). Noise for sample i is
/// drawn from a generator seeded with (seed, i), so results are reproducible.
EvalReport evaluate(const CpUnet& model, std::span<const synth::Sample> samples,
                    std::span<const std::size_t> indices, std::uint64_t seed);

/// Values of every parameter, in store order.
using Snapshot = std::vector<std::vector<double>>;
Snapshot snapshot(const ParameterStore& params);
void restore(ParameterStore& params, const Snapshot& snap);

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    Split split;
    double best_val_dice = -1.0;
    std::size_t best_step = 0;
    Snapshot best;
    std::size_t final_step = 0;  // one past the last step taken
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EvalRecord&)> on_eval;
    /// Step number of the first step (resumed runs).
    std::size_t start_step = 0;
};

std::string format_step(const StepRecord& record);
std::string format_eval(const EvalRecord& record);

/// Runs forward -> total_loss -> backward -> sgd_step over shuffled batches
/// of the training split with a cosine-annealed learning rate. When the
/// split has no validation samples, evaluation uses the training samples.
TrainLog train(CpUnet& model, std::span<const synth::Sample> dataset, const TrainConfig& config,
               const TrainHooks& hooks = {});

}  // namespace cpunet::train
