#include "cpunet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "cpunet/errors.hpp"

namespace cpunet::train {

void TrainConfig::validate() const {
    if (!(lr0 >= 0.0)) throw ConfigError("train: lr0 must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (epochs == 0 && max_steps == 0) throw ConfigError("train: epochs must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train: val_fraction must be in [0, 1)");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be >= 1");
    if (step > total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
    }
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(ParameterStore& params, double lr, const TrainConfig& config) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (double g : params[i].tensor.grad()) {
            if (!std::isfinite(g)) throw NumericalError("sgd_step: non-finite gradient in '" + params[i].name + "'");
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        auto values = p.tensor.mutable_values();
        auto grad = p.tensor.mutable_grad();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j] + config.weight_decay * values[j];
            p.momentum[j] = config.momentum * p.momentum[j] + g;
            values[j] -= lr * p.momentum[j];
            grad[j] = 0.0;
        }
    }
}

Split split_dataset(std::size_t count, double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(count) * val_fraction));
    Split split;
    split.val.assign(order.begin(), order.begin() + static_cast<long>(n_val));
    split.train.assign(order.begin() + static_cast<long>(n_val), order.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

EvalReport evaluate(const CpUnet& model, std::span<const synth::Sample> samples,
                    std::span<const std::size_t> indices, std::uint64_t seed) {
    EvalReport report;
    if (indices.empty()) throw DataError("evaluate: no samples");
    const auto& cfg = model.config();
    for (std::size_t idx : indices) {
        const synth::Sample& s = samples[idx];
        if (s.height != cfg.height || s.width != cfg.width) {
            throw ConfigError("evaluate: sample " + std::to_string(idx) + " is " + std::to_string(s.height) + "x" +
                              std::to_string(s.width) + " but the model expects " + std::to_string(cfg.height) +
                              "x" + std::to_string(cfg.width));
        }
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(idx)};
        std::mt19937_64 rng(seq);
        Tensor probs = model.predict(Tensor::constant({1, s.height, s.width}, s.image), rng);
        const loss::Metrics m = loss::iou_dice_metrics(loss::threshold(probs.values()), s.mask);
        report.per_sample.push_back(m);
        report.mean_iou += m.iou;
        report.mean_dice += m.dice;
    }
    report.mean_iou /= static_cast<double>(indices.size());
    report.mean_dice /= static_cast<double>(indices.size());
    return report;
}

Snapshot snapshot(const ParameterStore& params) {
    Snapshot snap;
    snap.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto v = params[i].tensor.values();
        snap.emplace_back(v.begin(), v.end());
    }
    return snap;
}

void restore(ParameterStore& params, const Snapshot& snap) {
    if (snap.size() != params.size()) throw ContractError("restore: snapshot does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto v = params[i].tensor.mutable_values();
        if (v.size() != snap[i].size()) throw ContractError("restore: size mismatch for '" + params[i].name + "'");
        std::copy(snap[i].begin(), snap[i].end(), v.begin());
    }
}

std::string format_step(const StepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", r.step, r.lr, r.loss.bce, r.loss.dice,
                  r.loss.kl, r.loss.total);
    return buf;
}

std::string format_eval(const EvalRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "eval\t%zu\t%.17g\t%.17g", r.step, r.iou, r.dice);
    return buf;
}

TrainLog train(CpUnet& model, std::span<const synth::Sample> dataset, const TrainConfig& config,
               const TrainHooks& hooks) {
    config.validate();
    if (dataset.empty()) throw DataError("train: no samples");
    const auto& mcfg = model.config();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].height != mcfg.height || dataset[i].width != mcfg.width) {
            throw ConfigError("train: sample " + std::to_string(i) + " size does not match the model input");
        }
    }

    TrainLog log;
    log.split = split_dataset(dataset.size(), config.val_fraction, config.seed);
    if (log.split.train.empty()) throw DataError("train: empty training split");
    const std::vector<std::size_t>& eval_set = log.split.val.empty() ? log.split.train : log.split.val;

    const std::size_t per_epoch = (log.split.train.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t planned = config.max_steps ? config.max_steps : config.epochs * per_epoch;
    const std::size_t eval_every = config.eval_every ? config.eval_every : per_epoch;
    const std::size_t first = hooks.start_step;
    const std::size_t total = first + planned;

    std::mt19937_64 shuffle_rng(config.seed);
    std::mt19937_64 noise_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order = log.split.train;
    std::size_t cursor = order.size();
    ParameterStore& params = model.parameters();
    params.zero_grad();

    for (std::size_t step = first; step < total; ++step) {
        const double lr = cosine_lr(step, total, config.lr0);
        const std::size_t batch = std::min(config.batch_size, order.size());
        loss::LossBreakdown mean{};
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            const synth::Sample& s = dataset[order[cursor++]];
            const std::vector<double> target = s.mask_as_double();
            TrainingTarget tt{s.image, s.mask};
            ForwardOutput out = model.forward(Tensor::constant({1, s.height, s.width}, s.image), &tt, noise_rng);
            loss::LossTerms terms = loss::total_loss(out.probs, target, out.kl);
            backward(scale(terms.total, 1.0 / static_cast<double>(batch)));
            const double inv = 1.0 / static_cast<double>(batch);
            mean.bce += terms.breakdown.bce * inv;
            mean.dice += terms.breakdown.dice * inv;
            mean.kl += terms.breakdown.kl * inv;
        }
        StepRecord rec{step, lr, loss::combine(mean.bce, mean.dice, mean.kl)};
        sgd_step(params, lr, config);
        log.steps.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);

        const std::size_t done = step - first + 1;
        if (done % eval_every == 0 || step + 1 == total) {
            const EvalReport report = evaluate(model, dataset, eval_set, config.seed);
            EvalRecord er{step, report.mean_iou, report.mean_dice};
            log.evals.push_back(er);
            if (hooks.on_eval) hooks.on_eval(er);
            if (report.mean_dice > log.best_val_dice) {
                log.best_val_dice = report.mean_dice;
                log.best_step = step;
                log.best = snapshot(params);
            }
        }
    }
    log.final_step = total;
    return log;
}

}  // namespace cpunet::train
