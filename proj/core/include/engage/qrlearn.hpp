#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "engage/network.hpp"
#include "engage/simenv.hpp"

namespace engage::learn {

enum class ValueLoss {
    quantile_huber,  // distributional head, one output per quantile midpoint
    squared,         // scalar regression; used with quantiles = 1
};

enum class TargetDiscount {
    constant,           // gamma' = eta
    termination_aware,  // gamma' = min(1 - ell(s', a'), eta), ell from the live model
};

struct TrainingConfig {
    std::uint32_t quantiles = 200;
    double kappa = 1.0;
    double eta = 0.95;
    std::size_t target_copy = 100;
    std::size_t batch_size = 32;
    double learning_rate = 0.00015;
    // When set, the step size decays linearly to this value on the last step.
    std::optional<double> lr_final;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    // Global gradient-norm clip.
    std::optional<double> w_clip;

    std::uint32_t embedding_dim = 32;
    std::vector<std::uint32_t> hidden{64, 64};
    ValueLoss value_loss = ValueLoss::quantile_huber;
    TargetDiscount discount = TargetDiscount::termination_aware;
    bool termination_head = true;
    // Vocabulary per input field (state fields, then action). Empty means
    // max id + 1 observed in the training logs.
    std::vector<std::uint32_t> vocab;

    void validate() const;

    bool operator==(const TrainingConfig&) const = default;
};

// A transition in model-input form: state features followed by the action.
struct Sample {
    std::vector<std::uint32_t> input;
    std::vector<std::uint32_t> next_input;  // empty when terminal
    double reward = 0.0;
    bool terminal = false;
};

// Throws DataError when a non-terminal transition lacks its successor.
std::vector<Sample> encode_transitions(std::span<const sim::Transition> transitions);

std::vector<std::uint32_t> infer_vocab(std::span<const Sample> samples);

// (1/N) sum_i sum_j rho^kappa_{tau_i}(target_j - pred_i) with tau_i the
// quantile midpoints of pred.size() and N = targets.size().
double quantile_huber_loss(std::span<const double> pred, std::span<const double> targets,
                           double kappa);

// Same loss, accumulating d(loss)/d(pred) into d_pred.
template <std::floating_point T>
T quantile_huber_loss_grad(std::span<const T> pred, std::span<const T> targets, T kappa,
                           std::span<T> d_pred);

// Binary cross-entropy of a predicted termination probability.
double bce_loss(double ell_pred, int terminal);
// Same loss from the logit: softplus(z) - e * z.
double bce_with_logits(double logit, int terminal);

// Per-sample target vectors (one entry per quantile). Terminal samples get r
// in every slot; others get r + gamma' * beta'(s', a') with beta' from
// `target_model`. No gradient flows through the result.
template <std::floating_point T>
std::vector<std::vector<T>> compute_targets(std::span<const Sample> batch,
                                            const BasicEngagementModel<T>& target_model,
                                            const BasicEngagementModel<T>& live_model,
                                            double eta, TargetDiscount discount);

std::vector<std::vector<float>> compute_targets(std::span<const sim::Transition> batch,
                                                const EngagementModel& target_model,
                                                const EngagementModel& live_model, double eta,
                                                TargetDiscount discount =
                                                    TargetDiscount::termination_aware);

template <std::floating_point T>
struct Objective {
    T value_loss = 0;
    T bce_loss = 0;
    T total() const { return value_loss + bce_loss; }
};

// Mean over the batch of the value loss plus the termination cross-entropy,
// with fixed targets. Gradients are accumulated into `grad` when it is
// non-empty. `kinks`, when given, receives the ReLU gates, huber branches and
// residual signs touched by the evaluation.
template <std::floating_point T>
Objective<T> batch_objective(const BasicEngagementModel<T>& model, std::span<const Sample> batch,
                             const std::vector<std::vector<T>>& targets,
                             const TrainingConfig& config, std::span<T> grad,
                             std::vector<std::uint8_t>* kinks = nullptr);

struct TraceRow {
    std::size_t step = 0;
    double quantile_loss = 0.0;  // value loss: quantile huber, or squared for scalar heads
    double bce_loss = 0.0;
    double total = 0.0;

    bool operator==(const TraceRow&) const = default;
};

struct StepEvent {
    std::size_t step;
    const EngagementModel& live;
    const EngagementModel& target;
    bool target_copied;
};

struct TrainResult {
    EngagementModel model;
    std::vector<TraceRow> trace;
};

Architecture make_architecture(const TrainingConfig& config, std::vector<std::uint32_t> vocab);

// Minibatch Adam on the joint objective with a target network refreshed every
// `target_copy` steps. Deterministic given config.seed. Throws
// DivergenceError if the loss stops being finite.
TrainResult train(std::span<const sim::Transition> logs, const TrainingConfig& config,
                  const std::function<void(const StepEvent&)>& on_step = {});

struct GradientCheck {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // parameters whose perturbation crossed a kink
};

// Central finite differences (step 1e-4, double precision) against the
// analytic gradient of batch_objective, with targets computed once from
// `model`. Relative error is |a - n| / max(1, |a| + |n|).
GradientCheck gradient_check(const EngagementModel& model,
                             std::span<const sim::Transition> batch,
                             const TrainingConfig& config, double step = 1e-4);

}  // namespace engage::learn
