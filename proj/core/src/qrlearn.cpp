#include "engage/qrlearn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "engage/dataset.hpp"

namespace engage::learn {

namespace {

template <std::floating_point T>
T sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <std::floating_point T>
T softplus(T z) {
    return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

// Flat [batch][m] target buffer.
template <std::floating_point T>
void fill_targets(std::span<const Sample* const> batch, const BasicEngagementModel<T>& target_model,
                  const BasicEngagementModel<T>& live_model, double eta, TargetDiscount discount,
                  std::vector<T>& out) {
    const std::size_t m = target_model.architecture().quantiles;
    out.resize(batch.size() * m);
    if (discount == TargetDiscount::termination_aware &&
        !live_model.architecture().termination_head) {
        throw ValidationError("termination-aware targets need a termination head");
    }
    typename BasicEngagementModel<T>::Cache cache;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Sample& s = *batch[k];
        T* row = out.data() + k * m;
        const T r = static_cast<T>(s.reward);
        if (s.terminal) {
            std::fill(row, row + m, r);
            continue;
        }
        T gamma = static_cast<T>(eta);
        if (discount == TargetDiscount::termination_aware) {
            live_model.forward(s.next_input, cache);
            gamma = std::min(T(1) - *cache.output.termination(), gamma);
        }
        target_model.forward(s.next_input, cache);
        const auto& next = cache.output.quantiles;
        for (std::size_t j = 0; j < m; ++j) row[j] = r + gamma * next[j];
    }
}

template <std::floating_point T>
T squared_loss_grad(std::span<const T> pred, std::span<const T> targets, std::span<T> d_pred) {
    const T inv_n = T(1) / T(targets.size());
    T loss = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        T acc = 0;
        for (T t : targets) {
            const T u = t - pred[i];
            loss += T(0.5) * u * u;
            acc += u;
        }
        d_pred[i] -= acc * inv_n;
    }
    return loss * inv_n;
}

template <std::floating_point T>
Objective<T> objective_impl(const BasicEngagementModel<T>& model,
                            std::span<const Sample* const> batch, std::span<const T> targets,
                            const TrainingConfig& config, std::span<T> grad,
                            std::vector<std::uint8_t>* kinks) {
    const auto& arch = model.architecture();
    const std::size_t m = arch.quantiles;
    const std::size_t n_targets = batch.empty() ? 0 : targets.size() / batch.size();
    const T inv_b = T(1) / T(batch.size());
    const T kappa = static_cast<T>(config.kappa);

    Objective<T> obj;
    typename BasicEngagementModel<T>::Cache cache;
    std::vector<T> dq(m);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Sample& sample = *batch[k];
        model.forward(sample.input, cache);
        const auto& q = cache.output.quantiles;
        const auto row = targets.subspan(k * n_targets, n_targets);

        std::fill(dq.begin(), dq.end(), T(0));
        const T value = config.value_loss == ValueLoss::quantile_huber
                            ? quantile_huber_loss_grad<T>(q, row, kappa, dq)
                            : squared_loss_grad<T>(q, row, dq);
        obj.value_loss += value;

        T d_logit = 0;
        if (arch.termination_head) {
            const T z = *cache.output.termination_logit;
            const T e = sample.terminal ? T(1) : T(0);
            obj.bce_loss += softplus(z) - e * z;
            d_logit = (sigmoid(z) - e) * inv_b;
        }

        if (kinks != nullptr) {
            for (const auto& pre : cache.preactivations) {
                for (T v : pre) kinks->push_back(v > T(0));
            }
            if (config.value_loss == ValueLoss::quantile_huber) {
                // Huber branch and the sign of u, where the quantile weight
                // switches between tau and 1 - tau.
                for (T p : q) {
                    for (T t : row) {
                        kinks->push_back(std::uint8_t((std::abs(t - p) <= kappa) | ((t < p) << 1)));
                    }
                }
            }
        }

        if (!grad.empty()) {
            for (T& g : dq) g *= inv_b;
            model.backward(cache, dq, d_logit, grad);
        }
    }
    obj.value_loss *= inv_b;
    obj.bce_loss *= inv_b;
    return obj;
}

std::vector<const Sample*> pointers(std::span<const Sample> samples) {
    std::vector<const Sample*> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

}  // namespace

void TrainingConfig::validate() const {
    if (quantiles < 1) throw ValidationError("quantiles must be at least 1");
    if (!(kappa > 0.0)) throw ValidationError("kappa must be positive");
    if (!(eta > 0.0 && eta < 1.0)) throw ValidationError("eta must lie in (0, 1)");
    if (target_copy < 1) throw ValidationError("target_copy must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (lr_final && !(*lr_final >= 0.0)) throw ValidationError("lr_final must be non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ValidationError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
    if (w_clip && !(*w_clip > 0.0)) throw ValidationError("w_clip must be positive");
    if (embedding_dim < 1) throw ValidationError("embedding_dim must be at least 1");
    if (discount == TargetDiscount::termination_aware && !termination_head) {
        throw ValidationError("termination-aware discounting needs the termination head");
    }
}

std::vector<Sample> encode_transitions(std::span<const sim::Transition> transitions) {
    std::vector<Sample> out;
    out.reserve(transitions.size());
    for (const auto& t : transitions) {
        Sample s;
        s.input = t.state;
        s.input.push_back(t.action);
        s.reward = double(t.reward);
        s.terminal = t.terminal;
        if (!t.terminal) {
            if (!t.next_state || !t.next_action) {
                throw DataError("non-terminal transition (session " + std::to_string(t.session_id) +
                                ", step " + std::to_string(t.step) + ") has no successor");
            }
            s.next_input = *t.next_state;
            s.next_input.push_back(*t.next_action);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::uint32_t> infer_vocab(std::span<const Sample> samples) {
    if (samples.empty()) throw ValidationError("cannot infer vocabularies from no samples");
    std::vector<std::uint32_t> vocab(samples.front().input.size(), 0);
    auto visit = [&](const std::vector<std::uint32_t>& ids) {
        if (ids.size() != vocab.size()) throw DataError("transitions disagree on feature count");
        for (std::size_t f = 0; f < ids.size(); ++f) vocab[f] = std::max(vocab[f], ids[f] + 1);
    };
    for (const auto& s : samples) {
        visit(s.input);
        if (!s.terminal) visit(s.next_input);
    }
    return vocab;
}

double quantile_huber_loss(std::span<const double> pred, std::span<const double> targets,
                           double kappa) {
    if (!(kappa > 0.0)) throw ValidationError("kappa must be positive");
    if (pred.empty() || targets.empty()) throw ValidationError("loss needs predictions and targets");
    std::vector<double> scratch(pred.size());
    return quantile_huber_loss_grad<double>(pred, targets, kappa, scratch);
}

template <std::floating_point T>
T quantile_huber_loss_grad(std::span<const T> pred, std::span<const T> targets, T kappa,
                           std::span<T> d_pred) {
    const std::size_t m = pred.size();
    const T inv_n = T(1) / T(targets.size());
    const T inv_kappa = T(1) / kappa;
    T loss = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const T tau = T(2 * i + 1) / T(2 * m);
        const T p = pred[i];
        T acc = 0;
        for (T t : targets) {
            const T u = t - p;
            const T a = std::abs(u);
            const T weight = u < T(0) ? T(1) - tau : tau;
            if (a <= kappa) {
                loss += weight * T(0.5) * u * u * inv_kappa;
                acc += weight * u * inv_kappa;
            } else {
                loss += weight * (a - T(0.5) * kappa);
                acc += u < T(0) ? -weight : weight;
            }
        }
        d_pred[i] -= acc * inv_n;
    }
    return loss * inv_n;
}

template float quantile_huber_loss_grad<float>(std::span<const float>, std::span<const float>,
                                               float, std::span<float>);
template double quantile_huber_loss_grad<double>(std::span<const double>,
                                                 std::span<const double>, double,
                                                 std::span<double>);

double bce_with_logits(double logit, int terminal) {
    return softplus(logit) - double(terminal != 0) * logit;
}

double bce_loss(double ell_pred, int terminal) {
    if (!(ell_pred >= 0.0 && ell_pred <= 1.0)) {
        throw ValidationError("termination probability must lie in [0, 1]");
    }
    const bool e = terminal != 0;
    if (ell_pred == 0.0) return e ? std::numeric_limits<double>::infinity() : 0.0;
    if (ell_pred == 1.0) return e ? 0.0 : std::numeric_limits<double>::infinity();
    return bce_with_logits(std::log(ell_pred) - std::log1p(-ell_pred), terminal);
}

template <std::floating_point T>
std::vector<std::vector<T>> compute_targets(std::span<const Sample> batch,
                                            const BasicEngagementModel<T>& target_model,
                                            const BasicEngagementModel<T>& live_model,
                                            double eta, TargetDiscount discount) {
    std::vector<T> flat;
    const auto ptrs = pointers(batch);
    fill_targets<T>(ptrs, target_model, live_model, eta, discount, flat);
    const std::size_t m = target_model.architecture().quantiles;
    std::vector<std::vector<T>> out(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        out[k].assign(flat.begin() + std::ptrdiff_t(k * m), flat.begin() + std::ptrdiff_t((k + 1) * m));
    }
    return out;
}

template std::vector<std::vector<float>> compute_targets<float>(
    std::span<const Sample>, const BasicEngagementModel<float>&,
    const BasicEngagementModel<float>&, double, TargetDiscount);
template std::vector<std::vector<double>> compute_targets<double>(
    std::span<const Sample>, const BasicEngagementModel<double>&,
    const BasicEngagementModel<double>&, double, TargetDiscount);

std::vector<std::vector<float>> compute_targets(std::span<const sim::Transition> batch,
                                                const EngagementModel& target_model,
                                                const EngagementModel& live_model, double eta,
                                                TargetDiscount discount) {
    const auto samples = encode_transitions(batch);
    return compute_targets<float>(samples, target_model, live_model, eta, discount);
}

template <std::floating_point T>
Objective<T> batch_objective(const BasicEngagementModel<T>& model, std::span<const Sample> batch,
                             const std::vector<std::vector<T>>& targets,
                             const TrainingConfig& config, std::span<T> grad,
                             std::vector<std::uint8_t>* kinks) {
    if (targets.size() != batch.size()) throw ValidationError("one target vector per sample");
    std::vector<T> flat;
    for (const auto& row : targets) {
        if (row.size() != targets.front().size()) throw ValidationError("ragged target rows");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    const auto ptrs = pointers(batch);
    return objective_impl<T>(model, ptrs, flat, config, grad, kinks);
}

template Objective<float> batch_objective<float>(const BasicEngagementModel<float>&,
                                                 std::span<const Sample>,
                                                 const std::vector<std::vector<float>>&,
                                                 const TrainingConfig&, std::span<float>,
                                                 std::vector<std::uint8_t>*);
template Objective<double> batch_objective<double>(const BasicEngagementModel<double>&,
                                                   std::span<const Sample>,
                                                   const std::vector<std::vector<double>>&,
                                                   const TrainingConfig&, std::span<double>,
                                                   std::vector<std::uint8_t>*);

Architecture make_architecture(const TrainingConfig& config, std::vector<std::uint32_t> vocab) {
    Architecture arch;
    arch.vocab = std::move(vocab);
    arch.embedding_dim = config.embedding_dim;
    arch.hidden = config.hidden;
    arch.quantiles = config.quantiles;
    arch.termination_head = config.termination_head;
    arch.validate();
    return arch;
}

TrainResult train(std::span<const sim::Transition> logs, const TrainingConfig& config,
                  const std::function<void(const StepEvent&)>& on_step) {
    config.validate();
    if (logs.empty()) throw ValidationError("training logs are empty");
    const auto samples = encode_transitions(logs);
    auto vocab = config.vocab.empty() ? infer_vocab(samples) : config.vocab;

    EngagementModel live(make_architecture(config, std::move(vocab)));
    live.initialize(config.seed);
    EngagementModel target = live;

    const std::size_t n_params = live.parameter_count();
    std::vector<float> grad(n_params);
    std::vector<double> m1(n_params, 0.0);
    std::vector<double> m2(n_params, 0.0);
    std::vector<float> targets;
    std::vector<const Sample*> batch;

    io::BatchIterator batches(samples.size(), config.batch_size, config.seed, config.epochs);
    const std::size_t total_steps = batches.total_batches();

    TrainResult result;
    result.trace.reserve(total_steps);
    std::size_t step = 0;
    while (auto indices = batches.next()) {
        ++step;
        batch.clear();
        for (std::size_t i : *indices) batch.push_back(&samples[i]);

        fill_targets<float>(batch, target, live, config.eta, config.discount, targets);
        std::fill(grad.begin(), grad.end(), 0.0f);
        const auto obj =
            objective_impl<float>(live, batch, targets, config, std::span<float>(grad), nullptr);

        double norm2 = 0.0;
        for (float g : grad) norm2 += double(g) * double(g);
        if (!std::isfinite(obj.total()) || !std::isfinite(norm2)) {
            throw DivergenceError("training loss became non-finite at step " + std::to_string(step),
                                  step);
        }
        double scale = 1.0;
        if (config.w_clip && std::sqrt(norm2) > *config.w_clip) {
            scale = *config.w_clip / std::sqrt(norm2);
        }

        double lr = config.learning_rate;
        if (config.lr_final && total_steps > 1) {
            const double frac = double(step - 1) / double(total_steps - 1);
            lr += (*config.lr_final - config.learning_rate) * frac;
        }
        const double b1 = config.adam_beta1;
        const double b2 = config.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, double(step));
        const double c2 = 1.0 - std::pow(b2, double(step));
        auto params = live.parameters();
        for (std::size_t i = 0; i < n_params; ++i) {
            const double g = double(grad[i]) * scale;
            m1[i] = b1 * m1[i] + (1.0 - b1) * g;
            m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
            const double update = lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + config.adam_eps);
            params[i] = static_cast<float>(double(params[i]) - update);
        }

        const bool copy = step % config.target_copy == 0;
        if (copy) target = live;

        result.trace.push_back(TraceRow{step, double(obj.value_loss), double(obj.bce_loss),
                                        double(obj.value_loss) + double(obj.bce_loss)});
        if (on_step) on_step(StepEvent{step, live, target, copy});
    }
    result.model = std::move(live);
    return result;
}

GradientCheck gradient_check(const EngagementModel& model, std::span<const sim::Transition> batch,
                             const TrainingConfig& config, double step) {
    auto md = model.cast<double>();
    const auto samples = encode_transitions(batch);
    const auto ptrs = pointers(samples);
    const TargetDiscount discount = md.architecture().termination_head
                                        ? config.discount
                                        : TargetDiscount::constant;
    std::vector<double> targets;
    fill_targets<double>(ptrs, md, md, config.eta, discount, targets);

    std::vector<double> analytic(md.parameter_count(), 0.0);
    std::vector<std::uint8_t> base_kinks;
    objective_impl<double>(md, ptrs, targets, config, analytic, &base_kinks);

    GradientCheck result;
    auto params = md.parameters();
    std::vector<std::uint8_t> kinks;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        kinks.clear();
        const double up = objective_impl<double>(md, ptrs, targets, config, {}, &kinks).total();
        const bool up_same = kinks == base_kinks;
        params[i] = saved - step;
        kinks.clear();
        const double down = objective_impl<double>(md, ptrs, targets, config, {}, &kinks).total();
        const bool down_same = kinks == base_kinks;
        params[i] = saved;

        if (!up_same || !down_same) {
            ++result.skipped;
            continue;
        }
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
        result.max_relative_error = std::max(result.max_relative_error, err);
        ++result.checked;
    }
    return result;
}

}  // namespace engage::learn
