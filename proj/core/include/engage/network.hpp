#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "engage/common.hpp"

namespace engage::learn {

struct Architecture {
    // Vocabulary size per categorical input field; the last field is the
    // action id.
    std::vector<std::uint32_t> vocab;
    std::uint32_t embedding_dim = 32;
    std::vector<std::uint32_t> hidden{64, 64};
    std::uint32_t quantiles = 200;
    bool termination_head = true;

    std::size_t input_dim() const { return vocab.size() * embedding_dim; }
    void validate() const;

    bool operator==(const Architecture&) const = default;
};

struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    bool operator==(const TensorSpec&) const = default;
};

std::vector<TensorSpec> parameter_layout(const Architecture& arch);

// Embedding tables feeding a ReLU trunk shared by two heads: a linear head
// with one output per quantile and an optional single-logit termination head.
// All parameters live in one flat vector laid out per parameter_layout();
// dense weights are stored [in][out].
template <std::floating_point T>
class BasicEngagementModel {
  public:
    struct Output {
        std::vector<T> quantiles;
        std::optional<T> termination_logit;

        // sigmoid(logit), or nullopt without a termination head.
        std::optional<T> termination() const;
    };

    // Activations kept for the backward pass.
    struct Cache {
        std::vector<std::uint32_t> features;
        std::vector<std::vector<T>> activations;  // input embedding, then each hidden layer
        std::vector<std::vector<T>> preactivations;
        Output output;
    };

    BasicEngagementModel() = default;
    explicit BasicEngagementModel(Architecture arch);

    // Embeddings ~ U(-1, 1), hidden layers ~ U(+-sqrt(6 / fan_in)), biases 0.
    // Output layers are zero unless `zero_output_layers` is false, in which
    // case they draw from U(+-1 / sqrt(fan_in)).
    void initialize(std::uint64_t seed, bool zero_output_layers = true);

    const Architecture& architecture() const noexcept { return arch_; }
    const std::vector<TensorSpec>& tensors() const noexcept { return tensors_; }
    std::span<T> parameters() noexcept { return params_; }
    std::span<const T> parameters() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    // Throws DataError for a wrong field count or out-of-range id.
    Output forward(std::span<const std::uint32_t> features) const;
    void forward(std::span<const std::uint32_t> features, Cache& cache) const;

    // Accumulates d(loss)/d(params) into `grad` given the loss gradient with
    // respect to the quantile outputs and the termination logit.
    void backward(const Cache& cache, std::span<const T> d_quantiles, T d_logit,
                  std::span<T> grad) const;

    template <std::floating_point U>
    BasicEngagementModel<U> cast() const {
        BasicEngagementModel<U> out(arch_);
        auto dst = out.parameters();
        for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
        return out;
    }

    bool operator==(const BasicEngagementModel&) const = default;

  private:
    void check_features(std::span<const std::uint32_t> features) const;

    Architecture arch_;
    std::vector<TensorSpec> tensors_;
    std::vector<T> params_;
    std::vector<std::size_t> embedding_offsets_;
    std::vector<std::size_t> layer_offsets_;  // weight offset per trunk layer
    std::size_t quantile_offset_ = 0;
    std::size_t termination_offset_ = 0;
};

using EngagementModel = BasicEngagementModel<float>;

extern template class BasicEngagementModel<float>;
extern template class BasicEngagementModel<double>;

}  // namespace engage::learn
