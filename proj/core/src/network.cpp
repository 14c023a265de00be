#include "engage/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "engage/common.hpp"
#include "engage/rng.hpp"

namespace engage::learn {

namespace {

// y[o] += sum_i x[i] * w[i][o]
template <typename T>
void affine(std::span<const T> x, const T* w, std::size_t out, T* y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T xi = x[i];
        if (xi == T(0)) continue;
        const T* row = w + i * out;
        for (std::size_t o = 0; o < out; ++o) y[o] += xi * row[o];
    }
}

// gw[i][o] += x[i] * dy[o];  dx[i] = sum_o w[i][o] * dy[o]
template <typename T>
void affine_backward(std::span<const T> x, const T* w, std::span<const T> dy, T* gw,
                     T* dx) {
    const std::size_t out = dy.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T xi = x[i];
        const T* row = w + i * out;
        if (xi != T(0)) {
            T* grow = gw + i * out;
            for (std::size_t o = 0; o < out; ++o) grow[o] += xi * dy[o];
        }
        if (dx != nullptr) {
            T acc = 0;
            for (std::size_t o = 0; o < out; ++o) acc += row[o] * dy[o];
            dx[i] = acc;
        }
    }
}

}  // namespace

void Architecture::validate() const {
    if (vocab.size() < 2) {
        throw ValidationError("architecture needs at least one state field and the action field");
    }
    for (auto v : vocab) {
        if (v == 0) throw ValidationError("embedding vocabularies must be non-empty");
    }
    if (embedding_dim == 0) throw ValidationError("embedding_dim must be positive");
    for (auto h : hidden) {
        if (h == 0) throw ValidationError("hidden layer widths must be positive");
    }
    if (quantiles == 0) throw ValidationError("quantile count must be at least 1");
}

std::vector<TensorSpec> parameter_layout(const Architecture& arch) {
    std::vector<TensorSpec> layout;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        std::size_t size = 1;
        for (auto d : shape) size *= d;
        layout.push_back({std::move(name), std::move(shape), offset, size});
        offset += size;
    };
    for (std::size_t f = 0; f < arch.vocab.size(); ++f) {
        add("embedding." + std::to_string(f), {arch.vocab[f], arch.embedding_dim});
    }
    std::size_t width = arch.input_dim();
    for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
        add("trunk." + std::to_string(l) + ".weight", {width, arch.hidden[l]});
        add("trunk." + std::to_string(l) + ".bias", {arch.hidden[l]});
        width = arch.hidden[l];
    }
    add("quantile_head.weight", {width, arch.quantiles});
    add("quantile_head.bias", {arch.quantiles});
    if (arch.termination_head) {
        add("termination_head.weight", {width, 1});
        add("termination_head.bias", {1});
    }
    return layout;
}

template <std::floating_point T>
std::optional<T> BasicEngagementModel<T>::Output::termination() const {
    if (!termination_logit) return std::nullopt;
    const T z = *termination_logit;
    // Branches keep exp() from overflowing.
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <std::floating_point T>
BasicEngagementModel<T>::BasicEngagementModel(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    tensors_ = parameter_layout(arch_);
    params_.assign(tensors_.back().offset + tensors_.back().size, T(0));

    std::size_t t = 0;
    for (std::size_t f = 0; f < arch_.vocab.size(); ++f) embedding_offsets_.push_back(tensors_[t++].offset);
    for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
        layer_offsets_.push_back(tensors_[t].offset);
        t += 2;
    }
    quantile_offset_ = tensors_[t].offset;
    t += 2;
    if (arch_.termination_head) termination_offset_ = tensors_[t].offset;
}

template <std::floating_point T>
void BasicEngagementModel<T>::initialize(std::uint64_t seed, bool zero_output_layers) {
    Engine rng(seed);
    auto fill = [&](const TensorSpec& spec, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < spec.size; ++i) {
            params_[spec.offset + i] = bound == 0.0 ? T(0) : static_cast<T>(dist(rng));
        }
    };
    for (const auto& spec : tensors_) {
        const bool is_bias = spec.shape.size() == 1;
        const bool is_embedding = spec.name.starts_with("embedding.");
        const bool is_output = spec.name.starts_with("quantile_head.") ||
                               spec.name.starts_with("termination_head.");
        if (is_bias) {
            fill(spec, 0.0);
        } else if (is_embedding) {
            fill(spec, 1.0);
        } else if (is_output) {
            fill(spec, zero_output_layers ? 0.0 : 1.0 / std::sqrt(double(spec.shape[0])));
        } else {
            fill(spec, std::sqrt(6.0 / double(spec.shape[0])));
        }
    }
}

template <std::floating_point T>
void BasicEngagementModel<T>::check_features(std::span<const std::uint32_t> features) const {
    if (features.size() != arch_.vocab.size()) {
        throw DataError("expected " + std::to_string(arch_.vocab.size()) +
                        " feature ids, got " + std::to_string(features.size()));
    }
    for (std::size_t f = 0; f < features.size(); ++f) {
        if (features[f] >= arch_.vocab[f]) {
            throw DataError("feature id " + std::to_string(features[f]) + " is out of range for field " +
                            std::to_string(f) + " (vocabulary " + std::to_string(arch_.vocab[f]) + ")");
        }
    }
}

template <std::floating_point T>
typename BasicEngagementModel<T>::Output BasicEngagementModel<T>::forward(
    std::span<const std::uint32_t> features) const {
    Cache cache;
    forward(features, cache);
    return std::move(cache.output);
}

template <std::floating_point T>
void BasicEngagementModel<T>::forward(std::span<const std::uint32_t> features,
                                      Cache& cache) const {
    check_features(features);
    const std::size_t d = arch_.embedding_dim;
    const std::size_t layers = arch_.hidden.size();
    cache.features.assign(features.begin(), features.end());
    cache.activations.resize(layers + 1);
    cache.preactivations.resize(layers);

    auto& input = cache.activations[0];
    input.resize(arch_.input_dim());
    for (std::size_t f = 0; f < features.size(); ++f) {
        const T* row = params_.data() + embedding_offsets_[f] + std::size_t(features[f]) * d;
        std::copy(row, row + d, input.begin() + f * d);
    }

    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t out = arch_.hidden[l];
        const T* w = params_.data() + layer_offsets_[l];
        const T* b = w + cache.activations[l].size() * out;
        auto& pre = cache.preactivations[l];
        pre.assign(b, b + out);
        affine<T>(cache.activations[l], w, out, pre.data());
        auto& act = cache.activations[l + 1];
        act.resize(out);
        for (std::size_t o = 0; o < out; ++o) act[o] = pre[o] > T(0) ? pre[o] : T(0);
    }

    const auto& h = cache.activations.back();
    const std::size_t m = arch_.quantiles;
    const T* wq = params_.data() + quantile_offset_;
    const T* bq = wq + h.size() * m;
    auto& q = cache.output.quantiles;
    q.assign(bq, bq + m);
    affine<T>(h, wq, m, q.data());

    if (arch_.termination_head) {
        const T* wl = params_.data() + termination_offset_;
        T z = wl[h.size()];
        affine<T>(h, wl, 1, &z);
        cache.output.termination_logit = z;
    } else {
        cache.output.termination_logit.reset();
    }
}

template <std::floating_point T>
void BasicEngagementModel<T>::backward(const Cache& cache, std::span<const T> d_quantiles,
                                       T d_logit, std::span<T> grad) const {
    const std::size_t layers = arch_.hidden.size();
    const std::size_t m = arch_.quantiles;
    const auto& h = cache.activations.back();
    T* g = grad.data();

    std::vector<T> dh(h.size());
    const std::size_t wq = quantile_offset_;
    affine_backward<T>(h, params_.data() + wq, d_quantiles, g + wq, dh.data());
    for (std::size_t o = 0; o < m; ++o) g[wq + h.size() * m + o] += d_quantiles[o];

    if (arch_.termination_head && d_logit != T(0)) {
        const std::size_t wl = termination_offset_;
        for (std::size_t i = 0; i < h.size(); ++i) {
            g[wl + i] += h[i] * d_logit;
            dh[i] += params_[wl + i] * d_logit;
        }
        g[wl + h.size()] += d_logit;
    }

    std::vector<T> dpre;
    for (std::size_t l = layers; l-- > 0;) {
        const auto& pre = cache.preactivations[l];
        const auto& in = cache.activations[l];
        const std::size_t out = pre.size();
        dpre.resize(out);
        for (std::size_t o = 0; o < out; ++o) dpre[o] = pre[o] > T(0) ? dh[o] : T(0);
        const std::size_t w = layer_offsets_[l];
        for (std::size_t o = 0; o < out; ++o) g[w + in.size() * out + o] += dpre[o];
        dh.assign(in.size(), T(0));
        affine_backward<T>(in, params_.data() + w, dpre, g + w, dh.data());
    }

    const std::size_t d = arch_.embedding_dim;
    for (std::size_t f = 0; f < cache.features.size(); ++f) {
        T* row = g + embedding_offsets_[f] + std::size_t(cache.features[f]) * d;
        for (std::size_t k = 0; k < d; ++k) row[k] += dh[f * d + k];
    }
}

template class BasicEngagementModel<float>;
template class BasicEngagementModel<double>;

}  // namespace engage::learn
