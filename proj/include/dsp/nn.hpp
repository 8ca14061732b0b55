#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsp/errors.hpp"
#include "dsp/rng.hpp"
#include "dsp/vec.hpp"

namespace dsp {

enum class Activation { ReLU, Identity };

struct DenseLayer {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Vec weight;  // out_dim x in_dim, row-major
    Vec bias;    // out_dim
    Activation activation = Activation::Identity;
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return layers.front().in_dim; }
    std::size_t output_dim() const { return layers.back().out_dim; }
};

// Uniform init in +-1/sqrt(fan_in), zero biases, ReLU on hidden layers and
// Identity on the last. Weights are drawn row by row, layer by layer, so a
// seed pins every value.
inline MlpParams init_params(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2)
        throw ConfigError("init_params: need at least an input and an output dimension, got " +
                          std::to_string(layer_dims.size()));
    for (std::size_t d : layer_dims)
        if (d == 0) throw ConfigError("init_params: layer dimensions must be positive");

    Rng rng(seed);
    MlpParams params;
    params.layers.resize(layer_dims.size() - 1);
    for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
        DenseLayer& layer = params.layers[k];
        layer.in_dim = layer_dims[k];
        layer.out_dim = layer_dims[k + 1];
        layer.activation =
            (k + 2 == layer_dims.size()) ? Activation::Identity : Activation::ReLU;
        const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in_dim));
        layer.weight.resize(layer.out_dim * layer.in_dim);
        for (double& w : layer.weight) w = rng.uniform(-scale, scale);
        layer.bias.assign(layer.out_dim, 0.0);
    }
    return params;
}

struct ForwardCache {
    std::vector<Vec> inputs;   // inputs[k]: input fed to layer k
    std::vector<Vec> preacts;  // preacts[k]: W x + b of layer k
};

namespace detail {

inline void affine(const DenseLayer& layer, std::span<const double> x, Vec& out) {
    out.resize(layer.out_dim);
    const double* w = layer.weight.data();
    for (std::size_t o = 0; o < layer.out_dim; ++o) {
        const double* row = w + o * layer.in_dim;
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.in_dim; ++i) acc += row[i] * x[i];
        out[o] = acc;
    }
}

inline void apply_activation(Activation act, Vec& v) {
    if (act == Activation::ReLU)
        for (double& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace detail

// Forward pass. With a cache the call records everything mlp_backward needs.
inline Vec mlp_forward(const MlpParams& params, std::span<const double> input,
                       ForwardCache* cache = nullptr) {
    if (input.size() != params.input_dim())
        throw ShapeError("mlp_forward: input has dim " + std::to_string(input.size()) +
                         ", network expects " + std::to_string(params.input_dim()));
    if (cache) {
        cache->inputs.assign(params.layers.size(), {});
        cache->preacts.assign(params.layers.size(), {});
    }
    Vec current(input.begin(), input.end());
    Vec z;
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        const DenseLayer& layer = params.layers[k];
        if (current.size() != layer.in_dim)
            throw ShapeError("mlp_forward: layer " + std::to_string(k) + " dimension mismatch");
        detail::affine(layer, current, z);
        if (cache) {
            cache->inputs[k] = std::move(current);
            cache->preacts[k] = z;
        }
        detail::apply_activation(layer.activation, z);
        current = std::move(z);
        z.clear();
    }
    return current;
}

// Gradient container shaped like an MlpParams (activation fields unused).
inline MlpParams zeros_like(const MlpParams& params) {
    MlpParams g = params;
    for (DenseLayer& layer : g.layers) {
        std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    return g;
}

// Exact reverse-mode gradients of output . upstream w.r.t. parameters and
// input. Accumulates into `grads` (+=) and returns the input gradient.
inline Vec mlp_backward(const MlpParams& params, const ForwardCache& cache,
                        std::span<const double> upstream, MlpParams& grads) {
    const std::size_t L = params.layers.size();
    if (cache.inputs.size() != L || cache.preacts.size() != L)
        throw ShapeError("mlp_backward: cache does not match network depth");
    if (grads.layers.size() != L)
        throw ShapeError("mlp_backward: gradient container does not match network depth");
    if (upstream.size() != params.output_dim())
        throw ShapeError("mlp_backward: upstream has dim " + std::to_string(upstream.size()) +
                         ", output dim is " + std::to_string(params.output_dim()));

    Vec delta(upstream.begin(), upstream.end());
    Vec next;
    for (std::size_t k = L; k-- > 0;) {
        const DenseLayer& layer = params.layers[k];
        const Vec& x = cache.inputs[k];
        const Vec& z = cache.preacts[k];
        if (x.size() != layer.in_dim || z.size() != layer.out_dim)
            throw ShapeError("mlp_backward: cache produced by a different network");

        if (layer.activation == Activation::ReLU)
            for (std::size_t o = 0; o < layer.out_dim; ++o)
                if (z[o] <= 0.0) delta[o] = 0.0;

        DenseLayer& g = grads.layers[k];
        for (std::size_t o = 0; o < layer.out_dim; ++o) {
            const double d = delta[o];
            g.bias[o] += d;
            double* grow = g.weight.data() + o * layer.in_dim;
            for (std::size_t i = 0; i < layer.in_dim; ++i) grow[i] += d * x[i];
        }

        next.assign(layer.in_dim, 0.0);
        for (std::size_t o = 0; o < layer.out_dim; ++o) {
            const double d = delta[o];
            const double* row = layer.weight.data() + o * layer.in_dim;
            for (std::size_t i = 0; i < layer.in_dim; ++i) next[i] += d * row[i];
        }
        delta = std::move(next);
        next.clear();
    }
    return delta;
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

using TensorView = std::span<double>;
using ConstTensorView = std::span<const double>;

// Moments are kept per parameter tensor, mirroring the parameter shapes.
struct AdamWState {
    AdamWConfig config;
    std::vector<Vec> first_moment;
    std::vector<Vec> second_moment;
    std::uint64_t step_count = 0;
};

inline AdamWState make_adamw_state(const std::vector<std::size_t>& tensor_sizes,
                                   const AdamWConfig& config) {
    AdamWState state;
    state.config = config;
    state.first_moment.reserve(tensor_sizes.size());
    state.second_moment.reserve(tensor_sizes.size());
    for (std::size_t n : tensor_sizes) {
        state.first_moment.emplace_back(n, 0.0);
        state.second_moment.emplace_back(n, 0.0);
    }
    return state;
}

// Decoupled-weight-decay Adam with bias correction. Aborts (state untouched)
// if any gradient entry is non-finite.
inline void adamw_step(const std::vector<TensorView>& params,
                       const std::vector<ConstTensorView>& grads, AdamWState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw ShapeError("adamw_step: tensor count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size() != grads[k].size() ||
            params[k].size() != state.first_moment[k].size())
            throw ShapeError("adamw_step: tensor " + std::to_string(k) + " size mismatch");
        if (!all_finite(grads[k]))
            throw NumericError("adamw_step: non-finite gradient in tensor " + std::to_string(k) +
                               ", update aborted");
    }

    state.step_count += 1;
    const AdamWConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));

    for (std::size_t k = 0; k < params.size(); ++k) {
        double* p = params[k].data();
        const double* g = grads[k].data();
        double* m = state.first_moment[k].data();
        double* v = state.second_moment[k].data();
        const std::size_t n = params[k].size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * p[i]);
        }
    }
}

inline std::vector<TensorView> tensor_views(MlpParams& params) {
    std::vector<TensorView> views;
    views.reserve(params.layers.size() * 2);
    for (DenseLayer& layer : params.layers) {
        views.emplace_back(layer.weight);
        views.emplace_back(layer.bias);
    }
    return views;
}

inline std::vector<ConstTensorView> tensor_views(const MlpParams& params) {
    std::vector<ConstTensorView> views;
    views.reserve(params.layers.size() * 2);
    for (const DenseLayer& layer : params.layers) {
        views.emplace_back(layer.weight);
        views.emplace_back(layer.bias);
    }
    return views;
}

inline std::vector<std::size_t> tensor_sizes(const MlpParams& params) {
    std::vector<std::size_t> sizes;
    for (const DenseLayer& layer : params.layers) {
        sizes.push_back(layer.weight.size());
        sizes.push_back(layer.bias.size());
    }
    return sizes;
}

inline void adamw_step(MlpParams& params, const MlpParams& grads, AdamWState& state) {
    adamw_step(tensor_views(params), tensor_views(grads), state);
}

}  // namespace dsp
