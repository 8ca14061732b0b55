#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dsp/checkpoint.hpp"
#include "dsp/diffusion.hpp"
#include "dsp/errors.hpp"
#include "dsp/nn.hpp"
#include "dsp/rng.hpp"
#include "dsp/vec.hpp"

namespace dsp {

struct PolicyConfig {
    std::size_t obs_dim = 0;
    std::size_t act_dim = 0;
    std::size_t hidden_dim = 128;
    std::size_t embed_dim = 128;
    int T = 5;
    std::uint64_t seed = 0;
};

// Conditional denoiser: eps_hat = denoiser(concat(act_embed(a_t),
// time_embed[t], obs_embed(obs))). The time conditioning is a learned T x E
// table trained jointly with the networks.
struct PolicyParams {
    MlpParams obs_embed;  // [obs, E, E]
    MlpParams act_embed;  // [act, E, E]
    Vec time_embed;       // T x E, row-major
    MlpParams denoiser;   // [3E, H, H, H, act]
    std::size_t embed_dim = 0;
    int T = 0;

    std::size_t obs_dim() const { return obs_embed.input_dim(); }
    std::size_t act_dim() const { return act_embed.input_dim(); }

    std::span<const double> time_row(int t) const {
        if (t < 1 || t > T)
            throw IndexError("time embedding step " + std::to_string(t) + " outside 1.." +
                             std::to_string(T));
        return {time_embed.data() + static_cast<std::size_t>(t - 1) * embed_dim, embed_dim};
    }
};

inline PolicyParams build_policy(const PolicyConfig& config) {
    if (config.obs_dim == 0 || config.act_dim == 0 || config.hidden_dim == 0 ||
        config.embed_dim == 0 || config.T < 1)
        throw ConfigError("build_policy: all dimensions and T must be positive");

    const Rng master(config.seed);
    PolicyParams p;
    p.embed_dim = config.embed_dim;
    p.T = config.T;
    p.obs_embed = init_params({config.obs_dim, config.embed_dim, config.embed_dim},
                              master.child(0).seed());
    p.act_embed = init_params({config.act_dim, config.embed_dim, config.embed_dim},
                              master.child(1).seed());

    // table initialized like a dense layer mapping one-hot(t) -> E
    const std::size_t Tn = static_cast<std::size_t>(config.T);
    p.time_embed.resize(Tn * config.embed_dim);
    Rng table_rng(master.child(2).seed());
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.T));
    for (double& v : p.time_embed) v = table_rng.uniform(-scale, scale);

    p.denoiser = init_params({3 * config.embed_dim, config.hidden_dim, config.hidden_dim,
                              config.hidden_dim, config.act_dim},
                             master.child(3).seed());
    return p;
}

struct PolicyCache {
    ForwardCache obs_cache;
    ForwardCache act_cache;
    ForwardCache denoiser_cache;
    int t = 0;
};

struct PolicyGrads {
    MlpParams obs_embed;
    MlpParams act_embed;
    Vec time_embed;
    MlpParams denoiser;
};

inline PolicyGrads zeros_like(const PolicyParams& params) {
    PolicyGrads g;
    g.obs_embed = zeros_like(params.obs_embed);
    g.act_embed = zeros_like(params.act_embed);
    g.time_embed.assign(params.time_embed.size(), 0.0);
    g.denoiser = zeros_like(params.denoiser);
    return g;
}

inline Vec predict_noise(const PolicyParams& params, const Vec& a_t, int t,
                         std::span<const double> obs, PolicyCache* cache = nullptr) {
    if (a_t.size() != params.act_dim())
        throw ShapeError("predict_noise: action dim " + std::to_string(a_t.size()) +
                         " != " + std::to_string(params.act_dim()));
    if (obs.size() != params.obs_dim())
        throw ShapeError("predict_noise: obs dim " + std::to_string(obs.size()) +
                         " != " + std::to_string(params.obs_dim()));
    const std::span<const double> trow = params.time_row(t);
    if (cache) cache->t = t;

    const Vec ea = mlp_forward(params.act_embed, a_t, cache ? &cache->act_cache : nullptr);
    const Vec eo = mlp_forward(params.obs_embed, obs, cache ? &cache->obs_cache : nullptr);

    Vec z;
    z.reserve(3 * params.embed_dim);
    z.insert(z.end(), ea.begin(), ea.end());
    z.insert(z.end(), trow.begin(), trow.end());
    z.insert(z.end(), eo.begin(), eo.end());
    return mlp_forward(params.denoiser, z, cache ? &cache->denoiser_cache : nullptr);
}

// Backprop of upstream = d(loss)/d(eps_hat) through the denoiser, both
// embedders and the time table row that was used. Accumulates (+=).
inline void predict_noise_backward(const PolicyParams& params, const PolicyCache& cache,
                                   std::span<const double> upstream, PolicyGrads& grads) {
    const Vec concat_grad = mlp_backward(params.denoiser, cache.denoiser_cache, upstream,
                                         grads.denoiser);
    const std::size_t E = params.embed_dim;
    const std::span<const double> g_act(concat_grad.data(), E);
    const std::span<const double> g_time(concat_grad.data() + E, E);
    const std::span<const double> g_obs(concat_grad.data() + 2 * E, E);

    mlp_backward(params.act_embed, cache.act_cache, g_act, grads.act_embed);
    double* trow = grads.time_embed.data() + static_cast<std::size_t>(cache.t - 1) * E;
    for (std::size_t i = 0; i < E; ++i) trow[i] += g_time[i];
    mlp_backward(params.obs_embed, cache.obs_cache, g_obs, grads.obs_embed);
}

// Adapter satisfying the denoise_loss model contract.
class PolicyModel {
public:
    PolicyModel(const PolicyParams& params, PolicyGrads& grads)
        : params_(&params), grads_(&grads) {}

    Vec forward(const Vec& a_t, int t, std::span<const double> obs) {
        return predict_noise(*params_, a_t, t, obs, &cache_);
    }

    void backward(std::span<const double> upstream) {
        predict_noise_backward(*params_, cache_, upstream, *grads_);
    }

private:
    const PolicyParams* params_;
    PolicyGrads* grads_;
    PolicyCache cache_;
};

// Fixed tensor order: obs_embed, act_embed, time table, denoiser.
inline std::vector<TensorView> tensor_views(PolicyParams& p) {
    std::vector<TensorView> views = tensor_views(p.obs_embed);
    for (TensorView v : tensor_views(p.act_embed)) views.push_back(v);
    views.emplace_back(p.time_embed);
    for (TensorView v : tensor_views(p.denoiser)) views.push_back(v);
    return views;
}

inline std::vector<ConstTensorView> tensor_views(const PolicyGrads& g) {
    std::vector<ConstTensorView> views = tensor_views(g.obs_embed);
    for (ConstTensorView v : tensor_views(g.act_embed)) views.push_back(v);
    views.emplace_back(g.time_embed);
    for (ConstTensorView v : tensor_views(g.denoiser)) views.push_back(v);
    return views;
}

inline std::vector<std::size_t> tensor_sizes(const PolicyParams& p) {
    std::vector<std::size_t> sizes = tensor_sizes(p.obs_embed);
    for (std::size_t s : tensor_sizes(p.act_embed)) sizes.push_back(s);
    sizes.push_back(p.time_embed.size());
    for (std::size_t s : tensor_sizes(p.denoiser)) sizes.push_back(s);
    return sizes;
}

struct ObsAction {
    const Vec* obs;
    const Vec* action;
};

// Mean Eq.-2 style loss over a batch with gradients through the whole
// composition. Per sample the rng supplies one step draw then act_dim normal
// draws, in that order.
inline double policy_gradients(const PolicyParams& params, const NoiseSchedule& schedule,
                               std::span<const ObsAction> batch, RandomSource& rng,
                               PolicyGrads& grads) {
    if (batch.empty()) throw StateError("policy_gradients: empty batch");
    grads = zeros_like(params);
    PolicyModel model(params, grads);
    double total = 0.0;
    for (std::size_t m = 0; m < batch.size(); ++m) {
        double loss;
        try {
            loss = denoise_loss(model, *batch[m].obs, *batch[m].action, schedule, rng);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (batch index " + std::to_string(m) +
                               ")");
        }
        total += loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (MlpParams* net : {&grads.obs_embed, &grads.act_embed, &grads.denoiser})
        for (DenseLayer& layer : net->layers) {
            for (double& w : layer.weight) w *= inv;
            for (double& b : layer.bias) b *= inv;
        }
    for (double& v : grads.time_embed) v *= inv;
    return total * inv;
}

// Callable for reverse_step / sample_action.
inline auto noise_predictor(const PolicyParams& params) {
    return [&params](const Vec& a_t, int t, std::span<const double> obs) {
        return predict_noise(params, a_t, t, obs);
    };
}

inline Vec sample_action(const PolicyParams& params, std::span<const double> obs,
                         const NoiseSchedule& schedule, RandomSource& rng) {
    return sample_action(noise_predictor(params), obs, schedule, rng, params.act_dim());
}

// ---------------------------------------------------------------------------
// Checkpoint wiring

inline void save_policy(const std::filesystem::path& path, const PolicyParams& params) {
    MlpParams table;
    DenseLayer row;
    row.out_dim = static_cast<std::size_t>(params.T);
    row.in_dim = params.embed_dim;
    row.weight = params.time_embed;
    row.bias.assign(row.out_dim, 0.0);
    table.layers.push_back(std::move(row));

    save_checkpoint(path, {{"obs_embed", params.obs_embed},
                           {"act_embed", params.act_embed},
                           {"time_embed", std::move(table)},
                           {"denoiser", params.denoiser}});
}

inline PolicyParams load_policy(const std::filesystem::path& path) {
    CheckpointSections sections = load_checkpoint(path);
    if (sections.size() != 4 || sections[0].first != "obs_embed" ||
        sections[1].first != "act_embed" || sections[2].first != "time_embed" ||
        sections[3].first != "denoiser")
        throw DataError("not a policy checkpoint: " + path.string());

    PolicyParams p;
    p.obs_embed = std::move(sections[0].second);
    p.act_embed = std::move(sections[1].second);
    const MlpParams& table = sections[2].second;
    if (table.layers.size() != 1) throw DataError("malformed time embedding section");
    p.T = static_cast<int>(table.layers[0].out_dim);
    p.embed_dim = table.layers[0].in_dim;
    p.time_embed = table.layers[0].weight;
    p.denoiser = std::move(sections[3].second);

    if (p.obs_embed.layers.size() != 2 || p.act_embed.layers.size() != 2 ||
        p.denoiser.layers.size() != 4 ||
        p.denoiser.input_dim() != 3 * p.embed_dim ||
        p.obs_embed.output_dim() != p.embed_dim || p.act_embed.output_dim() != p.embed_dim ||
        p.denoiser.output_dim() != p.act_dim())
        throw DataError("policy checkpoint has inconsistent dimensions: " + path.string());
    return p;
}

}  // namespace dsp
