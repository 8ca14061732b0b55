#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsp/datasets.hpp"
#include "dsp/diffusion.hpp"
#include "dsp/errors.hpp"
#include "dsp/parallel.hpp"
#include "dsp/policy.hpp"
#include "dsp/rng.hpp"

namespace dsp {

enum class ThresholdMode { Mean, MeanMinusStd };
enum class Stage2Mode { Online, Offline, Naive, None };

inline std::string to_string(ThresholdMode m) {
    return m == ThresholdMode::Mean ? "mean" : "mean_minus_std";
}
inline ThresholdMode threshold_mode_from_string(const std::string& s) {
    if (s == "mean") return ThresholdMode::Mean;
    if (s == "mean_minus_std") return ThresholdMode::MeanMinusStd;
    throw ConfigError("unknown threshold mode: " + s);
}

inline std::string to_string(Stage2Mode m) {
    switch (m) {
        case Stage2Mode::Online: return "online";
        case Stage2Mode::Offline: return "offline";
        case Stage2Mode::Naive: return "naive";
        case Stage2Mode::None: return "none";
    }
    return "?";
}
inline Stage2Mode stage2_mode_from_string(const std::string& s) {
    if (s == "online") return Stage2Mode::Online;
    if (s == "offline") return Stage2Mode::Offline;
    if (s == "naive") return Stage2Mode::Naive;
    if (s == "none") return Stage2Mode::None;
    throw ConfigError("unknown stage-2 mode: " + s);
}

struct TrainConfig {
    int stage1_steps = 10000;
    int stage2_steps = 10000;
    std::size_t batch_size = 128;
    double lr = 2e-4;
    ThresholdMode threshold_mode = ThresholdMode::Mean;
    Stage2Mode stage2_mode = Stage2Mode::Online;
    std::uint64_t seed = 0;
    int eval_every = 200;
    int filter_samples = 1;  // action draws averaged per filtering decision
    double weight_decay = 1e-4;
    unsigned filter_workers = 1;
    // test hook: fixed threshold instead of the batch statistic (+inf turns
    // filtering into a pass-through)
    std::optional<double> threshold_override;
};

// Independent rng streams off TrainConfig::seed. Batch sampling, training
// noise and filtering draws never share a stream, so disabling the filter
// leaves the gradient path untouched.
inline constexpr std::uint64_t kStage1BatchStream = 1;
inline constexpr std::uint64_t kStage1NoiseStream = 2;
inline constexpr std::uint64_t kStage2BatchStream = 3;
inline constexpr std::uint64_t kStage2NoiseStream = 4;
inline constexpr std::uint64_t kFilterStream = 5;

// Per-sample filter stream: ordinal counts filtering decisions made over the
// whole stage-2 run (batch index * batch size + sample index).
inline std::uint64_t filter_sample_seed(std::uint64_t train_seed, std::uint64_t ordinal) {
    return derive_seed(derive_seed(train_seed, kFilterStream), ordinal);
}

// ---------------------------------------------------------------------------
// Filtering

struct FilterReport {
    Vec delta;                    // squared prediction error per sample
    double gamma = 0.0;           // threshold
    std::vector<bool> keep_mask;  // delta[m] <= gamma
    std::vector<bool> truth_mask; // ground-truth perturbation labels
    double recall = 1.0;          // rejected fraction of truly perturbed
    double accuracy = 1.0;        // correctly classified fraction
    std::size_t kept = 0;
};

// gamma = mean(delta), or mean - Bessel-corrected std in strict mode. Not
// clamped toward zero: a non-positive gamma rejects everything.
inline double compute_threshold(std::span<const double> deltas, ThresholdMode mode) {
    const std::size_t m = deltas.size();
    if (mode == ThresholdMode::Mean && m < 1)
        throw StateError("compute_threshold: need at least 1 delta");
    if (mode == ThresholdMode::MeanMinusStd && m < 2)
        throw StateError("compute_threshold: strict mode needs at least 2 deltas");
    double mu = mean(deltas);
    if (mode == ThresholdMode::Mean) {
        // the exact mean lies in [min, max]; keep the rounded one there so a
        // constant batch classifies as kept
        const auto [lo, hi] = std::minmax_element(deltas.begin(), deltas.end());
        return std::clamp(mu, *lo, *hi);
    }
    double ss = 0.0;
    for (double d : deltas) ss += (d - mu) * (d - mu);
    return mu - std::sqrt(ss / static_cast<double>(m - 1));
}

inline FilterReport filter_from_deltas(Vec deltas, std::vector<bool> truth, ThresholdMode mode,
                                       std::optional<double> override = std::nullopt) {
    FilterReport r;
    r.gamma = override ? *override : compute_threshold(deltas, mode);
    r.delta = std::move(deltas);
    r.truth_mask = std::move(truth);
    const std::size_t m = r.delta.size();
    r.keep_mask.resize(m);
    std::size_t true_pos = 0, true_neg = 0, perturbed = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const bool keep = r.delta[i] <= r.gamma;
        r.keep_mask[i] = keep;
        if (keep) ++r.kept;
        if (r.truth_mask[i]) {
            ++perturbed;
            if (!keep) ++true_pos;  // positive = rejected as perturbed
        } else if (keep) {
            ++true_neg;
        }
    }
    r.recall = perturbed == 0 ? 1.0
                              : static_cast<double>(true_pos) / static_cast<double>(perturbed);
    r.accuracy = static_cast<double>(true_pos + true_neg) / static_cast<double>(m);
    return r;
}

// delta = || a_hat - a' ||^2 with a_hat sampled from the policy; averaged
// over n_samples draws when configured.
inline double predict_filter_error(const PolicyParams& params, const NoiseSchedule& schedule,
                                   const Transition& tr, RandomSource& rng, int n_samples = 1) {
    double total = 0.0;
    for (int k = 0; k < n_samples; ++k) {
        const Vec a_hat = sample_action(params, *tr.obs, schedule, rng);
        total += squared_distance(a_hat, *tr.action);
    }
    return total / static_cast<double>(n_samples);
}

// Per-sample deltas fan out across workers; each sample's stream is seeded
// by its ordinal, so results do not depend on the worker count.
inline FilterReport filter_batch(const PolicyParams& params, const NoiseSchedule& schedule,
                                 std::span<const Transition> batch, ThresholdMode mode,
                                 std::uint64_t train_seed, std::uint64_t ordinal_base,
                                 int n_samples = 1, unsigned workers = 1,
                                 std::optional<double> override = std::nullopt) {
    if (batch.empty()) throw StateError("filter_batch: empty batch");
    Vec deltas(batch.size());
    std::vector<bool> truth(batch.size());
    for (std::size_t m = 0; m < batch.size(); ++m) truth[m] = batch[m].is_perturbed_truth;
    parallel_for(batch.size(), workers, [&](std::size_t m) {
        Rng rng(filter_sample_seed(train_seed, ordinal_base + m));
        deltas[m] = predict_filter_error(params, schedule, batch[m], rng, n_samples);
    });
    return filter_from_deltas(std::move(deltas), std::move(truth), mode, override);
}

// ---------------------------------------------------------------------------
// Training loops

struct LossPoint {
    int step = 0;
    double loss = 0.0;
};

struct FilterBatchRecord {
    int step = 0;                        // global step (stage-1 offset included)
    std::vector<std::uint32_t> indices;  // dataset transitions in the batch
    std::uint64_t ordinal_base = 0;
    FilterReport report;
};

struct Stage1Result {
    PolicyParams params;
    std::vector<LossPoint> loss_curve;
};

struct Stage2Result {
    PolicyParams params;
    std::vector<FilterBatchRecord> filter_history;
    std::vector<LossPoint> loss_curve;
    int skipped_batches = 0;  // batches whose keep mask was all-false
    bool high_rejection_warning = false;
};

namespace detail {

inline std::vector<ObsAction> as_obs_actions(std::span<const Transition> batch) {
    std::vector<ObsAction> out;
    out.reserve(batch.size());
    for (const Transition& t : batch) out.push_back({t.obs, t.action});
    return out;
}

}  // namespace detail

// Stage 1: plain diffusion training on clean data.
inline Stage1Result train_stage1(const PolicyConfig& policy_cfg, const NoiseSchedule& schedule,
                                 const MixedDataset& clean, const TrainConfig& cfg) {
    if (clean.size() == 0) throw StateError("train_stage1: empty dataset");
    for (const Transition& t : clean.transitions)
        if (t.is_perturbed_truth)
            throw DataError("train_stage1: dataset contains perturbed transitions");

    Stage1Result result;
    result.params = build_policy(policy_cfg);
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamWState opt = make_adamw_state(tensor_sizes(result.params), opt_cfg);

    Rng batch_rng(derive_seed(cfg.seed, kStage1BatchStream));
    Rng noise_rng(derive_seed(cfg.seed, kStage1NoiseStream));

    for (int s = 1; s <= cfg.stage1_steps; ++s) {
        const std::vector<Transition> batch = sample_batch(clean, cfg.batch_size, batch_rng);
        PolicyGrads grads;
        double loss;
        try {
            loss = policy_gradients(result.params, schedule, detail::as_obs_actions(batch),
                                    noise_rng, grads);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at step " + std::to_string(s));
        }
        adamw_step(tensor_views(result.params), tensor_views(grads), opt);
        if (s % cfg.eval_every == 0 || s == cfg.stage1_steps)
            result.loss_curve.push_back({s, loss});
    }
    return result;
}

// Stage 2 on the clean+perturbed mixture.
//   online  - every batch is filtered by the current policy, the gradient
//             step uses the survivors
//   offline - one filtering pass over the whole dataset with the incoming
//             (stage-1) policy, then plain training on the survivors
//   naive   - no filtering
//   none    - no-op
// The optimizer state starts fresh. Batches left empty by the filter skip
// the update entirely and are counted.
inline Stage2Result train_stage2(PolicyParams params, const NoiseSchedule& schedule,
                                 const MixedDataset& mixed, const TrainConfig& cfg) {
    Stage2Result result;
    if (cfg.stage2_mode == Stage2Mode::None) {
        result.params = std::move(params);
        return result;
    }
    if (mixed.size() == 0) throw StateError("train_stage2: empty dataset");

    result.params = std::move(params);
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamWState opt = make_adamw_state(tensor_sizes(result.params), opt_cfg);

    Rng batch_rng(derive_seed(cfg.seed, kStage2BatchStream));
    Rng noise_rng(derive_seed(cfg.seed, kStage2NoiseStream));
    std::uint64_t filter_ordinal = 0;

    // survivor pool for offline mode (indices into mixed.transitions)
    std::vector<std::uint32_t> pool;
    if (cfg.stage2_mode == Stage2Mode::Offline) {
        std::vector<std::uint32_t> all(mixed.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
        FilterReport report =
            filter_batch(result.params, schedule, mixed.transitions, cfg.threshold_mode,
                         cfg.seed, filter_ordinal, cfg.filter_samples, cfg.filter_workers,
                         cfg.threshold_override);
        filter_ordinal += mixed.size();
        for (std::size_t i = 0; i < mixed.size(); ++i)
            if (report.keep_mask[i]) pool.push_back(static_cast<std::uint32_t>(i));
        result.filter_history.push_back(
            {cfg.stage1_steps, std::move(all), 0, std::move(report)});
    }

    for (int s = 1; s <= cfg.stage2_steps; ++s) {
        const int global_step = cfg.stage1_steps + s;
        std::vector<std::uint32_t> indices;
        std::vector<Transition> survivors;

        switch (cfg.stage2_mode) {
            case Stage2Mode::Online: {
                indices = sample_indices(mixed, cfg.batch_size, batch_rng);
                const std::vector<Transition> batch = gather(mixed, indices);
                FilterReport report = filter_batch(
                    result.params, schedule, batch, cfg.threshold_mode, cfg.seed,
                    filter_ordinal, cfg.filter_samples, cfg.filter_workers,
                    cfg.threshold_override);
                for (std::size_t m = 0; m < batch.size(); ++m)
                    if (report.keep_mask[m]) survivors.push_back(batch[m]);
                result.filter_history.push_back(
                    {global_step, std::move(indices), filter_ordinal, std::move(report)});
                filter_ordinal += batch.size();
                break;
            }
            case Stage2Mode::Offline: {
                if (pool.empty()) break;
                indices.resize(cfg.batch_size);
                for (std::uint32_t& i : indices)
                    i = pool[static_cast<std::size_t>(batch_rng.below(pool.size()))];
                survivors = gather(mixed, indices);
                break;
            }
            case Stage2Mode::Naive: {
                indices = sample_indices(mixed, cfg.batch_size, batch_rng);
                survivors = gather(mixed, indices);
                break;
            }
            case Stage2Mode::None: break;
        }

        if (survivors.empty()) {
            result.skipped_batches += 1;
            continue;
        }

        PolicyGrads grads;
        double loss;
        try {
            loss = policy_gradients(result.params, schedule, detail::as_obs_actions(survivors),
                                    noise_rng, grads);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at step " +
                               std::to_string(global_step));
        }
        adamw_step(tensor_views(result.params), tensor_views(grads), opt);
        if (s % cfg.eval_every == 0 || s == cfg.stage2_steps)
            result.loss_curve.push_back({global_step, loss});
    }

    result.high_rejection_warning =
        cfg.stage2_steps > 0 &&
        result.skipped_batches * 2 > cfg.stage2_steps;
    return result;
}

}  // namespace dsp
