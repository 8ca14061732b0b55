#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/errors.hpp"
#include "dsp/rng.hpp"
#include "dsp/vec.hpp"

namespace dsp {

enum class Source { Clean, Perturbed };

inline std::string to_string(Source s) { return s == Source::Clean ? "clean" : "perturbed"; }

inline Source source_from_string(const std::string& s) {
    if (s == "clean") return Source::Clean;
    if (s == "perturbed") return Source::Perturbed;
    throw DataError("unknown source label: " + s);
}

struct Trajectory {
    std::string task;
    std::uint64_t seed = 0;
    std::vector<Vec> observations;  // K + 1
    std::vector<Vec> actions;       // K
    std::vector<bool> perturbed_mask;
    bool success = false;
    Source source = Source::Clean;

    std::size_t length() const { return actions.size(); }

    bool operator==(const Trajectory&) const = default;
};

inline void validate(const Trajectory& traj) {
    if (traj.observations.size() != traj.actions.size() + 1)
        throw DataError("trajectory has " + std::to_string(traj.observations.size()) +
                        " observations for " + std::to_string(traj.actions.size()) + " actions");
    if (traj.perturbed_mask.size() != traj.actions.size())
        throw DataError("perturbed mask length != action count");
    if (!traj.observations.empty()) {
        const std::size_t obs_dim = traj.observations.front().size();
        for (const Vec& o : traj.observations)
            if (o.size() != obs_dim) throw DataError("inconsistent observation dims");
    }
    if (!traj.actions.empty()) {
        const std::size_t act_dim = traj.actions.front().size();
        for (const Vec& a : traj.actions)
            if (a.size() != act_dim) throw DataError("inconsistent action dims");
    }
}

// ---------------------------------------------------------------------------
// Perturbation

struct PerturbConfig {
    double frac = 0.2;       // fraction of steps perturbed
    double eta = 0.2;        // noise mean magnitude
    double sigma_sq = 0.05;  // noise variance
    double flip_prob = 0.5;  // probability the mean is +eta rather than -eta
};

// Picks round(frac * K) distinct step indices; returns them sorted. Uses a
// partial Fisher-Yates over 0..K-1 so the choice is pinned by the rng.
inline std::vector<std::size_t> pick_perturbed_steps(std::size_t K, double frac,
                                                     RandomSource& rng) {
    if (frac < 0.0 || frac > 1.0)
        throw ConfigError("perturbation fraction must lie in [0, 1], got " +
                          std::to_string(frac));
    const auto n = static_cast<std::size_t>(std::lround(frac * static_cast<double>(K)));
    std::vector<std::size_t> idx(K);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n && i + 1 < K; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(K - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// One accidental-jerk draw for a step: a single sign for the whole action,
// then i.i.d. per-coordinate noise around sign*eta.
inline Vec draw_perturbation(std::size_t act_dim, const PerturbConfig& cfg, RandomSource& rng) {
    const double sign = rng.uniform01() < cfg.flip_prob ? 1.0 : -1.0;
    const double sd = std::sqrt(cfg.sigma_sq);
    Vec noise(act_dim);
    for (double& v : noise) v = rng.normal(sign * cfg.eta, sd);
    return noise;
}

// Open-loop corruption of a recorded trajectory: actions at the selected
// steps get additive noise, observations stay as recorded. Draw order:
// step selection, then per selected step (ascending) one sign draw and
// act_dim noise draws.
inline Trajectory perturb_trajectory(const Trajectory& traj, const PerturbConfig& cfg,
                                     RandomSource& rng) {
    validate(traj);
    if (std::find(traj.perturbed_mask.begin(), traj.perturbed_mask.end(), true) !=
        traj.perturbed_mask.end())
        throw DataError("perturb_trajectory: input trajectory is already perturbed");

    Trajectory out = traj;
    out.source = Source::Perturbed;
    for (std::size_t k : pick_perturbed_steps(traj.length(), cfg.frac, rng)) {
        const Vec noise = draw_perturbation(out.actions[k].size(), cfg, rng);
        for (std::size_t j = 0; j < noise.size(); ++j) out.actions[k][j] += noise[j];
        out.perturbed_mask[k] = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mixing and batches

struct Transition {
    const Vec* obs = nullptr;
    const Vec* action = nullptr;
    bool is_perturbed_truth = false;
    Source source = Source::Clean;
};

// Flattened transitions over an owning trajectory store. Move-only: the
// transition views point into the trajectories.
struct MixedDataset {
    std::vector<Trajectory> trajectories;
    std::vector<Transition> transitions;
    std::size_t n_clean_trajectories = 0;
    std::size_t n_perturbed_trajectories = 0;

    MixedDataset() = default;
    MixedDataset(const MixedDataset&) = delete;
    MixedDataset& operator=(const MixedDataset&) = delete;
    MixedDataset(MixedDataset&&) = default;
    MixedDataset& operator=(MixedDataset&&) = default;

    std::size_t size() const { return transitions.size(); }
};

namespace detail {

inline void flatten(MixedDataset& ds) {
    ds.transitions.clear();
    for (const Trajectory& traj : ds.trajectories) {
        validate(traj);
        for (std::size_t k = 0; k < traj.length(); ++k)
            ds.transitions.push_back({&traj.observations[k], &traj.actions[k],
                                      static_cast<bool>(traj.perturbed_mask[k]), traj.source});
    }
}

}  // namespace detail

// D' = D + D~. Transition provenance comes from the list each trajectory
// arrived in; per-step ground truth from the perturbation masks.
inline MixedDataset mix(std::vector<Trajectory> clean, std::vector<Trajectory> perturbed) {
    MixedDataset ds;
    ds.n_clean_trajectories = clean.size();
    ds.n_perturbed_trajectories = perturbed.size();
    ds.trajectories = std::move(clean);
    for (Trajectory& traj : ds.trajectories) traj.source = Source::Clean;
    for (Trajectory& traj : perturbed) {
        traj.source = Source::Perturbed;
        ds.trajectories.push_back(std::move(traj));
    }
    detail::flatten(ds);
    return ds;
}

// Single-list variant keeping each trajectory's own source label.
inline MixedDataset make_dataset(std::vector<Trajectory> trajectories) {
    MixedDataset ds;
    for (const Trajectory& traj : trajectories) {
        if (traj.source == Source::Clean)
            ++ds.n_clean_trajectories;
        else
            ++ds.n_perturbed_trajectories;
    }
    ds.trajectories = std::move(trajectories);
    detail::flatten(ds);
    return ds;
}

inline std::vector<std::uint32_t> sample_indices(const MixedDataset& ds, std::size_t batch_size,
                                                 RandomSource& rng) {
    if (ds.size() == 0) throw StateError("sample_batch: dataset is empty");
    std::vector<std::uint32_t> idx(batch_size);
    for (std::uint32_t& i : idx) i = static_cast<std::uint32_t>(rng.below(ds.size()));
    return idx;
}

inline std::vector<Transition> gather(const MixedDataset& ds,
                                      std::span<const std::uint32_t> indices) {
    std::vector<Transition> batch;
    batch.reserve(indices.size());
    for (std::uint32_t i : indices) batch.push_back(ds.transitions[i]);
    return batch;
}

// Uniform with replacement.
inline std::vector<Transition> sample_batch(const MixedDataset& ds, std::size_t batch_size,
                                            RandomSource& rng) {
    return gather(ds, sample_indices(ds, batch_size, rng));
}

// ---------------------------------------------------------------------------
// Serialization: one JSON trajectory object per line, schema version 1.
// Doubles use shortest round-trip formatting, so save/load is the identity.

inline nlohmann::json to_json(const Trajectory& traj) {
    return {{"v", 1},
            {"task", traj.task},
            {"seed", traj.seed},
            {"success", traj.success},
            {"source", to_string(traj.source)},
            {"observations", traj.observations},
            {"actions", traj.actions},
            {"perturbed_mask", traj.perturbed_mask}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("trajectory record is not an object");
    if (j.value("v", 0) != 1)
        throw DataError("unsupported trajectory schema version: " +
                        std::to_string(j.value("v", 0)));
    Trajectory traj;
    try {
        traj.task = j.at("task").get<std::string>();
        traj.seed = j.at("seed").get<std::uint64_t>();
        traj.success = j.at("success").get<bool>();
        traj.source = source_from_string(j.at("source").get<std::string>());
        traj.observations = j.at("observations").get<std::vector<Vec>>();
        traj.actions = j.at("actions").get<std::vector<Vec>>();
        traj.perturbed_mask = j.at("perturbed_mask").get<std::vector<bool>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad trajectory record: ") + e.what());
    }
    validate(traj);
    return traj;
}

inline void save_dataset(const std::filesystem::path& path,
                         std::span<const Trajectory> trajectories) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open dataset for writing: " + path.string());
    for (const Trajectory& traj : trajectories) os << to_json(traj).dump() << '\n';
    if (!os) throw DataError("write failed for dataset: " + path.string());
}

inline std::vector<Trajectory> load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open dataset: " + path.string());
    std::vector<Trajectory> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw DataError(path.string() + ": parse error at line " + std::to_string(line_no));
        try {
            out.push_back(trajectory_from_json(j));
        } catch (const DataError& e) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " +
                            e.what());
        }
    }
    return out;
}

}  // namespace dsp
