#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/envs.hpp"
#include "dsp/errors.hpp"
#include "dsp/parallel.hpp"
#include "dsp/policy.hpp"
#include "dsp/rng.hpp"
#include "dsp/trainer.hpp"

namespace dsp {

// Interquartile mean: sort, drop floor(n/4) from each end, average the rest.
inline double iqm(std::span<const double> values) {
    if (values.empty()) throw StateError("iqm: empty input");
    Vec sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = sorted.size() / 4;
    double total = 0.0;
    for (std::size_t i = k; i < sorted.size() - k; ++i) total += sorted[i];
    const double mean = total / static_cast<double>(sorted.size() - 2 * k);
    // the exact trimmed mean lies within the kept range; keep the rounded
    // one there so a constant vector maps to the constant
    return std::clamp(mean, sorted[k], sorted[sorted.size() - 1 - k]);
}

// Percentile bootstrap of the IQM: resample with replacement, take
// nearest-rank percentiles of the resampled statistic.
inline std::pair<double, double> bootstrap_ci(std::span<const double> values, int n_resamples,
                                              double level, std::uint64_t seed) {
    if (values.empty()) throw StateError("bootstrap_ci: empty input");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap_ci: level must be in (0,1)");
    if (n_resamples < 1) throw ConfigError("bootstrap_ci: need at least one resample");

    Rng rng(seed);
    Vec stats(static_cast<std::size_t>(n_resamples));
    Vec resample(values.size());
    for (int r = 0; r < n_resamples; ++r) {
        for (double& v : resample)
            v = values[static_cast<std::size_t>(rng.below(values.size()))];
        stats[static_cast<std::size_t>(r)] = iqm(resample);
    }
    std::sort(stats.begin(), stats.end());
    const auto rank = [&](double q) {
        const auto i = static_cast<std::size_t>(std::clamp<long>(
            std::lround(std::ceil(q * n_resamples)) - 1, 0, n_resamples - 1));
        return stats[i];
    };
    const double tail = (1.0 - level) / 2.0;
    return {rank(tail), rank(1.0 - tail)};
}

struct EvalSummary {
    std::vector<int> successes;
    int n_episodes = 0;
    double iqm = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::vector<std::uint64_t> seeds;
};

inline ActorFn policy_actor(const PolicyParams& params, const NoiseSchedule& schedule) {
    return [&params, &schedule](const TaskSpec&, const EnvState&, const Vec& obs,
                                RandomSource& rng) {
        return sample_action(params, obs, schedule, rng);
    };
}

inline constexpr std::uint64_t kBootstrapStream = 0xb00;

// Binary success over episodes seeded base_seed .. base_seed+n-1. Episodes
// are independent; with workers > 1 they run in parallel and aggregate in
// seed order.
inline EvalSummary evaluate_actor(const ActorFn& actor, const TaskSpec& spec, int n_episodes,
                                  std::uint64_t base_seed, int n_resamples = 1000,
                                  double level = 0.95, unsigned workers = 1) {
    if (n_episodes < 1) throw ConfigError("evaluate_actor: need at least one episode");
    EvalSummary summary;
    summary.n_episodes = n_episodes;
    summary.successes.assign(static_cast<std::size_t>(n_episodes), 0);
    summary.seeds.resize(static_cast<std::size_t>(n_episodes));
    parallel_for(static_cast<std::size_t>(n_episodes), workers, [&](std::size_t i) {
        const std::uint64_t seed = base_seed + i;
        summary.seeds[i] = seed;
        summary.successes[i] = rollout(actor, spec, seed).success ? 1 : 0;
    });
    Vec vals(summary.successes.begin(), summary.successes.end());
    summary.iqm = iqm(vals);
    std::tie(summary.ci_low, summary.ci_high) =
        bootstrap_ci(vals, n_resamples, level, derive_seed(base_seed, kBootstrapStream));
    return summary;
}

inline EvalSummary evaluate_policy(const PolicyParams& params, const NoiseSchedule& schedule,
                                   const TaskSpec& spec, int n_episodes,
                                   std::uint64_t base_seed, int n_resamples = 1000,
                                   double level = 0.95, unsigned workers = 1) {
    return evaluate_actor(policy_actor(params, schedule), spec, n_episodes, base_seed,
                          n_resamples, level, workers);
}

// ---------------------------------------------------------------------------
// Run summaries and the comparison report

struct RunSummary {
    std::string task;
    int n_clean = 0;
    int n_perturbed = 0;
    std::string mode;            // none | naive | offline | online
    std::string threshold_mode;  // mean | mean_minus_std
    std::uint64_t seed = 0;
    double iqm = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_episodes = 0;
};

inline nlohmann::json to_json(const RunSummary& r) {
    return {{"task", r.task},     {"n_clean", r.n_clean},
            {"n_perturbed", r.n_perturbed}, {"mode", r.mode},
            {"threshold_mode", r.threshold_mode}, {"seed", r.seed},
            {"iqm", r.iqm},       {"ci_low", r.ci_low},
            {"ci_high", r.ci_high}, {"n_episodes", r.n_episodes}};
}

inline RunSummary run_summary_from_json(const nlohmann::json& j) {
    RunSummary r;
    try {
        r.task = j.at("task").get<std::string>();
        r.n_clean = j.at("n_clean").get<int>();
        r.n_perturbed = j.at("n_perturbed").get<int>();
        r.mode = j.at("mode").get<std::string>();
        r.threshold_mode = j.at("threshold_mode").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.iqm = j.at("iqm").get<double>();
        r.ci_low = j.at("ci_low").get<double>();
        r.ci_high = j.at("ci_high").get<double>();
        r.n_episodes = j.at("n_episodes").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad run summary record: ") + e.what());
    }
    return r;
}

struct ReportCell {
    double iqm = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// One row per (task, dataset composition); columns follow the training
// variants, with the stage-1-only run labeled "stage1" and naive mixing
// labeled "perturbed".
struct ReportRow {
    std::string task;
    int n_clean = 0;
    int n_perturbed = 0;
    std::optional<ReportCell> stage1, perturbed, offline, online;
};

inline const char* report_column_label(const std::string& mode) {
    if (mode == "none") return "stage1";
    if (mode == "naive") return "perturbed";
    if (mode == "offline") return "offline";
    if (mode == "online") return "online";
    throw DataError("unknown mode in run summary: " + mode);
}

inline std::vector<ReportRow> compare_runs(std::span<const RunSummary> runs,
                                           bool group_by_task = false) {
    if (runs.empty()) throw StateError("compare_runs: no run summaries");
    for (const RunSummary& r : runs)
        if (r.task != runs.front().task && !group_by_task)
            throw DataError("run summaries mix tasks (" + runs.front().task + " vs " + r.task +
                            "); pass --group-by task");

    std::map<std::pair<std::string, std::pair<int, int>>, ReportRow> rows;
    for (const RunSummary& r : runs) {
        const auto key = std::make_pair(r.task, std::make_pair(r.n_clean, r.n_perturbed));
        ReportRow& row = rows[key];
        row.task = r.task;
        row.n_clean = r.n_clean;
        row.n_perturbed = r.n_perturbed;
        const std::string label = report_column_label(r.mode);
        std::optional<ReportCell>* cell = nullptr;
        if (label == std::string("stage1")) cell = &row.stage1;
        else if (label == std::string("perturbed")) cell = &row.perturbed;
        else if (label == std::string("offline")) cell = &row.offline;
        else cell = &row.online;
        if (cell->has_value())
            throw DataError("duplicate run for task " + r.task + ", mode " + r.mode);
        *cell = ReportCell{r.iqm, r.ci_low, r.ci_high};
    }
    std::vector<ReportRow> out;
    out.reserve(rows.size());
    for (auto& [key, row] : rows) out.push_back(std::move(row));
    return out;
}

inline nlohmann::json to_json(const ReportRow& row) {
    nlohmann::json j{{"task", row.task},
                     {"n_clean", row.n_clean},
                     {"n_perturbed", row.n_perturbed}};
    const auto put = [&](const char* name, const std::optional<ReportCell>& c) {
        if (c) j[name] = {{"iqm", c->iqm}, {"ci_low", c->ci_low}, {"ci_high", c->ci_high}};
    };
    put("stage1", row.stage1);
    put("perturbed", row.perturbed);
    put("offline", row.offline);
    put("online", row.online);
    return j;
}

inline std::string render_report_table(std::span<const ReportRow> rows) {
    const auto cell = [](const std::optional<ReportCell>& c) {
        if (!c) return std::string("-");
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(2);
        os << c->iqm << " [" << c->ci_low << ", " << c->ci_high << "]";
        return os.str();
    };
    std::vector<std::vector<std::string>> grid;
    grid.push_back({"task", "(clean,perturbed)", "stage1", "perturbed", "offline", "online"});
    for (const ReportRow& row : rows)
        grid.push_back({row.task,
                        "(" + std::to_string(row.n_clean) + "," +
                            std::to_string(row.n_perturbed) + ")",
                        cell(row.stage1), cell(row.perturbed), cell(row.offline),
                        cell(row.online)});
    std::vector<std::size_t> width(grid.front().size(), 0);
    for (const auto& r : grid)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::ostringstream os;
    for (const auto& r : grid) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c + 1 == r.size()) {
                os << r[c] << '\n';
            } else {
                os << r[c] << std::string(width[c] - r[c].size() + 2, ' ');
            }
        }
    }
    return os.str();
}

}  // namespace dsp
