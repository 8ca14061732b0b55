#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/config.hpp"
#include "dsp/datasets.hpp"
#include "dsp/envs.hpp"
#include "dsp/errors.hpp"
#include "dsp/eval.hpp"
#include "dsp/parallel.hpp"
#include "dsp/policy.hpp"
#include "dsp/trainer.hpp"

namespace dsp {

// Writes n expert demonstrations and prints the success count (which must
// equal n: the scripted experts are complete over their seed range).
inline void cmd_gen_demos(const std::string& task, int n_episodes, std::uint64_t seed,
                          const std::filesystem::path& out, std::ostream& log = std::cout) {
    const TaskSpec spec = make_task(task_from_string(task));
    std::vector<Trajectory> demos;
    demos.reserve(static_cast<std::size_t>(n_episodes));
    for (int i = 0; i < n_episodes; ++i) {
        const std::uint64_t episode_seed = seed + static_cast<std::uint64_t>(i);
        Trajectory traj = rollout(expert_actor(), spec, episode_seed);
        if (!traj.success)
            throw DataError("scripted expert failed on seed " + std::to_string(episode_seed));
        demos.push_back(std::move(traj));
    }
    save_dataset(out, demos);
    log << "wrote " << demos.size() << " trajectories to " << out.string() << " ("
        << demos.size() << " successes)\n";
}

// Perturbs a clean dataset. Closed-loop replay (the default) re-executes
// each episode with noise injected into the executed actions and records the
// new outcome; open-loop corrupts the recorded actions in place.
inline void cmd_perturb(const std::filesystem::path& in, const std::filesystem::path& out,
                        const PerturbConfig& cfg, std::uint64_t seed, bool closed_loop,
                        std::ostream& log = std::cout) {
    const std::vector<Trajectory> clean = load_dataset(in);
    std::vector<Trajectory> perturbed;
    perturbed.reserve(clean.size());
    int successes = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        Trajectory traj;
        if (closed_loop) {
            const TaskSpec spec = make_task(task_from_string(clean[i].task));
            traj = replay_perturbed(spec, clean[i], cfg, rng);
        } else {
            traj = perturb_trajectory(clean[i], cfg, rng);
        }
        successes += traj.success ? 1 : 0;
        perturbed.push_back(std::move(traj));
    }
    save_dataset(out, perturbed);
    log << "wrote " << perturbed.size() << " perturbed trajectories to " << out.string()
        << " (" << successes << " still succeed)\n";
}

namespace detail {

inline void check_dataset_matches(const std::vector<Trajectory>& data, const RunConfig& cfg,
                                  const std::string& which) {
    const TaskSpec spec = cfg.task_spec();
    for (const Trajectory& traj : data) {
        if (traj.task != cfg.task)
            throw DataError(which + " dataset contains task '" + traj.task +
                            "' but the run is configured for '" + cfg.task + "'");
        if (!traj.observations.empty() && traj.observations[0].size() != spec.obs_dim())
            throw DataError(which + " dataset obs dim " +
                            std::to_string(traj.observations[0].size()) + " != task obs dim " +
                            std::to_string(spec.obs_dim()));
    }
}

inline void write_metrics_log(const std::filesystem::path& path, const Stage1Result& s1,
                              const Stage2Result* s2) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write metrics log: " + path.string());
    for (const LossPoint& lp : s1.loss_curve) {
        nlohmann::json j{{"step", lp.step}, {"phase", "stage1"}, {"loss", lp.loss}};
        os << j.dump() << '\n';
    }
    if (!s2) return;
    std::map<int, const FilterBatchRecord*> by_step;
    for (const FilterBatchRecord& rec : s2->filter_history) by_step[rec.step] = &rec;
    for (const LossPoint& lp : s2->loss_curve) {
        nlohmann::json j{{"step", lp.step}, {"phase", "stage2"}, {"loss", lp.loss}};
        if (const auto it = by_step.find(lp.step); it != by_step.end()) {
            const FilterReport& r = it->second->report;
            j["gamma"] = r.gamma;
            j["recall"] = r.recall;
            j["accuracy"] = r.accuracy;
            j["kept_fraction"] =
                static_cast<double>(r.kept) / static_cast<double>(r.delta.size());
        }
        os << j.dump() << '\n';
    }
    if (s2->skipped_batches > 0) {
        nlohmann::json j{{"phase", "stage2"},
                         {"skipped_batches", s2->skipped_batches},
                         {"high_rejection_warning", s2->high_rejection_warning}};
        os << j.dump() << '\n';
    }
}

}  // namespace detail

// Full two-stage run into a run directory with fixed file names:
// config.txt, stage1.ckpt, final.ckpt (absent for stage2_mode=none),
// metrics.log, summary.
inline RunSummary cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                            std::ostream& log = std::cout) {
    validate(cfg);
    if (cfg.clean_path.empty()) throw ConfigError("train: no clean dataset configured");
    const Stage2Mode mode = stage2_mode_from_string(cfg.stage2_mode);
    if (mode != Stage2Mode::None && cfg.perturbed_path.empty())
        throw ConfigError("train: stage2_mode=" + cfg.stage2_mode +
                          " needs a perturbed dataset");

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream os(out_dir / "config.txt", std::ios::trunc);
        os << render_config(cfg);
        if (!os) throw DataError("cannot write config echo");
    }

    std::vector<Trajectory> clean = load_dataset(cfg.clean_path);
    if (clean.empty()) throw DataError("clean dataset is empty: " + cfg.clean_path);
    detail::check_dataset_matches(clean, cfg, "clean");
    std::vector<Trajectory> perturbed;
    if (mode != Stage2Mode::None) {
        perturbed = load_dataset(cfg.perturbed_path);
        detail::check_dataset_matches(perturbed, cfg, "perturbed");
    }
    const int n_clean = static_cast<int>(clean.size());
    const int n_perturbed = static_cast<int>(perturbed.size());

    const NoiseSchedule schedule = cfg.schedule();
    const TrainConfig tc = cfg.train_config();
    const TaskSpec spec = cfg.task_spec();

    std::vector<Trajectory> clean_copy = clean;
    const MixedDataset clean_ds = make_dataset(std::move(clean_copy));
    log << "stage 1: " << tc.stage1_steps << " steps on " << clean_ds.size()
        << " clean transitions\n";
    const Stage1Result stage1 = train_stage1(cfg.policy_config(), schedule, clean_ds, tc);
    save_policy(out_dir / "stage1.ckpt", stage1.params);

    const PolicyParams* final_params = &stage1.params;
    Stage2Result stage2;
    if (mode != Stage2Mode::None) {
        const MixedDataset mixed = mix(std::move(clean), std::move(perturbed));
        log << "stage 2 (" << cfg.stage2_mode << "): " << tc.stage2_steps << " steps on "
            << mixed.size() << " mixed transitions\n";
        stage2 = train_stage2(stage1.params, schedule, mixed, tc);
        save_policy(out_dir / "final.ckpt", stage2.params);
        final_params = &stage2.params;
        if (stage2.high_rejection_warning)
            log << "warning: filter rejected every sample in more than half of the batches\n";
    }
    detail::write_metrics_log(out_dir / "metrics.log", stage1,
                              mode != Stage2Mode::None ? &stage2 : nullptr);

    const EvalSummary ev =
        evaluate_policy(*final_params, schedule, spec, cfg.n_episodes, cfg.eval_seed,
                        cfg.n_resamples, cfg.level, default_workers());
    RunSummary summary;
    summary.task = cfg.task;
    summary.n_clean = n_clean;
    summary.n_perturbed = n_perturbed;
    summary.mode = cfg.stage2_mode;
    summary.threshold_mode = cfg.threshold_mode;
    summary.seed = cfg.seed;
    summary.iqm = ev.iqm;
    summary.ci_low = ev.ci_low;
    summary.ci_high = ev.ci_high;
    summary.n_episodes = ev.n_episodes;
    {
        std::ofstream os(out_dir / "summary", std::ios::trunc);
        os << to_json(summary).dump() << '\n';
        if (!os) throw DataError("cannot write run summary");
    }
    log << "eval: iqm " << ev.iqm << " [" << ev.ci_low << ", " << ev.ci_high << "] over "
        << ev.n_episodes << " episodes\n";
    return summary;
}

// Evaluates a stored checkpoint on a task.
inline EvalSummary cmd_eval(const std::filesystem::path& checkpoint, const std::string& task,
                            int n_episodes, std::uint64_t seed, int n_resamples, double level,
                            const std::filesystem::path& out = {},
                            std::ostream& log = std::cout) {
    const PolicyParams params = load_policy(checkpoint);
    const TaskSpec spec = make_task(task_from_string(task));
    if (params.obs_dim() != spec.obs_dim())
        throw DataError("checkpoint obs dim " + std::to_string(params.obs_dim()) +
                        " != task obs dim " + std::to_string(spec.obs_dim()));
    if (params.act_dim() != spec.action_dim())
        throw DataError("checkpoint action dim " + std::to_string(params.act_dim()) +
                        " != task action dim " + std::to_string(spec.action_dim()));

    const NoiseSchedule schedule = make_vp_schedule(params.T, 0.1, 0.9);
    const EvalSummary ev = evaluate_actor(policy_actor(params, schedule), spec, n_episodes,
                                          seed, n_resamples, level, default_workers());
    nlohmann::json j{{"task", task},         {"checkpoint", checkpoint.string()},
                     {"n_episodes", n_episodes}, {"iqm", ev.iqm},
                     {"ci_low", ev.ci_low},   {"ci_high", ev.ci_high},
                     {"seed", seed}};
    log << j.dump() << '\n';
    if (!out.empty()) {
        std::ofstream os(out, std::ios::trunc);
        os << j.dump() << '\n';
        if (!os) throw DataError("cannot write eval summary: " + out.string());
    }
    return ev;
}

// Builds the comparison table from run directories (each must hold a
// `summary` record).
inline std::vector<ReportRow> cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                                         bool group_by_task,
                                         const std::filesystem::path& out,
                                         std::ostream& log = std::cout) {
    std::vector<RunSummary> summaries;
    std::vector<std::string> missing;
    for (const auto& dir : run_dirs) {
        std::ifstream is(dir / "summary");
        std::string line;
        if (!is || !std::getline(is, line)) {
            missing.push_back(dir.string());
            continue;
        }
        const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw DataError("malformed summary in " + dir.string());
        summaries.push_back(run_summary_from_json(j));
    }
    if (!missing.empty()) {
        std::string msg = "missing run summaries in:";
        for (const std::string& m : missing) msg += " " + m;
        throw DataError(msg);
    }
    const std::vector<ReportRow> rows = compare_runs(summaries, group_by_task);
    if (!out.empty()) {
        std::ofstream os(out, std::ios::trunc);
        for (const ReportRow& row : rows) os << to_json(row).dump() << '\n';
        if (!os) throw DataError("cannot write report: " + out.string());
    }
    log << render_report_table(rows);
    return rows;
}

}  // namespace dsp
