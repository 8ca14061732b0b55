#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsp/cli.hpp"

namespace {

std::uint64_t env_seed_default() {
    if (const char* env = std::getenv("DSP_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw dsp::ConfigError(std::string("bad DSP_SEED value: ") + env);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion stabilizer policy trainer for kinematic toy manipulation"};
    app.require_subcommand(1);

    std::string task = "point_reach";
    int n_episodes = 100;
    std::uint64_t seed = 0;
    std::string in_path, out_path, config_path, checkpoint;
    bool closed_loop = true;
    bool group_by_task = false;
    dsp::PerturbConfig perturb_defaults;
    double frac = perturb_defaults.frac, eta = perturb_defaults.eta;
    double sigma_sq = perturb_defaults.sigma_sq, flip_prob = perturb_defaults.flip_prob;
    int n_resamples = 1000;
    double level = 0.95;
    std::vector<std::string> overrides;
    std::vector<std::string> run_dirs;

    auto* gen = app.add_subcommand("gen-demos", "record scripted-expert demonstrations");
    gen->add_option("--task", task, "point_reach | block_transfer | bi_handover");
    gen->add_option("-n,--episodes", n_episodes, "number of episodes");
    gen->add_option("--seed", seed, "first episode seed");
    gen->add_option("-o,--out", out_path, "output dataset (jsonl)")->required();

    auto* pert = app.add_subcommand("perturb", "inject action perturbations into a dataset");
    pert->add_option("-i,--in", in_path, "clean dataset")->required();
    pert->add_option("-o,--out", out_path, "output dataset")->required();
    pert->add_option("--frac", frac, "fraction of steps perturbed");
    pert->add_option("--eta", eta, "noise mean magnitude");
    pert->add_option("--sigma-sq", sigma_sq, "noise variance");
    pert->add_option("--flip-prob", flip_prob, "probability of a +eta mean");
    pert->add_option("--seed", seed, "perturbation seed");
    pert->add_flag("--replay-perturbed,!--no-replay-perturbed", closed_loop,
                   "re-execute episodes closed-loop (default on)");

    auto* train = app.add_subcommand("train", "two-stage training run");
    train->add_option("--config", config_path, "key = value config file");
    train->add_option("-o,--out", out_path, "run directory")->required();
    train->add_option("--set", overrides, "override config keys (key=value, repeatable)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", checkpoint, "policy checkpoint")->required();
    eval->add_option("--task", task, "task name")->required();
    eval->add_option("-n,--episodes", n_episodes, "number of episodes");
    eval->add_option("--seed", seed, "first eval seed");
    eval->add_option("--resamples", n_resamples, "bootstrap resamples");
    eval->add_option("--level", level, "confidence level");
    eval->add_option("-o,--out", out_path, "write the summary record here");

    auto* report = app.add_subcommand("report", "comparison table over run directories");
    report->add_option("dirs", run_dirs, "run directories")->required();
    report->add_flag("--group-by-task", group_by_task, "allow mixed tasks, one row per task");
    report->add_option("-o,--out", out_path, "rows file (jsonl)");

    try {
        seed = env_seed_default();
        app.parse(argc, argv);

        if (gen->parsed()) {
            dsp::cmd_gen_demos(task, n_episodes, seed, out_path);
        } else if (pert->parsed()) {
            dsp::PerturbConfig cfg;
            cfg.frac = frac;
            cfg.eta = eta;
            cfg.sigma_sq = sigma_sq;
            cfg.flip_prob = flip_prob;
            dsp::cmd_perturb(in_path, out_path, cfg, seed, closed_loop);
        } else if (train->parsed()) {
            dsp::RunConfig cfg = config_path.empty() ? dsp::default_run_config()
                                                     : dsp::load_run_config(config_path);
            std::vector<std::pair<std::string, std::string>> pairs;
            for (const std::string& kv : overrides) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw dsp::ConfigError("--set expects key=value, got: " + kv);
                pairs.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
            }
            dsp::apply_pairs(cfg, pairs);
            dsp::cmd_train(cfg, out_path);
        } else if (eval->parsed()) {
            dsp::cmd_eval(checkpoint, task, n_episodes, seed, n_resamples, level, out_path);
        } else if (report->parsed()) {
            std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
            dsp::cmd_report(dirs, group_by_task, out_path);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const dsp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const dsp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const dsp::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
