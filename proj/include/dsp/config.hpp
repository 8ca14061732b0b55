#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsp/datasets.hpp"
#include "dsp/diffusion.hpp"
#include "dsp/envs.hpp"
#include "dsp/errors.hpp"
#include "dsp/policy.hpp"
#include "dsp/trainer.hpp"

namespace dsp {

// Fully resolved run settings. Files use flat `key = value` lines with
// optional [section] headers (sections are cosmetic; keys are global).
// Precedence: defaults < DSP_SEED < config file < command-line overrides.
struct RunConfig {
    std::string task = "point_reach";
    std::uint64_t seed = 0;
    std::string clean_path;
    std::string perturbed_path;

    std::size_t hidden_dim = 128;
    std::size_t embed_dim = 128;
    int T = 5;
    double beta_start = 0.1;
    double beta_end = 0.9;

    int stage1_steps = 10000;
    int stage2_steps = 10000;
    std::size_t batch_size = 128;
    double lr = 2e-4;
    double weight_decay = 1e-4;
    std::string threshold_mode = "mean";
    std::string stage2_mode = "online";
    int eval_every = 200;
    int filter_samples = 1;
    unsigned filter_workers = 0;  // 0 = hardware default

    double frac = 0.2;
    double eta = 0.2;
    double sigma_sq = 0.05;
    double flip_prob = 0.5;
    std::string replay = "closed_loop";

    int n_episodes = 100;
    int n_resamples = 1000;
    double level = 0.95;
    std::uint64_t eval_seed = 10000;

    TaskSpec task_spec() const { return make_task(task_from_string(task)); }

    NoiseSchedule schedule() const { return make_vp_schedule(T, beta_start, beta_end); }

    PolicyConfig policy_config() const {
        const TaskSpec spec = task_spec();
        PolicyConfig pc;
        pc.obs_dim = spec.obs_dim();
        pc.act_dim = spec.action_dim();
        pc.hidden_dim = hidden_dim;
        pc.embed_dim = embed_dim;
        pc.T = T;
        pc.seed = seed;
        return pc;
    }

    TrainConfig train_config() const {
        TrainConfig tc;
        tc.stage1_steps = stage1_steps;
        tc.stage2_steps = stage2_steps;
        tc.batch_size = batch_size;
        tc.lr = lr;
        tc.weight_decay = weight_decay;
        tc.threshold_mode = threshold_mode_from_string(threshold_mode);
        tc.stage2_mode = stage2_mode_from_string(stage2_mode);
        tc.seed = seed;
        tc.eval_every = eval_every;
        tc.filter_samples = filter_samples;
        tc.filter_workers = filter_workers;
        return tc;
    }

    PerturbConfig perturb_config() const {
        PerturbConfig pc;
        pc.frac = frac;
        pc.eta = eta;
        pc.sigma_sq = sigma_sq;
        pc.flip_prob = flip_prob;
        return pc;
    }
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto n = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Named budgets: `desk` fits a laptop core, `paper` mirrors the reference
// training scale (100k steps total, batch 256, hidden 512).
inline void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name == "desk") {
        cfg.stage1_steps = 10000;
        cfg.stage2_steps = 10000;
        cfg.batch_size = 128;
        cfg.hidden_dim = 128;
        cfg.lr = 2e-4;
    } else if (name == "paper") {
        cfg.stage1_steps = 50000;
        cfg.stage2_steps = 50000;
        cfg.batch_size = 256;
        cfg.hidden_dim = 512;
        cfg.lr = 2e-4;
    } else {
        throw ConfigError("unknown preset: " + name + " (expected desk or paper)");
    }
}

inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "preset") apply_preset(cfg, value);
    else if (key == "task") cfg.task = value;
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "clean") cfg.clean_path = value;
    else if (key == "perturbed") cfg.perturbed_path = value;
    else if (key == "hidden_dim") cfg.hidden_dim = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "embed_dim") cfg.embed_dim = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "T") cfg.T = static_cast<int>(parse_int(key, value));
    else if (key == "beta_start") cfg.beta_start = parse_real(key, value);
    else if (key == "beta_end") cfg.beta_end = parse_real(key, value);
    else if (key == "stage1_steps") cfg.stage1_steps = static_cast<int>(parse_int(key, value));
    else if (key == "stage2_steps") cfg.stage2_steps = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "lr") cfg.lr = parse_real(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(key, value);
    else if (key == "threshold_mode") cfg.threshold_mode = value;
    else if (key == "stage2_mode") cfg.stage2_mode = value;
    else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(key, value));
    else if (key == "filter_samples") cfg.filter_samples = static_cast<int>(parse_int(key, value));
    else if (key == "filter_workers") cfg.filter_workers = static_cast<unsigned>(parse_int(key, value));
    else if (key == "frac") cfg.frac = parse_real(key, value);
    else if (key == "eta") cfg.eta = parse_real(key, value);
    else if (key == "sigma_sq") cfg.sigma_sq = parse_real(key, value);
    else if (key == "flip_prob") cfg.flip_prob = parse_real(key, value);
    else if (key == "replay") cfg.replay = value;
    else if (key == "n_episodes") cfg.n_episodes = static_cast<int>(parse_int(key, value));
    else if (key == "n_resamples") cfg.n_resamples = static_cast<int>(parse_int(key, value));
    else if (key == "level") cfg.level = parse_real(key, value);
    else if (key == "eval_seed") cfg.eval_seed = parse_u64(key, value);
    else throw ConfigError("unknown config key: " + key);
}

inline void validate(const RunConfig& cfg) {
    task_from_string(cfg.task);
    threshold_mode_from_string(cfg.threshold_mode);
    stage2_mode_from_string(cfg.stage2_mode);
    if (cfg.replay != "closed_loop" && cfg.replay != "open_loop")
        throw ConfigError("replay must be closed_loop or open_loop, got " + cfg.replay);
    if (cfg.stage1_steps < 0 || cfg.stage2_steps < 0)
        throw ConfigError("step counts must be nonnegative");
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (cfg.eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (cfg.filter_samples <= 0) throw ConfigError("filter_samples must be positive");
    if (cfg.frac < 0.0 || cfg.frac > 1.0) throw ConfigError("frac must lie in [0, 1]");
    if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw ConfigError("level must lie in (0, 1)");
    if (cfg.n_episodes < 1) throw ConfigError("n_episodes must be positive");
}

inline RunConfig default_run_config() {
    RunConfig cfg;
    if (const char* env = std::getenv("DSP_SEED")) cfg.seed = detail::parse_u64("DSP_SEED", env);
    return cfg;
}

// `preset` applies before the other keys regardless of its position, so an
// explicit key always wins over what the preset expands to.
inline void apply_pairs(RunConfig& cfg,
                        const std::vector<std::pair<std::string, std::string>>& pairs) {
    for (const auto& [k, v] : pairs)
        if (k == "preset") apply_key(cfg, k, v);
    for (const auto& [k, v] : pairs)
        if (k != "preset") apply_key(cfg, k, v);
}

inline std::vector<std::pair<std::string, std::string>> parse_config_text(
    std::istream& is, const std::string& origin) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') continue;  // section headers are cosmetic
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ": line " + std::to_string(line_no) +
                              ": expected key = value");
        pairs.emplace_back(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return pairs;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    RunConfig cfg = default_run_config();
    apply_pairs(cfg, parse_config_text(is, path.string()));
    return cfg;
}

// Echo of the resolved config; reading it back reproduces the run.
inline std::string render_config(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "[run]\n"
       << "task = " << c.task << "\n"
       << "seed = " << c.seed << "\n"
       << "clean = " << c.clean_path << "\n"
       << "perturbed = " << c.perturbed_path << "\n\n"
       << "[policy]\n"
       << "hidden_dim = " << c.hidden_dim << "\n"
       << "embed_dim = " << c.embed_dim << "\n"
       << "T = " << c.T << "\n"
       << "beta_start = " << c.beta_start << "\n"
       << "beta_end = " << c.beta_end << "\n\n"
       << "[train]\n"
       << "stage1_steps = " << c.stage1_steps << "\n"
       << "stage2_steps = " << c.stage2_steps << "\n"
       << "batch_size = " << c.batch_size << "\n"
       << "lr = " << c.lr << "\n"
       << "weight_decay = " << c.weight_decay << "\n"
       << "threshold_mode = " << c.threshold_mode << "\n"
       << "stage2_mode = " << c.stage2_mode << "\n"
       << "eval_every = " << c.eval_every << "\n"
       << "filter_samples = " << c.filter_samples << "\n"
       << "filter_workers = " << c.filter_workers << "\n\n"
       << "[perturb]\n"
       << "frac = " << c.frac << "\n"
       << "eta = " << c.eta << "\n"
       << "sigma_sq = " << c.sigma_sq << "\n"
       << "flip_prob = " << c.flip_prob << "\n"
       << "replay = " << c.replay << "\n\n"
       << "[eval]\n"
       << "n_episodes = " << c.n_episodes << "\n"
       << "n_resamples = " << c.n_resamples << "\n"
       << "level = " << c.level << "\n"
       << "eval_seed = " << c.eval_seed << "\n";
    return os.str();
}

}  // namespace dsp
