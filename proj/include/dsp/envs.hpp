#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsp/datasets.hpp"
#include "dsp/errors.hpp"
#include "dsp/rng.hpp"
#include "dsp/vec.hpp"

namespace dsp {

enum class Task { PointReach, BlockTransfer, BiHandover };

inline std::string to_string(Task t) {
    switch (t) {
        case Task::PointReach: return "point_reach";
        case Task::BlockTransfer: return "block_transfer";
        case Task::BiHandover: return "bi_handover";
    }
    return "?";
}

inline Task task_from_string(const std::string& s) {
    if (s == "point_reach") return Task::PointReach;
    if (s == "block_transfer") return Task::BlockTransfer;
    if (s == "bi_handover") return Task::BiHandover;
    throw ConfigError("unknown task: " + s +
                      " (expected point_reach, block_transfer or bi_handover)");
}

struct TaskSpec {
    Task name = Task::PointReach;
    int arms = 1;
    int max_steps = 50;
    double success_tol = 0.025;

    std::size_t action_dim() const { return 4 * static_cast<std::size_t>(arms); }
    // per arm: ee (3) + gripper (1); then obj, goal, obj - goal
    std::size_t obs_dim() const { return static_cast<std::size_t>(arms) * 4 + 9; }
};

inline TaskSpec make_task(Task t) {
    TaskSpec spec;
    spec.name = t;
    spec.arms = (t == Task::BiHandover) ? 2 : 1;
    return spec;
}

inline constexpr double kStepSize = 0.05;   // ee displacement per unit action
inline constexpr double kGraspTol = 0.03;   // max ee-object distance for a grasp
inline constexpr double kWorkspaceLo = -1.0;
inline constexpr double kWorkspaceHi = 1.0;
inline constexpr double kFloorZ = -0.4;     // free objects rest on this plane

using Vec3 = std::array<double, 3>;

struct EnvState {
    std::vector<Vec3> ee_pos;     // one per arm
    std::vector<double> gripper;  // per arm: -1 closed, +1 open
    Vec3 obj_pos{};
    Vec3 goal_pos{};
    std::optional<int> held_by;
    int step_count = 0;
    // task progress (used by BiHandover success)
    bool arm0_grasped = false;
    bool handover_done = false;
};

namespace env_detail {

inline double dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline Vec3 home_position(Task t, int arm) {
    if (t == Task::BiHandover) return arm == 0 ? Vec3{-0.6, 0.0, 0.2} : Vec3{0.6, 0.0, 0.2};
    return {0.0, 0.0, 0.2};
}

// spawn ranges (objects and delivery goals sit on the floor; pick and
// place regions sit on opposite sides of the workspace)
inline constexpr double kReachXY = 0.4;
inline constexpr double kSpawnY = 0.25;
inline constexpr double kBlockObjX0 = -0.48, kBlockObjX1 = -0.3;
inline constexpr double kBlockGoalX0 = 0.3, kBlockGoalX1 = 0.48;
inline constexpr double kHandObjX0 = -0.4, kHandObjX1 = -0.15;
inline constexpr double kHandGoalX0 = 0.15, kHandGoalX1 = 0.4;
inline constexpr Vec3 kRendezvous{0.0, 0.0, 0.1};   // handover pose
inline constexpr double kTransitZ = 0.1;            // carry height

inline constexpr std::uint64_t kResetStream = 101;
inline constexpr std::uint64_t kActorStream = 202;

}  // namespace env_detail

// Object and goal are drawn (object first) from per-task spawn ranges; arms
// start at fixed home poses with closed grippers. Objects and block/handover
// goals sit on the floor plane; the reach goal is aerial.
inline EnvState reset(const TaskSpec& spec, std::uint64_t seed) {
    using namespace env_detail;
    Rng rng(derive_seed(seed, kResetStream));
    EnvState s;
    s.ee_pos.resize(spec.arms);
    for (int a = 0; a < spec.arms; ++a) s.ee_pos[a] = home_position(spec.name, a);
    s.gripper.assign(spec.arms, -1.0);
    switch (spec.name) {
        case Task::PointReach:
            s.obj_pos = {rng.uniform(-kReachXY, kReachXY), rng.uniform(-kReachXY, kReachXY),
                         kFloorZ};
            s.goal_pos = {rng.uniform(-kReachXY, kReachXY), rng.uniform(-kReachXY, kReachXY),
                          rng.uniform(-kReachXY, kReachXY)};
            break;
        case Task::BlockTransfer:
            s.obj_pos = {rng.uniform(kBlockObjX0, kBlockObjX1), rng.uniform(-kSpawnY, kSpawnY),
                         kFloorZ};
            s.goal_pos = {rng.uniform(kBlockGoalX0, kBlockGoalX1),
                          rng.uniform(-kSpawnY, kSpawnY), kFloorZ};
            break;
        case Task::BiHandover:
            s.obj_pos = {rng.uniform(kHandObjX0, kHandObjX1), rng.uniform(-kSpawnY, kSpawnY),
                         kFloorZ};
            s.goal_pos = {rng.uniform(kHandGoalX0, kHandGoalX1), rng.uniform(-kSpawnY, kSpawnY),
                          kFloorZ};
            break;
    }
    return s;
}

inline Vec observe(const TaskSpec& spec, const EnvState& s) {
    Vec obs;
    obs.reserve(spec.obs_dim());
    for (int a = 0; a < spec.arms; ++a)
        obs.insert(obs.end(), s.ee_pos[a].begin(), s.ee_pos[a].end());
    for (int a = 0; a < spec.arms; ++a) obs.push_back(s.gripper[a]);
    obs.insert(obs.end(), s.obj_pos.begin(), s.obj_pos.end());
    obs.insert(obs.end(), s.goal_pos.begin(), s.goal_pos.end());
    for (int i = 0; i < 3; ++i) obs.push_back(s.obj_pos[i] - s.goal_pos[i]);
    return obs;
}

inline bool success_of(const TaskSpec& spec, const EnvState& s) {
    switch (spec.name) {
        case Task::PointReach:
            return env_detail::dist(s.ee_pos[0], s.goal_pos) <= spec.success_tol;
        case Task::BlockTransfer:
            return !s.held_by && env_detail::dist(s.obj_pos, s.goal_pos) <= spec.success_tol;
        case Task::BiHandover:
            return s.handover_done && !s.held_by &&
                   env_detail::dist(s.obj_pos, s.goal_pos) <= spec.success_tol;
    }
    return false;
}

struct StepResult {
    Vec observation;
    bool done = false;
    bool success = false;
};

// Kinematic step: move arms, track a held object, then process gripper
// commands in arm order (> 0 opens, <= 0 closes; closing near a free object
// attaches it). Action coordinates are clamped to [-1, 1] before use.
inline StepResult step(const TaskSpec& spec, EnvState& s, std::span<const double> action) {
    if (action.size() != spec.action_dim())
        throw ShapeError("step: action dim " + std::to_string(action.size()) + " != " +
                         std::to_string(spec.action_dim()) + " for task " + to_string(spec.name));

    for (int a = 0; a < spec.arms; ++a) {
        for (int i = 0; i < 3; ++i) {
            const double d = std::clamp(action[a * 4 + i], -1.0, 1.0);
            s.ee_pos[a][i] = std::clamp(s.ee_pos[a][i] + kStepSize * d, kWorkspaceLo,
                                        kWorkspaceHi);
        }
    }
    if (s.held_by) s.obj_pos = s.ee_pos[*s.held_by];

    for (int a = 0; a < spec.arms; ++a) {
        const double cmd = std::clamp(action[a * 4 + 3], -1.0, 1.0);
        if (cmd > 0.0) {
            s.gripper[a] = 1.0;
            if (s.held_by && *s.held_by == a) s.held_by.reset();
        } else {
            s.gripper[a] = -1.0;
            if (!s.held_by && env_detail::dist(s.ee_pos[a], s.obj_pos) <= kGraspTol) {
                s.held_by = a;
                s.obj_pos = s.ee_pos[a];
                if (a == 0) s.arm0_grasped = true;
                if (a == 1 && s.arm0_grasped) s.handover_done = true;
            }
        }
    }
    if (!s.held_by) s.obj_pos[2] = kFloorZ;  // free objects fall

    StepResult res;
    res.success = success_of(spec, s);
    s.step_count += 1;
    res.done = res.success || s.step_count >= spec.max_steps;
    res.observation = observe(spec, s);
    return res;
}

// ---------------------------------------------------------------------------
// Scripted experts: phase-based proportional controllers. Motion commands
// drive the ee at full speed toward the phase target and land exactly once
// within one step of it; gripper commands use a gentle +-0.4.

namespace env_detail {

inline constexpr double kGripOpen = 0.4;
inline constexpr double kGripClose = -0.4;
// act while strictly inside the env tolerances so exact landings trigger
inline constexpr double kGraspActTol = 0.8 * kGraspTol;

inline void write_arm(Vec& action, int arm, const Vec3& ee, const Vec3& target, double grip) {
    for (int i = 0; i < 3; ++i)
        action[arm * 4 + i] = std::clamp((target[i] - ee[i]) / kStepSize, -1.0, 1.0);
    action[arm * 4 + 3] = grip;
}

// carry waypoint: travel at the transit height until horizontally above the
// destination, then descend onto it
inline Vec3 carry_target(const Vec3& ee, const Vec3& dest, double transit_z) {
    if (std::max(std::abs(ee[0] - dest[0]), std::abs(ee[1] - dest[1])) > 1e-9)
        return {dest[0], dest[1], transit_z};
    return dest;
}

}  // namespace env_detail

inline Vec scripted_expert(const TaskSpec& spec, const EnvState& s) {
    using namespace env_detail;
    Vec action(spec.action_dim(), 0.0);
    const double place_tol = 0.8 * spec.success_tol;

    switch (spec.name) {
        case Task::PointReach: {
            write_arm(action, 0, s.ee_pos[0], s.goal_pos, kGripOpen);
            break;
        }
        case Task::BlockTransfer: {
            if (s.held_by) {
                const bool at_goal = dist(s.obj_pos, s.goal_pos) <= place_tol;
                const Vec3 target = carry_target(s.ee_pos[0], s.goal_pos, kTransitZ);
                write_arm(action, 0, s.ee_pos[0], at_goal ? s.goal_pos : target,
                          at_goal ? kGripOpen : kGripClose);
            } else if (dist(s.obj_pos, s.goal_pos) <= spec.success_tol) {
                write_arm(action, 0, s.ee_pos[0], s.ee_pos[0], kGripOpen);  // placed; hold still
            } else {
                const bool near = dist(s.ee_pos[0], s.obj_pos) <= kGraspActTol;
                write_arm(action, 0, s.ee_pos[0], s.obj_pos, near ? kGripClose : kGripOpen);
            }
            break;
        }
        case Task::BiHandover: {
            const Vec3 home0 = home_position(spec.name, 0);
            if (s.held_by && *s.held_by == 0) {
                // carry toward the rendezvous while the receiver chases the
                // object; swap grips in one step once the receiver is close
                const bool receiver_near = dist(s.ee_pos[1], s.obj_pos) <= kGraspActTol;
                if (receiver_near) {
                    write_arm(action, 0, s.ee_pos[0], s.ee_pos[0], kGripOpen);
                    write_arm(action, 1, s.ee_pos[1], s.obj_pos, kGripClose);
                } else {
                    write_arm(action, 0, s.ee_pos[0], carry_target(s.ee_pos[0], kRendezvous, kRendezvous[2]),
                              kGripClose);
                    write_arm(action, 1, s.ee_pos[1], s.obj_pos, kGripOpen);
                }
            } else if (s.held_by && *s.held_by == 1) {
                if (s.handover_done) {
                    const bool at_goal = dist(s.obj_pos, s.goal_pos) <= place_tol;
                    const Vec3 target = carry_target(s.ee_pos[1], s.goal_pos, kRendezvous[2]);
                    write_arm(action, 0, s.ee_pos[0], home0, kGripOpen);
                    write_arm(action, 1, s.ee_pos[1], at_goal ? s.goal_pos : target,
                              at_goal ? kGripOpen : kGripClose);
                } else {
                    // grabbed out of order: drop it and let arm 0 start over
                    write_arm(action, 0, s.ee_pos[0], s.obj_pos, kGripOpen);
                    write_arm(action, 1, s.ee_pos[1], kRendezvous, kGripOpen);
                }
            } else if (!s.arm0_grasped) {
                const bool near = dist(s.ee_pos[0], s.obj_pos) <= kGraspActTol;
                write_arm(action, 0, s.ee_pos[0], s.obj_pos, near ? kGripClose : kGripOpen);
                write_arm(action, 1, s.ee_pos[1], kRendezvous, kGripOpen);
            } else if (s.handover_done && dist(s.obj_pos, s.goal_pos) <= spec.success_tol) {
                write_arm(action, 0, s.ee_pos[0], home0, kGripOpen);  // delivered
                write_arm(action, 1, s.ee_pos[1], s.ee_pos[1], kGripOpen);
            } else {
                // free object after arm 0 already held it: the receiver
                // finishes the task alone
                const bool near = dist(s.ee_pos[1], s.obj_pos) <= kGraspActTol;
                write_arm(action, 0, s.ee_pos[0], home0, kGripOpen);
                write_arm(action, 1, s.ee_pos[1], s.obj_pos, near ? kGripClose : kGripOpen);
            }
            break;
        }
    }
    return action;
}

// ---------------------------------------------------------------------------
// Rollouts

using ActorFn =
    std::function<Vec(const TaskSpec&, const EnvState&, const Vec& obs, RandomSource&)>;

inline ActorFn expert_actor() {
    return [](const TaskSpec& spec, const EnvState& s, const Vec&, RandomSource&) {
        return scripted_expert(spec, s);
    };
}

// Runs one episode; the actor rng is an independent stream derived from the
// episode seed. Records K+1 observations and K actions, K <= max_steps.
inline Trajectory rollout(const ActorFn& actor, const TaskSpec& spec, std::uint64_t seed,
                          int max_steps = -1) {
    if (max_steps < 0) max_steps = spec.max_steps;
    EnvState s = reset(spec, seed);
    Rng rng(derive_seed(seed, env_detail::kActorStream));

    Trajectory traj;
    traj.task = to_string(spec.name);
    traj.seed = seed;
    Vec obs = observe(spec, s);
    traj.observations.push_back(obs);
    for (int k = 0; k < max_steps; ++k) {
        Vec action = actor(spec, s, obs, rng);
        StepResult res = step(spec, s, action);
        traj.actions.push_back(std::move(action));
        traj.observations.push_back(res.observation);
        obs = std::move(res.observation);
        traj.success = res.success;
        if (res.done) break;
    }
    traj.perturbed_mask.assign(traj.actions.size(), false);
    return traj;
}

// Closed-loop perturbed replay of a clean demonstration: the expert is
// re-run from the same reset and the planned steps execute (and record) the
// expert action plus noise, so later observations shift and the episode can
// fail. Steps are planned against the clean episode's length.
inline Trajectory replay_perturbed(const TaskSpec& spec, const Trajectory& clean,
                                   const PerturbConfig& cfg, RandomSource& rng) {
    validate(clean);
    const std::vector<std::size_t> plan = pick_perturbed_steps(clean.length(), cfg.frac, rng);
    std::vector<Vec> noises;
    noises.reserve(plan.size());
    for (std::size_t i = 0; i < plan.size(); ++i)
        noises.push_back(draw_perturbation(spec.action_dim(), cfg, rng));

    EnvState s = reset(spec, clean.seed);
    Trajectory traj;
    traj.task = clean.task;
    traj.seed = clean.seed;
    traj.source = Source::Perturbed;
    traj.observations.push_back(observe(spec, s));
    for (int k = 0; k < spec.max_steps; ++k) {
        Vec action = scripted_expert(spec, s);
        bool perturbed = false;
        const auto it = std::lower_bound(plan.begin(), plan.end(), static_cast<std::size_t>(k));
        if (it != plan.end() && *it == static_cast<std::size_t>(k)) {
            const Vec& noise = noises[static_cast<std::size_t>(it - plan.begin())];
            for (std::size_t j = 0; j < action.size(); ++j) action[j] += noise[j];
            perturbed = true;
        }
        StepResult res = step(spec, s, action);
        traj.actions.push_back(std::move(action));
        traj.observations.push_back(std::move(res.observation));
        traj.perturbed_mask.push_back(perturbed);
        traj.success = res.success;
        if (res.done) break;
    }
    return traj;
}

}  // namespace dsp
