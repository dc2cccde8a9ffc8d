#pragma once

#include <string>
#include <utility>
#include <vector>

#include "icrl/rng.hpp"

namespace icrl::env {

// Actions shared by every gridworld rollout.
enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr int kNumActions = 5;

// A goal-seeking gridworld: zero reward everywhere except reward_on_goal for
// every step that ends on the goal cell.
struct DarkRoomTask {
    int grid_size = 9;
    int goal_x = 0;
    int goal_y = 0;
    int episode_len = 20;
    double reward_on_goal = 1.0;

    int n_cells() const { return grid_size * grid_size; }
    int goal_cell() const { return goal_y * grid_size + goal_x; }
};

struct EnvState {
    int x = 0;
    int y = 0;
    int t_in_episode = 0;
    int episode_index = 0;

    int cell(const DarkRoomTask& task) const { return y * task.grid_size + x; }
};

struct StepResult {
    EnvState state;
    double reward = 0.0;
    bool episode_done = false;
};

void validate(const DarkRoomTask& task);

// Start position uniform over non-goal cells, t_in_episode = 0.
EnvState reset(const DarkRoomTask& task, Rng& rng);

// Moves one cell (clipped at walls); reward iff the new position is the goal.
StepResult step(const DarkRoomTask& task, const EnvState& state, int action);

// Disjoint train/test goal sets sampled without replacement.
std::pair<std::vector<DarkRoomTask>, std::vector<DarkRoomTask>> sample_tasks(
    int grid_size, int n_train, int n_test, uint64_t rng_seed, int episode_len = 20,
    double reward_on_goal = 1.0);

std::string tasks_to_json(const std::vector<DarkRoomTask>& tasks);
std::vector<DarkRoomTask> tasks_from_json(const std::string& json_text);

// ---------------------------------------------------------------------------

// Tabular MDP used by the bound-verification suites.
struct FiniteMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> transition;  // [s*A*S + a*S + s'], rows sum to 1
    std::vector<double> reward;      // [s*A + a]
    double gamma = 0.9;
    std::vector<double> init_dist;  // [s], sums to 1
    double r_max = 1.0;

    double trans(int s, int a, int s2) const {
        return transition[(static_cast<size_t>(s) * n_actions + a) * n_states + s2];
    }
    double rew(int s, int a) const { return reward[static_cast<size_t>(s) * n_actions + a]; }
};

void validate(const FiniteMDP& mdp);

// Transition rows from a flat-Dirichlet simplex sampler, rewards uniform in
// [0, r_max].
FiniteMDP random_finite_mdp(int n_states, int n_actions, double gamma, uint64_t rng_seed,
                            double r_max = 1.0);

}  // namespace icrl::env
