#include "icrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "icrl/errors.hpp"

namespace icrl::env {

void validate(const DarkRoomTask& task) {
    if (task.grid_size < 1) {
        throw InputError("grid_size must be >= 1");
    }
    if (task.goal_x < 0 || task.goal_x >= task.grid_size || task.goal_y < 0 ||
        task.goal_y >= task.grid_size) {
        throw InputError("goal outside grid");
    }
    if (task.episode_len < 1) {
        throw InputError("episode_len must be >= 1");
    }
    if (!(task.reward_on_goal > 0.0)) {
        throw InputError("reward_on_goal must be positive");
    }
}

EnvState reset(const DarkRoomTask& task, Rng& rng) {
    validate(task);
    if (task.n_cells() < 2) {
        throw InputError("grid too small to place agent off-goal");
    }
    // Draw over n_cells-1 and skip the goal index: uniform over non-goal cells.
    int cell = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(task.n_cells() - 1)));
    if (cell >= task.goal_cell()) {
        ++cell;
    }
    EnvState s;
    s.x = cell % task.grid_size;
    s.y = cell / task.grid_size;
    s.t_in_episode = 0;
    s.episode_index = 0;
    return s;
}

StepResult step(const DarkRoomTask& task, const EnvState& state, int action) {
    if (action < 0 || action >= kNumActions) {
        throw InputError("action out of range: " + std::to_string(action));
    }
    if (state.t_in_episode >= task.episode_len) {
        throw InputError("step called past episode end; reset required");
    }
    StepResult out;
    out.state = state;
    switch (action) {
        case kUp: out.state.y = std::min(state.y + 1, task.grid_size - 1); break;
        case kDown: out.state.y = std::max(state.y - 1, 0); break;
        case kLeft: out.state.x = std::max(state.x - 1, 0); break;
        case kRight: out.state.x = std::min(state.x + 1, task.grid_size - 1); break;
        case kStay: break;
    }
    out.state.t_in_episode = state.t_in_episode + 1;
    out.reward =
        (out.state.x == task.goal_x && out.state.y == task.goal_y) ? task.reward_on_goal : 0.0;
    out.episode_done = out.state.t_in_episode == task.episode_len;
    return out;
}

std::pair<std::vector<DarkRoomTask>, std::vector<DarkRoomTask>> sample_tasks(
    int grid_size, int n_train, int n_test, uint64_t rng_seed, int episode_len,
    double reward_on_goal) {
    if (grid_size < 1 || n_train < 0 || n_test < 0) {
        throw InputError("bad sample_tasks arguments");
    }
    const int n_cells = grid_size * grid_size;
    if (n_train + n_test > n_cells) {
        throw InputError("not enough distinct goal cells: need " + std::to_string(n_train + n_test) +
                         ", grid has " + std::to_string(n_cells));
    }
    std::vector<int> cells(static_cast<size_t>(n_cells));
    std::iota(cells.begin(), cells.end(), 0);
    Rng rng(rng_seed);
    rng.shuffle(cells);

    auto make_task = [&](int cell) {
        DarkRoomTask t;
        t.grid_size = grid_size;
        t.goal_x = cell % grid_size;
        t.goal_y = cell / grid_size;
        t.episode_len = episode_len;
        t.reward_on_goal = reward_on_goal;
        return t;
    };
    std::vector<DarkRoomTask> train, test;
    train.reserve(static_cast<size_t>(n_train));
    test.reserve(static_cast<size_t>(n_test));
    for (int i = 0; i < n_train; ++i) {
        train.push_back(make_task(cells[static_cast<size_t>(i)]));
    }
    for (int i = 0; i < n_test; ++i) {
        test.push_back(make_task(cells[static_cast<size_t>(n_train + i)]));
    }
    return {train, test};
}

std::string tasks_to_json(const std::vector<DarkRoomTask>& tasks) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tasks) {
        arr.push_back({{"grid_size", t.grid_size},
                       {"goal", {t.goal_x, t.goal_y}},
                       {"episode_len", t.episode_len},
                       {"reward_on_goal", t.reward_on_goal}});
    }
    return arr.dump(2) + "\n";
}

std::vector<DarkRoomTask> tasks_from_json(const std::string& json_text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("task list parse error: ") + e.what());
    }
    if (!arr.is_array()) {
        throw IoError("task list must be a JSON array");
    }
    std::vector<DarkRoomTask> tasks;
    for (const auto& j : arr) {
        DarkRoomTask t;
        t.grid_size = j.at("grid_size").get<int>();
        t.goal_x = j.at("goal").at(0).get<int>();
        t.goal_y = j.at("goal").at(1).get<int>();
        t.episode_len = j.at("episode_len").get<int>();
        t.reward_on_goal = j.at("reward_on_goal").get<double>();
        validate(t);
        tasks.push_back(t);
    }
    return tasks;
}

// ---------------------------------------------------------------------------

void validate(const FiniteMDP& mdp) {
    if (mdp.n_states < 1 || mdp.n_actions < 1) {
        throw InputError("FiniteMDP needs at least one state and action");
    }
    if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) {
        throw InputError("gamma must lie in [0,1)");
    }
    const size_t s = static_cast<size_t>(mdp.n_states);
    const size_t a = static_cast<size_t>(mdp.n_actions);
    if (mdp.transition.size() != s * a * s || mdp.reward.size() != s * a ||
        mdp.init_dist.size() != s) {
        throw InputError("FiniteMDP tensor shapes inconsistent");
    }
    for (int si = 0; si < mdp.n_states; ++si) {
        for (int ai = 0; ai < mdp.n_actions; ++ai) {
            double row = 0.0;
            for (int sj = 0; sj < mdp.n_states; ++sj) {
                row += mdp.trans(si, ai, sj);
            }
            if (std::abs(row - 1.0) > 1e-12) {
                throw InputError("transition row does not sum to 1");
            }
            if (std::abs(mdp.rew(si, ai)) > mdp.r_max + 1e-12) {
                throw InputError("|reward| exceeds r_max");
            }
        }
    }
    double init = std::accumulate(mdp.init_dist.begin(), mdp.init_dist.end(), 0.0);
    if (std::abs(init - 1.0) > 1e-12) {
        throw InputError("init_dist does not sum to 1");
    }
}

namespace {

// Flat Dirichlet via normalized exponentials; renormalized exactly so the
// validator's 1e-12 row-sum check holds.
void fill_simplex(Rng& rng, double* row, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        row[i] = rng.exponential();
        total += row[i];
    }
    double acc = 0.0;
    for (int i = 0; i < n - 1; ++i) {
        row[i] /= total;
        acc += row[i];
    }
    row[n - 1] = 1.0 - acc;
}

}  // namespace

FiniteMDP random_finite_mdp(int n_states, int n_actions, double gamma, uint64_t rng_seed,
                            double r_max) {
    if (n_states < 2 || n_actions < 2) {
        throw InputError("random_finite_mdp needs n_states >= 2 and n_actions >= 2");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) {
        throw InputError("gamma must lie in [0,1)");
    }
    if (!(r_max > 0.0)) {
        throw InputError("r_max must be positive");
    }
    Rng rng(rng_seed);
    FiniteMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.r_max = r_max;
    mdp.transition.resize(static_cast<size_t>(n_states) * n_actions * n_states);
    mdp.reward.resize(static_cast<size_t>(n_states) * n_actions);
    mdp.init_dist.resize(static_cast<size_t>(n_states));
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            fill_simplex(rng, &mdp.transition[(static_cast<size_t>(s) * n_actions + a) * n_states],
                         n_states);
            mdp.reward[static_cast<size_t>(s) * n_actions + a] = rng.uniform(0.0, r_max);
        }
    }
    fill_simplex(rng, mdp.init_dist.data(), n_states);
    validate(mdp);
    return mdp;
}

}  // namespace icrl::env
