#include <doctest.h>

#include <cmath>

#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"
#include "icrl/policies.hpp"

using namespace icrl;

namespace {

// Exact uniform-walk expected episode return via occupancy evolution: the
// independent oracle for Monte-Carlo checkpoint evaluation.
double uniform_policy_exact_return(const env::DarkRoomTask& task) {
    const int n = task.n_cells();
    std::vector<double> occ(static_cast<size_t>(n), 0.0);
    const int goal = task.goal_cell();
    for (int c = 0; c < n; ++c) {
        if (c != goal) {
            occ[static_cast<size_t>(c)] = 1.0 / (n - 1);
        }
    }
    double expected = 0.0;
    std::vector<double> next(static_cast<size_t>(n), 0.0);
    for (int t = 0; t < task.episode_len; ++t) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int c = 0; c < n; ++c) {
            const double mass = occ[static_cast<size_t>(c)] / 5.0;
            if (mass == 0.0) {
                continue;
            }
            const int x = c % task.grid_size;
            const int y = c / task.grid_size;
            const int up = std::min(y + 1, task.grid_size - 1) * task.grid_size + x;
            const int down = std::max(y - 1, 0) * task.grid_size + x;
            const int left = y * task.grid_size + std::max(x - 1, 0);
            const int right = y * task.grid_size + std::min(x + 1, task.grid_size - 1);
            next[static_cast<size_t>(up)] += mass;
            next[static_cast<size_t>(down)] += mass;
            next[static_cast<size_t>(left)] += mass;
            next[static_cast<size_t>(right)] += mass;
            next[static_cast<size_t>(c)] += mass;
        }
        occ = next;
        expected += occ[static_cast<size_t>(goal)] * task.reward_on_goal;
    }
    return expected;
}

policies::PolicyCheckpoint uniform_checkpoint(int n_cells) {
    policies::PolicyCheckpoint cp;
    cp.q_table.assign(static_cast<size_t>(n_cells) * env::kNumActions, 0.0);
    cp.kind = policies::BehaviorKind::kSoftmax;
    cp.temperature_or_epsilon = 1.0;
    return cp;
}

}  // namespace

TEST_CASE("q_learning_update reaches the closed-form Q on a 2-state chain") {
    // Deterministic chain: action 1 moves to the other state, action 0 stays.
    // Reward 1 whenever the NEXT state is state 1. gamma = 0.9 gives
    // Q* = [[9, 10], [10, 9]].
    const double gamma = 0.9;
    auto next_state = [](int s, int a) { return a == 1 ? 1 - s : s; };
    auto reward = [&](int s, int a) { return next_state(s, a) == 1 ? 1.0 : 0.0; };
    std::vector<double> q(4, 0.0);
    for (int sweep = 0; sweep < 500; ++sweep) {
        for (int s = 0; s < 2; ++s) {
            for (int a = 0; a < 2; ++a) {
                policies::q_learning_update(q, 2, s, a, reward(s, a), next_state(s, a), false, 0.5,
                                            gamma);
            }
        }
    }
    CHECK(std::abs(q[0] - 9.0) < 1e-6);
    CHECK(std::abs(q[1] - 10.0) < 1e-6);
    CHECK(std::abs(q[2] - 10.0) < 1e-6);
    CHECK(std::abs(q[3] - 9.0) < 1e-6);
}

TEST_CASE("evaluate_checkpoint matches the exact uniform-walk oracle") {
    env::DarkRoomTask task;
    task.grid_size = 9;
    task.goal_x = 4;
    task.goal_y = 4;
    const double exact = uniform_policy_exact_return(task);
    auto cp = uniform_checkpoint(task.n_cells());
    const int n_episodes = 20000;
    auto [j_hat, se] = policies::evaluate_checkpoint(task, cp, n_episodes, 33);
    REQUIRE(se > 0.0);
    CHECK(std::abs(j_hat - exact) <= 3.0 * se);
}

TEST_CASE("evaluate_checkpoint handles a single episode") {
    env::DarkRoomTask task;
    auto cp = uniform_checkpoint(task.n_cells());
    auto [j_hat, se] = policies::evaluate_checkpoint(task, cp, 1, 4);
    CHECK(se == 0.0);
    CHECK(j_hat >= 0.0);
    CHECK_THROWS_AS(policies::evaluate_checkpoint(task, cp, 0, 4), InputError);
}

TEST_CASE("train_checkpoints produces an improving sequence reaching near-optimal") {
    env::DarkRoomTask task;
    task.grid_size = 9;
    task.goal_x = 2;
    task.goal_y = 7;
    policies::QLearnConfig hyper;
    auto seq = policies::train_checkpoints(task, 40, 2000, hyper, 17);
    REQUIRE(seq.checkpoints.size() == 40);

    // Shortest-path oracle: mean optimal return over start cells.
    double optimal_mean = 0.0;
    int n_starts = 0;
    for (int c = 0; c < task.n_cells(); ++c) {
        if (c == task.goal_cell()) {
            continue;
        }
        const int dist = std::abs(c % 9 - task.goal_x) + std::abs(c / 9 - task.goal_y);
        optimal_mean += task.episode_len - dist;
        ++n_starts;
    }
    optimal_mean /= n_starts;

    const auto& last = seq.checkpoints.back();
    CHECK(last.j_hat >= 0.7 * optimal_mean);
    // Early checkpoint is weak (near-uniform behavior).
    CHECK(seq.checkpoints.front().j_hat < 0.3 * last.j_hat);
    double max_j = 0.0;
    for (const auto& cp : seq.checkpoints) {
        max_j = std::max(max_j, cp.j_hat);
    }
    CHECK(seq.j_max == doctest::Approx(max_j).epsilon(1e-12));
    // After monotone filtering the last surviving checkpoint carries j_max.
    const auto mono = policies::enforce_monotone(seq);
    CHECK(mono.j_max == doctest::Approx(mono.checkpoints.back().j_hat).epsilon(1e-12));

    CHECK_THROWS_AS(policies::train_checkpoints(task, 40, 0, hyper, 17), InputError);
    CHECK_THROWS_AS(policies::train_checkpoints(task, 1, 100, hyper, 17), InputError);
}

TEST_CASE("train_checkpoints is deterministic") {
    env::DarkRoomTask task;
    task.grid_size = 5;
    task.goal_x = 1;
    task.goal_y = 3;
    policies::QLearnConfig hyper;
    auto a = policies::train_checkpoints(task, 5, 300, hyper, 7, 20);
    auto b = policies::train_checkpoints(task, 5, 300, hyper, 7, 20);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (size_t i = 0; i < a.checkpoints.size(); ++i) {
        CHECK(a.checkpoints[i].q_table == b.checkpoints[i].q_table);
        CHECK(a.checkpoints[i].j_hat == b.checkpoints[i].j_hat);
    }
}

TEST_CASE("enforce_monotone keeps the running-max subsequence") {
    policies::CheckpointSequence seq;
    seq.task_id = "t";
    const std::vector<double> js = {1.0, 3.0, 2.0, 4.0};
    for (size_t i = 0; i < js.size(); ++i) {
        policies::PolicyCheckpoint cp;
        cp.index = static_cast<int>(i);
        cp.j_hat = js[i];
        cp.q_table.assign(5, static_cast<double>(i));
        seq.checkpoints.push_back(cp);
    }
    const auto out = policies::enforce_monotone(seq);
    REQUIRE(out.checkpoints.size() == 3);
    CHECK(out.checkpoints[0].j_hat == 1.0);
    CHECK(out.checkpoints[1].j_hat == 3.0);
    CHECK(out.checkpoints[2].j_hat == 4.0);
    CHECK(out.checkpoints[0].index == 0);
    CHECK(out.checkpoints[1].index == 1);
    CHECK(out.checkpoints[2].index == 2);
    CHECK(out.j_max == 4.0);

    // Already monotone input passes through unchanged.
    const auto again = policies::enforce_monotone(out);
    CHECK(again.checkpoints.size() == 3);

    // Strictly decreasing leaves only the first checkpoint.
    policies::CheckpointSequence bad;
    for (int i = 0; i < 3; ++i) {
        policies::PolicyCheckpoint cp;
        cp.j_hat = 3.0 - i;
        bad.checkpoints.push_back(cp);
    }
    CHECK_THROWS_AS(policies::enforce_monotone(bad), DegenerateError);
}

TEST_CASE("noised_expert_policy mixes greedy and uniform exactly") {
    policies::PolicyCheckpoint opt;
    opt.q_table = {0.1, 0.9, 0.2, 0.3, 0.4};  // one cell, argmax = action 1
    opt.kind = policies::BehaviorKind::kSoftmax;
    opt.temperature_or_epsilon = 0.01;

    auto pure = policies::noised_expert_policy(opt, 0.0);
    auto probs = policies::action_probabilities(pure, 0);
    CHECK(probs[1] == doctest::Approx(1.0));

    auto uniform = policies::noised_expert_policy(opt, 1.0);
    probs = policies::action_probabilities(uniform, 0);
    for (double p : probs) {
        CHECK(p == doctest::Approx(0.2));
    }

    auto half = policies::noised_expert_policy(opt, 0.5);
    probs = policies::action_probabilities(half, 0);
    CHECK(probs[1] == doctest::Approx(0.6));
    for (int a = 0; a < 5; ++a) {
        if (a != 1) {
            CHECK(probs[static_cast<size_t>(a)] == doctest::Approx(0.1));
        }
    }

    // Linear interpolation holds for arbitrary mixes.
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const double eps = rng.uniform01();
        auto mixed = policies::noised_expert_policy(opt, eps);
        probs = policies::action_probabilities(mixed, 0);
        for (int a = 0; a < 5; ++a) {
            const double expect = (a == 1 ? 1.0 - eps : 0.0) + eps / 5.0;
            CHECK(probs[static_cast<size_t>(a)] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(policies::noised_expert_policy(opt, 1.5), InputError);
}

TEST_CASE("noised_expert_sequence follows the decaying-noise schedule") {
    env::DarkRoomTask task;
    task.grid_size = 5;
    task.goal_x = 2;
    task.goal_y = 2;
    policies::PolicyCheckpoint expert;
    expert.q_table.assign(static_cast<size_t>(task.n_cells()) * 5, 0.0);
    // Make "right" optimal everywhere so the expert is deterministic.
    for (int c = 0; c < task.n_cells(); ++c) {
        expert.q_table[static_cast<size_t>(c) * 5 + env::kRight] = 1.0;
    }
    auto seq = policies::noised_expert_sequence(task, expert, 40, 30.0, 11, 10);
    REQUIRE(seq.checkpoints.size() == 40);
    CHECK(seq.checkpoints[0].temperature_or_epsilon == doctest::Approx(1.0));
    CHECK(seq.checkpoints[15].temperature_or_epsilon == doctest::Approx(0.5));
    CHECK(seq.checkpoints[30].temperature_or_epsilon == doctest::Approx(0.0));
    CHECK(seq.checkpoints[39].temperature_or_epsilon == doctest::Approx(0.0));
    for (const auto& cp : seq.checkpoints) {
        CHECK(cp.kind == policies::BehaviorKind::kEpsMix);
    }
}

TEST_CASE("checkpoint sequences round-trip through disk") {
    env::DarkRoomTask task;
    task.grid_size = 4;
    task.goal_x = 0;
    task.goal_y = 3;
    policies::QLearnConfig hyper;
    auto seq = policies::train_checkpoints(task, 3, 200, hyper, 21, 10);
    policies::save_sequence(seq, "test_seq_dir");
    auto back = policies::load_sequence("test_seq_dir");
    CHECK(back.task_id == seq.task_id);
    CHECK(back.j_max == seq.j_max);
    REQUIRE(back.checkpoints.size() == seq.checkpoints.size());
    for (size_t i = 0; i < back.checkpoints.size(); ++i) {
        CHECK(back.checkpoints[i].q_table == seq.checkpoints[i].q_table);
        CHECK(back.checkpoints[i].j_hat == seq.checkpoints[i].j_hat);
        CHECK(back.checkpoints[i].temperature_or_epsilon ==
              seq.checkpoints[i].temperature_or_epsilon);
    }
}
