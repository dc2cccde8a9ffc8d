#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "icrl/env.hpp"
#include "icrl/rng.hpp"

namespace icrl::policies {

// How a checkpoint's Q-table is turned into a behavior distribution.
enum class BehaviorKind {
    kSoftmax,  // softmax(Q(s,.)/temperature)
    kEpsMix,   // (1-eps)*greedy(Q) + eps*uniform
};

struct PolicyCheckpoint {
    int index = 0;
    std::vector<double> q_table;  // [cells x actions]
    BehaviorKind kind = BehaviorKind::kSoftmax;
    double temperature_or_epsilon = 1.0;
    double j_hat = 0.0;
    double j_hat_stderr = 0.0;

    double q(int cell, int action) const {
        return q_table[static_cast<size_t>(cell) * env::kNumActions + action];
    }
};

struct CheckpointSequence {
    std::string task_id;
    std::vector<PolicyCheckpoint> checkpoints;
    double j_max = 0.0;
};

struct QLearnConfig {
    double alpha = 0.2;
    double gamma = 0.99;
    double eps_start = 1.0;   // exploration during Q-learning itself
    double eps_end = 0.05;
    double tau_start = 3.0;   // snapshot behavior temperature anneal
    double tau_end = 0.05;
};

// Behavior action distribution of a checkpoint at one cell.
std::vector<double> action_probabilities(const PolicyCheckpoint& cp, int cell);

// One tabular Q-learning backup; exposed so the update rule can be tested
// against closed-form fixed points in isolation.
inline void q_learning_update(std::vector<double>& q, int n_actions, int cell, int action,
                              double reward, int next_cell, bool terminal, double alpha,
                              double gamma) {
    double best_next = 0.0;
    if (!terminal) {
        best_next = q[static_cast<size_t>(next_cell) * n_actions];
        for (int a = 1; a < n_actions; ++a) {
            best_next = std::max(best_next, q[static_cast<size_t>(next_cell) * n_actions + a]);
        }
    }
    double& cur = q[static_cast<size_t>(cell) * n_actions + action];
    cur += alpha * (reward + gamma * best_next - cur);
}

// Runs epsilon-greedy Q-learning on the task, snapshotting the Q-table every
// steps_per_checkpoint environment steps with an annealed softmax temperature.
// Checkpoints come back with Monte-Carlo j_hat estimates already attached.
CheckpointSequence train_checkpoints(const env::DarkRoomTask& task, int n_checkpoints,
                                     int steps_per_checkpoint, const QLearnConfig& hyper,
                                     uint64_t rng_seed, int eval_episodes = 40);

// Monte-Carlo mean episode return of the checkpoint's behavior policy.
std::pair<double, double> evaluate_checkpoint(const env::DarkRoomTask& task,
                                              const PolicyCheckpoint& cp, int n_episodes,
                                              uint64_t rng_seed);

// Running-max subsequence of the recorded j_hat values, re-indexed 0..M-1.
// Throws DegenerateError when fewer than 2 checkpoints survive.
CheckpointSequence enforce_monotone(const CheckpointSequence& seq);

// (1-eps_mix)*greedy(optimal) + eps_mix*uniform. j_hat must be re-evaluated
// by the caller (or via train-time helpers) for the mixture.
PolicyCheckpoint noised_expert_policy(const PolicyCheckpoint& optimal, double eps_mix);

// Checkpoint sequence for the noised-expert data mode: expert = the final
// checkpoint of a trained sequence, mixed with uniform noise that decays as
// eps_mix(i) = 1 - min(i/ramp, 1).
CheckpointSequence noised_expert_sequence(const env::DarkRoomTask& task,
                                          const PolicyCheckpoint& expert, int n_checkpoints,
                                          double ramp, uint64_t rng_seed, int eval_episodes = 40);

// Directory layout: manifest.json + q_NNN.bin (shape header + flat f64).
void save_sequence(const CheckpointSequence& seq, const std::string& dir);
CheckpointSequence load_sequence(const std::string& dir);

}  // namespace icrl::policies
