#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icrl/dataset.hpp"
#include "icrl/env.hpp"
#include "icrl/model.hpp"

namespace icrl::train {

enum class VariantKind {
    kAD,
    kADEps,
    kCVPhiC,
    kCVPhiT,
    kAblateAuxOnly,
    kAblateRandomPhi,
};

std::string variant_name(VariantKind kind);
VariantKind variant_from_name(const std::string& name);

struct PhiTParams {
    long ramp = 1200;
    double cap = 1.0;
};

struct AlgoVariant {
    VariantKind kind = VariantKind::kAD;
    PhiTParams phi_t;
};

// Flag matrix: which token/head wiring each variant requires.
bool wants_value_input(VariantKind kind);
bool wants_value_head(VariantKind kind);
double default_lambda(VariantKind kind);

// Throws ConfigError when the model's wiring does not match the variant.
void check_variant_config(const AlgoVariant& variant, const model::ModelConfig& config);

// min(t/ramp, cap).
double phi_t(long t, long ramp, double cap);

// One of the 8 dihedral symmetries of a side x side grid applied to a cell
// and to a move action (kStay is fixed). transform 0 is the identity.
int transform_cell(int transform, int side, int cell);
int transform_action(int transform, int action);

struct TrainConfig {
    int n_steps = 1000;
    int batch_size = 8;
    int context_len = 400;
    double lambda_value = 1.0;  // applied only when the variant trains a value head
    // Apply a random dihedral symmetry of the grid to each sampled window
    // (states, actions, and implicitly the goal transform together). The
    // environment is exactly symmetric under these, so transformed windows
    // are valid histories of the reflected/rotated task.
    bool augment_symmetry = true;
    uint64_t seed = 0;
    int n_threads = 0;  // 0 = hardware concurrency
    int log_every = 50;
};

struct LossLogEntry {
    int step = 0;
    double total = 0.0;
    double action_ce = 0.0;
    double value_mse = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    model::Model model;
    std::vector<LossLogEntry> log;
};

// Supervised training over uniformly sampled episode-aligned windows.
// Per-window gradients are always reduced in batch order, so the outcome is
// identical for any thread count.
TrainResult train(const AlgoVariant& variant, const std::vector<data::LearningHistory>& dataset,
                  model::ModelConfig config, const model::OptimizerConfig& opt,
                  const TrainConfig& tc);

struct StepRecord {
    int state = 0;
    std::optional<double> v_hat_used;  // absent for variants without value input
    int action = 0;
    double reward = 0.0;
    int episode_index = 0;
};

struct RolloutTrace {
    env::DarkRoomTask task;
    uint64_t seed = 0;
    std::string variant;
    std::vector<StepRecord> steps;
    std::vector<double> episode_returns;
    long total_steps = 0;
};

enum class ActionMode { kSample, kGreedy };

struct RolloutConfig {
    long t_test = 2000;
    int context_len = 400;
    // The context keeps the most recent steps, never more than context_len;
    // when full, the oldest whole episodes are dropped in chunks so the
    // window start stays episode-aligned like the training windows.
    int evict_chunk_episodes = 5;
    ActionMode mode = ActionMode::kSample;
};

RolloutTrace rollout(const AlgoVariant& variant, const model::Model& m,
                     const env::DarkRoomTask& task, const RolloutConfig& rc, uint64_t rng_seed);

// One trace per (task, seed); parallel across runs. Throws ConfigError when a
// test task also appears in train_tasks.
std::vector<RolloutTrace> run_experiment(const AlgoVariant& variant, const model::Model& m,
                                         const std::vector<env::DarkRoomTask>& test_tasks,
                                         const std::vector<env::DarkRoomTask>& train_tasks,
                                         int n_seeds, const RolloutConfig& rc, uint64_t base_seed,
                                         int n_threads = 0);

// JSONL of step records plus a summary JSON next to it.
void save_trace(const RolloutTrace& trace, const std::string& dir, const std::string& key);
RolloutTrace load_trace(const std::string& dir, const std::string& key);

}  // namespace icrl::train
