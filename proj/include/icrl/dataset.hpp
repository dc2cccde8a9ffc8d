#pragma once

#include <string>
#include <vector>

#include "icrl/env.hpp"
#include "icrl/policies.hpp"
#include "icrl/rng.hpp"

namespace icrl::data {

struct HistoryStep {
    uint16_t state = 0;  // grid cell index
    float v_hat = 0.0f;  // j_hat of the generating checkpoint / j_max
    uint8_t action = 0;
    float reward = 0.0f;
    uint16_t source_index = 0;       // which checkpoint produced the step
    bool episode_boundary = false;   // first step of an episode; never fed to the model
};

struct LearningHistory {
    std::string task_id;
    env::DarkRoomTask task;
    int segment_len = 0;  // steps rolled per checkpoint
    std::vector<HistoryStep> steps;
};

struct TrainingWindow {
    std::string task_id;
    size_t start_offset = 0;
    std::vector<HistoryStep> steps;
};

// Rolls out each checkpoint in order for segment_len steps (spanning episode
// resets) and concatenates the segments into one stream. Every step carries
// v_hat = j_hat_i / j_max.
LearningHistory collect_history(const env::DarkRoomTask& task,
                                const policies::CheckpointSequence& seq, int segment_len,
                                uint64_t rng_seed);

// Uniform episode-aligned window of length context_len.
TrainingWindow sample_window(const LearningHistory& history, int context_len, Rng& rng);
size_t num_window_starts(const LearningHistory& history, int context_len);
TrainingWindow window_at(const LearningHistory& history, int context_len, size_t start);

void write_dataset(const std::vector<LearningHistory>& histories, const std::string& path);
std::vector<LearningHistory> read_dataset(const std::string& path);

}  // namespace icrl::data
