#include "icrl/dataset.hpp"

#include <json.hpp>

#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"

namespace icrl::data {

LearningHistory collect_history(const env::DarkRoomTask& task,
                                const policies::CheckpointSequence& seq, int segment_len,
                                uint64_t rng_seed) {
    env::validate(task);
    if (seq.checkpoints.size() < 1) {
        throw InputError("collect_history needs a non-empty checkpoint sequence");
    }
    if (segment_len < 1 || segment_len % task.episode_len != 0) {
        throw InputError("segment_len must be a positive multiple of episode_len");
    }
    for (size_t i = 1; i < seq.checkpoints.size(); ++i) {
        if (seq.checkpoints[i].j_hat < seq.checkpoints[i - 1].j_hat) {
            throw InputError("checkpoint sequence is not monotone; run enforce_monotone first");
        }
    }
    if (!(seq.j_max > 0.0)) {
        throw InputError("j_max must be positive to normalize v_hat");
    }

    Rng rng(rng_seed);
    LearningHistory hist;
    hist.task_id = seq.task_id;
    hist.task = task;
    hist.segment_len = segment_len;
    hist.steps.reserve(seq.checkpoints.size() * static_cast<size_t>(segment_len));

    for (const auto& cp : seq.checkpoints) {
        const float v_hat = static_cast<float>(cp.j_hat / seq.j_max);
        env::EnvState s = env::reset(task, rng);
        for (int k = 0; k < segment_len; ++k) {
            const int cell = s.cell(task);
            const int a = static_cast<int>(rng.categorical(policies::action_probabilities(cp, cell)));
            auto r = env::step(task, s, a);
            HistoryStep step;
            step.state = static_cast<uint16_t>(cell);
            step.v_hat = v_hat;
            step.action = static_cast<uint8_t>(a);
            step.reward = static_cast<float>(r.reward);
            step.source_index = static_cast<uint16_t>(cp.index);
            step.episode_boundary = s.t_in_episode == 0;
            hist.steps.push_back(step);
            s = r.episode_done ? env::reset(task, rng) : r.state;
        }
    }
    return hist;
}

size_t num_window_starts(const LearningHistory& history, int context_len) {
    if (context_len < 1 || static_cast<size_t>(context_len) > history.steps.size()) {
        throw InputError("context_len must lie in [1, history length]");
    }
    const size_t ep = static_cast<size_t>(history.task.episode_len);
    return (history.steps.size() - static_cast<size_t>(context_len)) / ep + 1;
}

TrainingWindow window_at(const LearningHistory& history, int context_len, size_t start_index) {
    const size_t ep = static_cast<size_t>(history.task.episode_len);
    const size_t offset = start_index * ep;
    if (offset + static_cast<size_t>(context_len) > history.steps.size()) {
        throw InputError("window start out of range");
    }
    TrainingWindow w;
    w.task_id = history.task_id;
    w.start_offset = offset;
    w.steps.assign(history.steps.begin() + static_cast<ptrdiff_t>(offset),
                   history.steps.begin() + static_cast<ptrdiff_t>(offset + context_len));
    return w;
}

TrainingWindow sample_window(const LearningHistory& history, int context_len, Rng& rng) {
    const size_t n_starts = num_window_starts(history, context_len);
    return window_at(history, context_len, rng.uniform_int(n_starts));
}

// ---------------------------------------------------------------------------
// Dataset file: "ICRLDS1" magic, u32 version, u32 history count; per history
// a length-prefixed task JSON blob, segment_len, step count, packed 14-byte
// records, and a CRC-32 of the history section. Little-endian throughout.

namespace {

constexpr char kMagic[] = "ICRLDS1";
constexpr uint32_t kVersion = 1;

// task_id and segment_len travel inside the per-history JSON blob.
std::string task_json(const LearningHistory& hist) {
    nlohmann::json j = {{"grid_size", hist.task.grid_size},
                        {"goal", {hist.task.goal_x, hist.task.goal_y}},
                        {"episode_len", hist.task.episode_len},
                        {"reward_on_goal", hist.task.reward_on_goal},
                        {"task_id", hist.task_id},
                        {"segment_len", hist.segment_len}};
    return j.dump();
}

}  // namespace

void write_dataset(const std::vector<LearningHistory>& histories, const std::string& path) {
    ByteWriter w;
    w.put_bytes(std::string_view(kMagic, 7));
    w.put_u32(kVersion);
    w.put_u32(static_cast<uint32_t>(histories.size()));
    for (const auto& hist : histories) {
        ByteWriter section;
        const std::string tj = task_json(hist);
        section.put_u32(static_cast<uint32_t>(tj.size()));
        section.put_bytes(tj);
        section.put_u32(static_cast<uint32_t>(hist.steps.size()));
        for (const auto& s : hist.steps) {
            section.put_u16(s.state);
            section.put_f32(s.v_hat);
            section.put_u8(s.action);
            section.put_f32(s.reward);
            section.put_u16(s.source_index);
            section.put_u8(s.episode_boundary ? 1 : 0);
        }
        const uint32_t crc = crc32(section.bytes());
        w.put_bytes(section.bytes());
        w.put_u32(crc);
    }
    write_file_atomic(path, w.bytes());
}

std::vector<LearningHistory> read_dataset(const std::string& path) {
    const std::string blob = read_file(path);
    ByteReader r(blob);
    const std::string_view magic = r.get_bytes(7);
    if (magic != std::string_view(kMagic, 7)) {
        throw VersionError("not a dataset file (bad magic)");
    }
    const uint32_t version = r.get_u32();
    if (version != kVersion) {
        throw VersionError("unsupported dataset version " + std::to_string(version));
    }
    const uint32_t count = r.get_u32();
    std::vector<LearningHistory> histories;
    histories.reserve(count);
    for (uint32_t h = 0; h < count; ++h) {
        const size_t section_start = r.offset();
        LearningHistory hist;
        const uint32_t tj_len = r.get_u32();
        const std::string tj(r.get_bytes(tj_len));
        try {
            nlohmann::json j = nlohmann::json::parse(tj);
            hist.task.grid_size = j.at("grid_size").get<int>();
            hist.task.goal_x = j.at("goal").at(0).get<int>();
            hist.task.goal_y = j.at("goal").at(1).get<int>();
            hist.task.episode_len = j.at("episode_len").get<int>();
            hist.task.reward_on_goal = j.at("reward_on_goal").get<double>();
            hist.task_id = j.at("task_id").get<std::string>();
            hist.segment_len = j.at("segment_len").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw VersionError(std::string("task blob parse error: ") + e.what());
        }
        const uint32_t n_steps = r.get_u32();
        hist.steps.resize(n_steps);
        for (auto& s : hist.steps) {
            s.state = r.get_u16();
            s.v_hat = r.get_f32();
            s.action = r.get_u8();
            s.reward = r.get_f32();
            s.source_index = r.get_u16();
            s.episode_boundary = r.get_u8() != 0;
        }
        const size_t section_end = r.offset();
        const uint32_t expect =
            crc32(std::string_view(blob).substr(section_start, section_end - section_start));
        const uint32_t got = r.get_u32();
        if (expect != got) {
            throw ChecksumError("dataset history " + std::to_string(h) + " checksum mismatch");
        }
        histories.push_back(std::move(hist));
    }
    return histories;
}

}  // namespace icrl::data
