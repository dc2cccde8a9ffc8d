#include <doctest.h>

#include <cmath>

#include "icrl/dataset.hpp"
#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"

using namespace icrl;

namespace {

env::DarkRoomTask small_task() {
    env::DarkRoomTask t;
    t.grid_size = 5;
    t.goal_x = 3;
    t.goal_y = 1;
    t.episode_len = 20;
    return t;
}

// Synthetic monotone sequence; q tables random so behavior varies by index.
policies::CheckpointSequence synthetic_sequence(const env::DarkRoomTask& task, int n, uint64_t seed) {
    Rng rng(seed);
    policies::CheckpointSequence seq;
    seq.task_id = "synthetic";
    for (int i = 0; i < n; ++i) {
        policies::PolicyCheckpoint cp;
        cp.index = i;
        cp.kind = policies::BehaviorKind::kSoftmax;
        cp.temperature_or_epsilon = 1.0;
        cp.q_table.resize(static_cast<size_t>(task.n_cells()) * env::kNumActions);
        for (double& q : cp.q_table) {
            q = rng.normal();
        }
        cp.j_hat = static_cast<double>(i + 1);
        seq.checkpoints.push_back(std::move(cp));
    }
    seq.j_max = static_cast<double>(n);
    return seq;
}

}  // namespace

TEST_CASE("collect_history concatenates checkpoint segments with v_hat labels") {
    const auto task = small_task();
    const auto seq = synthetic_sequence(task, 40, 3);
    const auto hist = data::collect_history(task, seq, 400, 9);
    CHECK(hist.steps.size() == 16000);

    // v_hat non-decreasing; final segment normalized to exactly 1.
    float prev = 0.0f;
    for (const auto& s : hist.steps) {
        CHECK(s.v_hat >= prev);
        prev = s.v_hat;
    }
    CHECK(hist.steps.back().v_hat == doctest::Approx(1.0));
    // source_index non-decreasing.
    uint16_t prev_src = 0;
    for (const auto& s : hist.steps) {
        CHECK(s.source_index >= prev_src);
        prev_src = s.source_index;
    }
    // Episode boundaries every episode_len steps.
    for (size_t i = 0; i < hist.steps.size(); ++i) {
        CHECK(hist.steps[i].episode_boundary == (i % 20 == 0));
    }
}

TEST_CASE("collect_history rewards replay exactly through an independent simulator") {
    const auto task = small_task();
    const auto seq = synthetic_sequence(task, 4, 5);
    const auto hist = data::collect_history(task, seq, 100, 12);

    // Replay the recorded actions from the recorded states; rewards must
    // match what the environment hands out.
    for (size_t i = 0; i < hist.steps.size(); ++i) {
        const auto& s = hist.steps[i];
        env::EnvState st;
        st.x = s.state % task.grid_size;
        st.y = s.state / task.grid_size;
        st.t_in_episode = static_cast<int>(i % 20);
        auto r = env::step(task, st, s.action);
        CHECK(r.reward == doctest::Approx(static_cast<double>(s.reward)));
        if (!r.episode_done && i + 1 < hist.steps.size()) {
            CHECK(hist.steps[i + 1].state == static_cast<uint16_t>(r.state.cell(task)));
        }
    }
}

TEST_CASE("collect_history rejects misaligned segment lengths") {
    const auto task = small_task();
    const auto seq = synthetic_sequence(task, 3, 1);
    CHECK_THROWS_AS(data::collect_history(task, seq, 30, 1), InputError);
    CHECK_THROWS_AS(data::collect_history(task, seq, 0, 1), InputError);
}

TEST_CASE("sample_window draws episode-aligned uniform starts") {
    const auto task = small_task();
    const auto seq = synthetic_sequence(task, 5, 2);
    const auto hist = data::collect_history(task, seq, 100, 3);  // 500 steps
    const int K = 100;
    const size_t n_starts = data::num_window_starts(hist, K);
    CHECK(n_starts == 21);

    Rng rng(77);
    std::vector<int> counts(n_starts, 0);
    const int n_samples = 100000;
    for (int i = 0; i < n_samples; ++i) {
        const auto w = data::sample_window(hist, K, rng);
        CHECK(w.start_offset % 20 == 0);
        CHECK(w.steps.size() == static_cast<size_t>(K));
        counts[w.start_offset / 20]++;
        // v_hat non-decreasing inside the window.
        float prev = 0.0f;
        for (const auto& s : w.steps) {
            CHECK(s.v_hat >= prev);
            prev = s.v_hat;
        }
    }
    const double p = 1.0 / static_cast<double>(n_starts);
    const double sigma = std::sqrt(n_samples * p * (1 - p));
    for (size_t i = 0; i < n_starts; ++i) {
        CHECK(std::abs(counts[i] - n_samples * p) <= 3.0 * sigma);
    }

    // Whole history when K equals its length.
    const auto whole = data::sample_window(hist, 500, rng);
    CHECK(whole.start_offset == 0);
    CHECK(whole.steps.size() == 500);
    CHECK_THROWS_AS(data::sample_window(hist, 501, rng), InputError);
}

TEST_CASE("dataset file round-trips and re-writes byte-identically") {
    const auto task = small_task();
    std::vector<data::LearningHistory> hists;
    hists.push_back(data::collect_history(task, synthetic_sequence(task, 3, 4), 40, 6));
    hists.push_back(data::collect_history(task, synthetic_sequence(task, 2, 8), 20, 7));

    data::write_dataset(hists, "test_ds.bin");
    const auto back = data::read_dataset("test_ds.bin");
    REQUIRE(back.size() == 2);
    for (size_t h = 0; h < 2; ++h) {
        CHECK(back[h].task_id == hists[h].task_id);
        CHECK(back[h].segment_len == hists[h].segment_len);
        REQUIRE(back[h].steps.size() == hists[h].steps.size());
        for (size_t i = 0; i < back[h].steps.size(); ++i) {
            CHECK(back[h].steps[i].state == hists[h].steps[i].state);
            CHECK(back[h].steps[i].v_hat == hists[h].steps[i].v_hat);
            CHECK(back[h].steps[i].action == hists[h].steps[i].action);
            CHECK(back[h].steps[i].reward == hists[h].steps[i].reward);
            CHECK(back[h].steps[i].source_index == hists[h].steps[i].source_index);
            CHECK(back[h].steps[i].episode_boundary == hists[h].steps[i].episode_boundary);
        }
    }
    data::write_dataset(back, "test_ds2.bin");
    CHECK(read_file("test_ds.bin") == read_file("test_ds2.bin"));
}

TEST_CASE("dataset corruption and truncation raise distinct errors") {
    const auto task = small_task();
    std::vector<data::LearningHistory> hists = {
        data::collect_history(task, synthetic_sequence(task, 2, 1), 20, 2)};
    data::write_dataset(hists, "test_ds3.bin");

    auto bytes = read_file("test_ds3.bin");
    auto corrupted = bytes;
    corrupted[corrupted.size() / 2] = static_cast<char>(corrupted[corrupted.size() / 2] ^ 0x40);
    write_file_atomic("test_ds3_bad.bin", corrupted);
    CHECK_THROWS_AS(data::read_dataset("test_ds3_bad.bin"), ChecksumError);

    write_file_atomic("test_ds3_trunc.bin", std::string_view(bytes).substr(0, bytes.size() - 6));
    CHECK_THROWS_AS(data::read_dataset("test_ds3_trunc.bin"), TruncatedError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    write_file_atomic("test_ds3_magic.bin", bad_magic);
    CHECK_THROWS_AS(data::read_dataset("test_ds3_magic.bin"), VersionError);
}

TEST_CASE("empty dataset is a valid file with zero records") {
    data::write_dataset({}, "test_ds_empty.bin");
    const auto back = data::read_dataset("test_ds_empty.bin");
    CHECK(back.empty());
}

TEST_CASE("collect_history rejects non-monotone sequences") {
    const auto task = small_task();
    auto seq = synthetic_sequence(task, 3, 1);
    seq.checkpoints[1].j_hat = 100.0;  // breaks monotonicity at index 2
    CHECK_THROWS_AS(data::collect_history(task, seq, 20, 1), InputError);
}

TEST_CASE("segment returns are consistent with their j_hat labels") {
    env::DarkRoomTask task;
    task.grid_size = 5;
    task.goal_x = 2;
    task.goal_y = 4;
    policies::QLearnConfig hyper;
    auto seq =
        policies::enforce_monotone(policies::train_checkpoints(task, 8, 800, hyper, 13, 200));
    const int segment_len = 400;  // 20 episodes per surviving checkpoint
    const auto hist = data::collect_history(task, seq, segment_len, 19);
    const int eps_per_seg = segment_len / task.episode_len;
    for (size_t ci = 0; ci < seq.checkpoints.size(); ++ci) {
        std::vector<double> ep_returns;
        double acc = 0.0;
        for (int i = 0; i < segment_len; ++i) {
            const auto& s = hist.steps[ci * segment_len + static_cast<size_t>(i)];
            acc += s.reward;
            if ((i + 1) % task.episode_len == 0) {
                ep_returns.push_back(acc);
                acc = 0.0;
            }
        }
        double seg_mean = 0.0, seg_var = 0.0;
        for (double r : ep_returns) {
            seg_mean += r;
        }
        seg_mean /= eps_per_seg;
        for (double r : ep_returns) {
            seg_var += (r - seg_mean) * (r - seg_mean);
        }
        seg_var /= (eps_per_seg - 1);
        const auto& cp = seq.checkpoints[ci];
        const double combined =
            std::sqrt(cp.j_hat_stderr * cp.j_hat_stderr + seg_var / eps_per_seg);
        CHECK(std::abs(seg_mean - cp.j_hat) <= 4.0 * std::max(combined, 1e-9));
    }
}
