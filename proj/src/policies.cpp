#include "icrl/policies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"

namespace icrl::policies {

using env::kNumActions;

std::vector<double> action_probabilities(const PolicyCheckpoint& cp, int cell) {
    std::vector<double> probs(kNumActions, 0.0);
    if (cp.kind == BehaviorKind::kSoftmax) {
        const double tau = std::max(cp.temperature_or_epsilon, 1e-8);
        double max_q = cp.q(cell, 0);
        for (int a = 1; a < kNumActions; ++a) {
            max_q = std::max(max_q, cp.q(cell, a));
        }
        double total = 0.0;
        for (int a = 0; a < kNumActions; ++a) {
            probs[static_cast<size_t>(a)] = std::exp((cp.q(cell, a) - max_q) / tau);
            total += probs[static_cast<size_t>(a)];
        }
        for (double& p : probs) {
            p /= total;
        }
    } else {
        const double eps = cp.temperature_or_epsilon;
        int best = 0;
        for (int a = 1; a < kNumActions; ++a) {
            if (cp.q(cell, a) > cp.q(cell, best)) {
                best = a;
            }
        }
        for (int a = 0; a < kNumActions; ++a) {
            probs[static_cast<size_t>(a)] = eps / kNumActions;
        }
        probs[static_cast<size_t>(best)] += 1.0 - eps;
    }
    return probs;
}

namespace {

int sample_action(const PolicyCheckpoint& cp, int cell, Rng& rng) {
    return static_cast<int>(rng.categorical(action_probabilities(cp, cell)));
}

}  // namespace

std::pair<double, double> evaluate_checkpoint(const env::DarkRoomTask& task,
                                              const PolicyCheckpoint& cp, int n_episodes,
                                              uint64_t rng_seed) {
    if (n_episodes < 1) {
        throw InputError("evaluate_checkpoint needs n_episodes >= 1");
    }
    Rng rng(rng_seed);
    double sum = 0.0, sum_sq = 0.0;
    for (int ep = 0; ep < n_episodes; ++ep) {
        env::EnvState s = env::reset(task, rng);
        double ret = 0.0;
        for (int t = 0; t < task.episode_len; ++t) {
            const int a = sample_action(cp, s.cell(task), rng);
            auto r = env::step(task, s, a);
            ret += r.reward;
            s = r.state;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    const double mean = sum / n_episodes;
    double stderr_ = 0.0;
    if (n_episodes > 1) {
        const double var = std::max(0.0, (sum_sq - n_episodes * mean * mean) / (n_episodes - 1));
        stderr_ = std::sqrt(var / n_episodes);
    }
    return {mean, stderr_};
}

CheckpointSequence train_checkpoints(const env::DarkRoomTask& task, int n_checkpoints,
                                     int steps_per_checkpoint, const QLearnConfig& hyper,
                                     uint64_t rng_seed, int eval_episodes) {
    env::validate(task);
    if (n_checkpoints < 2) {
        throw InputError("train_checkpoints needs n_checkpoints >= 2");
    }
    if (steps_per_checkpoint < 1) {
        throw InputError("steps_per_checkpoint must be >= 1");
    }
    Rng root(rng_seed);
    Rng learn_rng = root.derive(0);

    const int n_cells = task.n_cells();
    std::vector<double> q(static_cast<size_t>(n_cells) * kNumActions, 0.0);

    CheckpointSequence seq;
    seq.task_id = "darkroom_g" + std::to_string(task.goal_x) + "_" + std::to_string(task.goal_y);

    const long total_steps = static_cast<long>(n_checkpoints) * steps_per_checkpoint;
    long step_count = 0;
    env::EnvState s = env::reset(task, learn_rng);

    for (int i = 0; i < n_checkpoints; ++i) {
        // Snapshot first so checkpoint 0 is the untrained (uniform) policy.
        const double frac = n_checkpoints > 1 ? static_cast<double>(i) / (n_checkpoints - 1) : 1.0;
        PolicyCheckpoint cp;
        cp.index = i;
        cp.q_table = q;
        cp.kind = BehaviorKind::kSoftmax;
        cp.temperature_or_epsilon =
            hyper.tau_start * std::pow(hyper.tau_end / hyper.tau_start, frac);
        auto [j, se] = evaluate_checkpoint(task, cp, eval_episodes,
                                           root.derive(100 + static_cast<uint64_t>(i)).root_seed());
        cp.j_hat = j;
        cp.j_hat_stderr = se;
        seq.checkpoints.push_back(std::move(cp));

        for (int k = 0; k < steps_per_checkpoint; ++k, ++step_count) {
            const double eps =
                hyper.eps_start +
                (hyper.eps_end - hyper.eps_start) * (static_cast<double>(step_count) / total_steps);
            int a;
            if (learn_rng.uniform01() < eps) {
                a = static_cast<int>(learn_rng.uniform_int(kNumActions));
            } else {
                const int cell = s.cell(task);
                a = 0;
                for (int cand = 1; cand < kNumActions; ++cand) {
                    if (q[static_cast<size_t>(cell) * kNumActions + cand] >
                        q[static_cast<size_t>(cell) * kNumActions + a]) {
                        a = cand;
                    }
                }
            }
            auto r = env::step(task, s, a);
            // Episodes end by time limit, not termination, so the backup
            // bootstraps through the reset.
            q_learning_update(q, kNumActions, s.cell(task), a, r.reward, r.state.cell(task),
                              /*terminal=*/false, hyper.alpha, hyper.gamma);
            s = r.episode_done ? env::reset(task, learn_rng) : r.state;
        }
    }
    for (const auto& cp : seq.checkpoints) {
        seq.j_max = std::max(seq.j_max, cp.j_hat);
    }
    return seq;
}

CheckpointSequence enforce_monotone(const CheckpointSequence& seq) {
    CheckpointSequence out;
    out.task_id = seq.task_id;
    double running_max = -std::numeric_limits<double>::infinity();
    for (const auto& cp : seq.checkpoints) {
        if (cp.j_hat >= running_max) {
            running_max = cp.j_hat;
            out.checkpoints.push_back(cp);
            out.checkpoints.back().index = static_cast<int>(out.checkpoints.size()) - 1;
        }
    }
    if (out.checkpoints.size() < 2) {
        throw DegenerateError("monotone filtering left fewer than 2 checkpoints");
    }
    out.j_max = out.checkpoints.back().j_hat;
    return out;
}

PolicyCheckpoint noised_expert_policy(const PolicyCheckpoint& optimal, double eps_mix) {
    if (!(eps_mix >= 0.0 && eps_mix <= 1.0)) {
        throw InputError("eps_mix must lie in [0,1]");
    }
    PolicyCheckpoint cp = optimal;
    cp.kind = BehaviorKind::kEpsMix;
    cp.temperature_or_epsilon = eps_mix;
    cp.j_hat = 0.0;
    cp.j_hat_stderr = 0.0;
    return cp;
}

CheckpointSequence noised_expert_sequence(const env::DarkRoomTask& task,
                                          const PolicyCheckpoint& expert, int n_checkpoints,
                                          double ramp, uint64_t rng_seed, int eval_episodes) {
    if (n_checkpoints < 2) {
        throw InputError("noised_expert_sequence needs n_checkpoints >= 2");
    }
    if (!(ramp > 0.0)) {
        throw InputError("ramp must be positive");
    }
    Rng root(rng_seed);
    CheckpointSequence seq;
    seq.task_id = "darkroom_g" + std::to_string(task.goal_x) + "_" + std::to_string(task.goal_y) +
                  "_noised";
    for (int i = 0; i < n_checkpoints; ++i) {
        const double expertise = std::min(static_cast<double>(i) / ramp, 1.0);
        PolicyCheckpoint cp = noised_expert_policy(expert, 1.0 - expertise);
        cp.index = i;
        auto [j, se] = evaluate_checkpoint(task, cp, eval_episodes,
                                           root.derive(static_cast<uint64_t>(i)).root_seed());
        cp.j_hat = j;
        cp.j_hat_stderr = se;
        seq.checkpoints.push_back(std::move(cp));
    }
    for (const auto& cp : seq.checkpoints) {
        seq.j_max = std::max(seq.j_max, cp.j_hat);
    }
    return seq;
}

// ---------------------------------------------------------------------------

void save_sequence(const CheckpointSequence& seq, const std::string& dir) {
    ensure_dir(dir);
    nlohmann::json manifest;
    manifest["task_id"] = seq.task_id;
    manifest["j_max"] = seq.j_max;
    nlohmann::json cps = nlohmann::json::array();
    for (size_t i = 0; i < seq.checkpoints.size(); ++i) {
        const auto& cp = seq.checkpoints[i];
        char name[32];
        std::snprintf(name, sizeof(name), "q_%03zu.bin", i);
        cps.push_back({{"index", cp.index},
                       {"kind", cp.kind == BehaviorKind::kSoftmax ? "softmax" : "eps_mix"},
                       {"temperature_or_epsilon", cp.temperature_or_epsilon},
                       {"j_hat", cp.j_hat},
                       {"j_hat_stderr", cp.j_hat_stderr},
                       {"q_file", name}});
        ByteWriter w;
        w.put_u32(2);  // ndim
        w.put_u32(static_cast<uint32_t>(cp.q_table.size() / env::kNumActions));
        w.put_u32(env::kNumActions);
        for (double v : cp.q_table) {
            w.put_f64(v);
        }
        write_file_atomic(dir + "/" + name, w.bytes());
    }
    manifest["checkpoints"] = cps;
    write_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

CheckpointSequence load_sequence(const std::string& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest parse error: ") + e.what());
    }
    CheckpointSequence seq;
    seq.task_id = manifest.at("task_id").get<std::string>();
    seq.j_max = manifest.at("j_max").get<double>();
    for (const auto& j : manifest.at("checkpoints")) {
        PolicyCheckpoint cp;
        cp.index = j.at("index").get<int>();
        cp.kind = j.at("kind").get<std::string>() == "softmax" ? BehaviorKind::kSoftmax
                                                               : BehaviorKind::kEpsMix;
        cp.temperature_or_epsilon = j.at("temperature_or_epsilon").get<double>();
        cp.j_hat = j.at("j_hat").get<double>();
        cp.j_hat_stderr = j.at("j_hat_stderr").get<double>();
        const std::string blob = read_file(dir + "/" + j.at("q_file").get<std::string>());
        ByteReader r(blob);
        const uint32_t ndim = r.get_u32();
        if (ndim != 2) {
            throw VersionError("q table blob: expected 2 dims");
        }
        const uint32_t rows = r.get_u32();
        const uint32_t cols = r.get_u32();
        if (cols != env::kNumActions) {
            throw VersionError("q table blob: wrong action count");
        }
        cp.q_table.resize(static_cast<size_t>(rows) * cols);
        for (double& v : cp.q_table) {
            v = r.get_f64();
        }
        seq.checkpoints.push_back(std::move(cp));
    }
    return seq;
}

}  // namespace icrl::policies
