#include "icrl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"

namespace icrl::train {

std::string variant_name(VariantKind kind) {
    switch (kind) {
        case VariantKind::kAD: return "AD";
        case VariantKind::kADEps: return "AD_EPS";
        case VariantKind::kCVPhiC: return "CV_PHI_C";
        case VariantKind::kCVPhiT: return "CV_PHI_T";
        case VariantKind::kAblateAuxOnly: return "ABLATE_AUX_ONLY";
        case VariantKind::kAblateRandomPhi: return "ABLATE_RANDOM_PHI";
    }
    throw InputError("unknown variant");
}

VariantKind variant_from_name(const std::string& name) {
    if (name == "AD") return VariantKind::kAD;
    if (name == "AD_EPS") return VariantKind::kADEps;
    if (name == "CV_PHI_C") return VariantKind::kCVPhiC;
    if (name == "CV_PHI_T") return VariantKind::kCVPhiT;
    if (name == "ABLATE_AUX_ONLY") return VariantKind::kAblateAuxOnly;
    if (name == "ABLATE_RANDOM_PHI") return VariantKind::kAblateRandomPhi;
    throw ConfigError("unknown variant: " + name);
}

bool wants_value_input(VariantKind kind) {
    switch (kind) {
        case VariantKind::kCVPhiC:
        case VariantKind::kCVPhiT:
        case VariantKind::kAblateRandomPhi: return true;
        default: return false;
    }
}

bool wants_value_head(VariantKind kind) {
    return kind == VariantKind::kCVPhiC || kind == VariantKind::kAblateAuxOnly;
}

double default_lambda(VariantKind kind) { return wants_value_head(kind) ? 1.0 : 0.0; }

void check_variant_config(const AlgoVariant& variant, const model::ModelConfig& config) {
    if (config.value_input != wants_value_input(variant.kind) ||
        config.value_head != wants_value_head(variant.kind)) {
        throw ConfigError("model wiring does not match variant " + variant_name(variant.kind) +
                          " (value_input must be " +
                          (wants_value_input(variant.kind) ? "on" : "off") +
                          ", value_head must be " + (wants_value_head(variant.kind) ? "on" : "off") +
                          ")");
    }
}

double phi_t(long t, long ramp, double cap) {
    if (t < 0 || ramp <= 0 || !(cap > 0.0 && cap <= 1.0)) {
        throw InputError("phi_t requires t >= 0, ramp > 0, cap in (0,1]");
    }
    return std::min(static_cast<double>(t) / static_cast<double>(ramp), cap);
}

int transform_cell(int transform, int side, int cell) {
    const int x = cell % side;
    const int y = cell / side;
    const int m = side - 1;
    int nx = x, ny = y;
    switch (transform) {
        case 0: break;
        case 1: nx = m - y; ny = x; break;       // rot 90
        case 2: nx = m - x; ny = m - y; break;   // rot 180
        case 3: nx = y; ny = m - x; break;       // rot 270
        case 4: nx = m - x; break;               // mirror x
        case 5: ny = m - y; break;               // mirror y
        case 6: nx = y; ny = x; break;           // transpose
        case 7: nx = m - y; ny = m - x; break;   // anti-transpose
        default: throw InputError("transform index must lie in [0,8)");
    }
    return ny * side + nx;
}

int transform_action(int transform, int action) {
    using namespace env;
    if (action == kStay) {
        return kStay;
    }
    // Direction permutations matching transform_cell's coordinate maps.
    static const int table[8][4] = {
        // index by [transform][action] for actions {up, down, left, right}
        {kUp, kDown, kLeft, kRight},     // identity
        {kLeft, kRight, kDown, kUp},     // rot 90: (dx,dy) -> (-dy,dx)
        {kDown, kUp, kRight, kLeft},     // rot 180
        {kRight, kLeft, kUp, kDown},     // rot 270: (dx,dy) -> (dy,-dx)
        {kUp, kDown, kRight, kLeft},     // mirror x
        {kDown, kUp, kLeft, kRight},     // mirror y
        {kRight, kLeft, kDown, kUp},     // transpose: (dx,dy) -> (dy,dx)
        {kLeft, kRight, kUp, kDown},     // anti-transpose: (dx,dy) -> (-dy,-dx)
    };
    if (transform < 0 || transform >= 8 || action < 0 || action >= 4) {
        throw InputError("bad transform/action");
    }
    return table[transform][action];
}

// ----------------------------- training -----------------------------

namespace {

int resolve_threads(int n_threads) {
    if (n_threads > 0) {
        return n_threads;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Uniform (history, window) draw for one batch slot, optionally passed
// through a random grid symmetry.
data::TrainingWindow draw_window(const std::vector<data::LearningHistory>& dataset,
                                 int context_len, bool augment, Rng& rng) {
    const size_t h = rng.uniform_int(dataset.size());
    data::TrainingWindow w = data::sample_window(dataset[h], context_len, rng);
    if (augment) {
        const int side = dataset[h].task.grid_size;
        const int g = static_cast<int>(rng.uniform_int(8));
        if (g != 0) {
            for (auto& step : w.steps) {
                step.state = static_cast<uint16_t>(transform_cell(g, side, step.state));
                step.action = static_cast<uint8_t>(transform_action(g, step.action));
            }
        }
    }
    return w;
}

}  // namespace

TrainResult train(const AlgoVariant& variant, const std::vector<data::LearningHistory>& dataset,
                  model::ModelConfig config, const model::OptimizerConfig& opt,
                  const TrainConfig& tc) {
    if (dataset.empty()) {
        throw ConfigError("training dataset is empty");
    }
    config.value_input = wants_value_input(variant.kind);
    config.value_head = wants_value_head(variant.kind);
    check_variant_config(variant, config);
    for (const auto& hist : dataset) {
        if (hist.steps.size() < static_cast<size_t>(tc.context_len)) {
            throw ConfigError("history shorter than context_len");
        }
        if (hist.task.n_cells() > config.state_vocab) {
            throw ConfigError("state_vocab smaller than the environment's cell count");
        }
    }
    const double lambda = wants_value_head(variant.kind) ? tc.lambda_value : 0.0;

    TrainResult result;
    result.model = model::make_model(config);
    model::Model& m = result.model;

    Rng root(tc.seed);
    const int n_threads = resolve_threads(tc.n_threads);
    const int batch = std::max(1, tc.batch_size);

    std::vector<std::vector<double>> window_grads(static_cast<size_t>(batch));
    std::vector<model::LossBreakdown> window_losses(static_cast<size_t>(batch));
    std::vector<double> grad(m.layout.total);

    for (int step = 0; step < tc.n_steps; ++step) {
        // Windows and dropout streams are keyed by (seed, step, slot) so the
        // result does not depend on the thread count.
        std::vector<data::TrainingWindow> windows;
        windows.reserve(static_cast<size_t>(batch));
        Rng step_rng = root.derive(static_cast<uint64_t>(step) + 1);
        for (int b = 0; b < batch; ++b) {
            windows.push_back(draw_window(dataset, tc.context_len, tc.augment_symmetry, step_rng));
        }

        std::atomic<int> cursor{0};
        std::atomic<bool> failed{false};
        std::string fail_msg;
        std::mutex fail_mu;
        auto worker = [&]() {
            for (;;) {
                const int b = cursor.fetch_add(1);
                if (b >= batch || failed.load()) {
                    return;
                }
                try {
                    Rng drop_rng =
                        root.derive((static_cast<uint64_t>(step) + 1) * 1000003 +
                                    static_cast<uint64_t>(b));
                    std::vector<data::TrainingWindow> one{windows[static_cast<size_t>(b)]};
                    window_losses[static_cast<size_t>(b)] =
                        model::loss_and_grad(m, one, lambda, window_grads[static_cast<size_t>(b)],
                                             config.dropout > 0.0 ? &drop_rng : nullptr);
                } catch (const std::exception& e) {
                    failed.store(true);
                    std::lock_guard<std::mutex> lk(fail_mu);
                    fail_msg = e.what();
                }
            }
        };
        if (n_threads > 1 && batch > 1) {
            std::vector<std::thread> pool;
            for (int i = 0; i < std::min(n_threads, batch); ++i) {
                pool.emplace_back(worker);
            }
            for (auto& th : pool) {
                th.join();
            }
        } else {
            worker();
        }
        if (failed.load()) {
            throw NumericError("training step " + std::to_string(step) + " failed: " + fail_msg);
        }

        // Fixed-order reduction.
        std::fill(grad.begin(), grad.end(), 0.0);
        double total = 0.0, ce = 0.0, mse = 0.0;
        const double inv_b = 1.0 / static_cast<double>(batch);
        for (int b = 0; b < batch; ++b) {
            const auto& wg = window_grads[static_cast<size_t>(b)];
            for (size_t i = 0; i < grad.size(); ++i) {
                grad[i] += wg[i];
            }
            total += window_losses[static_cast<size_t>(b)].total;
            ce += window_losses[static_cast<size_t>(b)].action_ce;
            mse += window_losses[static_cast<size_t>(b)].value_mse;
        }
        for (double& g : grad) {
            g *= inv_b;
        }
        const double lr_now = model::lr_at(opt, m.adam.step);
        model::optimizer_step(m, grad, opt);

        if (tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.n_steps)) {
            result.log.push_back({step, total * inv_b, ce * inv_b, mse * inv_b, lr_now});
        }
    }
    return result;
}

// ----------------------------- rollout -----------------------------

namespace {

struct ContextStep {
    int state = 0;
    std::optional<double> v_hat;
    int action = 0;
    double reward = 0.0;
};

model::DecodeState::TokenInput token_for(const std::vector<ContextStep>& ctx, size_t i) {
    model::DecodeState::TokenInput in;
    in.state = ctx[i].state;
    in.v_hat = ctx[i].v_hat;
    if (i > 0) {
        in.prev_action = ctx[i - 1].action;
        in.prev_reward = ctx[i - 1].reward;
    }
    return in;
}

int pick_action(const std::vector<double>& logits, ActionMode mode, Rng& rng) {
    if (mode == ActionMode::kGreedy) {
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    double mx = logits[0];
    for (double l : logits) {
        mx = std::max(mx, l);
    }
    std::vector<double> probs(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
    }
    return static_cast<int>(rng.categorical(probs));
}

}  // namespace

RolloutTrace rollout(const AlgoVariant& variant, const model::Model& m,
                     const env::DarkRoomTask& task, const RolloutConfig& rc, uint64_t rng_seed) {
    env::validate(task);
    check_variant_config(variant, m.config);
    if (rc.t_test < task.episode_len) {
        throw InputError("t_test must cover at least one episode");
    }
    if (rc.context_len < task.episode_len || rc.context_len > m.config.max_context) {
        throw InputError("context_len must lie in [episode_len, model max_context]");
    }
    if (task.n_cells() > m.config.state_vocab) {
        throw ConfigError("task has more cells than the model's state_vocab");
    }

    Rng root(rng_seed);
    Rng env_rng = root.derive(0);
    Rng act_rng = root.derive(1);
    Rng phi_rng = root.derive(2);

    RolloutTrace trace;
    trace.task = task;
    trace.seed = rng_seed;
    trace.variant = variant_name(variant.kind);
    trace.total_steps = rc.t_test;

    model::DecodeState ds(m);
    std::vector<ContextStep> ctx;
    ctx.reserve(static_cast<size_t>(rc.context_len));

    env::EnvState s = env::reset(task, env_rng);
    double episode_return = 0.0;
    double last_v_hat = 0.0;
    const int evict_steps = std::max(1, rc.evict_chunk_episodes) * task.episode_len;

    for (long t = 0; t < rc.t_test; ++t) {
        // Evict the oldest whole episodes once the window is full, then
        // rebuild the KV caches over the surviving suffix.
        if (static_cast<int>(ctx.size()) >= rc.context_len) {
            const size_t drop = std::min(ctx.size(), static_cast<size_t>(evict_steps));
            ctx.erase(ctx.begin(), ctx.begin() + static_cast<ptrdiff_t>(drop));
            ds.reset();
            for (size_t i = 0; i < ctx.size(); ++i) {
                ds.push_token(token_for(ctx, i));
            }
        }

        // Current-step value signal.
        std::optional<double> v_hat;
        switch (variant.kind) {
            case VariantKind::kCVPhiT:
                v_hat = phi_t(t, variant.phi_t.ramp, variant.phi_t.cap);
                break;
            case VariantKind::kAblateRandomPhi:
                v_hat = phi_rng.uniform01();
                break;
            case VariantKind::kCVPhiC: {
                // First pass probes the value head, second pass feeds the
                // model's own estimate back into the same token.
                ContextStep probe{s.cell(task), last_v_hat, 0, 0.0};
                ctx.push_back(probe);
                auto out = ds.push_token(token_for(ctx, ctx.size() - 1));
                ds.pop_token();
                ctx.pop_back();
                v_hat = std::clamp(out.value_pred, 0.0, 1.0);
                last_v_hat = *v_hat;
                break;
            }
            default: break;  // AD-style variants feed no value signal
        }

        ContextStep cur{s.cell(task), v_hat, 0, 0.0};
        ctx.push_back(cur);
        auto out = ds.push_token(token_for(ctx, ctx.size() - 1));
        const int action = pick_action(out.action_logits, rc.mode, act_rng);
        auto result = env::step(task, s, action);

        ctx.back().action = action;
        ctx.back().reward = result.reward;
        episode_return += result.reward;

        StepRecord rec;
        rec.state = cur.state;
        rec.v_hat_used = v_hat;
        rec.action = action;
        rec.reward = result.reward;
        rec.episode_index = s.episode_index;
        trace.steps.push_back(rec);

        if (result.episode_done) {
            trace.episode_returns.push_back(episode_return);
            episode_return = 0.0;
            const int next_episode = s.episode_index + 1;
            s = env::reset(task, env_rng);
            s.episode_index = next_episode;
        } else {
            s = result.state;
        }
    }
    return trace;
}

std::vector<RolloutTrace> run_experiment(const AlgoVariant& variant, const model::Model& m,
                                         const std::vector<env::DarkRoomTask>& test_tasks,
                                         const std::vector<env::DarkRoomTask>& train_tasks,
                                         int n_seeds, const RolloutConfig& rc, uint64_t base_seed,
                                         int n_threads) {
    if (test_tasks.empty() || n_seeds < 1) {
        throw ConfigError("run_experiment needs test tasks and n_seeds >= 1");
    }
    for (const auto& test : test_tasks) {
        for (const auto& train_task : train_tasks) {
            if (test.grid_size == train_task.grid_size && test.goal_x == train_task.goal_x &&
                test.goal_y == train_task.goal_y) {
                throw ConfigError("test task overlaps the training set (goal " +
                                  std::to_string(test.goal_x) + "," +
                                  std::to_string(test.goal_y) + ")");
            }
        }
    }
    Rng root(base_seed);
    const size_t n_runs = test_tasks.size() * static_cast<size_t>(n_seeds);
    std::vector<RolloutTrace> traces(n_runs);
    std::atomic<size_t> cursor{0};
    std::atomic<bool> failed{false};
    std::string fail_msg;
    std::mutex fail_mu;
    auto worker = [&]() {
        for (;;) {
            const size_t i = cursor.fetch_add(1);
            if (i >= n_runs || failed.load()) {
                return;
            }
            const size_t task_idx = i / static_cast<size_t>(n_seeds);
            const size_t seed_idx = i % static_cast<size_t>(n_seeds);
            try {
                const uint64_t run_seed =
                    root.derive(task_idx * 1000 + seed_idx).root_seed();
                traces[i] = rollout(variant, m, test_tasks[task_idx], rc, run_seed);
            } catch (const std::exception& e) {
                failed.store(true);
                std::lock_guard<std::mutex> lk(fail_mu);
                fail_msg = e.what();
            }
        }
    };
    const int threads = std::min(resolve_threads(n_threads), static_cast<int>(n_runs));
    if (threads > 1) {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    } else {
        worker();
    }
    if (failed.load()) {
        throw Error("run_experiment failed: " + fail_msg);
    }
    return traces;
}

// ----------------------------- persistence -----------------------------

void save_trace(const RolloutTrace& trace, const std::string& dir, const std::string& key) {
    ensure_dir(dir);
    std::string jsonl;
    long t = 0;
    for (const auto& rec : trace.steps) {
        nlohmann::json j = {{"t", t++},
                            {"state", rec.state},
                            {"action", rec.action},
                            {"reward", rec.reward},
                            {"episode", rec.episode_index}};
        j["v_hat"] = rec.v_hat_used.has_value() ? nlohmann::json(*rec.v_hat_used)
                                                : nlohmann::json(nullptr);
        jsonl += j.dump() + "\n";
    }
    write_file_atomic(dir + "/" + key + ".jsonl", jsonl);
    nlohmann::json summary = {
        {"task",
         {{"grid_size", trace.task.grid_size},
          {"goal", {trace.task.goal_x, trace.task.goal_y}},
          {"episode_len", trace.task.episode_len},
          {"reward_on_goal", trace.task.reward_on_goal}}},
        {"seed", trace.seed},
        {"variant", trace.variant},
        {"episode_returns", trace.episode_returns},
        {"total_steps", trace.total_steps}};
    write_file_atomic(dir + "/" + key + ".summary.json", summary.dump(2) + "\n");
}

RolloutTrace load_trace(const std::string& dir, const std::string& key) {
    RolloutTrace trace;
    nlohmann::json summary;
    try {
        summary = nlohmann::json::parse(read_file(dir + "/" + key + ".summary.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("trace summary parse error: ") + e.what());
    }
    trace.task.grid_size = summary.at("task").at("grid_size").get<int>();
    trace.task.goal_x = summary.at("task").at("goal").at(0).get<int>();
    trace.task.goal_y = summary.at("task").at("goal").at(1).get<int>();
    trace.task.episode_len = summary.at("task").at("episode_len").get<int>();
    trace.task.reward_on_goal = summary.at("task").at("reward_on_goal").get<double>();
    trace.seed = summary.at("seed").get<uint64_t>();
    trace.variant = summary.at("variant").get<std::string>();
    trace.episode_returns = summary.at("episode_returns").get<std::vector<double>>();
    trace.total_steps = summary.at("total_steps").get<long>();

    const std::string jsonl = read_file(dir + "/" + key + ".jsonl");
    size_t pos = 0;
    while (pos < jsonl.size()) {
        size_t end = jsonl.find('\n', pos);
        if (end == std::string::npos) {
            end = jsonl.size();
        }
        const std::string line = jsonl.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("trace line parse error: ") + e.what());
        }
        StepRecord rec;
        rec.state = j.at("state").get<int>();
        rec.action = j.at("action").get<int>();
        rec.reward = j.at("reward").get<double>();
        rec.episode_index = j.at("episode").get<int>();
        if (!j.at("v_hat").is_null()) {
            rec.v_hat_used = j.at("v_hat").get<double>();
        }
        trace.steps.push_back(rec);
    }
    return trace;
}

}  // namespace icrl::train
