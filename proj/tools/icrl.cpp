// Command-line entry point: generates source policies, collects datasets,
// trains variants, evaluates rollouts, runs the bound-verification suite,
// and renders reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icrl/dataset.hpp"
#include "icrl/env.hpp"
#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"
#include "icrl/metrics.hpp"
#include "icrl/model.hpp"
#include "icrl/policies.hpp"
#include "icrl/theory.hpp"
#include "icrl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace icrl;

namespace {

// ----------------------------- run configuration -----------------------------

struct RunConfig {
    // env
    int grid_size = 9;
    int episode_len = 20;
    double reward_on_goal = 1.0;
    int n_train_tasks = 20;
    int n_test_tasks = 5;
    // source policies
    int n_checkpoints = 40;
    int steps_per_checkpoint = 1200;
    int eval_episodes = 100;
    policies::QLearnConfig q;
    // dataset
    int segment_len = 100;
    int histories_per_task = 4;
    bool ad_eps = false;
    double ad_eps_ramp = 30.0;
    // model
    model::ModelConfig model;
    // training
    std::string variant = "AD";
    train::TrainConfig tc;
    model::OptimizerConfig opt;
    // evaluation
    train::RolloutConfig rollout;
    int n_seeds = 4;
    long phi_ramp = 1200;
    double phi_cap = 1.0;

    uint64_t seed = 1;
    int threads = 0;
};

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

RunConfig load_config(const std::string& path) {
    RunConfig c;
    c.model.max_context = 400;
    if (path.empty()) {
        return c;
    }
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (j.contains("env")) {
        const auto& e = j["env"];
        maybe(e, "grid_size", c.grid_size);
        maybe(e, "episode_len", c.episode_len);
        maybe(e, "reward_on_goal", c.reward_on_goal);
        maybe(e, "n_train_tasks", c.n_train_tasks);
        maybe(e, "n_test_tasks", c.n_test_tasks);
    }
    if (j.contains("source")) {
        const auto& s = j["source"];
        maybe(s, "n_checkpoints", c.n_checkpoints);
        maybe(s, "steps_per_checkpoint", c.steps_per_checkpoint);
        maybe(s, "eval_episodes", c.eval_episodes);
        maybe(s, "alpha", c.q.alpha);
        maybe(s, "gamma", c.q.gamma);
        maybe(s, "eps_start", c.q.eps_start);
        maybe(s, "eps_end", c.q.eps_end);
        maybe(s, "tau_start", c.q.tau_start);
        maybe(s, "tau_end", c.q.tau_end);
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        maybe(d, "segment_len", c.segment_len);
        maybe(d, "histories_per_task", c.histories_per_task);
        maybe(d, "ad_eps", c.ad_eps);
        maybe(d, "ad_eps_ramp", c.ad_eps_ramp);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        maybe(m, "d_model", c.model.d_model);
        maybe(m, "n_layers", c.model.n_layers);
        maybe(m, "n_heads", c.model.n_heads);
        maybe(m, "max_context", c.model.max_context);
        maybe(m, "dropout", c.model.dropout);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        maybe(t, "variant", c.variant);
        maybe(t, "n_steps", c.tc.n_steps);
        maybe(t, "batch_size", c.tc.batch_size);
        maybe(t, "context_len", c.tc.context_len);
        maybe(t, "lambda_value", c.tc.lambda_value);
        maybe(t, "augment_symmetry", c.tc.augment_symmetry);
        maybe(t, "lr", c.opt.lr);
        maybe(t, "warmup_steps", c.opt.warmup_steps);
        maybe(t, "min_lr_frac", c.opt.min_lr_frac);
        maybe(t, "grad_clip", c.opt.grad_clip);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        maybe(e, "variant", c.variant);
        long t_test = c.rollout.t_test;
        maybe(e, "t_test", t_test);
        c.rollout.t_test = t_test;
        maybe(e, "context_len", c.rollout.context_len);
        maybe(e, "evict_chunk_episodes", c.rollout.evict_chunk_episodes);
        maybe(e, "n_seeds", c.n_seeds);
        maybe(e, "phi_ramp", c.phi_ramp);
        maybe(e, "phi_cap", c.phi_cap);
        std::string mode = "sample";
        maybe(e, "action_mode", mode);
        if (mode == "greedy") {
            c.rollout.mode = train::ActionMode::kGreedy;
        } else if (mode == "sample") {
            c.rollout.mode = train::ActionMode::kSample;
        } else {
            throw ConfigError("action_mode must be sample or greedy");
        }
    }
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);
    return c;
}

json resolved_config_json(const RunConfig& c) {
    json j;
    j["env"] = {{"grid_size", c.grid_size},
                {"episode_len", c.episode_len},
                {"reward_on_goal", c.reward_on_goal},
                {"n_train_tasks", c.n_train_tasks},
                {"n_test_tasks", c.n_test_tasks}};
    j["source"] = {{"n_checkpoints", c.n_checkpoints},
                   {"steps_per_checkpoint", c.steps_per_checkpoint},
                   {"eval_episodes", c.eval_episodes},
                   {"alpha", c.q.alpha},
                   {"gamma", c.q.gamma},
                   {"eps_start", c.q.eps_start},
                   {"eps_end", c.q.eps_end},
                   {"tau_start", c.q.tau_start},
                   {"tau_end", c.q.tau_end}};
    j["data"] = {{"segment_len", c.segment_len},
                 {"histories_per_task", c.histories_per_task},
                 {"ad_eps", c.ad_eps},
                 {"ad_eps_ramp", c.ad_eps_ramp}};
    j["model"] = {{"d_model", c.model.d_model},
                  {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},
                  {"max_context", c.model.max_context},
                  {"dropout", c.model.dropout}};
    j["train"] = {{"variant", c.variant},
                  {"n_steps", c.tc.n_steps},
                  {"batch_size", c.tc.batch_size},
                  {"context_len", c.tc.context_len},
                  {"lambda_value", c.tc.lambda_value},
                  {"augment_symmetry", c.tc.augment_symmetry},
                  {"lr", c.opt.lr},
                  {"warmup_steps", c.opt.warmup_steps},
                  {"min_lr_frac", c.opt.min_lr_frac},
                  {"grad_clip", c.opt.grad_clip}};
    j["eval"] = {{"t_test", c.rollout.t_test},
                 {"context_len", c.rollout.context_len},
                 {"evict_chunk_episodes", c.rollout.evict_chunk_episodes},
                 {"n_seeds", c.n_seeds},
                 {"phi_ramp", c.phi_ramp},
                 {"phi_cap", c.phi_cap},
                 {"action_mode",
                  c.rollout.mode == train::ActionMode::kGreedy ? "greedy" : "sample"}};
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    return j;
}

void require_fresh(const fs::path& p, bool overwrite) {
    if (fs::exists(p) && !overwrite) {
        throw ConfigError(p.string() + " already exists; pass --overwrite to replace it");
    }
}

void write_resolved_config(const RunConfig& c, const std::string& out) {
    ensure_dir(out);
    write_file_atomic(out + "/config.json", resolved_config_json(c).dump(2) + "\n");
}

std::string task_key(const env::DarkRoomTask& t) {
    return "g" + std::to_string(t.goal_x) + "_" + std::to_string(t.goal_y);
}

// ----------------------------- subcommands -----------------------------

int cmd_gen_source(const RunConfig& c, const std::string& out, bool overwrite) {
    require_fresh(fs::path(out) / "tasks_train.json", overwrite);
    write_resolved_config(c, out);
    auto [train_tasks, test_tasks] =
        env::sample_tasks(c.grid_size, c.n_train_tasks, c.n_test_tasks, c.seed, c.episode_len,
                          c.reward_on_goal);
    write_file_atomic(out + "/tasks_train.json", env::tasks_to_json(train_tasks));
    write_file_atomic(out + "/tasks_test.json", env::tasks_to_json(test_tasks));
    Rng root(c.seed);
    for (size_t i = 0; i < train_tasks.size(); ++i) {
        const auto& task = train_tasks[i];
        auto seq = policies::train_checkpoints(task, c.n_checkpoints, c.steps_per_checkpoint, c.q,
                                               root.derive(10 + i).root_seed(), c.eval_episodes);
        policies::save_sequence(seq, out + "/source/" + task_key(task));
        std::printf("[gen-source] %s: %zu checkpoints, j range [%.2f, %.2f]\n",
                    task_key(task).c_str(), seq.checkpoints.size(), seq.checkpoints.front().j_hat,
                    seq.j_max);
    }
    return 0;
}

int cmd_gen_data(const RunConfig& c, const std::string& out, bool overwrite) {
    require_fresh(fs::path(out) / "dataset.bin", overwrite);
    const auto train_tasks = env::tasks_from_json(read_file(out + "/tasks_train.json"));
    Rng root(c.seed);
    std::vector<data::LearningHistory> histories;
    for (size_t i = 0; i < train_tasks.size(); ++i) {
        const auto& task = train_tasks[i];
        auto raw = policies::load_sequence(out + "/source/" + task_key(task));
        policies::CheckpointSequence seq;
        if (c.ad_eps) {
            // Noised-expert mode: decaying uniform mixture around the final
            // (strongest) checkpoint.
            seq = policies::noised_expert_sequence(task, raw.checkpoints.back(), c.n_checkpoints,
                                                   c.ad_eps_ramp,
                                                   root.derive(500 + i).root_seed(),
                                                   c.eval_episodes);
            seq = policies::enforce_monotone(seq);
        } else {
            seq = policies::enforce_monotone(raw);
        }
        for (int h = 0; h < c.histories_per_task; ++h) {
            histories.push_back(data::collect_history(
                task, seq, c.segment_len,
                root.derive(1000 + i * 100 + static_cast<size_t>(h)).root_seed()));
        }
    }
    data::write_dataset(histories, out + "/dataset.bin");
    std::printf("[gen-data] %zu histories -> %s/dataset.bin\n", histories.size(), out.c_str());
    return 0;
}

int cmd_train(const RunConfig& c, const std::string& out, bool overwrite) {
    const auto kind = train::variant_from_name(c.variant);
    const std::string ckpt_dir = out + "/checkpoint/" + c.variant;
    require_fresh(fs::path(ckpt_dir) / "manifest.json", overwrite);
    auto histories = data::read_dataset(out + "/dataset.bin");

    model::ModelConfig mc = c.model;
    mc.state_vocab = c.grid_size * c.grid_size;
    mc.n_actions = env::kNumActions;
    mc.coord_grid = c.grid_size;
    mc.rng_seed = c.seed;
    train::TrainConfig tc = c.tc;
    tc.seed = c.seed;
    tc.n_threads = c.threads;
    model::OptimizerConfig opt = c.opt;
    if (opt.total_steps == 0) {
        opt.total_steps = tc.n_steps;
    }

    train::AlgoVariant variant{kind, {c.phi_ramp, c.phi_cap}};
    auto result = train::train(variant, histories, mc, opt, tc);
    model::save_checkpoint(result.model, ckpt_dir);

    std::string csv = "step,total,action_ce,value_mse,lr\n";
    char buf[160];
    for (const auto& e : result.log) {
        std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.8g\n", e.step, e.total, e.action_ce,
                      e.value_mse, e.lr);
        csv += buf;
    }
    write_file_atomic(ckpt_dir + "/loss_log.csv", csv);
    std::printf("[train] %s: %d steps, final loss %.4f -> %s\n", c.variant.c_str(), c.tc.n_steps,
                result.log.empty() ? 0.0 : result.log.back().total, ckpt_dir.c_str());
    return 0;
}

int cmd_eval(const RunConfig& c, const std::string& out, bool overwrite) {
    const auto kind = train::variant_from_name(c.variant);
    // The random-value ablation perturbs the CV_PHI_T model at test time.
    std::string ckpt_variant = c.variant;
    if (kind == train::VariantKind::kAblateRandomPhi) {
        ckpt_variant = "CV_PHI_T";
    }
    const std::string trace_dir = out + "/traces/" + c.variant;
    require_fresh(fs::path(out) / ("metrics/" + c.variant + "/summary.json"), overwrite);
    auto m = model::load_checkpoint(out + "/checkpoint/" + ckpt_variant);
    const auto test_tasks = env::tasks_from_json(read_file(out + "/tasks_test.json"));
    const auto train_tasks = env::tasks_from_json(read_file(out + "/tasks_train.json"));

    train::AlgoVariant variant{kind, {c.phi_ramp, c.phi_cap}};
    auto traces = train::run_experiment(variant, m, test_tasks, train_tasks, c.n_seeds, c.rollout,
                                        c.seed, c.threads);
    std::vector<metrics::EvalReport> reports;
    for (size_t i = 0; i < traces.size(); ++i) {
        const auto& tr = traces[i];
        const std::string key =
            task_key(tr.task) + "_seed" + std::to_string(i % static_cast<size_t>(c.n_seeds));
        train::save_trace(tr, trace_dir, key);
        reports.push_back(metrics::make_report(tr.episode_returns));
    }
    const std::string mdir = out + "/metrics/" + c.variant;
    ensure_dir(mdir);
    write_file_atomic(mdir + "/summary.json",
                      metrics::summary_to_json(metrics::summarize(reports)));
    write_file_atomic(mdir + "/curve.csv", metrics::curve_to_csv(metrics::aggregate(reports)));

    // Final-layer attention over the tail of the first trace, as CSV.
    {
        const auto& tr = traces.front();
        data::TrainingWindow w;
        w.task_id = task_key(tr.task);
        const size_t take = std::min(tr.steps.size(), static_cast<size_t>(c.rollout.context_len));
        const size_t start = tr.steps.size() - take;
        for (size_t i = start; i < tr.steps.size(); ++i) {
            data::HistoryStep s;
            s.state = static_cast<uint16_t>(tr.steps[i].state);
            s.v_hat = static_cast<float>(tr.steps[i].v_hat_used.value_or(0.0));
            s.action = static_cast<uint8_t>(tr.steps[i].action);
            s.reward = static_cast<float>(tr.steps[i].reward);
            w.steps.push_back(s);
        }
        model::export_attention(m, w, mdir + "/attention.csv");
    }
    const auto s = metrics::summarize(reports);
    std::printf("[eval] %s: AER %.3f+-%.3f  LER %.3f+-%.3f  DegraFreq %.3f+-%.3f (%zu runs)\n",
                c.variant.c_str(), s.aer_mean, s.aer_std, s.ler_mean, s.ler_std, s.df_mean,
                s.df_std, s.n_runs);
    return 0;
}

int cmd_theory(const RunConfig& c, const std::string& out, bool overwrite) {
    require_fresh(fs::path(out) / "theory_summary.json", overwrite);
    ensure_dir(out);
    theory::SuiteConfig sc;
    sc.seed = c.seed;
    const auto res = theory::run_suite(sc);
    write_file_atomic(out + "/bounds.jsonl", res.reports_jsonl);
    json summary = {
        {"lemma1", {{"pass", res.lemma1_pass}, {"fail", res.lemma1_fail}}},
        {"lemma2",
         {{"pass", res.lemma2_pass}, {"fail", res.lemma2_fail}, {"skipped", res.lemma2_skipped}}},
        {"theorem1", {{"pass", res.theorem1_pass}, {"fail", res.theorem1_fail}}},
        {"theorem2", {{"pass", res.theorem2_pass}, {"fail", res.theorem2_fail}}},
        {"corollary2",
         {{"pass", res.corollary2_pass},
          {"fail", res.corollary2_fail},
          {"skipped", res.corollary2_skipped}}},
        {"beta_zero_bound_gap", res.beta_zero_bound_gap},
        {"all_ok", res.all_ok()}};
    write_file_atomic(out + "/theory_summary.json", summary.dump(2) + "\n");
    std::printf("[theory] lemma1 %d/%d  lemma2 %d/%d  theorem1 %d/%d  theorem2 %d/%d  "
                "corollary2 %d/%d  -> %s\n",
                res.lemma1_pass, res.lemma1_pass + res.lemma1_fail, res.lemma2_pass,
                res.lemma2_pass + res.lemma2_fail, res.theorem1_pass,
                res.theorem1_pass + res.theorem1_fail, res.theorem2_pass,
                res.theorem2_pass + res.theorem2_fail, res.corollary2_pass,
                res.corollary2_pass + res.corollary2_fail, res.all_ok() ? "PASS" : "FAIL");
    return res.all_ok() ? 0 : 1;
}

// Minimal polyline chart; axes plus one line per series.
std::string render_svg(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                       const std::string& title) {
    const int width = 720, height = 420, margin = 50;
    double lo = 0.0, hi = 1e-9;
    size_t n = 1;
    for (const auto& [name, ys] : series) {
        for (double y : ys) {
            hi = std::max(hi, y);
            lo = std::min(lo, y);
        }
        n = std::max(n, ys.size());
    }
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"20\" text-anchor=\"middle\">" +
           title + "</text>\n";
    auto sx = [&](size_t i) {
        return margin + (width - 2.0 * margin) * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.0);
    };
    auto sy = [&](double v) {
        return height - margin - (height - 2.0 * margin) * ((v - lo) / (hi - lo + 1e-12));
    };
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
                  height - margin, width - margin, height - margin);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
                  margin, margin, height - margin);
    svg += buf;
    std::snprintf(buf, sizeof(buf), "<text x=\"%d\" y=\"%d\" font-size=\"11\">%.2f</text>\n", 4,
                  height - margin, lo);
    svg += buf;
    std::snprintf(buf, sizeof(buf), "<text x=\"%d\" y=\"%d\" font-size=\"11\">%.2f</text>\n", 4,
                  margin + 4, hi);
    svg += buf;
    int ci = 0;
    int legend_y = margin;
    for (const auto& [name, ys] : series) {
        std::string points;
        for (size_t i = 0; i < ys.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(i), sy(ys[i]));
            points += buf;
        }
        const char* color = colors[ci % 6];
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" points=\"" + points +
               "\"/>\n";
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                      width - margin - 150, legend_y, color, name.c_str());
        svg += buf;
        legend_y += 16;
        ++ci;
    }
    svg += "</svg>\n";
    return svg;
}

int cmd_report(const RunConfig& c, const std::string& out, bool overwrite) {
    (void)c;
    require_fresh(fs::path(out) / "metrics/report.csv", overwrite);
    std::vector<std::pair<std::string, std::vector<double>>> curves;
    std::string table = "variant,aer_mean,aer_std,ler_mean,ler_std,df_mean,df_std,n_runs\n";
    for (const auto& entry : fs::directory_iterator(out + "/traces")) {
        if (!entry.is_directory()) {
            continue;
        }
        const std::string variant = entry.path().filename().string();
        std::vector<metrics::EvalReport> reports;
        for (const auto& f : fs::directory_iterator(entry.path())) {
            const std::string name = f.path().filename().string();
            const std::string suffix = ".summary.json";
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                auto tr = train::load_trace(entry.path().string(),
                                            name.substr(0, name.size() - suffix.size()));
                reports.push_back(metrics::make_report(tr.episode_returns));
            }
        }
        if (reports.empty()) {
            continue;
        }
        const auto s = metrics::summarize(reports);
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%zu\n", variant.c_str(),
                      s.aer_mean, s.aer_std, s.ler_mean, s.ler_std, s.df_mean, s.df_std, s.n_runs);
        table += buf;
        const auto curve = metrics::aggregate(reports);
        std::vector<double> means;
        for (const auto& p : curve.points) {
            means.push_back(p.mean);
        }
        curves.emplace_back(variant, means);
        ensure_dir(out + "/metrics/" + variant);
        write_file_atomic(out + "/metrics/" + variant + "/curve.csv",
                          metrics::curve_to_csv(curve));
    }
    if (curves.empty()) {
        throw ConfigError("no traces found under " + out + "/traces");
    }
    ensure_dir(out + "/metrics");
    write_file_atomic(out + "/metrics/report.csv", table);
    write_file_atomic(out + "/metrics/episode_returns.svg",
                      render_svg(curves, "Mean episode return by episode index"));
    std::printf("[report] wrote %s/metrics/report.csv and episode_returns.svg\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"In-context RL workbench: source policies, datasets, training, evaluation, "
                 "and exact bound verification"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/default";
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
    bool overwrite = false;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--out", out_dir, "run directory");
    app.add_option("--seed", seed, "root seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--threads", threads, "worker threads (0 = all; env ICRL_THREADS as fallback)");
    app.add_flag("--overwrite", overwrite, "allow writing into existing outputs");

    std::string variant_override;
    bool ad_eps_flag = false;
    int segment_len_override = -1;
    auto* gen_source = app.add_subcommand("gen-source", "train tabular source policies per task");
    auto* gen_data = app.add_subcommand("gen-data", "collect learning histories into a dataset");
    gen_data->add_flag("--ad-eps", ad_eps_flag, "noised-expert data mode");
    gen_data->add_option("--segment-len", segment_len_override, "steps per checkpoint segment");
    auto* train_cmd = app.add_subcommand("train", "train a variant on the dataset");
    train_cmd->add_option("--variant", variant_override, "AD|AD_EPS|CV_PHI_C|CV_PHI_T|ABLATE_*");
    auto* eval_cmd = app.add_subcommand("eval", "roll out a trained variant on unseen tasks");
    eval_cmd->add_option("--variant", variant_override, "variant to evaluate");
    auto* theory_cmd = app.add_subcommand("theory", "run the bound-verification suite");
    auto* report_cmd = app.add_subcommand("report", "aggregate traces into tables and charts");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_set) {
            cfg.seed = seed;
        }
        if (threads >= 0) {
            cfg.threads = threads;
        } else if (const char* env_threads = std::getenv("ICRL_THREADS")) {
            cfg.threads = std::atoi(env_threads);
        }
        if (!variant_override.empty()) {
            cfg.variant = variant_override;
        }
        if (ad_eps_flag) {
            cfg.ad_eps = true;
        }
        if (segment_len_override > 0) {
            cfg.segment_len = segment_len_override;
        }

        if (gen_source->parsed()) {
            return cmd_gen_source(cfg, out_dir, overwrite);
        }
        if (gen_data->parsed()) {
            return cmd_gen_data(cfg, out_dir, overwrite);
        }
        if (train_cmd->parsed()) {
            return cmd_train(cfg, out_dir, overwrite);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(cfg, out_dir, overwrite);
        }
        if (theory_cmd->parsed()) {
            return cmd_theory(cfg, out_dir, overwrite);
        }
        if (report_cmd->parsed()) {
            return cmd_report(cfg, out_dir, overwrite);
        }
        return 1;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const DegenerateError& e) {
        std::cerr << "degenerate data: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
