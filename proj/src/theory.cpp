#include "icrl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "icrl/errors.hpp"

namespace icrl::theory {

TabPolicy random_policy(Rng& rng, int n_states, int n_actions) {
    TabPolicy p(static_cast<size_t>(n_states) * n_actions);
    for (int s = 0; s < n_states; ++s) {
        double total = 0.0;
        double* row = p.data() + static_cast<size_t>(s) * n_actions;
        for (int a = 0; a < n_actions; ++a) {
            row[a] = rng.exponential();
            total += row[a];
        }
        double acc = 0.0;
        for (int a = 0; a < n_actions - 1; ++a) {
            row[a] /= total;
            acc += row[a];
        }
        row[n_actions - 1] = 1.0 - acc;
    }
    return p;
}

double TheoryInstance::d_star() const { return std::abs(v_c - j_true[static_cast<size_t>(star_index)]); }

double TheoryInstance::d_j() const {
    double best = std::numeric_limits<double>::infinity();
    const double j_star = j_true[static_cast<size_t>(star_index)];
    for (size_t i = 0; i < j_true.size(); ++i) {
        if (static_cast<int>(i) != star_index) {
            best = std::min(best, j_star - j_true[i]);
        }
    }
    return best;
}

double exact_policy_value(const env::FiniteMDP& mdp, const TabPolicy& policy) {
    const int S = mdp.n_states;
    const int A = mdp.n_actions;
    if (policy.size() != static_cast<size_t>(S) * A) {
        throw InputError("policy shape does not match MDP");
    }
    // Policy-induced transition and reward.
    std::vector<double> p_pi(static_cast<size_t>(S) * S, 0.0);
    std::vector<double> r_pi(static_cast<size_t>(S), 0.0);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const double w = policy[static_cast<size_t>(s) * A + a];
            r_pi[static_cast<size_t>(s)] += w * mdp.rew(s, a);
            for (int s2 = 0; s2 < S; ++s2) {
                p_pi[static_cast<size_t>(s) * S + s2] += w * mdp.trans(s, a, s2);
            }
        }
    }
    std::vector<double> value(static_cast<size_t>(S), 0.0), next(static_cast<size_t>(S), 0.0);
    for (long iter = 0; iter < 1000000; ++iter) {
        double delta = 0.0;
        for (int s = 0; s < S; ++s) {
            double acc = r_pi[static_cast<size_t>(s)];
            const double* row = p_pi.data() + static_cast<size_t>(s) * S;
            for (int s2 = 0; s2 < S; ++s2) {
                acc += mdp.gamma * row[s2] * value[static_cast<size_t>(s2)];
            }
            next[static_cast<size_t>(s)] = acc;
            delta = std::max(delta, std::abs(acc - value[static_cast<size_t>(s)]));
        }
        value.swap(next);
        if (delta <= 1e-13) {
            break;
        }
    }
    double j = 0.0;
    for (int s = 0; s < S; ++s) {
        j += mdp.init_dist[static_cast<size_t>(s)] * value[static_cast<size_t>(s)];
    }
    return j;
}

// ---------------------------------------------------------------------------

Posteriors posteriors_with_value(const TheoryInstance& inst, double value_used) {
    const size_t K = inst.policies.size();
    if (K < 2) {
        throw InputError("instance needs at least 2 policies");
    }
    const int A = inst.mdp.n_actions;
    std::vector<double> loglik(K, 0.0);
    for (size_t i = 0; i < K; ++i) {
        for (const auto& [s, a] : inst.context) {
            const double p = inst.policies[i][static_cast<size_t>(s) * A + a];
            loglik[i] = p > 0.0 ? loglik[i] + std::log(p)
                                : -std::numeric_limits<double>::infinity();
        }
    }
    const double mx = *std::max_element(loglik.begin(), loglik.end());
    if (!std::isfinite(mx)) {
        throw DegenerateError("context has zero likelihood under every policy");
    }
    Posteriors out;
    out.log_likelihood.resize(K);
    out.base.resize(K);
    out.value.resize(K);
    double z_base = 0.0, z_value = 0.0;
    for (size_t i = 0; i < K; ++i) {
        out.log_likelihood[i] = loglik[i] - mx;
        const double lik = std::exp(out.log_likelihood[i]);
        out.base[i] = lik;
        z_base += lik;
        const double vlik = lik * std::exp(-inst.beta * std::abs(value_used - inst.j_true[i]));
        out.value[i] = vlik;
        z_value += vlik;
    }
    if (!(z_value > 0.0)) {
        throw DegenerateError("value likelihood underflowed to zero for every policy");
    }
    for (size_t i = 0; i < K; ++i) {
        out.base[i] /= z_base;
        out.value[i] /= z_value;
    }
    return out;
}

Posteriors posteriors(const TheoryInstance& inst) { return posteriors_with_value(inst, inst.v_c); }

std::vector<double> mixture_policy(const std::vector<double>& posterior,
                                   const std::vector<TabPolicy>& policies, int n_actions,
                                   int state) {
    double total = 0.0;
    for (double p : posterior) {
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-10) {
        throw InputError("posterior does not sum to 1");
    }
    std::vector<double> mix(static_cast<size_t>(n_actions), 0.0);
    for (size_t i = 0; i < policies.size(); ++i) {
        const double* row = policies[i].data() + static_cast<size_t>(state) * n_actions;
        for (int a = 0; a < n_actions; ++a) {
            mix[static_cast<size_t>(a)] += posterior[i] * row[a];
        }
    }
    return mix;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size() || p.empty()) {
        throw InputError("tv_distance needs equal-length distributions");
    }
    double sp = 0.0, sq = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < -1e-12 || q[i] < -1e-12) {
            throw InputError("tv_distance: negative mass");
        }
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-10 || std::abs(sq - 1.0) > 1e-10) {
        throw InputError("tv_distance: inputs must sum to 1");
    }
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += std::abs(p[i] - q[i]);
    }
    return 0.5 * acc;
}

// ---------------------------------------------------------------------------

Lemma1Report lemma1_check(const TheoryInstance& inst,
                          const std::vector<double>* pi_star_c_override) {
    const int A = inst.mdp.n_actions;
    const auto post = posteriors(inst);
    std::vector<double> pi_star_row(static_cast<size_t>(A));
    const TabPolicy& star = inst.policies[static_cast<size_t>(inst.star_index)];
    for (int a = 0; a < A; ++a) {
        pi_star_row[static_cast<size_t>(a)] =
            star[static_cast<size_t>(inst.query_state) * A + a];
    }
    const std::vector<double>& pi_star_c = pi_star_c_override ? *pi_star_c_override : pi_star_row;

    Lemma1Report rep;
    rep.k_term = tv_distance(pi_star_c, pi_star_row);
    const auto mix_base = mixture_policy(post.base, inst.policies, A, inst.query_state);
    const auto mix_value = mixture_policy(post.value, inst.policies, A, inst.query_state);
    rep.lhs_base = tv_distance(pi_star_c, mix_base);
    rep.lhs_value = tv_distance(pi_star_c, mix_value);
    rep.rhs_base = 1.0 - post.base[static_cast<size_t>(inst.star_index)] + rep.k_term;
    rep.rhs_value = 1.0 - post.value[static_cast<size_t>(inst.star_index)] + rep.k_term;
    rep.ok = rep.lhs_base <= rep.rhs_base + 1e-12 && rep.lhs_value <= rep.rhs_value + 1e-12;
    return rep;
}

namespace {

BoundReport ratio_report(const TheoryInstance& inst, double value_used, double gamma_exponent) {
    const auto post = posteriors_with_value(inst, value_used);
    const size_t star = static_cast<size_t>(inst.star_index);
    BoundReport rep;
    rep.posterior_base = post.base;
    rep.posterior_value = post.value;
    rep.d_star = inst.d_star();
    rep.d_j = inst.d_j();
    rep.ratio = post.value[star] / post.base[star];
    rep.condition_ok = gamma_exponent > 0.0;
    if (rep.condition_ok) {
        rep.gamma_min = std::exp(inst.beta * gamma_exponent);
        double s_star = std::exp(post.log_likelihood[star]);
        double s_other = 0.0;
        for (size_t i = 0; i < post.base.size(); ++i) {
            if (i != star) {
                s_other += std::exp(post.log_likelihood[i]);
            }
        }
        rep.delta_rel =
            s_other * (rep.gamma_min - 1.0) / (s_star * rep.gamma_min + s_other);
        rep.inequality_ok = rep.ratio >= 1.0 + rep.delta_rel - 1e-12;
    }
    return rep;
}

}  // namespace

BoundReport lemma2_check(const TheoryInstance& inst) {
    return ratio_report(inst, inst.v_c, inst.d_j() - 2.0 * inst.d_star());
}

BoundReport theorem1_check(const TheoryInstance& inst) {
    BoundReport rep = lemma2_check(inst);
    const double pref =
        2.0 * inst.mdp.r_max / ((1.0 - inst.mdp.gamma) * (1.0 - inst.mdp.gamma));
    const size_t star = static_cast<size_t>(inst.star_index);
    rep.k_term = 0.0;  // pi*_C taken as pi* for the bound comparison
    // 1 - P(pi*|.) evaluated as the complement sum; when P(pi*|.) is near
    // the ulp of 1.0 the direct subtraction would absorb it entirely.
    auto complement = [star](const std::vector<double>& post) {
        double acc = 0.0;
        for (size_t i = 0; i < post.size(); ++i) {
            if (i != star) {
                acc += post[i];
            }
        }
        return acc;
    };
    rep.d_base_bound = pref * complement(rep.posterior_base);
    rep.d_v_bound = pref * complement(rep.posterior_value);

    const int A = inst.mdp.n_actions;
    std::vector<double> pi_star_row(static_cast<size_t>(A));
    for (int a = 0; a < A; ++a) {
        pi_star_row[static_cast<size_t>(a)] =
            inst.policies[star][static_cast<size_t>(inst.query_state) * A + a];
    }
    rep.eps_base = tv_distance(
        pi_star_row, mixture_policy(rep.posterior_base, inst.policies, A, inst.query_state));
    rep.eps_v = tv_distance(
        pi_star_row, mixture_policy(rep.posterior_value, inst.policies, A, inst.query_state));
    if (rep.condition_ok) {
        // d_v_bound < d_base_bound iff P(pi*|C,V) > P(pi*|C); the posterior
        // masses resolve the strict ordering even when both complements have
        // rounded to the same double.
        rep.inequality_ok =
            rep.inequality_ok && rep.posterior_value[star] > rep.posterior_base[star];
    }
    return rep;
}

Theorem2Report theorem2_check(const env::FiniteMDP& mdp, const TabPolicy& pi1,
                              const TabPolicy& pi2) {
    Theorem2Report rep;
    rep.gap = std::abs(exact_policy_value(mdp, pi1) - exact_policy_value(mdp, pi2));
    const int A = mdp.n_actions;
    for (int s = 0; s < mdp.n_states; ++s) {
        std::vector<double> r1(static_cast<size_t>(A)), r2(static_cast<size_t>(A));
        for (int a = 0; a < A; ++a) {
            r1[static_cast<size_t>(a)] = pi1[static_cast<size_t>(s) * A + a];
            r2[static_cast<size_t>(a)] = pi2[static_cast<size_t>(s) * A + a];
        }
        rep.epsilon = std::max(rep.epsilon, tv_distance(r1, r2));
    }
    rep.bound = 2.0 * mdp.r_max / ((1.0 - mdp.gamma) * (1.0 - mdp.gamma)) * rep.epsilon;
    rep.ok = rep.gap <= rep.bound + 1e-10;
    return rep;
}

BoundReport corollary2_check(const TheoryInstance& inst) {
    BoundReport rep =
        ratio_report(inst, inst.v_hat(), inst.d_j() - 2.0 * inst.d_star() - 2.0 * inst.d_v);
    return rep;
}

// ---------------------------------------------------------------------------

TheoryInstance random_instance(const InstanceParams& params, uint64_t seed) {
    Rng root(seed);
    Rng rng = root.derive(0);
    TheoryInstance inst;
    const int S = params.min_states +
                  static_cast<int>(rng.uniform_int(
                      static_cast<uint64_t>(params.max_states - params.min_states + 1)));
    const int A = params.min_actions +
                  static_cast<int>(rng.uniform_int(
                      static_cast<uint64_t>(params.max_actions - params.min_actions + 1)));
    inst.mdp = env::random_finite_mdp(S, A, params.gamma, root.derive(1).root_seed());
    const int K = params.min_policies +
                  static_cast<int>(rng.uniform_int(
                      static_cast<uint64_t>(params.max_policies - params.min_policies + 1)));
    for (int i = 0; i < K; ++i) {
        inst.policies.push_back(random_policy(rng, S, A));
    }
    inst.beta = params.beta;
    inst.j_true.resize(static_cast<size_t>(K));
    for (int i = 0; i < K; ++i) {
        inst.j_true[static_cast<size_t>(i)] =
            exact_policy_value(inst.mdp, inst.policies[static_cast<size_t>(i)]);
    }
    inst.star_index = static_cast<int>(
        std::max_element(inst.j_true.begin(), inst.j_true.end()) - inst.j_true.begin());

    // Context rolled out by one of the candidate policies inside the MDP.
    const int ctx_len = params.min_context +
                        static_cast<int>(rng.uniform_int(
                            static_cast<uint64_t>(params.max_context - params.min_context + 1)));
    const TabPolicy& behavior = inst.policies[rng.uniform_int(static_cast<uint64_t>(K))];
    int s = static_cast<int>(rng.categorical(inst.mdp.init_dist));
    for (int t = 0; t < ctx_len; ++t) {
        std::vector<double> row(static_cast<size_t>(A));
        for (int a = 0; a < A; ++a) {
            row[static_cast<size_t>(a)] = behavior[static_cast<size_t>(s) * A + a];
        }
        const int a = static_cast<int>(rng.categorical(row));
        inst.context.emplace_back(s, a);
        std::vector<double> trow(static_cast<size_t>(S));
        for (int s2 = 0; s2 < S; ++s2) {
            trow[static_cast<size_t>(s2)] = inst.mdp.trans(s, a, s2);
        }
        s = static_cast<int>(rng.categorical(trow));
    }
    inst.query_state = s;

    inst.v_c = inst.j_true[static_cast<size_t>(inst.star_index)];
    if (params.d_star_frac > 0.0) {
        const double d = params.d_star_frac * inst.d_j();
        inst.v_c += rng.uniform01() < 0.5 ? -d : d;
    }
    inst.d_v = params.d_v;
    inst.v_hat_below = rng.uniform01() < 0.5;
    return inst;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json bound_report_json(const std::string& check, uint64_t seed, const BoundReport& r) {
    return {{"check", check},
            {"seed", seed},
            {"ratio", r.ratio},
            {"delta_rel", r.delta_rel},
            {"gamma_min", r.gamma_min},
            {"d_star", r.d_star},
            {"d_j", r.d_j},
            {"eps_base", r.eps_base},
            {"eps_v", r.eps_v},
            {"d_base_bound", r.d_base_bound},
            {"d_v_bound", r.d_v_bound},
            {"condition_ok", r.condition_ok},
            {"inequality_ok", r.inequality_ok}};
}

}  // namespace

SuiteResult run_suite(const SuiteConfig& config) {
    SuiteResult res;
    std::string jsonl;
    Rng root(config.seed);

    // Lemma 1 over randomized instances, alternating k = 0 and perturbed
    // pi*_C at TV radius <= 0.1, sweeping beta.
    for (int i = 0; i < config.n_lemma1; ++i) {
        InstanceParams p;
        p.beta = config.betas[static_cast<size_t>(i) % config.betas.size()];
        p.d_star_frac = (i % 3 == 0) ? 0.3 : 0.0;
        TheoryInstance inst = random_instance(p, root.derive(1000000 + static_cast<uint64_t>(i)).root_seed());
        Lemma1Report rep;
        if (i % 2 == 0) {
            rep = lemma1_check(inst);
        } else {
            // Shift mass toward the uniform distribution for a positive k.
            const int A = inst.mdp.n_actions;
            std::vector<double> row(static_cast<size_t>(A));
            for (int a = 0; a < A; ++a) {
                row[static_cast<size_t>(a)] =
                    inst.policies[static_cast<size_t>(inst.star_index)]
                                 [static_cast<size_t>(inst.query_state) * A + a];
            }
            const double mixw = 0.2;
            for (int a = 0; a < A; ++a) {
                row[static_cast<size_t>(a)] =
                    (1.0 - mixw) * row[static_cast<size_t>(a)] + mixw / A;
            }
            rep = lemma1_check(inst, &row);
        }
        rep.ok ? ++res.lemma1_pass : ++res.lemma1_fail;
    }

    // Lemma 2 + Theorem 1 on instances satisfying d_j > 2 d*.
    int produced = 0;
    uint64_t draw = 0;
    while (produced < config.n_lemma2) {
        InstanceParams p;
        p.beta = config.betas[static_cast<size_t>(produced) % config.betas.size()];
        p.d_star_frac = (produced % 2 == 0) ? 0.0 : 0.35;
        TheoryInstance inst =
            random_instance(p, root.derive(2000000 + draw++).root_seed());
        BoundReport rep = theorem1_check(inst);
        if (!rep.condition_ok) {
            ++res.lemma2_skipped;
            continue;
        }
        ++produced;
        if (rep.inequality_ok) {
            ++res.lemma2_pass;
            ++res.theorem1_pass;
        } else {
            const bool ratio_ok = rep.ratio >= 1.0 + rep.delta_rel - 1e-12;
            ratio_ok ? ++res.lemma2_pass : ++res.lemma2_fail;
            (ratio_ok && rep.d_v_bound < rep.d_base_bound) ? ++res.theorem1_pass
                                                           : ++res.theorem1_fail;
            jsonl += bound_report_json("lemma2_theorem1_fail", draw, rep).dump() + "\n";
        }
        if (produced <= 50) {
            jsonl += bound_report_json("lemma2_theorem1", draw, rep).dump() + "\n";
        }
    }

    // beta -> 0: value-informed and baseline bounds coincide.
    {
        InstanceParams p;
        p.beta = 1e-12;
        TheoryInstance inst = random_instance(p, root.derive(3000000).root_seed());
        BoundReport rep = theorem1_check(inst);
        res.beta_zero_bound_gap = std::abs(rep.d_v_bound - rep.d_base_bound);
    }

    // Theorem 2 over random (MDP, pi1, pi2) triples, gamma in {0.5, 0.9}.
    for (int i = 0; i < config.n_theorem2; ++i) {
        Rng rng = root.derive(4000000 + static_cast<uint64_t>(i));
        const double gamma = (i % 2 == 0) ? 0.5 : 0.9;
        const int S = 3 + static_cast<int>(rng.uniform_int(3));
        const int A = 2 + static_cast<int>(rng.uniform_int(3));
        env::FiniteMDP mdp = env::random_finite_mdp(S, A, gamma, rng.derive(1).root_seed());
        Rng prng = rng.derive(2);
        TabPolicy pi1 = random_policy(prng, S, A);
        TabPolicy pi2 = random_policy(prng, S, A);
        Theorem2Report rep = theorem2_check(mdp, pi1, pi2);
        rep.ok ? ++res.theorem2_pass : ++res.theorem2_fail;
    }

    // Corollary 2 under injected v_hat error.
    produced = 0;
    draw = 0;
    while (produced < config.n_corollary2) {
        InstanceParams p;
        p.beta = config.betas[static_cast<size_t>(produced) % config.betas.size()];
        p.d_star_frac = (produced % 2 == 0) ? 0.0 : 0.2;
        Rng rng = root.derive(5000000 + draw);
        TheoryInstance probe = random_instance(p, rng.root_seed());
        // Error drawn below the acceptance threshold so the condition holds.
        const double headroom = probe.d_j() - 2.0 * probe.d_star();
        ++draw;
        if (headroom <= 0.0) {
            ++res.corollary2_skipped;
            continue;
        }
        p.d_v = 0.45 * headroom * rng.derive(7).uniform01();
        TheoryInstance inst = random_instance(p, rng.root_seed());
        BoundReport rep = corollary2_check(inst);
        if (!rep.condition_ok) {
            ++res.corollary2_skipped;
            continue;
        }
        ++produced;
        rep.inequality_ok ? ++res.corollary2_pass : ++res.corollary2_fail;
        if (!rep.inequality_ok) {
            jsonl += bound_report_json("corollary2_fail", draw, rep).dump() + "\n";
        } else if (produced <= 50) {
            jsonl += bound_report_json("corollary2", draw, rep).dump() + "\n";
        }
    }

    res.reports_jsonl = std::move(jsonl);
    return res;
}

}  // namespace icrl::theory
