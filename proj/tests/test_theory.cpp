#include <doctest.h>

#include <cmath>

#include "icrl/errors.hpp"
#include "icrl/theory.hpp"

using namespace icrl;

namespace {

// Direct (I - gamma P_pi)^-1 r_pi via Gaussian elimination: the linear-solve
// oracle for the fixed-point iteration.
double linear_solve_value(const env::FiniteMDP& mdp, const theory::TabPolicy& pi) {
    const int S = mdp.n_states;
    const int A = mdp.n_actions;
    std::vector<double> mat(static_cast<size_t>(S) * (S + 1), 0.0);
    for (int s = 0; s < S; ++s) {
        for (int s2 = 0; s2 < S; ++s2) {
            double p = 0.0;
            for (int a = 0; a < A; ++a) {
                p += pi[static_cast<size_t>(s) * A + a] * mdp.trans(s, a, s2);
            }
            mat[static_cast<size_t>(s) * (S + 1) + s2] = (s == s2 ? 1.0 : 0.0) - mdp.gamma * p;
        }
        double r = 0.0;
        for (int a = 0; a < A; ++a) {
            r += pi[static_cast<size_t>(s) * A + a] * mdp.rew(s, a);
        }
        mat[static_cast<size_t>(s) * (S + 1) + S] = r;
    }
    for (int col = 0; col < S; ++col) {
        int pivot = col;
        for (int row = col + 1; row < S; ++row) {
            if (std::abs(mat[static_cast<size_t>(row) * (S + 1) + col]) >
                std::abs(mat[static_cast<size_t>(pivot) * (S + 1) + col])) {
                pivot = row;
            }
        }
        for (int k = 0; k <= S; ++k) {
            std::swap(mat[static_cast<size_t>(col) * (S + 1) + k],
                      mat[static_cast<size_t>(pivot) * (S + 1) + k]);
        }
        const double diag = mat[static_cast<size_t>(col) * (S + 1) + col];
        for (int row = 0; row < S; ++row) {
            if (row == col) {
                continue;
            }
            const double f = mat[static_cast<size_t>(row) * (S + 1) + col] / diag;
            for (int k = col; k <= S; ++k) {
                mat[static_cast<size_t>(row) * (S + 1) + k] -=
                    f * mat[static_cast<size_t>(col) * (S + 1) + k];
            }
        }
    }
    double j = 0.0;
    for (int s = 0; s < S; ++s) {
        j += mdp.init_dist[static_cast<size_t>(s)] * mat[static_cast<size_t>(s) * (S + 1) + S] /
             mat[static_cast<size_t>(s) * (S + 1) + s];
    }
    return j;
}

env::FiniteMDP one_state_mdp(double reward, double gamma) {
    env::FiniteMDP mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.transition = {1.0};
    mdp.reward = {reward};
    mdp.gamma = gamma;
    mdp.init_dist = {1.0};
    mdp.r_max = std::max(1.0, std::abs(reward));
    return mdp;
}

// Two-policy instance with controllable likelihoods and values; the context
// is empty so the action-likelihoods are flat and only the value term acts.
theory::TheoryInstance two_policy_instance(double j0, double j1, double beta) {
    theory::TheoryInstance inst;
    inst.mdp = env::random_finite_mdp(2, 2, 0.5, 42);
    inst.policies = {theory::TabPolicy{0.9, 0.1, 0.9, 0.1}, theory::TabPolicy{0.3, 0.7, 0.3, 0.7}};
    inst.star_index = j0 >= j1 ? 0 : 1;
    inst.query_state = 0;
    inst.beta = beta;
    inst.j_true = {j0, j1};
    inst.v_c = std::max(j0, j1);
    return inst;
}

}  // namespace

TEST_CASE("exact_policy_value closed forms") {
    // 1-state MDP: J = r / (1 - gamma).
    const auto mdp = one_state_mdp(0.7, 0.9);
    theory::TabPolicy pi = {1.0};
    CHECK(theory::exact_policy_value(mdp, pi) == doctest::Approx(7.0).epsilon(1e-10));

    // gamma = 0: one-step expected reward under pi and init_dist.
    auto mdp0 = env::random_finite_mdp(4, 3, 0.0, 5);
    Rng rng(6);
    const auto pol = theory::random_policy(rng, 4, 3);
    double expect = 0.0;
    for (int s = 0; s < 4; ++s) {
        for (int a = 0; a < 3; ++a) {
            expect += mdp0.init_dist[static_cast<size_t>(s)] *
                      pol[static_cast<size_t>(s) * 3 + a] * mdp0.rew(s, a);
        }
    }
    CHECK(theory::exact_policy_value(mdp0, pol) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("exact_policy_value matches the direct linear solve") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto mdp = env::random_finite_mdp(4, 3, 0.9, 100 + seed);
        Rng rng(seed);
        const auto pi = theory::random_policy(rng, 4, 3);
        const double iterated = theory::exact_policy_value(mdp, pi);
        const double solved = linear_solve_value(mdp, pi);
        CHECK(iterated == doctest::Approx(solved).epsilon(1e-9));
    }
}

TEST_CASE("posteriors: identical policies, hand Bayes, and the beta->0 limit") {
    // Two identical policies: both posteriors are uniform.
    theory::TheoryInstance inst;
    inst.mdp = env::random_finite_mdp(2, 2, 0.5, 7);
    inst.policies = {theory::TabPolicy{0.6, 0.4, 0.5, 0.5}, theory::TabPolicy{0.6, 0.4, 0.5, 0.5}};
    inst.star_index = 0;
    inst.context = {{0, 0}, {1, 1}};
    inst.query_state = 0;
    inst.beta = 4.0;
    inst.j_true = {1.0, 1.0};
    inst.v_c = 1.0;
    auto post = theory::posteriors(inst);
    CHECK(post.base[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(post.value[0] == doctest::Approx(0.5).epsilon(1e-12));

    // One-step context, pi_1(a|s)=0.9 vs pi_2(a|s)=0.3: P(pi_1|C) = 0.75.
    theory::TheoryInstance bayes;
    bayes.mdp = inst.mdp;
    bayes.policies = {theory::TabPolicy{0.9, 0.1, 0.5, 0.5}, theory::TabPolicy{0.3, 0.7, 0.5, 0.5}};
    bayes.star_index = 0;
    bayes.context = {{0, 0}};
    bayes.query_state = 1;
    bayes.beta = 2.0;
    bayes.j_true = {2.0, 1.0};
    bayes.v_c = 2.0;
    post = theory::posteriors(bayes);
    CHECK(post.base[0] == doctest::Approx(0.75).epsilon(1e-12));

    // beta -> 0 flattens the value likelihood.
    bayes.beta = 1e-12;
    post = theory::posteriors(bayes);
    for (size_t i = 0; i < post.base.size(); ++i) {
        CHECK(std::abs(post.value[i] - post.base[i]) < 1e-9);
    }
}

TEST_CASE("posteriors reject a context impossible under every policy") {
    theory::TheoryInstance inst;
    inst.mdp = env::random_finite_mdp(2, 2, 0.5, 8);
    inst.policies = {theory::TabPolicy{1.0, 0.0, 1.0, 0.0}, theory::TabPolicy{1.0, 0.0, 1.0, 0.0}};
    inst.star_index = 0;
    inst.context = {{0, 1}};  // action 1 has probability 0 everywhere
    inst.j_true = {1.0, 1.0};
    inst.v_c = 1.0;
    CHECK_THROWS_AS(theory::posteriors(inst), DegenerateError);
}

TEST_CASE("mixture_policy is the posterior-weighted convex combination") {
    std::vector<theory::TabPolicy> pols = {theory::TabPolicy{0.9, 0.1, 0.2, 0.8},
                                           theory::TabPolicy{0.5, 0.5, 0.6, 0.4},
                                           theory::TabPolicy{0.1, 0.9, 0.3, 0.7}};
    std::vector<double> point = {0.0, 1.0, 0.0};
    auto mix = theory::mixture_policy(point, pols, 2, 1);
    CHECK(mix[0] == doctest::Approx(0.6));
    CHECK(mix[1] == doctest::Approx(0.4));

    std::vector<double> uniform = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    mix = theory::mixture_policy(uniform, pols, 2, 0);
    CHECK(mix[0] == doctest::Approx((0.9 + 0.5 + 0.1) / 3).epsilon(1e-12));

    // Naive-loop oracle on random posteriors.
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> post(3);
        double tot = 0.0;
        for (double& p : post) {
            p = rng.exponential();
            tot += p;
        }
        double acc = 0.0;
        for (size_t i = 0; i < 2; ++i) {
            post[i] /= tot;
            acc += post[i];
        }
        post[2] = 1.0 - acc;
        mix = theory::mixture_policy(post, pols, 2, 0);
        for (int a = 0; a < 2; ++a) {
            double want = 0.0;
            for (size_t i = 0; i < pols.size(); ++i) {
                want += post[i] * pols[i][static_cast<size_t>(a)];
            }
            CHECK(mix[static_cast<size_t>(a)] == doctest::Approx(want).epsilon(1e-12));
        }
    }
    std::vector<double> bad = {0.5, 0.2, 0.1};
    CHECK_THROWS_AS(theory::mixture_policy(bad, pols, 2, 0), InputError);
}

TEST_CASE("tv_distance basics and metric properties") {
    CHECK(theory::tv_distance({0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(0.0));
    CHECK(theory::tv_distance({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0));
    CHECK(theory::tv_distance({0.5, 0.5}, {0.9, 0.1}) == doctest::Approx(0.4));
    CHECK_THROWS_AS(theory::tv_distance({0.5, 0.2}, {0.5, 0.5}), InputError);

    Rng rng(10);
    for (int trial = 0; trial < 200; ++trial) {
        auto draw = [&]() {
            std::vector<double> p(4);
            double tot = 0.0;
            for (double& x : p) {
                x = rng.exponential();
                tot += x;
            }
            double acc = 0.0;
            for (size_t i = 0; i < 3; ++i) {
                p[i] /= tot;
                acc += p[i];
            }
            p[3] = 1.0 - acc;
            return p;
        };
        const auto p = draw(), q = draw(), r = draw();
        const double pq = theory::tv_distance(p, q);
        CHECK(pq == doctest::Approx(theory::tv_distance(q, p)).epsilon(1e-14));
        CHECK(pq <= theory::tv_distance(p, r) + theory::tv_distance(r, q) + 1e-12);
        CHECK(pq >= 0.0);
        CHECK(pq <= 1.0);
    }
}

TEST_CASE("lemma 1 holds on randomized instances, with and without k") {
    int checked = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        theory::InstanceParams params;
        params.beta = (seed % 4 == 0) ? 0.1 : (seed % 4 == 1 ? 1.0 : (seed % 4 == 2 ? 10.0 : 50.0));
        auto inst = theory::random_instance(params, seed);
        auto rep = theory::lemma1_check(inst);
        CHECK(rep.ok);
        CHECK(rep.k_term == 0.0);

        // Perturbed pi*_C at TV radius exactly 0.1: move 0.1 mass from the
        // largest entry to the smallest.
        const int A = inst.mdp.n_actions;
        std::vector<double> row(static_cast<size_t>(A));
        for (int a = 0; a < A; ++a) {
            row[static_cast<size_t>(a)] =
                inst.policies[static_cast<size_t>(inst.star_index)]
                             [static_cast<size_t>(inst.query_state) * A + a];
        }
        const size_t hi = static_cast<size_t>(
            std::max_element(row.begin(), row.end()) - row.begin());
        const size_t lo = static_cast<size_t>(
            std::min_element(row.begin(), row.end()) - row.begin());
        if (hi != lo && row[hi] >= 0.1) {
            row[hi] -= 0.1;
            row[lo] += 0.1;
            auto rep2 = theory::lemma1_check(inst, &row);
            CHECK(rep2.ok);
            CHECK(rep2.k_term == doctest::Approx(0.1).epsilon(1e-12));
        }
        ++checked;
    }
    CHECK(checked == 200);

    // Point-mass posterior with pi*_C = pi*: both sides are 0.
    auto inst = two_policy_instance(3.0, 1.0, 50.0);
    inst.context = {};
    inst.policies[1] = inst.policies[0];
    inst.j_true = {3.0, 0.0};
    auto rep = theory::lemma1_check(inst);
    CHECK(rep.lhs_value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("lemma 2: hand-computed delta_rel and Gamma_min") {
    // S_* = 0.6, S_other = 0.4, Gamma_min = 2 -> delta_rel = 0.25.
    const double s_star = 0.6, s_other = 0.4, gamma_min = 2.0;
    const double delta = s_other * (gamma_min - 1.0) / (s_star * gamma_min + s_other);
    CHECK(delta == doctest::Approx(0.25).epsilon(1e-12));

    // beta = 1, d_j = 0.5, d* = 0.1 -> Gamma_min = exp(0.3).
    CHECK(std::exp(1.0 * (0.5 - 2.0 * 0.1)) == doctest::Approx(1.3498588075760032).epsilon(1e-12));

    // Well-separated instance at beta = 50 concentrates the value posterior.
    auto inst = two_policy_instance(3.0, 1.0, 50.0);
    auto post = theory::posteriors(inst);
    CHECK(post.value[static_cast<size_t>(inst.star_index)] > 0.99);

    auto rep = theory::lemma2_check(inst);
    CHECK(rep.condition_ok);
    CHECK(rep.inequality_ok);
    CHECK(rep.ratio >= 1.0 + rep.delta_rel - 1e-12);
}

TEST_CASE("lemma 2 ratio inequality holds on randomized instances") {
    int produced = 0;
    uint64_t seed = 0;
    while (produced < 300) {
        theory::InstanceParams params;
        params.beta = (produced % 2 == 0) ? 10.0 : 1.0;
        params.d_star_frac = (produced % 3 == 0) ? 0.3 : 0.0;
        auto inst = theory::random_instance(params, 7000 + seed++);
        auto rep = theory::lemma2_check(inst);
        if (!rep.condition_ok) {
            continue;
        }
        ++produced;
        CHECK(rep.inequality_ok);
    }
}

TEST_CASE("theorem 1: value bound strictly tighter; beta->0 makes bounds equal") {
    int produced = 0;
    uint64_t seed = 0;
    while (produced < 300) {
        theory::InstanceParams params;
        params.beta = 5.0;
        auto inst = theory::random_instance(params, 9000 + seed++);
        auto rep = theory::theorem1_check(inst);
        if (!rep.condition_ok) {
            continue;
        }
        ++produced;
        CHECK(rep.inequality_ok);
        // Strict in exact arithmetic; the reported doubles may tie when the
        // star posterior sits below the ulp of 1.
        CHECK(rep.d_v_bound <= rep.d_base_bound);
        CHECK(rep.posterior_value[static_cast<size_t>(inst.star_index)] >
              rep.posterior_base[static_cast<size_t>(inst.star_index)]);
    }

    theory::InstanceParams p0;
    p0.beta = 1e-12;
    auto inst = theory::random_instance(p0, 4242);
    auto rep = theory::theorem1_check(inst);
    CHECK(std::abs(rep.d_v_bound - rep.d_base_bound) < 1e-9);

    // Doubling r_max doubles both bounds exactly.
    auto inst2 = theory::random_instance(p0, 4243);
    auto rep_a = theory::theorem1_check(inst2);
    inst2.mdp.r_max *= 2.0;
    auto rep_b = theory::theorem1_check(inst2);
    CHECK(rep_b.d_base_bound == doctest::Approx(2.0 * rep_a.d_base_bound).epsilon(1e-12));
    CHECK(rep_b.d_v_bound == doctest::Approx(2.0 * rep_a.d_v_bound).epsilon(1e-12));
}

TEST_CASE("theorem 2 performance bound") {
    // pi = pi*: gap 0 <= bound 0.
    const auto mdp = env::random_finite_mdp(3, 2, 0.5, 55);
    Rng rng(56);
    const auto pi = theory::random_policy(rng, 3, 2);
    auto rep = theory::theorem2_check(mdp, pi, pi);
    CHECK(rep.gap == doctest::Approx(0.0));
    CHECK(rep.epsilon == doctest::Approx(0.0));
    CHECK(rep.ok);

    // Random triples across gammas.
    for (uint64_t seed = 0; seed < 200; ++seed) {
        const double gamma = seed % 2 == 0 ? 0.5 : 0.9;
        const auto m = env::random_finite_mdp(4, 3, gamma, 600 + seed);
        Rng prng(seed);
        const auto p1 = theory::random_policy(prng, 4, 3);
        const auto p2 = theory::random_policy(prng, 4, 3);
        CHECK(theory::theorem2_check(m, p1, p2).ok);
    }

    // gamma = 0 reduces the bound to 2 r_max epsilon.
    const auto m0 = env::random_finite_mdp(3, 2, 0.0, 77);
    Rng prng(78);
    const auto p1 = theory::random_policy(prng, 3, 2);
    const auto p2 = theory::random_policy(prng, 3, 2);
    rep = theory::theorem2_check(m0, p1, p2);
    CHECK(rep.bound == doctest::Approx(2.0 * m0.r_max * rep.epsilon).epsilon(1e-12));
    CHECK(rep.ok);
}

TEST_CASE("corollary 2: reduction at d_v=0, exact threshold, random suite") {
    theory::InstanceParams params;
    params.beta = 10.0;
    params.d_star_frac = 0.2;
    auto inst = theory::random_instance(params, 31337);
    REQUIRE(inst.d_j() > 2.0 * inst.d_star());

    // d_v = 0 reduces exactly to lemma2_check.
    inst.d_v = 0.0;
    auto cor = theory::corollary2_check(inst);
    auto lem = theory::lemma2_check(inst);
    CHECK(cor.ratio == doctest::Approx(lem.ratio).epsilon(1e-14));
    CHECK(cor.delta_rel == doctest::Approx(lem.delta_rel).epsilon(1e-14));
    CHECK(cor.gamma_min == doctest::Approx(lem.gamma_min).epsilon(1e-14));

    // Condition flips exactly at d_v = (d_j - 2 d*) / 2.
    const double threshold = (inst.d_j() - 2.0 * inst.d_star()) / 2.0;
    inst.d_v = threshold * (1.0 - 1e-9);
    CHECK(theory::corollary2_check(inst).condition_ok);
    inst.d_v = threshold * (1.0 + 1e-9);
    CHECK_FALSE(theory::corollary2_check(inst).condition_ok);

    int produced = 0;
    uint64_t seed = 0;
    while (produced < 300) {
        theory::InstanceParams p;
        p.beta = (produced % 2 == 0) ? 10.0 : 1.0;
        auto probe = theory::random_instance(p, 11000 + seed);
        const double headroom = probe.d_j() - 2.0 * probe.d_star();
        ++seed;
        if (headroom <= 0.0) {
            continue;
        }
        p.d_v = 0.45 * headroom;
        auto cinst = theory::random_instance(p, 11000 + seed - 1);
        auto rep = theory::corollary2_check(cinst);
        REQUIRE(rep.condition_ok);
        ++produced;
        CHECK(rep.inequality_ok);
    }
}

TEST_CASE("value posterior mass on pi* is non-decreasing in beta when d*=0") {
    theory::InstanceParams params;
    auto inst = theory::random_instance(params, 2024);
    REQUIRE(inst.d_star() == 0.0);
    double prev = 0.0;
    for (double beta : {0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0}) {
        inst.beta = beta;
        auto post = theory::posteriors(inst);
        const double mass = post.value[static_cast<size_t>(inst.star_index)];
        CHECK(mass >= prev - 1e-12);
        prev = mass;
    }
}

TEST_CASE("suite runner reports zero failures") {
    theory::SuiteConfig cfg;
    cfg.n_lemma1 = 60;
    cfg.n_lemma2 = 60;
    cfg.n_theorem2 = 40;
    cfg.n_corollary2 = 60;
    const auto res = theory::run_suite(cfg);
    CHECK(res.all_ok());
    CHECK(res.lemma1_pass == 60);
    CHECK(res.lemma2_pass == 60);
    CHECK(res.theorem2_pass == 40);
    CHECK(res.corollary2_pass == 60);
    CHECK(res.beta_zero_bound_gap < 1e-9);
    CHECK(!res.reports_jsonl.empty());
}
