#include <doctest.h>

#include <cmath>

#include "icrl/errors.hpp"
#include "icrl/metrics.hpp"
#include "icrl/rng.hpp"

using namespace icrl;

namespace {

// Brute-force pairwise oracle.
double df_oracle(const std::vector<double>& r) {
    int hits = 0;
    for (size_t i = 1; i < r.size(); ++i) {
        if (r[i] <= 0.95 * r[i - 1]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(r.size() - 1);
}

}  // namespace

TEST_CASE("degradation_frequency fixtures") {
    CHECK(metrics::degradation_frequency({1, 2, 3, 4}) == doctest::Approx(0.0));
    CHECK(metrics::degradation_frequency({10, 9, 10, 10}) == doctest::Approx(1.0 / 3));
    CHECK(metrics::degradation_frequency({0, 0, 0}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(metrics::degradation_frequency({1.0}), InputError);
}

TEST_CASE("degradation_frequency agrees with brute force on 1000 random sequences") {
    Rng rng(21);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t len = 2 + rng.uniform_int(60);
        std::vector<double> r(len);
        for (double& x : r) {
            x = rng.uniform(0.0, 20.0);
        }
        CHECK(metrics::degradation_frequency(r) == doctest::Approx(df_oracle(r)).epsilon(1e-15));
    }
}

TEST_CASE("degradation_frequency is scale-invariant for positive returns") {
    Rng rng(22);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t len = 2 + rng.uniform_int(30);
        std::vector<double> r(len), scaled(len);
        const double c = rng.uniform(0.01, 100.0);
        for (size_t i = 0; i < len; ++i) {
            r[i] = rng.uniform(0.001, 50.0);
            scaled[i] = c * r[i];
        }
        CHECK(metrics::degradation_frequency(r) ==
              doctest::Approx(metrics::degradation_frequency(scaled)).epsilon(1e-12));
    }
}

TEST_CASE("aer and ler fixtures") {
    CHECK(metrics::aer({1, 2, 3}) == doctest::Approx(2.0));
    CHECK(metrics::ler({1, 2, 3}) == doctest::Approx(3.0));
    CHECK(metrics::aer({5, 5, 5}) == doctest::Approx(5.0));
    CHECK(metrics::ler({5, 5, 5}) == doctest::Approx(5.0));
    CHECK_THROWS_AS(metrics::aer({}), InputError);
    CHECK_THROWS_AS(metrics::ler({}), InputError);
}

TEST_CASE("aggregate matches a hand-computed fixture") {
    std::vector<metrics::EvalReport> reports;
    reports.push_back(metrics::make_report({1.0, 2.0, 3.0}));
    reports.push_back(metrics::make_report({2.0, 4.0, 3.0}));
    reports.push_back(metrics::make_report({3.0, 6.0, 3.0}));
    const auto curve = metrics::aggregate(reports);
    REQUIRE(curve.points.size() == 3);
    CHECK(curve.points[0].mean == doctest::Approx(2.0));
    CHECK(curve.points[1].mean == doctest::Approx(4.0));
    CHECK(curve.points[2].mean == doctest::Approx(3.0));
    // Sample std of {1,2,3} is 1, stderr = 1/sqrt(3).
    CHECK(curve.points[0].ci_half_width == doctest::Approx(1.96 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(curve.points[2].ci_half_width == doctest::Approx(0.0));

    // Identical reports collapse the CI to zero.
    const auto same = metrics::aggregate({reports[0], reports[0]});
    CHECK(same.points[1].ci_half_width == doctest::Approx(0.0));

    // Single report: zero CI with the degenerate flag set.
    const auto single = metrics::aggregate({reports[0]});
    CHECK(single.single_report);
    CHECK(single.points[0].ci_half_width == 0.0);

    // Permutation invariance of the mean curve.
    const auto swapped = metrics::aggregate({reports[2], reports[0], reports[1]});
    for (size_t e = 0; e < 3; ++e) {
        CHECK(swapped.points[e].mean == doctest::Approx(curve.points[e].mean).epsilon(1e-15));
    }

    std::vector<metrics::EvalReport> ragged = {reports[0], metrics::make_report({1.0, 2.0})};
    CHECK_THROWS_AS(metrics::aggregate(ragged), InputError);
}

TEST_CASE("summary json carries the Table-1-style fields") {
    std::vector<metrics::EvalReport> reports;
    reports.push_back(metrics::make_report({1.0, 2.0, 4.0}));
    reports.push_back(metrics::make_report({2.0, 2.0, 6.0}));
    const auto s = metrics::summarize(reports);
    CHECK(s.n_runs == 2);
    CHECK(s.aer_mean == doctest::Approx(((7.0 / 3) + (10.0 / 3)) / 2));
    CHECK(s.ler_mean == doctest::Approx(5.0));
    const std::string j = metrics::summary_to_json(s);
    CHECK(j.find("AER") != std::string::npos);
    CHECK(j.find("LER") != std::string::npos);
    CHECK(j.find("DegraFreq") != std::string::npos);
}

TEST_CASE("curve csv has one row per episode") {
    std::vector<metrics::EvalReport> reports = {metrics::make_report({1.0, 2.0})};
    const auto curve = metrics::aggregate(reports);
    const std::string csv = metrics::curve_to_csv(curve);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows
}
