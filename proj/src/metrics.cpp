#include "icrl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "icrl/errors.hpp"

namespace icrl::metrics {

double degradation_frequency(const std::vector<double>& returns) {
    if (returns.size() < 2) {
        throw InputError("degradation_frequency needs at least 2 returns");
    }
    size_t hits = 0;
    for (size_t i = 1; i < returns.size(); ++i) {
        if (returns[i] <= 0.95 * returns[i - 1]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(returns.size() - 1);
}

double aer(const std::vector<double>& returns) {
    if (returns.empty()) {
        throw InputError("aer needs at least 1 return");
    }
    double sum = 0.0;
    for (double r : returns) {
        sum += r;
    }
    return sum / static_cast<double>(returns.size());
}

double ler(const std::vector<double>& returns) {
    if (returns.empty()) {
        throw InputError("ler needs at least 1 return");
    }
    return returns.back();
}

EvalReport make_report(const std::vector<double>& returns) {
    EvalReport rep;
    rep.episode_returns = returns;
    rep.aer = aer(returns);
    rep.ler = ler(returns);
    rep.d_f = degradation_frequency(returns);
    return rep;
}

Curve aggregate(const std::vector<EvalReport>& reports) {
    if (reports.empty()) {
        throw InputError("aggregate needs at least 1 report");
    }
    const size_t n_eps = reports[0].episode_returns.size();
    for (const auto& r : reports) {
        if (r.episode_returns.size() != n_eps) {
            throw InputError("aggregate needs equal episode counts per report");
        }
    }
    Curve curve;
    curve.n_reports = reports.size();
    curve.single_report = reports.size() == 1;
    curve.points.resize(n_eps);
    for (size_t e = 0; e < n_eps; ++e) {
        double sum = 0.0;
        for (const auto& r : reports) {
            sum += r.episode_returns[e];
        }
        const double mean = sum / static_cast<double>(reports.size());
        double var = 0.0;
        for (const auto& r : reports) {
            const double c = r.episode_returns[e] - mean;
            var += c * c;
        }
        double ci = 0.0;
        if (reports.size() > 1) {
            var /= static_cast<double>(reports.size() - 1);
            ci = 1.96 * std::sqrt(var / static_cast<double>(reports.size()));
        }
        curve.points[e] = {mean, ci};
    }
    return curve;
}

std::string curve_to_csv(const Curve& curve) {
    std::string csv = "episode,mean,ci_lo,ci_hi\n";
    char buf[128];
    for (size_t e = 0; e < curve.points.size(); ++e) {
        const auto& p = curve.points[e];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e, p.mean,
                      p.mean - p.ci_half_width, p.mean + p.ci_half_width);
        csv += buf;
    }
    return csv;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double sum = 0.0;
    for (double x : xs) {
        sum += x;
    }
    const double mean = sum / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) {
        var += (x - mean) * (x - mean);
    }
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {mean, sd};
}

}  // namespace

Summary summarize(const std::vector<EvalReport>& reports) {
    if (reports.empty()) {
        throw InputError("summarize needs at least 1 report");
    }
    std::vector<double> aers, lers, dfs;
    for (const auto& r : reports) {
        aers.push_back(r.aer);
        lers.push_back(r.ler);
        dfs.push_back(r.d_f);
    }
    Summary s;
    s.n_runs = reports.size();
    std::tie(s.aer_mean, s.aer_std) = mean_std(aers);
    std::tie(s.ler_mean, s.ler_std) = mean_std(lers);
    std::tie(s.df_mean, s.df_std) = mean_std(dfs);
    return s;
}

std::string summary_to_json(const Summary& s) {
    nlohmann::json j = {{"AER", {{"mean", s.aer_mean}, {"std", s.aer_std}}},
                        {"LER", {{"mean", s.ler_mean}, {"std", s.ler_std}}},
                        {"DegraFreq", {{"mean", s.df_mean}, {"std", s.df_std}}},
                        {"n_runs", s.n_runs}};
    return j.dump(2) + "\n";
}

}  // namespace icrl::metrics
