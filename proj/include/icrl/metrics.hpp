#pragma once

#include <string>
#include <vector>

namespace icrl::metrics {

struct EvalReport {
    std::vector<double> episode_returns;
    double d_f = 0.0;
    double aer = 0.0;
    double ler = 0.0;
};

// Fraction of consecutive episode pairs where r_i <= 0.95 * r_{i-1}.
// Denominator is (#returns - 1): one comparison per adjacent pair. Note the
// indicator is trivially true when both returns are 0.
double degradation_frequency(const std::vector<double>& returns);

double aer(const std::vector<double>& returns);
double ler(const std::vector<double>& returns);

EvalReport make_report(const std::vector<double>& returns);

struct CurvePoint {
    double mean = 0.0;
    double ci_half_width = 0.0;  // 1.96 * stderr; 0 with single_report flag set
};

struct Curve {
    std::vector<CurvePoint> points;
    bool single_report = false;
    size_t n_reports = 0;
};

// Per-episode-index mean and normal-approximation 95% CI across reports.
Curve aggregate(const std::vector<EvalReport>& reports);

std::string curve_to_csv(const Curve& curve);

struct Summary {
    double aer_mean = 0.0, aer_std = 0.0;
    double ler_mean = 0.0, ler_std = 0.0;
    double df_mean = 0.0, df_std = 0.0;
    size_t n_runs = 0;
};

Summary summarize(const std::vector<EvalReport>& reports);
std::string summary_to_json(const Summary& s);

}  // namespace icrl::metrics
