#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "invcop/forecasting.hpp"

namespace invcop {

/// Quantile score (1{y < q} - alpha)(q - y).
double quantile_score(double q, double y, double alpha);

/// 2 * integral of w(alpha) QS_alpha over the alpha grid (trapezoid); the
/// quantiles are given at those levels.
double crps_from_quantiles(std::span<const double> quantiles, std::span<const double> alphas, double y,
                           const std::function<double(double)>& weight = {});

/// Sample estimator E|X - y| - E|X - X'| / 2, in O(n log n).
double crps_sample(std::vector<double> x, double y);

struct ScoreOptions {
    std::vector<double> alphas;  // empty: 0.01, 0.02, ..., 0.99
    std::function<double(double)> tail_weight = [](double a) { return (2.0 * a - 1.0) * (2.0 * a - 1.0); };
    double density_floor = 1e-300;
};

/// Per-time scores of one model; lower is better for all four.
struct ModelScores {
    std::string name;
    std::vector<double> lp;       // -log predictive density at the actual
    std::vector<double> crps;
    std::vector<double> tw_crps;
    std::vector<double> sq_err;   // squared error of the predictive mean
    std::vector<std::size_t> capped;  // indices where the density hit the floor

    double mean_lp() const;
    double mean_crps() const;
    double mean_tw_crps() const;
    double rmse() const;
};

ModelScores score_forecasts(const std::vector<PredictiveDistribution>& predictives, std::span<const double> actuals,
                            const ScoreOptions& opt = {}, std::string name = {});

struct PairedTest {
    double p_value = 0.5;
    double t_stat = 0.0;
    bool degenerate = false;  // differences have zero variance
};

/// One-sided paired t-test of H1: mean(a - b) < 0, i.e. a scores better.
PairedTest paired_score_test(std::span<const double> a, std::span<const double> b);

struct PairComparison {
    std::size_t better = 0, worse = 0;  // indices into ScoreReport::models
    PairedTest lp, crps, tw_crps, sq_err;
};

struct ScoreReport {
    std::vector<ModelScores> models;
    std::vector<PairComparison> pairs;

    /// Compares model `a` against model `b` on every metric.
    void compare(std::size_t a, std::size_t b);
    /// `model,LP,CRPS,TW-CRPS,RMSE` with stars (*, **, *** at 10/5/1%) on a
    /// model that beats its comparison partner.
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

std::string significance_stars(double p);

}  // namespace invcop
