#include "invcop/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace invcop {

double quantile_score(double q, double y, double alpha) { return ((y < q ? 1.0 : 0.0) - alpha) * (q - y); }

double crps_from_quantiles(std::span<const double> quantiles, std::span<const double> alphas, double y,
                           const std::function<double(double)>& weight) {
    if (quantiles.size() != alphas.size() || alphas.size() < 2)
        throw std::invalid_argument("crps_from_quantiles: need matching quantile and alpha grids");
    double s = 0.0;
    auto term = [&](std::size_t i) {
        const double w = weight ? weight(alphas[i]) : 1.0;
        return w * quantile_score(quantiles[i], y, alphas[i]);
    };
    for (std::size_t i = 1; i < alphas.size(); ++i) s += 0.5 * (alphas[i] - alphas[i - 1]) * (term(i) + term(i - 1));
    return 2.0 * s;
}

double crps_sample(std::vector<double> x, double y) {
    if (x.empty()) throw std::invalid_argument("crps_sample: empty sample");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        e1 += std::abs(x[i] - y);
        // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n + 1) x_(i) for sorted x.
        e2 += (2.0 * static_cast<double>(i) - n + 1.0) * x[i];
    }
    return e1 / n - e2 / (n * n);
}

double ModelScores::mean_lp() const { return mean_of(lp); }
double ModelScores::mean_crps() const { return mean_of(crps); }
double ModelScores::mean_tw_crps() const { return mean_of(tw_crps); }
double ModelScores::rmse() const { return std::sqrt(mean_of(sq_err)); }

ModelScores score_forecasts(const std::vector<PredictiveDistribution>& predictives, std::span<const double> actuals,
                            const ScoreOptions& opt, std::string name) {
    if (predictives.size() != actuals.size())
        throw std::invalid_argument("score_forecasts: predictives and actuals differ in length");
    std::vector<double> alphas = opt.alphas;
    if (alphas.empty())
        for (int k = 1; k <= 99; ++k) alphas.push_back(k / 100.0);
    ModelScores s;
    s.name = std::move(name);
    std::vector<double> q(alphas.size());
    for (std::size_t t = 0; t < actuals.size(); ++t) {
        const auto& d = predictives[t];
        const double y = actuals[t];
        if (d.mixture.parts().empty() && !d.has_grid())
            throw std::invalid_argument("score_forecasts: predictive has no density");
        double f;
        if (!d.mixture.parts().empty()) {
            f = d.mixture.pdf(y);
        } else if (y <= d.grid.front() || y >= d.grid.back()) {
            f = 0.0;
        } else {
            const auto it = std::upper_bound(d.grid.begin(), d.grid.end(), y);
            const std::size_t i = static_cast<std::size_t>(it - d.grid.begin());
            const double w = (y - d.grid[i - 1]) / (d.grid[i] - d.grid[i - 1]);
            f = (1.0 - w) * d.density[i - 1] + w * d.density[i];
        }
        if (!(f > opt.density_floor)) {
            f = opt.density_floor;
            s.capped.push_back(t);
        }
        s.lp.push_back(-std::log(f));
        for (std::size_t k = 0; k < alphas.size(); ++k) q[k] = d.quantile(alphas[k]);
        s.crps.push_back(crps_from_quantiles(q, alphas, y));
        s.tw_crps.push_back(crps_from_quantiles(q, alphas, y, opt.tail_weight));
        const double e = d.mean() - y;
        s.sq_err.push_back(e * e);
    }
    return s;
}

PairedTest paired_score_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_score_test: unequal lengths");
    if (a.size() < 30) throw std::invalid_argument("paired_score_test: need at least 30 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double n = static_cast<double>(d.size());
    const double m = mean_of(d), v = variance_of(d);
    PairedTest out;
    if (!(v > 1e-28 * (1.0 + m * m))) {
        out.degenerate = true;
        out.p_value = m < 0.0 ? 0.0 : (m > 0.0 ? 1.0 : 0.5);
        out.t_stat = m < 0.0 ? -INFINITY : (m > 0.0 ? INFINITY : 0.0);
        return out;
    }
    out.t_stat = m / std::sqrt(v / n);
    const boost::math::students_t dist(n - 1.0);
    out.p_value = boost::math::cdf(dist, out.t_stat);
    return out;
}

std::string significance_stars(double p) {
    if (p < 0.01) return "***";
    if (p < 0.05) return "**";
    if (p < 0.10) return "*";
    return "";
}

void ScoreReport::compare(std::size_t a, std::size_t b) {
    if (a >= models.size() || b >= models.size() || a == b) throw std::invalid_argument("ScoreReport: bad model pair");
    const auto& x = models[a];
    const auto& y = models[b];
    PairComparison c;
    c.better = a;
    c.worse = b;
    c.lp = paired_score_test(x.lp, y.lp);
    c.crps = paired_score_test(x.crps, y.crps);
    c.tw_crps = paired_score_test(x.tw_crps, y.tw_crps);
    c.sq_err = paired_score_test(x.sq_err, y.sq_err);
    pairs.push_back(c);
}

std::string ScoreReport::to_csv() const {
    std::ostringstream os;
    os.precision(6);
    os << "model,LP,CRPS,TW-CRPS,RMSE,compared_with\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& m = models[i];
        const PairComparison* c = nullptr;
        for (const auto& p : pairs)
            if (p.better == i) c = &p;
        auto star = [&](const PairedTest PairComparison::*field) { return c ? significance_stars((c->*field).p_value) : ""; };
        os << m.name << "," << m.mean_lp() << star(&PairComparison::lp) << "," << m.mean_crps()
           << star(&PairComparison::crps) << "," << m.mean_tw_crps() << star(&PairComparison::tw_crps) << ","
           << m.rmse() << star(&PairComparison::sq_err) << "," << (c ? models[c->worse].name : "") << "\n";
    }
    return os.str();
}

nlohmann::json ScoreReport::to_json() const {
    nlohmann::json j;
    for (const auto& m : models)
        j["models"].push_back({{"name", m.name},
                               {"n", m.lp.size()},
                               {"lp", m.mean_lp()},
                               {"crps", m.mean_crps()},
                               {"tw_crps", m.mean_tw_crps()},
                               {"rmse", m.rmse()},
                               {"capped", m.capped.size()}});
    for (const auto& p : pairs) {
        auto t = [](const PairedTest& x) {
            return nlohmann::json{{"p", x.p_value}, {"t", x.t_stat}, {"degenerate", x.degenerate}};
        };
        j["pairs"].push_back({{"model", models[p.better].name},
                              {"against", models[p.worse].name},
                              {"lp", t(p.lp)},
                              {"crps", t(p.crps)},
                              {"tw_crps", t(p.tw_crps)},
                              {"rmse", t(p.sq_err)}});
    }
    return j;
}

}  // namespace invcop
