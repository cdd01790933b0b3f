#include "invcop/mle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/tools/minima.hpp>

#include "invcop/bayes.hpp"
#include "invcop/copula_density.hpp"
#include "invcop/error.hpp"
#include "invcop/latent_margin.hpp"

namespace invcop {

double copula_objective(std::span<const double> u, ModelKind kind, int order, std::span<const double> psi,
                        const MleConfig& config) {
    if (check_free(kind, order, psi)) return -std::numeric_limits<double>::infinity();
    const auto spec = spec_from_free(kind, order, psi);
    try {
        const auto table = build_spline_table(spec);
        const double l = log_copula_density(u, spec, table, {config.particles, config.pf_seed});
        return std::isfinite(l) ? l : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
        // Margins with empty gaps between regimes cannot be tabulated.
        return -std::numeric_limits<double>::infinity();
    }
}

nlohmann::json MleResult::to_json() const {
    nlohmann::json j;
    j["model"] = to_string(spec.kind);
    j["spec"] = spec_to_json(spec);
    for (std::size_t k = 0; k < names.size(); ++k) j["psi"][names[k]] = psi[k];
    j["max_logdensity"] = max_logdensity;
    j["evals"] = evals;
    j["converged"] = converged;
    j["margin"] = margin.to_json();
    return j;
}

MleResult copula_mle(std::span<const double> u, const SsmSpec& start, const MleConfig& config) {
    if (u.size() < 2) throw std::invalid_argument("copula_mle: need at least two observations");
    for (double v : u)
        if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("copula_mle: copula data must lie in (0, 1)");
    const ModelKind kind = start.kind;
    const int order = model_order(start);
    const auto boxes = param_boxes(kind, order);
    int evals = 0;

    auto objective = [&](std::span<const double> v) {
        ++evals;
        return copula_objective(u, kind, order, v, config);
    };
    // Coordinates outside the box are reflected back in; points that are still
    // infeasible get a penalty growing with their distance from the box.
    auto penalized = [&](std::span<const double> v) {
        std::vector<double> w(v.begin(), v.end());
        double outside = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const auto& b = boxes[k];
            if (w[k] < b.lo) {
                outside += b.lo - w[k];
                w[k] = std::min(2.0 * b.lo - w[k], b.hi);
            } else if (w[k] > b.hi) {
                outside += w[k] - b.hi;
                w[k] = std::max(2.0 * b.hi - w[k], b.lo);
            }
        }
        const double l = objective(w);
        if (!std::isfinite(l)) return 1e10 * (1.0 + outside);
        return -l + 1e3 * outside;
    };

    auto x = free_params(start);
    if (check_free(kind, order, x)) throw std::invalid_argument("copula_mle: infeasible starting point");
    NelderMeadOptions nm;
    nm.max_evals = config.max_evals;
    for (std::size_t k = 0; k < x.size(); ++k)
        nm.step.push_back(0.1 * std::min(boxes[k].hi - boxes[k].lo, std::max(std::abs(x[k]), 0.1)));
    auto r = nelder_mead(penalized, x, nm);
    bool converged = r.converged;
    for (int k = 0; k < config.restarts; ++k) {
        for (auto& s : nm.step) s *= 0.5;
        const auto r2 = nelder_mead(penalized, r.x, nm);
        converged = r2.converged;
        if (r2.f <= r.f) r = r2;
    }
    // The reflected point is what was evaluated.
    x = r.x;
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k], boxes[k].lo, boxes[k].hi);
    double best = objective(x);
    if (!std::isfinite(best)) {
        x = free_params(start);
        best = objective(x);
        converged = false;
    }

    for (int round = 0; round < config.polish_rounds; ++round) {
        const double before = best;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto [lo, hi] = feasible_interval(kind, order, x, static_cast<int>(i));
            if (!(hi > lo)) continue;
            auto w = x;
            auto f1 = [&](double t) {
                w[i] = t;
                const double l = objective(w);
                return std::isfinite(l) ? -l : 1e10;
            };
            std::uintmax_t iters = 60;
            const auto [t, f] = boost::math::tools::brent_find_minima(f1, lo, hi, 30, iters);
            if (-f > best) {
                best = -f;
                x[i] = t;
            }
        }
        if (best - before < 1e-8) break;
    }

    MleResult out;
    out.spec = spec_from_free(kind, order, x);
    out.names = free_param_names(kind, order);
    out.psi = x;
    out.margin = MarginModel::normal(0.0, 1.0);
    out.max_logdensity = best;
    out.evals = evals;
    out.converged = converged;
    return out;
}

MleResult two_stage_mle(std::span<const double> y, MarginKind margin, const SsmSpec& start,
                        const MleConfig& config) {
    if (y.size() < 50) throw std::invalid_argument("two_stage_mle: need at least 50 observations");
    const auto g = fit_margin(margin, y);
    const auto u = to_copula_data(g, y);
    auto out = copula_mle(u, start, config);
    out.margin = g;
    return out;
}

}  // namespace invcop
