#include "invcop/forecasting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "invcop/error.hpp"
#include "invcop/filters.hpp"

namespace invcop {

// ------------------------------------------------------------------ observation map

ObservationMap ObservationMap::copula(std::shared_ptr<const MarginModel> g,
                                      std::shared_ptr<const LatentMarginTable> table) {
    if (!g || !table) throw std::invalid_argument("ObservationMap: margin and table are required");
    ObservationMap m;
    m.g_ = std::move(g);
    m.table_ = std::move(table);
    return m;
}

ObservationMap ObservationMap::direct(double a, double b) {
    if (!(b > 0.0) || !std::isfinite(a)) throw std::invalid_argument("ObservationMap: need finite a and b > 0");
    ObservationMap m;
    m.a_ = a;
    m.b_ = b;
    return m;
}

double ObservationMap::to_latent(double y) const {
    if (!g_) return (y - a_) / b_;
    return table_->quantile(std::clamp(g_->cdf(y), kUClamp, 1.0 - kUClamp));
}

double ObservationMap::to_observed(double z) const {
    if (!g_) return a_ + b_ * z;
    return g_->quantile(std::clamp(table_->cdf(z), kUClamp, 1.0 - kUClamp));
}

double ObservationMap::log_jacobian(double y, double z) const {
    if (!g_) return -std::log(b_);
    return g_->logpdf(y) - table_->logpdf(z);
}

// ------------------------------------------------------------------ models

PredictiveModel point_model(const SsmSpec& spec, const MarginModel& margin) {
    PredictiveModel m;
    m.provenance = "point";
    m.draws.push_back({spec,
                       ObservationMap::copula(std::make_shared<const MarginModel>(margin),
                                              std::make_shared<const LatentMarginTable>(build_spline_table(spec))),
                       std::nullopt});
    return m;
}

PredictiveModel point_model_direct(const SsmSpec& spec, double a, double b) {
    PredictiveModel m;
    m.provenance = "point";
    m.draws.push_back({spec, ObservationMap::direct(a, b), std::nullopt});
    return m;
}

PredictiveModel trace_model(const McmcTrace& trace, std::size_t max_draws, const std::optional<MarginModel>& fixed_margin) {
    if (trace.size() == 0) throw std::invalid_argument("trace_model: empty trace");
    if (max_draws == 0) throw std::invalid_argument("trace_model: max_draws must be >= 1");
    if (trace.mode == MarginMode::Fixed && !fixed_margin)
        throw std::invalid_argument("trace_model: a fixed-margin trace needs its margin");
    const std::size_t n = trace.size();
    const std::size_t D = std::min(n, max_draws);
    PredictiveModel m;
    m.provenance = "posterior(" + std::to_string(D) + " draws)";
    std::shared_ptr<const MarginModel> shared_g;
    if (fixed_margin) shared_g = std::make_shared<const MarginModel>(*fixed_margin);
    std::shared_ptr<const LatentMarginTable> exact_table;  // the UCAR margin is N(0, 1) for every draw
    for (std::size_t k = 0; k < D; ++k) {
        const std::size_t i = D == 1 ? n - 1 : k * (n - 1) / (D - 1);
        const SsmSpec spec = trace.spec_at(i);
        std::optional<LatentStates> term;
        if (i < trace.terminal.size()) term = trace.terminal[i];
        if (trace.mode == MarginMode::Direct) {
            m.draws.push_back({spec, ObservationMap::direct(trace.theta[i][0], trace.theta[i][1]), term});
            continue;
        }
        std::shared_ptr<const LatentMarginTable> table;
        if (spec.kind == ModelKind::Ucar) {
            if (!exact_table) exact_table = std::make_shared<const LatentMarginTable>(build_spline_table(spec));
            table = exact_table;
        } else {
            table = std::make_shared<const LatentMarginTable>(build_spline_table(spec));
        }
        auto g = trace.mode == MarginMode::Fixed ? shared_g : std::make_shared<const MarginModel>(trace.margin_at(i));
        m.draws.push_back({spec, ObservationMap::copula(g, table), term});
    }
    return m;
}

// ------------------------------------------------------------------ mixture

void PredictiveMixture::add(ObservationMap map, std::vector<GaussianComponent> comps) {
    if (comps.empty()) throw std::invalid_argument("PredictiveMixture: empty component list");
    double tot = 0.0;
    for (const auto& c : comps) {
        if (!(c.var > 0.0) || !(c.weight >= 0.0) || !std::isfinite(c.mean))
            throw NumericalError("predictive mixture: invalid component");
        tot += c.weight;
    }
    for (auto& c : comps) c.weight /= tot;
    parts_.push_back({std::move(map), std::move(comps)});
}

void PredictiveMixture::evaluate(double y, double& cdf, double& pdf) const {
    if (parts_.empty()) throw std::logic_error("PredictiveMixture: no components");
    // Draws sharing a margin (and table) share the latent value of y.
    const MarginModel* last_g = nullptr;
    const LatentMarginTable* last_t = nullptr;
    double u = 0.0, z = 0.0, lg = 0.0;
    double F = 0.0, f = 0.0;
    for (const auto& part : parts_) {
        const auto& map = part.map;
        double lj;
        if (map.is_direct()) {
            z = map.to_latent(y);
            lj = map.log_jacobian(y, z);
        } else {
            if (map.margin() != last_g) {
                last_g = map.margin();
                last_t = nullptr;
                u = std::clamp(last_g->cdf(y), kUClamp, 1.0 - kUClamp);
                lg = last_g->logpdf(y);
            }
            if (map.table() != last_t) {
                last_t = map.table();
                z = last_t->quantile(u);
            }
            lj = lg - last_t->logpdf(z);
        }
        double fp = 0.0, Fp = 0.0;
        for (const auto& c : part.comps) {
            const double sd = std::sqrt(c.var);
            const double x = (z - c.mean) / sd;
            Fp += c.weight * norm_cdf(x);
            fp += c.weight * norm_pdf(x) / sd;
        }
        F += Fp;
        f += std::isfinite(lj) ? fp * std::exp(lj) : 0.0;
    }
    const double D = static_cast<double>(parts_.size());
    cdf = F / D;
    pdf = f / D;
}

double PredictiveMixture::cdf(double y) const {
    double F, f;
    evaluate(y, F, f);
    return F;
}

double PredictiveMixture::pdf(double y) const {
    double F, f;
    evaluate(y, F, f);
    return f;
}

double PredictiveMixture::logpdf(double y) const { return std::log(pdf(y)); }

double PredictiveMixture::draw(Rng& rng) const {
    if (parts_.empty()) throw std::logic_error("PredictiveMixture: no components");
    std::uniform_real_distribution<double> unif;
    std::normal_distribution<double> nd;
    const auto& part = parts_[std::min(parts_.size() - 1, static_cast<std::size_t>(unif(rng) * parts_.size()))];
    double u = unif(rng), acc = 0.0;
    const GaussianComponent* c = &part.comps.back();
    for (const auto& cc : part.comps) {
        acc += cc.weight;
        if (u < acc) {
            c = &cc;
            break;
        }
    }
    return part.map.to_observed(c->mean + std::sqrt(c->var) * nd(rng));
}

double PredictiveMixture::quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("PredictiveMixture::quantile: p must lie in (0, 1)");
    if (parts_.empty()) throw std::logic_error("PredictiveMixture: no components");
    auto same_map = [](const ObservationMap& a, const ObservationMap& b) {
        return !a.is_direct() && a.margin() == b.margin() && a.table() == b.table();
    };
    // Latent bracket per run of parts sharing one map; one map call per run.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool shared = true;
    for (std::size_t i = 0; i < parts_.size();) {
        double zlo = std::numeric_limits<double>::infinity(), zhi = -zlo;
        std::size_t j = i;
        do {
            for (const auto& c : parts_[j].comps) {
                const double sd = std::sqrt(c.var);
                zlo = std::min(zlo, c.mean - 9.0 * sd);
                zhi = std::max(zhi, c.mean + 9.0 * sd);
            }
            ++j;
        } while (j < parts_.size() && same_map(parts_[i].map, parts_[j].map));
        if (i > 0 || j < parts_.size()) shared = false;
        if (shared) {
            // A single monotone map: solve on the latent scale, then map once.
            auto F = [&](double z) {
                double acc = 0.0;
                for (const auto& part : parts_)
                    for (const auto& c : part.comps) acc += c.weight * norm_cdf((z - c.mean) / std::sqrt(c.var));
                return acc / static_cast<double>(parts_.size());
            };
            const double z = solve_monotone(F, p, zlo, zhi, 1e-14, 1e-13 * (1.0 + zhi - zlo), 200);
            return parts_[0].map.to_observed(z);
        }
        lo = std::min(lo, parts_[i].map.to_observed(zlo));
        hi = std::max(hi, parts_[i].map.to_observed(zhi));
        i = j;
    }
    if (!(hi > lo)) return lo;
    return solve_monotone([&](double y) { return cdf(y); }, p, lo, hi, 1e-13, 1e-12 * (1.0 + hi - lo), 200);
}

// ------------------------------------------------------------------ distribution

double PredictiveDistribution::grid_mass() const {
    double s = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) s += 0.5 * (grid[i] - grid[i - 1]) * (density[i] + density[i - 1]);
    return s;
}

double PredictiveDistribution::mean() const {
    if (has_grid()) {
        double s = 0.0;
        for (std::size_t i = 1; i < grid.size(); ++i)
            s += 0.5 * (grid[i] - grid[i - 1]) * (grid[i] * density[i] + grid[i - 1] * density[i - 1]);
        return s / grid_mass();
    }
    if (!sample.empty()) return mean_of(sample);
    throw std::logic_error("PredictiveDistribution: neither grid nor sample");
}

double PredictiveDistribution::sd() const {
    if (has_grid()) {
        const double m = mean();
        double s = 0.0;
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const double a = grid[i - 1] - m, b = grid[i] - m;
            s += 0.5 * (grid[i] - grid[i - 1]) * (a * a * density[i - 1] + b * b * density[i]);
        }
        return std::sqrt(s / grid_mass());
    }
    if (!sample.empty()) return std::sqrt(variance_of(sample));
    throw std::logic_error("PredictiveDistribution: neither grid nor sample");
}

double PredictiveDistribution::quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("quantile: p must lie in (0, 1)");
    if (has_grid() && p >= cdf.front() && p <= cdf.back()) {
        // Cubic Hermite interpolation of the cdf (slopes are the density),
        // inverted by bisection inside the bracketing cell.
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), p);
        std::size_t i = static_cast<std::size_t>(it - cdf.begin());
        if (i == 0) return grid.front();
        const std::size_t j = i - 1;
        const double h = grid[i] - grid[j];
        const double F0 = cdf[j], F1 = cdf[i], d0 = density[j] * h, d1 = density[i] * h;
        auto H = [&](double s) {
            const double s2 = s * s, s3 = s2 * s;
            return (2 * s3 - 3 * s2 + 1) * F0 + (s3 - 2 * s2 + s) * d0 + (-2 * s3 + 3 * s2) * F1 + (s3 - s2) * d1;
        };
        double a = 0.0, b = 1.0;
        for (int k = 0; k < 50; ++k) {
            const double mid = 0.5 * (a + b);
            (H(mid) < p ? a : b) = mid;
        }
        return grid[j] + 0.5 * (a + b) * h;
    }
    if (!mixture.parts().empty()) return mixture.quantile(p);
    if (!sample.empty()) return sample_quantile(sample, p);
    throw std::logic_error("PredictiveDistribution: nothing to take quantiles of");
}

double PredictiveDistribution::prob_below(double y) const {
    if (!mixture.parts().empty()) return mixture.cdf(y);
    if (sample.empty()) throw std::logic_error("PredictiveDistribution: nothing to evaluate");
    return static_cast<double>(std::count_if(sample.begin(), sample.end(), [&](double v) { return v < y; })) /
           static_cast<double>(sample.size());
}

nlohmann::json PredictiveDistribution::summary() const {
    nlohmann::json j;
    j["target"] = target;
    j["horizon"] = horizon;
    j["provenance"] = provenance;
    j["mean"] = mean();
    j["sd"] = sd();
    j["p_below_zero"] = prob_below(0.0);
    for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) j["quantiles"][std::to_string(q).substr(0, 4)] = quantile(q);
    if (has_grid()) j["grid_mass"] = grid_mass();
    if (!sample.empty()) j["sample_size"] = sample.size();
    if (!warnings.empty()) j["warnings"] = warnings;
    return j;
}

// ------------------------------------------------------------------ latent predictives

namespace {

using Mixture = std::vector<GaussianComponent>;

Eigen::MatrixXd companion(std::span<const double> ar) {
    const int p = static_cast<int>(ar.size());
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(p, p);
    for (int j = 0; j < p; ++j) T(0, j) = ar[j];
    for (int i = 1; i < p; ++i) T(i, i - 1) = 1.0;
    return T;
}

std::vector<double> latent_history(const PredictiveSource& s, std::span<const double> y) {
    std::vector<double> z(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
        z[t] = s.map.to_latent(y[t]);
        if (!std::isfinite(z[t])) throw NumericalError("forecast: observation maps to a non-finite latent value");
    }
    return z;
}

std::uint64_t draw_seed(std::uint64_t seed, std::size_t k) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(k), std::uint64_t{0x5eed}};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Keep k equally spaced members of the cloud ordered by log-volatility.
Mixture compress_cloud(const PfParticles& c, int k) {
    const std::size_t N = c.zeta.size();
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return c.zeta[a] < c.zeta[b]; });
    const std::size_t K = std::min<std::size_t>(N, static_cast<std::size_t>(k));
    Mixture m;
    m.reserve(K);
    for (std::size_t j = 0; j < K; ++j) {
        const std::size_t i = idx[std::min(N - 1, static_cast<std::size_t>((j + 0.5) * N / K))];
        m.push_back({1.0, c.mu_mean[i], c.mu_var[i] + std::exp(c.zeta[i])});
    }
    return m;
}

// Predictive of z_t given z_{1:t-1} for every t (t = 0: stationary margin).
std::vector<Mixture> rolling_latent(const PredictiveSource& s, std::span<const double> z, const PredictiveOptions& opt,
                                    std::uint64_t seed) {
    const std::size_t T = z.size();
    std::vector<Mixture> out(T);
    switch (s.spec.kind) {
        case ModelKind::Ucar: {
            const auto f = kalman_loglik(z, s.spec.ucar());
            for (std::size_t t = 0; t < T; ++t) out[t] = {{1.0, f.pred_mean[t], f.pred_var[t]}};
            break;
        }
        case ModelKind::Msar1: {
            const auto& p = s.spec.msar();
            const auto f = hamilton_filter(z, p);
            out[0] = {{p.pi1, p.mu1, p.s2_1}, {p.pi2, p.mu2, p.s2_2}};
            for (std::size_t t = 1; t < T; ++t)
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) {
                        const double w = std::exp(f.log_prob[t - 1][i]) * p.trans(i, j);
                        if (w > 0.0) out[t].push_back({w, p.cond_mean(i, j, z[t - 1]), p.cond_var(i, j)});
                    }
            break;
        }
        case ModelKind::Svuc: {
            bootstrap_pf_loglik(z, s.spec.svuc(), opt.particles, seed,
                                [&](std::size_t t, const PfParticles& c) { out[t] = compress_cloud(c, opt.components); });
            break;
        }
    }
    return out;
}

Mixture svuc_ahead(const SvucParams& p, std::span<const double> zeta, std::span<const double> m,
                   std::span<const double> P, std::span<const double> w, int l, int nodes) {
    double rl = 1.0, vmu = 0.0, rz = 1.0, vz = 0.0;
    for (int k = 0; k < l; ++k) {
        vmu = p.rho_mu * p.rho_mu * vmu + p.sigma2_mu;
        vz = p.rho_zeta * p.rho_zeta * vz + p.sigma2_zeta;
        rl *= p.rho_mu;
        rz *= p.rho_zeta;
    }
    const auto& gh = gauss_hermite_prob(nodes);
    Mixture out;
    for (std::size_t i = 0; i < zeta.size(); ++i) {
        const double mz = p.zeta_bar + rz * (zeta[i] - p.zeta_bar);
        for (int k = 0; k < nodes; ++k) {
            const double zt = mz + std::sqrt(vz) * gh.nodes[k];
            out.push_back({w[i] * gh.weights[k], rl * m[i], rl * rl * P[i] + vmu + std::exp(zt)});
        }
    }
    return out;
}

Mixture ahead_latent(const PredictiveSource& s, std::span<const double> z, int l, const PredictiveOptions& opt,
                     std::uint64_t seed) {
    switch (s.spec.kind) {
        case ModelKind::Ucar: {
            const auto& p = s.spec.ucar();
            const auto f = kalman_loglik(z, p);
            const Eigen::MatrixXd T = companion(p.ar);
            Eigen::VectorXd a = f.final_mean;
            Eigen::MatrixXd P = f.final_cov;
            for (int k = 0; k < l; ++k) {
                a = T * a;
                P = T * P * T.transpose();
                P(0, 0) += p.sigma2_mu;
            }
            return {{1.0, a(0), P(0, 0) + p.sigma2}};
        }
        case ModelKind::Msar1: {
            if (l > 12) throw std::invalid_argument("forecast: switching-model horizon is limited to 12");
            const auto& p = s.spec.msar();
            const auto f = hamilton_filter(z, p);
            Mixture out;
            // Enumerate regime paths s_T, s_{T+1}, ..., s_{T+l}.
            const auto& lp = f.log_prob.back();
            for (int s0 = 0; s0 < 2; ++s0)
                for (int code = 0; code < (1 << l); ++code) {
                    double w = std::exp(lp[s0]), dev = z.back() - p.mu(s0), v = 0.0;
                    int prev = s0;
                    for (int k = 0; k < l; ++k) {
                        const int j = (code >> k) & 1;
                        w *= p.trans(prev, j);
                        dev *= p.rho(j);
                        v = p.rho(j) * p.rho(j) * v + p.cond_var(prev, j);
                        prev = j;
                    }
                    if (w > 0.0) out.push_back({w, p.mu(prev) + dev, v});
                }
            return out;
        }
        case ModelKind::Svuc: {
            const auto& p = s.spec.svuc();
            if (s.terminal && !s.terminal->zeta.empty() && !s.terminal->mu.empty()) {
                const double zt = s.terminal->zeta[0], mt = s.terminal->mu[0], zero = 0.0, one = 1.0;
                return svuc_ahead(p, {&zt, 1}, {&mt, 1}, {&zero, 1}, {&one, 1}, l, opt.zeta_nodes);
            }
            const auto f = bootstrap_pf_loglik(z, p, opt.particles, seed);
            const auto& c = f.final_particles;
            std::vector<double> w(c.log_weight.size());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(c.log_weight[i]);
            Rng rng(seed + 1);
            std::uniform_real_distribution<double> unif;
            const int K = std::min<int>(opt.components, static_cast<int>(w.size()));
            // Resample to K equally weighted particles.
            std::vector<double> zk, mk, Pk, ek;
            const auto idx = systematic_resample(w, unif(rng));
            const std::size_t N = idx.size();
            for (int j = 0; j < K; ++j) {
                const std::size_t i = static_cast<std::size_t>(idx[std::min(N - 1, static_cast<std::size_t>((j + 0.5) * N / K))]);
                zk.push_back(c.zeta[i]);
                mk.push_back(c.mu_mean[i]);
                Pk.push_back(c.mu_var[i]);
                ek.push_back(1.0 / K);
            }
            return svuc_ahead(p, zk, mk, Pk, ek, l, opt.zeta_nodes);
        }
    }
    throw std::logic_error("forecast: unknown model");
}

void check_inputs(const PredictiveModel& model, std::span<const double> y, int horizon) {
    if (model.draws.empty()) throw std::invalid_argument("forecast: model has no draws");
    if (y.empty()) throw std::invalid_argument("forecast: history must hold at least one observation");
    if (horizon < 1) throw std::invalid_argument("forecast: horizon must be >= 1");
    for (double v : y)
        if (!std::isfinite(v)) throw std::invalid_argument("forecast: non-finite observation");
}

void fill_grid(PredictiveDistribution& d, std::vector<double> grid, int grid_size) {
    const bool automatic = grid.empty();
    if (automatic) {
        const double lo = d.mixture.quantile(1e-7), hi = d.mixture.quantile(1.0 - 1e-7);
        const int n = std::max(grid_size, 16);
        grid.resize(n);
        for (int i = 0; i < n; ++i) grid[i] = lo + (hi - lo) * i / (n - 1);
    }
    if (!std::is_sorted(grid.begin(), grid.end()) || grid.size() < 2)
        throw std::invalid_argument("forecast: grid must be increasing with at least two points");
    d.grid = std::move(grid);
    d.density.resize(d.grid.size());
    d.cdf.resize(d.grid.size());
    for (std::size_t i = 0; i < d.grid.size(); ++i) d.mixture.evaluate(d.grid[i], d.cdf[i], d.density[i]);
    if (d.cdf.front() > 1e-4 || d.cdf.back() < 1.0 - 1e-4)
        d.warnings.push_back("grid does not cover the 1e-4 to 1-1e-4 predictive quantiles");
    const double mass = d.grid_mass(), exact = d.cdf.back() - d.cdf.front();
    if (std::abs(mass - exact) > 1e-3) d.warnings.push_back("density grid is too coarse: mass " + std::to_string(mass));
}

PredictiveDistribution build_mixture(const PredictiveModel& model, std::span<const double> y, int horizon,
                                     const PredictiveOptions& opt) {
    check_inputs(model, y, horizon);
    PredictiveDistribution d;
    d.target = y.size() + static_cast<std::size_t>(horizon) - 1;
    d.horizon = horizon;
    d.provenance = model.provenance;
    d.seed = opt.seed;
    for (std::size_t k = 0; k < model.draws.size(); ++k) {
        const auto& s = model.draws[k];
        const auto z = latent_history(s, y);
        d.mixture.add(s.map, ahead_latent(s, z, horizon, opt, draw_seed(opt.seed, k)));
    }
    return d;
}

}  // namespace

std::vector<std::vector<GaussianComponent>> latent_predictive(const PredictiveModel& model, std::span<const double> y_hist,
                                                              int horizon, const PredictiveOptions& opt) {
    check_inputs(model, y_hist, horizon);
    std::vector<std::vector<GaussianComponent>> out;
    for (std::size_t k = 0; k < model.draws.size(); ++k) {
        const auto& s = model.draws[k];
        out.push_back(ahead_latent(s, latent_history(s, y_hist), horizon, opt, draw_seed(opt.seed, k)));
    }
    return out;
}

PredictiveDistribution predictive_sample(const PredictiveModel& model, std::span<const double> y_hist, int horizon,
                                         int n, std::uint64_t seed, const PredictiveOptions& opt) {
    if (n < 1) throw std::invalid_argument("predictive_sample: n must be >= 1");
    auto d = build_mixture(model, y_hist, horizon, opt);
    d.seed = seed;
    Rng rng(seed);
    d.sample.resize(static_cast<std::size_t>(n));
    for (auto& v : d.sample) v = d.mixture.draw(rng);
    return d;
}

PredictiveDistribution predictive_density_grid(const PredictiveModel& model, std::span<const double> y_hist,
                                               int horizon, std::vector<double> grid, const PredictiveOptions& opt) {
    auto d = build_mixture(model, y_hist, horizon, opt);
    fill_grid(d, std::move(grid), opt.grid_size);
    return d;
}

PredictiveDistribution predictive_from_mixture(PredictiveMixture mixture, std::size_t target, int grid_size) {
    PredictiveDistribution d;
    d.target = target;
    d.provenance = "mixture";
    d.mixture = std::move(mixture);
    fill_grid(d, {}, grid_size);
    return d;
}

std::vector<PredictiveDistribution> rolling_one_step(const PredictiveModel& model, std::span<const double> y,
                                                     const PredictiveOptions& opt) {
    check_inputs(model, y, 1);
    if (y.size() < 2) throw std::invalid_argument("rolling_one_step: need at least two observations");
    const std::size_t T = y.size();
    std::vector<PredictiveDistribution> out(T - 1);
    for (std::size_t t = 1; t < T; ++t) {
        out[t - 1].target = t;
        out[t - 1].provenance = model.provenance;
        out[t - 1].seed = opt.seed;
    }
    for (std::size_t k = 0; k < model.draws.size(); ++k) {
        const auto& s = model.draws[k];
        const auto z = latent_history(s, y);
        auto mix = rolling_latent(s, z, opt, draw_seed(opt.seed, k));
        for (std::size_t t = 1; t < T; ++t) out[t - 1].mixture.add(s.map, std::move(mix[t]));
    }
    for (auto& d : out) fill_grid(d, {}, opt.grid_size);
    return out;
}

std::string predictive_summaries_csv(const std::vector<PredictiveDistribution>& preds) {
    std::ostringstream os;
    os.precision(8);
    os << "t,mean,sd,p_below_zero,q05,q25,q50,q75,q95\n";
    for (const auto& d : preds) {
        os << d.target << "," << d.mean() << "," << d.sd() << "," << d.prob_below(0.0);
        for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) os << "," << d.quantile(q);
        os << "\n";
    }
    return os.str();
}

}  // namespace invcop
