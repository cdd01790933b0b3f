#include "invcop/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "invcop/copula_density.hpp"
#include "invcop/error.hpp"
#include "invcop/filters.hpp"

namespace invcop {

std::string to_string(MarginMode m) {
    switch (m) {
        case MarginMode::Fixed: return "fixed";
        case MarginMode::JointParametric: return "joint";
        case MarginMode::Direct: return "direct";
    }
    return "?";
}

MarginMode margin_mode_from_string(const std::string& s) {
    if (s == "fixed") return MarginMode::Fixed;
    if (s == "joint") return MarginMode::JointParametric;
    if (s == "direct") return MarginMode::Direct;
    throw std::invalid_argument("unknown margin mode '" + s + "'");
}

std::vector<ParamBox> param_boxes(ModelKind kind, int order) {
    constexpr double kVarLo = 1e-8;
    switch (kind) {
        case ModelKind::Svuc: return {{-1, 1, false}, {kVarLo, 1, true}, {-1, 1, false}, {kVarLo, 10, true}};
        case ModelKind::Msar1:
            return {{-5, 5, false}, {-1, 1, false}, {-1, 1, false},
                    {kVarLo, 10, true}, {0, 1, false},  {0, 0.999, false}};
        case ModelKind::Ucar: {
            std::vector<ParamBox> b(order, ParamBox{-1, 1, false});
            b.push_back({kVarLo, 1, true});
            return b;
        }
    }
    return {};
}

std::pair<double, double> feasible_interval(ModelKind kind, int order, std::span<const double> v,
                                            int i) {
    const auto box = param_boxes(kind, order).at(i);
    std::vector<double> w(v.begin(), v.end());
    auto ok = [&](double x) {
        w[i] = x;
        return x >= box.lo && x <= box.hi && !check_free(kind, order, w);
    };
    const double x0 = v[i];
    if (!ok(x0)) throw std::invalid_argument("feasible_interval: current point is infeasible");
    auto edge = [&](double bound) {
        if (ok(bound)) return bound;
        double good = x0, bad = bound;
        for (int it = 0; it < 200 && std::abs(good - bad) > 1e-14 * (1.0 + std::abs(good)); ++it) {
            const double mid = 0.5 * (good + bad);
            (ok(mid) ? good : bad) = mid;
        }
        return good;
    };
    return {edge(box.lo), edge(box.hi)};
}

// ------------------------------------------------------------------ proposals

NrProposal nr_truncnorm_proposal(const std::function<double(double)>& f, double x0, double lo,
                                 double hi, int steps) {
    if (!(hi > lo)) throw std::invalid_argument("nr_truncnorm_proposal: empty interval");
    if (steps < 1) throw std::invalid_argument("nr_truncnorm_proposal: steps must be >= 1");
    const bool finite_width = std::isfinite(lo) && std::isfinite(hi);
    const double width = finite_width ? hi - lo : INFINITY;
    double x = std::clamp(x0, lo, hi);
    if (finite_width) x = std::clamp(x, lo + 1e-9 * width, hi - 1e-9 * width);
    double fx = f(x);

    auto curvature = [&](double at, double fat, double& g, double& h2) {
        double h = 1e-4 * std::max(1.0, std::abs(at));
        if (std::isfinite(lo)) h = std::min(h, 0.25 * (at - lo));
        if (std::isfinite(hi)) h = std::min(h, 0.25 * (hi - at));
        if (!(h > 0.0)) return false;
        const double fp = f(at + h), fm = f(at - h);
        if (!std::isfinite(fp) || !std::isfinite(fm)) return false;
        g = (fp - fm) / (2.0 * h);
        h2 = (fp - 2.0 * fat + fm) / (h * h);
        return true;
    };

    double last_var = NAN;
    if (std::isfinite(fx)) {
        for (int k = 0; k < steps; ++k) {
            double g, h2;
            if (!curvature(x, fx, g, h2)) break;
            double step;
            if (h2 < 0.0) {
                last_var = -1.0 / h2;
                step = -g / h2;
            } else {
                // No usable curvature: move uphill by a tenth of the interval.
                step = std::copysign(finite_width ? 0.1 * width : std::max(1.0, std::abs(x)), g);
            }
            bool moved = false;
            for (int tries = 0; tries < 40; ++tries, step *= 0.5) {
                const double xn = x + step;
                if (!(xn > lo && xn < hi)) continue;
                const double fn = f(xn);
                if (std::isfinite(fn) && fn >= fx - 1e-12 * (1.0 + std::abs(fx))) {
                    x = xn;
                    fx = fn;
                    moved = true;
                    break;
                }
            }
            if (!moved || std::abs(step) < 1e-10 * (1.0 + std::abs(x))) break;
        }
    }

    NrProposal q;
    q.lo = lo;
    q.hi = hi;
    double g, h2;
    if (std::isfinite(fx) && curvature(x, fx, g, h2) && h2 < 0.0) {
        q.var = -1.0 / h2;
    } else if (std::isfinite(last_var)) {
        q.var = last_var;
    } else {
        q.flagged = true;
        q.mean = finite_width ? 0.5 * (lo + hi) : x;
        q.var = finite_width ? width * width : 1e4;
        return q;
    }
    q.mean = x;
    if (finite_width) {
        const double eps = 1e-6 * width;
        if (x - lo < eps) {
            q.mean = lo;
            q.flagged = true;
        } else if (hi - x < eps) {
            q.mean = hi;
            q.flagged = true;
        }
    }
    return q;
}

double truncnorm_logpdf(const NrProposal& q, double x) {
    if (!(x >= q.lo && x <= q.hi)) return -INFINITY;
    const double sd = std::sqrt(q.var);
    return norm_logpdf(x, q.mean, q.var) - log_norm_interval((q.lo - q.mean) / sd, (q.hi - q.mean) / sd);
}

MvnProposal nr_mvn_proposal(const std::function<double(std::span<const double>)>& f,
                            std::vector<double> x0, std::span<const double> lo,
                            std::span<const double> hi, int steps) {
    const int d = static_cast<int>(x0.size());
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(x0.data(), d);
    auto eval = [&](const Eigen::VectorXd& v) { return f(std::span<const double>(v.data(), v.size())); };
    auto inside = [&](const Eigen::VectorXd& v) {
        for (int i = 0; i < d; ++i)
            if (!(v(i) > lo[i] && v(i) < hi[i])) return false;
        return true;
    };
    MvnProposal out;
    auto wide = [&]() {
        out.flagged = true;
        out.mean = x;
        out.cov = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < d; ++i) out.cov(i, i) = std::pow(0.25 * (hi[i] - lo[i]), 2);
        return out;
    };
    double fx = eval(x);
    if (!std::isfinite(fx)) return wide();

    auto derivatives = [&](Eigen::VectorXd& g, Eigen::MatrixXd& H) {
        Eigen::VectorXd h(d);
        for (int i = 0; i < d; ++i)
            h(i) = std::min({1e-4 * std::max(1.0, std::abs(x(i))), 0.25 * (x(i) - lo[i]), 0.25 * (hi[i] - x(i))});
        g.resize(d);
        H.resize(d, d);
        for (int i = 0; i < d; ++i) {
            Eigen::VectorXd p = x, m = x;
            p(i) += h(i);
            m(i) -= h(i);
            const double fp = eval(p), fm = eval(m);
            if (!std::isfinite(fp) || !std::isfinite(fm)) return false;
            g(i) = (fp - fm) / (2 * h(i));
            H(i, i) = (fp - 2 * fx + fm) / (h(i) * h(i));
        }
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < i; ++j) {
                double acc = 0.0;
                for (int si : {1, -1})
                    for (int sj : {1, -1}) {
                        Eigen::VectorXd p = x;
                        p(i) += si * h(i);
                        p(j) += sj * h(j);
                        const double v = eval(p);
                        if (!std::isfinite(v)) return false;
                        acc += si * sj * v;
                    }
                H(i, j) = H(j, i) = acc / (4 * h(i) * h(j));
            }
        return true;
    };

    Eigen::MatrixXd last_cov;
    for (int k = 0; k < steps; ++k) {
        Eigen::VectorXd g;
        Eigen::MatrixXd H;
        if (!derivatives(g, H)) break;
        Eigen::LLT<Eigen::MatrixXd> llt(-H);
        Eigen::VectorXd step;
        if (llt.info() == Eigen::Success) {
            step = llt.solve(g);
            last_cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
        } else {
            step = 0.1 * g / std::max(g.norm(), 1e-12);
        }
        bool moved = false;
        for (int tries = 0; tries < 40; ++tries, step *= 0.5) {
            const Eigen::VectorXd xn = x + step;
            if (!inside(xn)) continue;
            const double fn = eval(xn);
            if (std::isfinite(fn) && fn >= fx - 1e-12 * (1.0 + std::abs(fx))) {
                x = xn;
                fx = fn;
                moved = true;
                break;
            }
        }
        if (!moved || step.norm() < 1e-10 * (1.0 + x.norm())) break;
    }
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    out.mean = x;
    if (derivatives(g, H)) {
        Eigen::LLT<Eigen::MatrixXd> llt(-H);
        if (llt.info() == Eigen::Success) {
            out.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
            return out;
        }
    }
    if (last_cov.size() > 0) {
        out.cov = last_cov;
        return out;
    }
    return wide();
}

// ------------------------------------------------------------------ state prior

double state_log_prior(const LatentStates& x, const SsmSpec& spec) {
    double l = 0.0;
    switch (spec.kind) {
        case ModelKind::Svuc: {
            const auto& p = spec.svuc();
            const auto& mu = x.mu;
            const auto& ze = x.zeta;
            if (p.sigma2_mu > 0.0 && !mu.empty()) {
                l += norm_logpdf(mu[0], 0.0, p.s2_mu);
                for (std::size_t t = 1; t < mu.size(); ++t)
                    l += norm_logpdf(mu[t], p.rho_mu * mu[t - 1], p.sigma2_mu);
            }
            if (!ze.empty()) {
                l += norm_logpdf(ze[0], p.zeta_bar, p.s2_zeta);
                for (std::size_t t = 1; t < ze.size(); ++t)
                    l += norm_logpdf(ze[t], p.zeta_bar + p.rho_zeta * (ze[t - 1] - p.zeta_bar), p.sigma2_zeta);
            }
            return l;
        }
        case ModelKind::Msar1: {
            const auto& p = spec.msar();
            const auto& s = x.regime;
            if (s.empty()) return 0.0;
            l += std::log(p.pi(s[0]));
            for (std::size_t t = 1; t < s.size(); ++t) l += std::log(p.trans(s[t - 1], s[t]));
            return l;
        }
        case ModelKind::Ucar: {
            const auto& p = spec.ucar();
            const auto& mu = x.mu;
            if (p.sigma2_mu <= 0.0 || mu.empty()) return 0.0;
            const int T = static_cast<int>(mu.size());
            const int P = p.order();
            const int n0 = std::min(P, T);
            const auto g = ar_autocovariance(p, n0);
            Eigen::MatrixXd G(n0, n0);
            for (int i = 0; i < n0; ++i)
                for (int j = 0; j < n0; ++j) G(i, j) = g[std::abs(i - j)];
            Eigen::LLT<Eigen::MatrixXd> llt(G);
            const Eigen::VectorXd head = Eigen::Map<const Eigen::VectorXd>(mu.data(), n0);
            const Eigen::VectorXd y = llt.matrixL().solve(head);
            l += -n0 * kLogSqrt2Pi - 0.5 * y.squaredNorm();
            for (int i = 0; i < n0; ++i) l -= std::log(llt.matrixL()(i, i));
            for (int t = P; t < T; ++t) {
                double m = 0.0;
                for (int j = 0; j < P; ++j) m += p.ar[j] * mu[t - 1 - j];
                l += norm_logpdf(mu[t], m, p.sigma2_mu);
            }
            return l;
        }
    }
    return l;
}

SsmSpec default_spec(ModelKind kind, int order) {
    switch (kind) {
        case ModelKind::Svuc: return make_spec(constrain_svuc(0.5, 0.5, 0.1, 0.1));
        case ModelKind::Msar1: return make_spec(constrain_msar(0.0, 0.0, 0.5, 0.5, 0.9, 0.95));
        case ModelKind::Ucar: {
            std::vector<double> partials(std::max(order, 1), 0.0);
            partials[0] = 0.3;
            return make_spec(constrain_ucar(partials, 0.2));
        }
    }
    throw std::invalid_argument("unknown model kind");
}

namespace {

std::optional<SsmSpec> try_spec(ModelKind kind, int order, std::span<const double> v) {
    if (check_free(kind, order, v)) return std::nullopt;
    return spec_from_free(kind, order, v);
}

double to_coord(const ParamBox& b, double x) { return b.log_scale ? std::log(x) : x; }
double from_coord(const ParamBox& b, double y) { return b.log_scale ? std::exp(y) : y; }

}  // namespace

std::vector<double> initialize_psi(ModelKind kind, int order, std::vector<double> v,
                                   const LatentStates& x) {
    const auto boxes = param_boxes(kind, order);
    constexpr int kGrid = 201;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        const auto [lo, hi] = feasible_interval(kind, order, v, i);
        const auto& b = boxes[i];
        auto logq = [&](double y) {
            auto w = v;
            w[i] = from_coord(b, y);
            const auto s = try_spec(kind, order, w);
            return s ? state_log_prior(x, *s) : -INFINITY;
        };
        auto grid_mean = [&](double ylo, double yhi, double& spread, int& kmax) {
            std::vector<double> ys(kGrid), lq(kGrid);
            double mx = -INFINITY, mn = INFINITY;
            for (int k = 0; k < kGrid; ++k) {
                ys[k] = ylo + (k + 0.5) / kGrid * (yhi - ylo);
                lq[k] = logq(ys[k]);
                if (std::isfinite(lq[k])) mn = std::min(mn, lq[k]);
                mx = std::max(mx, lq[k]);
            }
            spread = mx - mn;
            if (!std::isfinite(mx)) return std::numeric_limits<double>::quiet_NaN();
            double num = 0.0, den = 0.0;
            int support = 0;
            kmax = 0;
            for (int k = 0; k < kGrid; ++k) {
                const double w = std::exp(lq[k] - mx);
                num += w * from_coord(b, ys[k]);
                den += w;
                if (w > 1e-3) ++support;
                if (lq[k] == mx) kmax = k;
            }
            if (support < 12) spread = -spread;  // signal: refine
            return num / den;
        };
        const double ylo = to_coord(b, lo), yhi = to_coord(b, hi);
        double spread;
        int kmax;
        double m = grid_mean(ylo, yhi, spread, kmax);
        if (std::isnan(m)) continue;
        if (std::abs(spread) < 1e-9) continue;  // element not informed by the states
        if (spread < 0.0) {
            const double dy = (yhi - ylo) / kGrid;
            const double a = std::max(ylo, ylo + (kmax - 3) * dy), c = std::min(yhi, ylo + (kmax + 4) * dy);
            const double m2 = grid_mean(a, c, spread, kmax);
            if (!std::isnan(m2)) m = m2;
        }
        auto w = v;
        w[i] = m;
        if (!check_free(kind, order, w)) v = w;
    }
    return v;
}

// ------------------------------------------------------------------ trace

SsmSpec McmcTrace::spec_at(std::size_t i) const { return spec_from_free(kind, order, psi.at(i)); }

MarginModel McmcTrace::margin_at(std::size_t i) const {
    if (!base_margin) throw std::logic_error("trace has no parametric margin");
    return base_margin->with_params(theta.at(i));
}

std::vector<double> McmcTrace::column(const std::string& name) const {
    auto find = [&](const std::vector<std::string>& names, const std::vector<std::vector<double>>& rows)
        -> std::optional<std::vector<double>> {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) return std::nullopt;
        const auto k = it - names.begin();
        std::vector<double> c;
        c.reserve(rows.size());
        for (const auto& r : rows) c.push_back(r[k]);
        return c;
    };
    if (auto c = find(psi_names, psi)) return *c;
    if (auto c = find(theta_names, theta)) return *c;
    throw std::invalid_argument("no parameter named '" + name + "' in trace");
}

std::vector<double> McmcTrace::psi_mean() const {
    std::vector<double> m(psi_names.size(), 0.0);
    for (const auto& r : psi)
        for (std::size_t k = 0; k < m.size(); ++k) m[k] += r[k];
    for (auto& v : m) v /= std::max<std::size_t>(psi.size(), 1);
    return m;
}

double sample_quantile(std::vector<double> x, double q) {
    if (x.empty()) throw std::invalid_argument("sample_quantile: empty sample");
    std::sort(x.begin(), x.end());
    const double h = q * (x.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - lo) * (x[hi] - x[lo]);
}

double effective_sample_size(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 4) return static_cast<double>(n);
    const double m = mean_of(x);
    double c0 = 0.0;
    for (double v : x) c0 += (v - m) * (v - m);
    if (c0 <= 0.0) return static_cast<double>(n);
    auto acf = [&](std::size_t k) {
        double c = 0.0;
        for (std::size_t t = k; t < n; ++t) c += (x[t] - m) * (x[t - k] - m);
        return c / c0;
    };
    // Initial positive sequence over pairs of lags.
    double sum = -1.0;
    for (std::size_t k = 0; k + 1 < n; k += 2) {
        const double pair = acf(k) + acf(k + 1);
        if (pair <= 0.0) break;
        sum += 2.0 * pair;
    }
    return n / std::max(sum, 1e-12);
}

nlohmann::json McmcTrace::summary() const {
    nlohmann::json j;
    j["model"] = to_string(kind);
    j["order"] = order;
    j["mode"] = to_string(mode);
    j["draws"] = psi.size();
    j["acceptance"] = acceptance;
    j["warnings"] = warnings;
    auto describe = [&](const std::vector<std::string>& names) {
        nlohmann::json o = nlohmann::json::object();
        for (const auto& n : names) {
            const auto c = column(n);
            o[n] = {{"mean", mean_of(c)},
                    {"sd", std::sqrt(variance_of(c))},
                    {"q05", sample_quantile(c, 0.05)},
                    {"q95", sample_quantile(c, 0.95)},
                    {"ess", effective_sample_size(c)}};
        }
        return o;
    };
    if (!psi.empty()) {
        j["psi"] = describe(psi_names);
        j["theta"] = describe(theta_names);
    }
    return j;
}

// ------------------------------------------------------------------ sampler

namespace {

/// Robbins-Monro scaled random walk with an empirical covariance, adapted
/// during burn-in and frozen afterwards.
class AdaptiveRw {
public:
    explicit AdaptiveRw(const Eigen::VectorXd& init_sd)
        : d_(static_cast<int>(init_sd.size())),
          init_sd_(init_sd),
          log_scale_(std::log(2.38 / std::sqrt(static_cast<double>(init_sd.size())))),
          mean_(Eigen::VectorXd::Zero(init_sd.size())),
          m2_(Eigen::MatrixXd::Zero(init_sd.size(), init_sd.size())) {}

    Eigen::VectorXd propose(const Eigen::VectorXd& y, Rng& rng) {
        std::normal_distribution<double> nd;
        Eigen::VectorXd e(d_);
        for (int i = 0; i < d_; ++i) e(i) = nd(rng);
        return y + std::exp(log_scale_) * chol() * e;
    }
    void observe(const Eigen::VectorXd& y, bool accepted, double target, int k) {
        if (frozen_) return;
        ++n_;
        const Eigen::VectorXd delta = y - mean_;
        mean_ += delta / n_;
        m2_ += delta * (y - mean_).transpose();
        log_scale_ += ((accepted ? 1.0 : 0.0) - target) / std::pow(k + 1.0, 0.6);
        log_scale_ = std::clamp(log_scale_, -12.0, 4.0);
    }
    void freeze() {
        frozen_chol_ = chol();
        frozen_ = true;
    }

private:
    Eigen::MatrixXd chol() const {
        if (frozen_) return frozen_chol_;
        Eigen::MatrixXd c;
        if (n_ < 100) {
            c = init_sd_.array().square().matrix().asDiagonal();
        } else {
            c = m2_ / (n_ - 1) + 1e-12 * Eigen::MatrixXd::Identity(d_, d_);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(c);
        if (llt.info() != Eigen::Success) return init_sd_.asDiagonal();
        return llt.matrixL();
    }

    int d_;
    Eigen::VectorXd init_sd_;
    double log_scale_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd m2_;
    int n_ = 0;
    bool frozen_ = false;
    Eigen::MatrixXd frozen_chol_;
};

class Sampler {
public:
    Sampler(const McmcInput& in, const McmcConfig& cfg)
        : in_(in), cfg_(cfg), rng_(cfg.seed), kind_(in.start.kind), order_(model_order(in.start)),
          boxes_(param_boxes(kind_, order_)), T_(in.data.size()) {}

    McmcTrace run();

private:
    // ---- observation map
    bool uses_table() const { return in_.mode != MarginMode::Direct; }
    std::vector<double> latent_from(const LatentMarginTable& table, std::span<const double> u) const {
        return to_latent(u, table);
    }
    std::vector<double> latent_direct(std::span<const double> ab) const {
        std::vector<double> z(T_);
        for (std::size_t t = 0; t < T_; ++t) z[t] = (in_.data[t] - ab[0]) / ab[1];
        return z;
    }
    std::vector<double> compute_z(const LatentMarginTable& table) const {
        return in_.mode == MarginMode::Direct ? latent_direct(theta_) : latent_from(table, u_);
    }
    double margin_term(const LatentMarginTable& table, std::span<const double> z) const {
        if (!uses_table()) return 0.0;
        double s = 0.0;
        for (double v : z) s += table.logpdf(v);
        return s;
    }
    // Target of Step 2 up to terms constant in psi.
    double psi_target(const SsmSpec& s, const LatentMarginTable& table, std::span<const double> z) const {
        return conditional_state_loglik(z, x_, s) + state_log_prior(x_, s) - margin_term(table, z);
    }
    double held_target(const SsmSpec& s, std::span<const double> z) const {
        return conditional_state_loglik(z, x_, s) + state_log_prior(x_, s);
    }
    double loglik_now() const {
        double l = conditional_state_loglik(z_, x_, spec_) - margin_term(table_, z_);
        if (in_.mode == MarginMode::JointParametric) l += margin_loglik_;
        if (in_.mode == MarginMode::Direct) l -= static_cast<double>(T_) * std::log(theta_[1]);
        return l;
    }

    LatentMarginTable make_table(const SsmSpec& s) const {
        return uses_table() ? build_spline_table(s) : LatentMarginTable{};
    }
    void set_psi(std::vector<double> v) {
        psi_ = std::move(v);
        spec_ = spec_from_free(kind_, order_, psi_);
        table_ = make_table(spec_);
        z_ = compute_z(table_);
    }

    // ---- steps
    void step_states();
    bool step_element(int i);
    bool step_partials_block();
    bool step_theta(int sweep);

    const McmcInput& in_;
    const McmcConfig& cfg_;
    Rng rng_;
    ModelKind kind_;
    int order_;
    std::vector<ParamBox> boxes_;
    std::size_t T_;

    std::vector<double> psi_;
    SsmSpec spec_;
    LatentMarginTable table_;
    std::vector<double> u_;  // Fixed / JointParametric
    std::vector<double> z_;
    LatentStates x_;
    std::vector<double> theta_;
    std::optional<MarginModel> margin_;
    double margin_loglik_ = 0.0;
    std::vector<double> partials_start_;
    std::vector<bool> theta_log_;
    std::optional<AdaptiveRw> rw_;
    int nr_flagged_ = 0, nr_calls_ = 0, tn_failures_ = 0, tn_failure_run_ = 0;
};

void Sampler::step_states() {
    switch (kind_) {
        case ModelKind::Ucar: x_.mu = sample_ucar_states(z_, spec_.ucar(), rng_); break;
        case ModelKind::Svuc: {
            const auto& p = spec_.svuc();
            x_.mu = sample_svuc_levels(z_, x_.zeta, p, rng_);
            std::vector<double> e(T_);
            for (std::size_t t = 0; t < T_; ++t) e[t] = z_[t] - x_.mu[t];
            x_.zeta = sample_sv_logvols(e, x_.zeta, p.rho_zeta, p.sigma2_zeta, p.zeta_bar, rng_);
            break;
        }
        case ModelKind::Msar1: {
            const auto filt = hamilton_filter(z_, spec_.msar());
            x_.regime = ffbs_regimes(filt, z_, spec_.msar(), rng_);
            break;
        }
    }
}

bool Sampler::step_element(int i) {
    const auto& b = boxes_[i];
    const auto [lo, hi] = feasible_interval(kind_, order_, psi_, i);
    const double ylo = to_coord(b, lo), yhi = to_coord(b, hi);
    auto spec_at = [&](double y) {
        auto w = psi_;
        w[i] = from_coord(b, y);
        return try_spec(kind_, order_, w);
    };
    auto held = [&](std::span<const double> z) {
        return [&, z](double y) {
            const auto s = spec_at(y);
            return s ? held_target(*s, z) : -INFINITY;
        };
    };
    const double y0 = std::clamp(to_coord(b, psi_[i]), ylo, yhi);
    const auto q = nr_truncnorm_proposal(held(z_), y0, ylo, yhi, cfg_.nr_steps);
    ++nr_calls_;
    nr_flagged_ += q.flagged;
    const double y1 = sample_truncated_normal(q.mean, std::sqrt(q.var), ylo, yhi, rng_);
    const auto s1 = spec_at(y1);
    if (!s1) return false;
    LatentMarginTable table1;
    try {
        table1 = make_table(*s1);
    } catch (const NumericalError&) {
        return false;  // latent margin too irregular to tabulate
    }
    const auto z1 = compute_z(table1);
    const double l1 = psi_target(*s1, table1, z1);
    const double l0 = psi_target(spec_, table_, z_);
    const auto q_rev = nr_truncnorm_proposal(held(z1), y1, ylo, yhi, cfg_.nr_steps);
    const double log_alpha = l1 - l0 + truncnorm_logpdf(q_rev, y0) - truncnorm_logpdf(q, y1);
    std::uniform_real_distribution<double> unif;
    if (std::isfinite(log_alpha) && std::log(unif(rng_)) < log_alpha) {
        psi_[i] = from_coord(b, y1);
        spec_ = *s1;
        table_ = table1;
        z_ = z1;
        return true;
    }
    return false;
}

bool Sampler::step_partials_block() {
    // UCAR latent margins are standard normal whatever psi is, so z and the
    // margin term do not move with the partials and the proposal, built from
    // a fixed start, is an independence proposal.
    const int p = order_;
    auto target = [&](std::span<const double> pis) {
        auto w = psi_;
        std::copy(pis.begin(), pis.end(), w.begin());
        const auto s = try_spec(kind_, order_, w);
        return s ? held_target(*s, z_) : -INFINITY;
    };
    const std::vector<double> lo(p, -1.0), hi(p, 1.0);
    const auto prop = nr_mvn_proposal(target, partials_start_, lo, hi, cfg_.nr_steps);
    ++nr_calls_;
    nr_flagged_ += prop.flagged;
    Eigen::LLT<Eigen::MatrixXd> llt(prop.cov);
    const Eigen::MatrixXd L = llt.matrixL();
    std::normal_distribution<double> nd;
    Eigen::VectorXd draw(p);
    double l1 = -INFINITY;
    for (int tries = 0; tries < 5000 && !std::isfinite(l1); ++tries) {
        Eigen::VectorXd e(p);
        for (int k = 0; k < p; ++k) e(k) = nd(rng_);
        draw = prop.mean + L * e;
        l1 = target(std::span<const double>(draw.data(), p));
    }
    if (!std::isfinite(l1)) {
        ++tn_failures_;
        if (++tn_failure_run_ >= 50)
            throw NumericalError("mcmc: partial autocorrelation proposals stay outside the constraint set");
        return false;
    }
    tn_failure_run_ = 0;
    auto log_q = [&](const Eigen::VectorXd& v) {
        const Eigen::VectorXd r = L.triangularView<Eigen::Lower>().solve(v - prop.mean);
        return -0.5 * r.squaredNorm();
    };
    const Eigen::VectorXd cur = Eigen::Map<const Eigen::VectorXd>(psi_.data(), p);
    const double l0 = target(std::span<const double>(psi_.data(), p));
    const double log_alpha = l1 - l0 + log_q(cur) - log_q(draw);
    std::uniform_real_distribution<double> unif;
    if (std::log(unif(rng_)) < log_alpha) {
        for (int k = 0; k < p; ++k) psi_[k] = draw(k);
        spec_ = spec_from_free(kind_, order_, psi_);
        return true;
    }
    return false;
}

bool Sampler::step_theta(int sweep) {
    const int d = static_cast<int>(theta_.size());
    Eigen::VectorXd y(d);
    for (int k = 0; k < d; ++k) y(k) = theta_log_[k] ? std::log(theta_[k]) : theta_[k];
    const Eigen::VectorXd y1 = rw_->propose(y, rng_);
    std::vector<double> t1(d);
    for (int k = 0; k < d; ++k) t1[k] = theta_log_[k] ? std::exp(y1(k)) : y1(k);

    double l0 = conditional_state_loglik(z_, x_, spec_) - margin_term(table_, z_);
    double l1 = -INFINITY;
    std::vector<double> z1, u1;
    std::optional<MarginModel> m1;
    double g1 = 0.0;
    if (in_.mode == MarginMode::Direct) {
        l0 -= static_cast<double>(T_) * std::log(theta_[1]);
        z1 = latent_direct(t1);
        l1 = conditional_state_loglik(z1, x_, spec_) - static_cast<double>(T_) * std::log(t1[1]);
    } else {
        l0 += margin_loglik_;
        try {
            m1 = margin_->with_params(t1);
            u1 = to_copula_data(*m1, in_.data);
            z1 = latent_from(table_, u1);
            for (double v : in_.data) g1 += m1->logpdf(v);
            l1 = conditional_state_loglik(z1, x_, spec_) - margin_term(table_, z1) + g1;
        } catch (const std::domain_error&) {
            l1 = -INFINITY;
        }
    }
    std::uniform_real_distribution<double> unif;
    const bool accept = std::isfinite(l1) && std::log(unif(rng_)) < l1 - l0;
    if (accept) {
        theta_ = t1;
        z_ = std::move(z1);
        if (m1) {
            margin_ = std::move(m1);
            u_ = std::move(u1);
            margin_loglik_ = g1;
        }
    }
    Eigen::VectorXd cur(d);
    for (int k = 0; k < d; ++k) cur(k) = theta_log_[k] ? std::log(theta_[k]) : theta_[k];
    if (sweep < cfg_.burnin) rw_->observe(cur, accept, cfg_.rw_target, sweep);
    return accept;
}

McmcTrace Sampler::run() {
    if (cfg_.burnin < 0 || cfg_.draws < 1 || cfg_.thin < 1)
        throw std::invalid_argument("mcmc: counts must be positive");
    if (cfg_.nr_steps < 1) throw std::invalid_argument("mcmc: nr_steps must be >= 1");
    if (T_ < 2) throw std::invalid_argument("mcmc: need at least two observations");
    for (double v : in_.data)
        if (!std::isfinite(v)) throw std::invalid_argument("mcmc: non-finite observation");

    McmcTrace tr;
    tr.kind = kind_;
    tr.order = order_;
    tr.mode = in_.mode;
    tr.psi_names = free_param_names(kind_, order_);

    // Observation map and theta.
    switch (in_.mode) {
        case MarginMode::Fixed:
            for (double v : in_.data)
                if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("mcmc: copula data must lie in (0, 1)");
            u_ = in_.data;
            break;
        case MarginMode::JointParametric: {
            if (!in_.margin || in_.margin->params().empty())
                throw std::invalid_argument("mcmc: joint mode needs a parametric starting margin");
            margin_ = in_.margin;
            tr.base_margin = in_.margin;
            theta_ = margin_->params();
            tr.theta_names = MarginModel::param_names(margin_->kind());
            for (const auto& n : tr.theta_names)
                theta_log_.push_back(n == "omega" || n == "sd" || n == "shape" || n == "scale");
            u_ = to_copula_data(*margin_, in_.data);
            for (double v : in_.data) margin_loglik_ += margin_->logpdf(v);
            break;
        }
        case MarginMode::Direct:
            theta_ = {mean_of(in_.data), std::sqrt(variance_of(in_.data))};
            if (!(theta_[1] > 0.0)) throw std::invalid_argument("mcmc: data have zero variance");
            tr.theta_names = {"a", "b"};
            theta_log_ = {false, true};
            break;
    }
    if (!theta_.empty()) {
        Eigen::VectorXd sd(theta_.size());
        for (std::size_t k = 0; k < theta_.size(); ++k)
            sd(k) = theta_log_[k] ? 0.05 : 0.05 * std::max(std::abs(theta_[k]), 0.2);
        if (in_.mode == MarginMode::Direct) sd(0) = 0.05 * theta_[1];
        rw_.emplace(sd);
    }

    // Initial states under the starting point, then psi from q(psi).
    set_psi(free_params(in_.start));
    switch (kind_) {
        case ModelKind::Svuc:
            x_.mu.assign(T_, 0.0);
            x_.zeta.assign(T_, spec_.svuc().zeta_bar);
            break;
        case ModelKind::Ucar: x_.mu.assign(T_, 0.0); break;
        case ModelKind::Msar1: break;
    }
    for (int k = 0; k < std::max(cfg_.init_state_sweeps, 1); ++k) step_states();
    if (cfg_.init_from_states) set_psi(initialize_psi(kind_, order_, psi_, x_));
    if (kind_ == ModelKind::Ucar) partials_start_.assign(psi_.begin(), psi_.begin() + order_);

    std::map<std::string, int> accepted, proposed;
    auto count = [&](const std::string& name, bool ok, bool retained) {
        if (!retained) return;
        accepted[name] += ok;
        proposed[name] += 1;
    };

    const int total = cfg_.burnin + cfg_.draws * cfg_.thin;
    int retained_count = 0;
    for (int sweep = 0; sweep < total; ++sweep) {
        const bool after_burnin = sweep >= cfg_.burnin;
        if (sweep == cfg_.burnin && rw_) rw_->freeze();
        nlohmann::json flags = nlohmann::json::object();

        // Step 1.
        step_states();
        // Step 2.
        int start = 0;
        if (kind_ == ModelKind::Ucar) {
            const bool ok = step_partials_block();
            count("partials", ok, after_burnin);
            flags["partials"] = ok;
            start = order_;
        }
        for (int i = start; i < static_cast<int>(psi_.size()); ++i) {
            const bool ok = step_element(i);
            count(tr.psi_names[i], ok, after_burnin);
            flags[tr.psi_names[i]] = ok;
        }
        // Step 3.
        if (rw_) {
            const bool ok = step_theta(sweep);
            count("theta", ok, after_burnin);
            flags["theta"] = ok;
        }

        if (auto bad = check_free(kind_, order_, psi_))
            throw std::logic_error("mcmc: draw violates constraint " + *bad);
        if (!after_burnin || (sweep - cfg_.burnin) % cfg_.thin != 0) continue;

        const double ll = loglik_now();
        tr.psi.push_back(psi_);
        tr.theta.push_back(theta_);
        tr.loglik.push_back(ll);
        LatentStates term;
        if (!x_.mu.empty())
            for (int k = 0; k < std::max(order_, 1) && k < static_cast<int>(T_); ++k)
                term.mu.push_back(x_.mu[T_ - 1 - k]);
        if (!x_.zeta.empty()) term.zeta.push_back(x_.zeta.back());
        if (!x_.regime.empty()) term.regime.push_back(x_.regime.back());
        tr.terminal.push_back(std::move(term));
        if (cfg_.state_every > 0 && retained_count % cfg_.state_every == 0) tr.paths.push_back(x_);

        if (cfg_.trace_stream) {
            nlohmann::json rec;
            rec["draw"] = retained_count;
            for (std::size_t k = 0; k < psi_.size(); ++k) rec["psi"][tr.psi_names[k]] = psi_[k];
            for (std::size_t k = 0; k < theta_.size(); ++k) rec["theta"][tr.theta_names[k]] = theta_[k];
            rec["loglik"] = ll;
            rec["accepted"] = flags;
            *cfg_.trace_stream << rec.dump() << '\n';
        }
        ++retained_count;
    }

    for (const auto& [name, n] : proposed) {
        const double r = static_cast<double>(accepted[name]) / n;
        tr.acceptance[name] = r;
        if (r < 0.05 || r > 0.95)
            tr.warnings.push_back("acceptance rate of " + name + " is " + std::to_string(r) +
                                  ", outside [0.05, 0.95]");
    }
    if (nr_calls_ > 0 && nr_flagged_ > 0.1 * nr_calls_)
        tr.warnings.push_back(std::to_string(nr_flagged_) + " of " + std::to_string(nr_calls_) +
                              " Newton-Raphson proposals had no usable curvature or hit a bound");
    if (tn_failures_ > 0)
        tr.warnings.push_back(std::to_string(tn_failures_) +
                              " truncated normal block proposals found no feasible draw");
    return tr;
}

}  // namespace

McmcTrace mcmc_fit(const McmcInput& input, const McmcConfig& config) {
    Sampler s(input, config);
    return s.run();
}

}  // namespace invcop
