#include "invcop/ssm.hpp"

#include <cmath>
#include <sstream>

#include "invcop/error.hpp"

namespace invcop {

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Svuc: return "svuc";
        case ModelKind::Msar1: return "msar";
        case ModelKind::Ucar: return "ucar";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "svuc") return ModelKind::Svuc;
    if (s == "msar" || s == "msar1") return ModelKind::Msar1;
    if (s == "ucar") return ModelKind::Ucar;
    throw std::invalid_argument("unknown model tag '" + s + "'");
}

namespace {

std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

void throw_if(const std::optional<std::string>& err, const std::string& detail) {
    if (err) throw ConstraintViolation(*err, detail);
}

}  // namespace

std::optional<std::string> check_svuc(double rho_mu, double rho_zeta, double sigma2_mu,
                                      double sigma2_zeta) {
    if (!std::isfinite(rho_mu) || !std::isfinite(rho_zeta) || !std::isfinite(sigma2_mu) ||
        !std::isfinite(sigma2_zeta))
        return "finite parameters";
    if (!(std::abs(rho_mu) < 1.0)) return "|rho_mu| < 1";
    if (!(std::abs(rho_zeta) < 1.0)) return "|rho_zeta| < 1";
    if (!(sigma2_mu >= 0.0)) return "sigma2_mu >= 0";
    if (!(sigma2_mu < 1.0 - rho_mu * rho_mu)) return "sigma2_mu < 1 - rho_mu^2";
    if (!(sigma2_zeta > 0.0)) return "sigma2_zeta > 0";
    return std::nullopt;
}

SvucParams constrain_svuc(double rho_mu, double rho_zeta, double sigma2_mu, double sigma2_zeta) {
    throw_if(check_svuc(rho_mu, rho_zeta, sigma2_mu, sigma2_zeta),
             "svuc(rho_mu=" + fmt_num(rho_mu) + ", rho_zeta=" + fmt_num(rho_zeta) +
                 ", sigma2_mu=" + fmt_num(sigma2_mu) + ", sigma2_zeta=" + fmt_num(sigma2_zeta) +
                 ")");
    SvucParams p;
    p.rho_mu = rho_mu;
    p.rho_zeta = rho_zeta;
    p.sigma2_mu = sigma2_mu;
    p.sigma2_zeta = sigma2_zeta;
    p.s2_mu = sigma2_mu / (1.0 - rho_mu * rho_mu);
    p.s2_zeta = sigma2_zeta / (1.0 - rho_zeta * rho_zeta);
    p.zeta_bar = std::log(1.0 - p.s2_mu) - 0.5 * p.s2_zeta;
    return p;
}

std::optional<std::string> check_msar(double c2, double rho1, double rho2, double sigma2_2,
                                      double p11, double p22) {
    if (!std::isfinite(c2) || !std::isfinite(rho1) || !std::isfinite(rho2) ||
        !std::isfinite(sigma2_2) || !std::isfinite(p11) || !std::isfinite(p22))
        return "finite parameters";
    if (!(std::abs(rho1) < 1.0)) return "|rho1| < 1";
    if (!(std::abs(rho2) < 1.0)) return "|rho2| < 1";
    if (!(p11 > 0.0 && p11 < 1.0)) return "0 < p11 < 1";
    if (!(p22 > 0.0 && p22 < 1.0)) return "0 < p22 < 1";
    if (!(p22 <= 0.999)) return "p22 <= 0.999";
    if (!(sigma2_2 > 0.0)) return "sigma2_2 > 0";
    const double pi1 = (1.0 - p22) / (2.0 - p11 - p22);
    const double pi2 = 1.0 - pi1;
    if (!(pi1 < pi2)) return "pi1 < pi2 (label identification)";
    const double s2_2 = sigma2_2 / (1.0 - rho2 * rho2);
    if (!(pi2 * s2_2 < 1.0)) return "sigma1 nonpositive (pi2*s2_2 < 1)";
    const double sigma2_1 = (1.0 - rho1 * rho1) / pi1 * (1.0 - pi2 * s2_2);
    const double s2_1 = sigma2_1 / (1.0 - rho1 * rho1);
    if (!(s2_1 * s2_2 - rho2 * rho2 * s2_1 * s2_1 > 0.0)) return "stationarity (1,2)";
    if (!(s2_2 * s2_1 - rho1 * rho1 * s2_2 * s2_2 > 0.0)) return "stationarity (2,1)";
    (void)c2;
    return std::nullopt;
}

MsarParams constrain_msar(double c2, double rho1, double rho2, double sigma2_2, double p11,
                          double p22) {
    throw_if(check_msar(c2, rho1, rho2, sigma2_2, p11, p22),
             "msar(c2=" + fmt_num(c2) + ", rho1=" + fmt_num(rho1) + ", rho2=" + fmt_num(rho2) +
                 ", sigma2_2=" + fmt_num(sigma2_2) + ", p11=" + fmt_num(p11) +
                 ", p22=" + fmt_num(p22) + ")");
    MsarParams p;
    p.c2 = c2;
    p.rho1 = rho1;
    p.rho2 = rho2;
    p.sigma2_2 = sigma2_2;
    p.p11 = p11;
    p.p22 = p22;
    p.pi1 = (1.0 - p22) / (2.0 - p11 - p22);
    p.pi2 = 1.0 - p.pi1;
    p.s2_2 = sigma2_2 / (1.0 - rho2 * rho2);
    p.c1 = -p.pi2 * c2 * (1.0 - rho1) / (p.pi1 * (1.0 - rho2));
    p.sigma2_1 = (1.0 - rho1 * rho1) / p.pi1 * (1.0 - p.pi2 * p.s2_2);
    p.s2_1 = p.sigma2_1 / (1.0 - rho1 * rho1);
    p.mu1 = p.c1 / (1.0 - rho1);
    p.mu2 = c2 / (1.0 - rho2);
    return p;
}

std::optional<std::string> check_ucar(std::span<const double> partials, double sigma2_mu) {
    if (partials.empty() || partials.size() > 8) return "1 <= p <= 8";
    double prod = 1.0;
    for (std::size_t j = 0; j < partials.size(); ++j) {
        if (!std::isfinite(partials[j]) || !(std::abs(partials[j]) < 1.0))
            return "|pi_" + std::to_string(j + 1) + "| < 1";
        prod *= 1.0 - partials[j] * partials[j];
    }
    if (!std::isfinite(sigma2_mu) || !(sigma2_mu >= 0.0)) return "sigma2_mu >= 0";
    if (!(1.0 - sigma2_mu / prod > 0.0)) return "sigma2 > 0 (Var(mu) < 1)";
    return std::nullopt;
}

UcarParams constrain_ucar(std::vector<double> partials, double sigma2_mu) {
    std::string detail = "ucar(partials=[";
    for (std::size_t j = 0; j < partials.size(); ++j)
        detail += (j ? ", " : "") + fmt_num(partials[j]);
    detail += "], sigma2_mu=" + fmt_num(sigma2_mu) + ")";
    throw_if(check_ucar(partials, sigma2_mu), detail);
    UcarParams p;
    p.partials = std::move(partials);
    p.sigma2_mu = sigma2_mu;
    p.ar = durbin_levinson(p.partials);
    double prod = 1.0;
    for (double pj : p.partials) prod *= 1.0 - pj * pj;
    p.var_mu = sigma2_mu / prod;
    p.sigma2 = 1.0 - p.var_mu;
    return p;
}

SsmSpec make_spec(const SvucParams& p) { return SsmSpec{ModelKind::Svuc, p}; }
SsmSpec make_spec(const MsarParams& p) { return SsmSpec{ModelKind::Msar1, p}; }
SsmSpec make_spec(const UcarParams& p) { return SsmSpec{ModelKind::Ucar, p}; }

std::vector<double> durbin_levinson(std::span<const double> partials) {
    std::vector<double> phi;
    for (std::size_t k = 0; k < partials.size(); ++k) {
        std::vector<double> next(k + 1);
        for (std::size_t j = 0; j < k; ++j) next[j] = phi[j] - partials[k] * phi[k - 1 - j];
        next[k] = partials[k];
        phi = std::move(next);
    }
    return phi;
}

std::vector<double> ar_to_partials(std::span<const double> ar) {
    std::vector<double> phi(ar.begin(), ar.end());
    std::vector<double> partials(ar.size());
    for (std::size_t k = ar.size(); k-- > 0;) {
        const double pk = phi[k];
        partials[k] = pk;
        std::vector<double> prev(k);
        for (std::size_t j = 0; j < k; ++j) prev[j] = (phi[j] + pk * phi[k - 1 - j]) / (1.0 - pk * pk);
        phi = std::move(prev);
    }
    return partials;
}

std::vector<double> ar_autocovariance(const UcarParams& p, int maxlag) {
    // Autocorrelations from the partials by the step-up recursion, then the
    // AR(p) difference equation beyond lag p.
    const int order = p.order();
    std::vector<double> r(static_cast<std::size_t>(std::max(maxlag, order)) + 1, 0.0);
    r[0] = 1.0;
    std::vector<double> phi;
    double v = 1.0;
    for (int k = 1; k <= order; ++k) {
        double s = 0.0;
        for (int j = 1; j < k; ++j) s += phi[j - 1] * r[k - j];
        r[k] = p.partials[k - 1] * v + s;
        std::vector<double> next(k);
        for (int j = 0; j < k - 1; ++j) next[j] = phi[j] - p.partials[k - 1] * phi[k - 2 - j];
        next[k - 1] = p.partials[k - 1];
        phi = std::move(next);
        v *= 1.0 - p.partials[k - 1] * p.partials[k - 1];
    }
    for (int k = order + 1; k <= maxlag; ++k) {
        double s = 0.0;
        for (int j = 1; j <= order; ++j) s += p.ar[j - 1] * r[k - j];
        r[k] = s;
    }
    std::vector<double> gamma(static_cast<std::size_t>(maxlag) + 1);
    for (int k = 0; k <= maxlag; ++k) gamma[k] = p.var_mu * r[k];
    return gamma;
}

std::vector<double> ucar_autocovariance(const UcarParams& p, int maxlag) {
    auto a = ar_autocovariance(p, maxlag);
    a[0] = 1.0;
    return a;
}

std::vector<double> free_params(const SsmSpec& spec) {
    switch (spec.kind) {
        case ModelKind::Svuc: {
            const auto& p = spec.svuc();
            return {p.rho_mu, p.sigma2_mu, p.rho_zeta, p.sigma2_zeta};
        }
        case ModelKind::Msar1: {
            const auto& p = spec.msar();
            return {p.c2, p.rho1, p.rho2, p.sigma2_2, p.p11, p.p22};
        }
        case ModelKind::Ucar: {
            const auto& p = spec.ucar();
            std::vector<double> v = p.partials;
            v.push_back(p.sigma2_mu);
            return v;
        }
    }
    return {};
}

std::vector<std::string> free_param_names(ModelKind kind, int order) {
    switch (kind) {
        case ModelKind::Svuc: return {"rho_mu", "sigma2_mu", "rho_zeta", "sigma2_zeta"};
        case ModelKind::Msar1: return {"c2", "rho1", "rho2", "sigma2_2", "p11", "p22"};
        case ModelKind::Ucar: {
            std::vector<std::string> n;
            for (int j = 1; j <= order; ++j) n.push_back("pi" + std::to_string(j));
            n.push_back("sigma2_mu");
            return n;
        }
    }
    return {};
}

std::optional<std::string> check_free(ModelKind kind, int order, std::span<const double> v) {
    switch (kind) {
        case ModelKind::Svuc:
            if (v.size() != 4) return "dimension";
            return check_svuc(v[0], v[2], v[1], v[3]);
        case ModelKind::Msar1:
            if (v.size() != 6) return "dimension";
            return check_msar(v[0], v[1], v[2], v[3], v[4], v[5]);
        case ModelKind::Ucar:
            if (static_cast<int>(v.size()) != order + 1) return "dimension";
            return check_ucar(v.first(order), v[order]);
    }
    return "unknown model";
}

SsmSpec spec_from_free(ModelKind kind, int order, std::span<const double> v) {
    switch (kind) {
        case ModelKind::Svuc:
            if (v.size() != 4) throw std::invalid_argument("svuc expects 4 free parameters");
            return make_spec(constrain_svuc(v[0], v[2], v[1], v[3]));
        case ModelKind::Msar1:
            if (v.size() != 6) throw std::invalid_argument("msar expects 6 free parameters");
            return make_spec(constrain_msar(v[0], v[1], v[2], v[3], v[4], v[5]));
        case ModelKind::Ucar:
            if (static_cast<int>(v.size()) != order + 1)
                throw std::invalid_argument("ucar expects p + 1 free parameters");
            return make_spec(
                constrain_ucar(std::vector<double>(v.begin(), v.begin() + order), v[order]));
    }
    throw std::invalid_argument("unknown model");
}

int model_order(const SsmSpec& spec) {
    return spec.kind == ModelKind::Ucar ? spec.ucar().order() : 1;
}

LatentProcess::LatentProcess(const SsmSpec& spec) : spec_(spec) {
    if (spec.kind == ModelKind::Ucar) {
        const auto& p = spec.ucar();
        const int n = p.order();
        const auto g = ar_autocovariance(p, n);
        // Cholesky of the Toeplitz stationary covariance of (mu_t..mu_{t-p+1}).
        chol_.assign(static_cast<std::size_t>(n * n), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = g[std::abs(i - j)];
                for (int k = 0; k < j; ++k) s -= chol_[i * n + k] * chol_[j * n + k];
                if (i == j) {
                    chol_[i * n + i] = s > 0.0 ? std::sqrt(s) : 0.0;
                } else {
                    chol_[i * n + j] = chol_[j * n + j] > 0.0 ? s / chol_[j * n + j] : 0.0;
                }
            }
        }
        mu_.assign(n, 0.0);
    } else if (spec.kind == ModelKind::Svuc) {
        mu_.assign(1, 0.0);
    }
}

double LatentProcess::start(Rng& rng) {
    switch (spec_.kind) {
        case ModelKind::Svuc: {
            const auto& p = spec_.svuc();
            mu_[0] = std::sqrt(p.s2_mu) * normal_(rng);
            zeta_ = p.zeta_bar + std::sqrt(p.s2_zeta) * normal_(rng);
            z_ = mu_[0] + std::exp(0.5 * zeta_) * normal_(rng);
            return z_;
        }
        case ModelKind::Msar1: {
            const auto& p = spec_.msar();
            regime_ = unif_(rng) < p.pi1 ? 0 : 1;
            z_ = p.mu(regime_) + std::sqrt(p.s2(regime_)) * normal_(rng);
            return z_;
        }
        case ModelKind::Ucar: {
            const auto& p = spec_.ucar();
            const int n = p.order();
            std::vector<double> e(n);
            for (auto& x : e) x = normal_(rng);
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int k = 0; k <= i; ++k) s += chol_[i * n + k] * e[k];
                mu_[i] = s;
            }
            z_ = mu_[0] + std::sqrt(p.sigma2) * normal_(rng);
            return z_;
        }
    }
    return 0.0;
}

double LatentProcess::next(Rng& rng) {
    switch (spec_.kind) {
        case ModelKind::Svuc: {
            const auto& p = spec_.svuc();
            mu_[0] = p.rho_mu * mu_[0] + std::sqrt(p.sigma2_mu) * normal_(rng);
            zeta_ = p.zeta_bar + p.rho_zeta * (zeta_ - p.zeta_bar) +
                    std::sqrt(p.sigma2_zeta) * normal_(rng);
            z_ = mu_[0] + std::exp(0.5 * zeta_) * normal_(rng);
            return z_;
        }
        case ModelKind::Msar1: {
            const auto& p = spec_.msar();
            const int prev = regime_;
            const double stay = prev == 0 ? p.p11 : p.p22;
            regime_ = unif_(rng) < stay ? prev : 1 - prev;
            z_ = p.cond_mean(prev, regime_, z_) + std::sqrt(p.cond_var(prev, regime_)) * normal_(rng);
            return z_;
        }
        case ModelKind::Ucar: {
            const auto& p = spec_.ucar();
            const int n = p.order();
            double m = std::sqrt(p.sigma2_mu) * normal_(rng);
            for (int j = 0; j < n; ++j) m += p.ar[j] * mu_[j];
            for (int j = n - 1; j > 0; --j) mu_[j] = mu_[j - 1];
            mu_[0] = m;
            z_ = m + std::sqrt(p.sigma2) * normal_(rng);
            return z_;
        }
    }
    return 0.0;
}

void LatentProcess::set_state(std::span<const double> lags, double zeta, int regime, double z) {
    for (std::size_t i = 0; i < mu_.size() && i < lags.size(); ++i) mu_[i] = lags[i];
    zeta_ = zeta;
    regime_ = regime;
    z_ = z;
}

SimulatedPath simulate(const SsmSpec& spec, std::size_t T, std::uint64_t seed) {
    if (T < 1) throw std::invalid_argument("simulate: T must be >= 1");
    Rng rng(seed);
    LatentProcess proc(spec);
    SimulatedPath out;
    out.z.resize(T);
    const bool has_mu = spec.kind != ModelKind::Msar1;
    if (has_mu) out.states.mu.resize(T);
    if (spec.kind == ModelKind::Svuc) out.states.zeta.resize(T);
    if (spec.kind == ModelKind::Msar1) out.states.regime.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        out.z[t] = t == 0 ? proc.start(rng) : proc.next(rng);
        if (has_mu) out.states.mu[t] = proc.mu();
        if (spec.kind == ModelKind::Svuc) out.states.zeta[t] = proc.zeta();
        if (spec.kind == ModelKind::Msar1) out.states.regime[t] = proc.regime();
    }
    return out;
}

nlohmann::json spec_to_json(const SsmSpec& spec) {
    nlohmann::json j;
    j["model"] = to_string(spec.kind);
    switch (spec.kind) {
        case ModelKind::Svuc: {
            const auto& p = spec.svuc();
            j["rho_mu"] = p.rho_mu;
            j["rho_zeta"] = p.rho_zeta;
            j["sigma2_mu"] = p.sigma2_mu;
            j["sigma2_zeta"] = p.sigma2_zeta;
            break;
        }
        case ModelKind::Msar1: {
            const auto& p = spec.msar();
            j["c2"] = p.c2;
            j["rho1"] = p.rho1;
            j["rho2"] = p.rho2;
            j["sigma2_2"] = p.sigma2_2;
            j["p11"] = p.p11;
            j["p22"] = p.p22;
            break;
        }
        case ModelKind::Ucar: {
            const auto& p = spec.ucar();
            j["partials"] = p.partials;
            j["sigma2_mu"] = p.sigma2_mu;
            break;
        }
    }
    return j;
}

SsmSpec spec_from_json(const nlohmann::json& j) {
    const ModelKind kind = model_kind_from_string(j.at("model").get<std::string>());
    switch (kind) {
        case ModelKind::Svuc:
            return make_spec(constrain_svuc(j.at("rho_mu"), j.at("rho_zeta"), j.at("sigma2_mu"),
                                            j.at("sigma2_zeta")));
        case ModelKind::Msar1:
            return make_spec(constrain_msar(j.at("c2"), j.at("rho1"), j.at("rho2"),
                                            j.at("sigma2_2"), j.at("p11"), j.at("p22")));
        case ModelKind::Ucar:
            return make_spec(
                constrain_ucar(j.at("partials").get<std::vector<double>>(), j.at("sigma2_mu")));
    }
    throw std::invalid_argument("unknown model");
}

}  // namespace invcop
