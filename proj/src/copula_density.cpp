#include "invcop/copula_density.hpp"

#include <cmath>
#include <stdexcept>

#include "invcop/error.hpp"
#include "invcop/filters.hpp"

namespace invcop {

namespace {

// log N2((x1, x2); 0, [[a, b], [b, c]]).
double bvn_logpdf(double x1, double x2, double a, double b, double c) {
    const double det = a * c - b * b;
    const double q = (c * x1 * x1 - 2.0 * b * x1 * x2 + a * x2 * x2) / det;
    return -2.0 * kLogSqrt2Pi - 0.5 * std::log(det) - 0.5 * q;
}

void require_size(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw std::invalid_argument(std::string("dimension mismatch: ") + what + " has " +
                                    std::to_string(got) + " entries, expected " +
                                    std::to_string(want));
}

double margin_sum(std::span<const double> z, const LatentMarginTable& table) {
    double s = 0.0;
    for (double v : z) s += table.logpdf(v);
    return s;
}

double svuc_pair_logdensity(double z1, double z2, const SvucParams& p, int nodes) {
    const double a = p.s2_mu, b = p.s2_mu * p.rho_mu;
    const double s = std::sqrt(p.s2_zeta);
    if (s == 0.0) {
        const double v = std::exp(p.zeta_bar);
        return bvn_logpdf(z1, z2, a + v, b, a + v);
    }
    const double r = p.rho_zeta, sc = s * std::sqrt(1.0 - r * r);
    const auto& gl = gauss_legendre(nodes);
    constexpr double kHalfWidth = 6.0;
    // Standardized log-volatilities x1, x2 ~ N(0, 1) on [-6, 6]^2, with
    // zeta_1 = zbar + s x1 and zeta_2 | zeta_1 from the AR(1) transition.
    double acc = -INFINITY;
    for (int i = 0; i < nodes; ++i) {
        const double x1 = kHalfWidth * gl.nodes[i];
        const double lw1 = std::log(kHalfWidth * gl.weights[i]) + norm_logpdf(x1);
        const double zeta1 = p.zeta_bar + s * x1;
        const double v1 = std::exp(zeta1);
        for (int j = 0; j < nodes; ++j) {
            const double x2 = kHalfWidth * gl.nodes[j];
            const double lw2 = std::log(kHalfWidth * gl.weights[j]) + norm_logpdf(x2);
            const double zeta2 = p.zeta_bar + r * (zeta1 - p.zeta_bar) + sc * x2;
            acc = log_add_exp(acc, lw1 + lw2 + bvn_logpdf(z1, z2, a + v1, b, a + std::exp(zeta2)));
        }
    }
    return acc;
}

double msar_pair_logdensity(double z1, double z2, const MsarParams& p) {
    double acc = -INFINITY;
    for (int i = 0; i < 2; ++i) {
        if (p.pi(i) <= 0.0) continue;
        for (int j = 0; j < 2; ++j) {
            const double w = p.pi(i) * p.trans(i, j);
            if (w <= 0.0) continue;
            const double si = p.s2(i);
            acc = log_add_exp(acc, std::log(w) + bvn_logpdf(z1 - p.mu(i), z2 - p.mu(j), si,
                                                            p.rho(j) * si, p.s2(j)));
        }
    }
    return acc;
}

double pair_logdensity(double z1, double z2, const SsmSpec& spec, int nodes) {
    switch (spec.kind) {
        case ModelKind::Svuc: return svuc_pair_logdensity(z1, z2, spec.svuc(), nodes);
        case ModelKind::Msar1: return msar_pair_logdensity(z1, z2, spec.msar());
        case ModelKind::Ucar: {
            const double r = ucar_autocovariance(spec.ucar(), 1)[1];
            return bvn_logpdf(z1, z2, 1.0, r, 1.0);
        }
    }
    throw std::logic_error("unknown model kind");
}

}  // namespace

CopulaData make_copula_data(std::vector<double> u, std::vector<std::string> timestamps) {
    if (u.size() < 2) throw std::invalid_argument("copula data needs at least two values");
    for (std::size_t t = 0; t < u.size(); ++t)
        if (!(u[t] > 0.0 && u[t] < 1.0))
            throw std::invalid_argument("copula value at index " + std::to_string(t) +
                                        " is not strictly inside (0, 1)");
    if (!timestamps.empty()) require_size(timestamps.size(), u.size(), "timestamps");
    return {std::move(u), std::move(timestamps)};
}

std::vector<double> to_latent(std::span<const double> u, const LatentMarginTable& table) {
    std::vector<double> z(u.size());
    for (std::size_t t = 0; t < u.size(); ++t) z[t] = table.quantile(u[t]);
    return z;
}

double conditional_state_loglik(std::span<const double> z, const LatentStates& states,
                                const SsmSpec& spec) {
    const std::size_t T = z.size();
    double l = 0.0;
    switch (spec.kind) {
        case ModelKind::Svuc: {
            require_size(states.mu.size(), T, "mu");
            require_size(states.zeta.size(), T, "zeta");
            for (std::size_t t = 0; t < T; ++t)
                l += norm_logpdf(z[t], states.mu[t], std::exp(states.zeta[t]));
            break;
        }
        case ModelKind::Msar1: {
            require_size(states.regime.size(), T, "regime");
            const auto& p = spec.msar();
            const auto& s = states.regime;
            if (T > 0) l += norm_logpdf(z[0], p.mu(s[0]), p.s2(s[0]));
            for (std::size_t t = 1; t < T; ++t)
                l += norm_logpdf(z[t], p.cond_mean(s[t - 1], s[t], z[t - 1]), p.cond_var(s[t - 1], s[t]));
            break;
        }
        case ModelKind::Ucar: {
            require_size(states.mu.size(), T, "mu");
            const double v = spec.ucar().sigma2;
            for (std::size_t t = 0; t < T; ++t) l += norm_logpdf(z[t], states.mu[t], v);
            break;
        }
    }
    return l;
}

double conditional_loglike_latent(std::span<const double> z, const LatentStates& states,
                                  const SsmSpec& spec, const LatentMarginTable& table) {
    return conditional_state_loglik(z, states, spec) - margin_sum(z, table);
}

double conditional_loglike(std::span<const double> u, const LatentStates& states,
                           const SsmSpec& spec, const LatentMarginTable& table) {
    return conditional_loglike_latent(to_latent(u, table), states, spec, table);
}

double log_copula_density(std::span<const double> u, const SsmSpec& spec,
                          const LatentMarginTable& table, const ParticleSettings& pf) {
    const auto z = to_latent(u, table);
    double ll = 0.0;
    switch (spec.kind) {
        case ModelKind::Ucar: ll = kalman_loglik(z, spec.ucar()).loglik; break;
        case ModelKind::Msar1: ll = hamilton_filter(z, spec.msar()).loglik; break;
        case ModelKind::Svuc: ll = bootstrap_pf_loglik(z, spec.svuc(), pf.particles, pf.seed).loglik; break;
    }
    return ll - margin_sum(z, table);
}

double log_copula_density_pf(std::span<const double> u, const SsmSpec& spec,
                             const LatentMarginTable& table, const ParticleSettings& pf) {
    const auto z = to_latent(u, table);
    return bootstrap_pf_generic(z, spec, pf.particles, pf.seed).loglik - margin_sum(z, table);
}

std::vector<BvnComponent> latent_pair_mixture(const SsmSpec& spec, int nodes) {
    std::vector<BvnComponent> out;
    switch (spec.kind) {
        case ModelKind::Ucar: {
            const double r = ucar_autocovariance(spec.ucar(), 1)[1];
            out.push_back({1.0, 0.0, 0.0, 1.0, r, 1.0});
            break;
        }
        case ModelKind::Msar1: {
            const auto& p = spec.msar();
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    const double w = p.pi(i) * p.trans(i, j);
                    if (w > 0.0) out.push_back({w, p.mu(i), p.mu(j), p.s2(i), p.rho(j) * p.s2(i), p.s2(j)});
                }
            break;
        }
        case ModelKind::Svuc: {
            const auto& p = spec.svuc();
            const double a = p.s2_mu, b = p.s2_mu * p.rho_mu;
            const double s = std::sqrt(p.s2_zeta);
            if (s == 0.0) {
                const double v = std::exp(p.zeta_bar);
                out.push_back({1.0, 0.0, 0.0, a + v, b, a + v});
                break;
            }
            const double r = p.rho_zeta, sc = s * std::sqrt(1.0 - r * r);
            const auto& gl = gauss_legendre(nodes);
            constexpr double kHalfWidth = 6.0;
            for (int i = 0; i < nodes; ++i) {
                const double x1 = kHalfWidth * gl.nodes[i];
                const double w1 = kHalfWidth * gl.weights[i] * norm_pdf(x1);
                const double zeta1 = p.zeta_bar + s * x1;
                for (int j = 0; j < nodes; ++j) {
                    const double x2 = kHalfWidth * gl.nodes[j];
                    const double w2 = kHalfWidth * gl.weights[j] * norm_pdf(x2);
                    const double zeta2 = p.zeta_bar + r * (zeta1 - p.zeta_bar) + sc * x2;
                    out.push_back({w1 * w2, 0.0, 0.0, a + std::exp(zeta1), b, a + std::exp(zeta2)});
                }
            }
            break;
        }
    }
    return out;
}

double latent_pair_density(double z1, double z2, const SsmSpec& spec, int nodes) {
    return std::exp(pair_logdensity(z1, z2, spec, nodes));
}

double bivariate_copula_density(double u1, double u2, const SsmSpec& spec,
                                const LatentMarginTable& table) {
    const double z1 = table.quantile(u1), z2 = table.quantile(u2);
    const double l = pair_logdensity(z1, z2, spec, kSvucPairNodes) - table.logpdf(z1) - table.logpdf(z2);
    if (!std::isfinite(l)) throw NumericalError("bivariate copula density is not finite");
    return std::exp(l);
}

double markov_factorized_logdensity(std::span<const double> u, const SsmSpec& spec,
                                    const LatentMarginTable& table) {
    if (spec.kind == ModelKind::Ucar && spec.ucar().order() > 1)
        throw std::invalid_argument("markov factorization needs order 1, got UCAR(" +
                                    std::to_string(spec.ucar().order()) + ")");
    const auto z = to_latent(u, table);
    std::vector<double> lm(z.size());
    for (std::size_t t = 0; t < z.size(); ++t) lm[t] = table.logpdf(z[t]);
    double l = 0.0;
    for (std::size_t t = 1; t < z.size(); ++t)
        l += pair_logdensity(z[t - 1], z[t], spec, kSvucPairNodes) - lm[t - 1] - lm[t];
    return l;
}

}  // namespace invcop
