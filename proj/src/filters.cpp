#include "invcop/filters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <unsupported/Eigen/KroneckerProduct>

#include "invcop/error.hpp"

namespace invcop {

namespace {

void check_finite(std::span<const double> z, const char* who) {
    for (double v : z)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}

// Companion-form stationary covariance: P = T P T' + Q with Q = s2 e1 e1'.
Eigen::MatrixXd stationary_cov(std::span<const double> ar, double sigma2) {
    const int p = static_cast<int>(ar.size());
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(p, p);
    for (int j = 0; j < p; ++j) T(0, j) = ar[j];
    for (int i = 1; i < p; ++i) T(i, i - 1) = 1.0;
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(p, p);
    Q(0, 0) = sigma2;
    const Eigen::MatrixXd K =
        Eigen::MatrixXd::Identity(p * p, p * p) - Eigen::kroneckerProduct(T, T).eval();
    Eigen::VectorXd vecP = K.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(Q.data(), p * p));
    Eigen::MatrixXd P = Eigen::Map<Eigen::MatrixXd>(vecP.data(), p, p);
    return 0.5 * (P + P.transpose());
}

}  // namespace

// ------------------------------------------------------------------ Kalman

FilterOutput kalman_ar_plus_noise(std::span<const double> z, std::span<const double> ar,
                                  double sigma2_mu, double obs_var) {
    check_finite(z, "kalman filter");
    if (ar.empty()) throw std::invalid_argument("kalman filter: AR order must be >= 1");
    if (!(obs_var > 0.0)) throw std::invalid_argument("kalman filter: observation variance must be > 0");
    const int p = static_cast<int>(ar.size());
    const std::size_t n = z.size();
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(p, p);
    for (int j = 0; j < p; ++j) T(0, j) = ar[j];
    for (int i = 1; i < p; ++i) T(i, i - 1) = 1.0;

    Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd P = stationary_cov(ar, sigma2_mu);
    FilterOutput out;
    out.increments.resize(n);
    out.state_mean.resize(n);
    out.state_var.resize(n);
    out.pred_mean.resize(n);
    out.pred_var.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double F = P(0, 0) + obs_var;
        const double v = z[t] - a(0);
        out.pred_mean[t] = a(0);
        out.pred_var[t] = F;
        out.increments[t] = -kLogSqrt2Pi - 0.5 * std::log(F) - 0.5 * v * v / F;
        const Eigen::VectorXd K = P.col(0) / F;
        a += K * v;
        P -= K * K.transpose() * F;
        out.state_mean[t] = a(0);
        out.state_var[t] = P(0, 0);
        if (t + 1 == n) {
            out.final_mean = a;
            out.final_cov = P;
        }
        a = T * a;
        P = T * P * T.transpose();
        P(0, 0) += sigma2_mu;
    }
    for (double v : out.increments) out.loglik += v;
    return out;
}

FilterOutput kalman_loglik(std::span<const double> z, const UcarParams& p) {
    return kalman_ar_plus_noise(z, p.ar, p.sigma2_mu, p.sigma2);
}

// ------------------------------------------------------------------ banded

Eigen::MatrixXd BandedMatrix::dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 0; i < n_; ++i)
        for (int j = std::max(0, i - w_); j <= i; ++j) m(i, j) = m(j, i) = (*this)(i, j);
    return m;
}

void band_cholesky(BandedMatrix& q) {
    const int n = q.size(), w = q.bandwidth();
    for (int j = 0; j < n; ++j) {
        double d = q(j, j);
        for (int k = std::max(0, j - w); k < j; ++k) d -= q(j, k) * q(j, k);
        if (!(d > 0.0)) throw NumericalError("banded precision is not positive definite");
        d = std::sqrt(d);
        q(j, j) = d;
        for (int i = j + 1; i <= std::min(n - 1, j + w); ++i) {
            double s = q(i, j);
            for (int k = std::max(0, i - w); k < j; ++k) s -= q(i, k) * q(j, k);
            q(i, j) = s / d;
        }
    }
}

void band_forward(const BandedMatrix& l, std::span<double> b) {
    const int n = l.size(), w = l.bandwidth();
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = std::max(0, i - w); k < i; ++k) s -= l(i, k) * b[k];
        b[i] = s / l(i, i);
    }
}

void band_backward(const BandedMatrix& l, std::span<double> b) {
    const int n = l.size(), w = l.bandwidth();
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k <= std::min(n - 1, i + w); ++k) s -= l(k, i) * b[k];
        b[i] = s / l(i, i);
    }
}

std::vector<double> band_solve(const BandedMatrix& l, std::span<const double> b) {
    std::vector<double> x(b.begin(), b.end());
    band_forward(l, x);
    band_backward(l, x);
    return x;
}

std::vector<double> sample_gaussian_states_banded(BandedMatrix q, std::span<const double> b, Rng& rng) {
    if (static_cast<int>(b.size()) != q.size())
        throw std::invalid_argument("banded sampler: dimension mismatch");
    band_cholesky(q);
    auto mean = band_solve(q, b);
    std::normal_distribution<double> nd;
    std::vector<double> e(b.size());
    for (auto& v : e) v = nd(rng);
    band_backward(q, e);  // L' x = e gives x ~ N(0, Q^{-1})
    for (std::size_t i = 0; i < e.size(); ++i) mean[i] += e[i];
    return mean;
}

BandedMatrix ar_prior_precision(int n, std::span<const double> ar, double sigma2) {
    if (!(sigma2 > 0.0)) throw NumericalError("AR prior precision: innovation variance must be > 0");
    const int p = static_cast<int>(ar.size());
    const int head = std::min(p, n);
    BandedMatrix q(n, std::min(p, n - 1));
    // Stationary law of the first `head` states.
    const Eigen::MatrixXd G = stationary_cov(ar, sigma2).topLeftCorner(head, head);
    const Eigen::MatrixXd Gi = G.llt().solve(Eigen::MatrixXd::Identity(head, head));
    for (int i = 0; i < head; ++i)
        for (int j = 0; j <= i; ++j) q(i, j) += Gi(i, j);
    // Conditional rows mu_t - sum_j a_j mu_{t-j} for t >= p.
    std::vector<double> h(p + 1);
    for (int t = p; t < n; ++t) {
        h[0] = 1.0;
        for (int j = 1; j <= p; ++j) h[j] = -ar[j - 1];
        for (int a = 0; a <= p; ++a)
            for (int c = a; c <= p; ++c) q(t - a, t - c) += h[a] * h[c] / sigma2;
    }
    return q;
}

std::vector<double> sample_ucar_states(std::span<const double> z, const UcarParams& p, Rng& rng) {
    const int n = static_cast<int>(z.size());
    auto q = ar_prior_precision(n, p.ar, p.sigma2_mu);
    std::vector<double> b(z.size());
    for (int t = 0; t < n; ++t) {
        q(t, t) += 1.0 / p.sigma2;
        b[t] = z[t] / p.sigma2;
    }
    return sample_gaussian_states_banded(std::move(q), b, rng);
}

std::vector<double> sample_svuc_levels(std::span<const double> z, std::span<const double> zeta,
                                       const SvucParams& p, Rng& rng) {
    const int n = static_cast<int>(z.size());
    if (zeta.size() != z.size()) throw std::invalid_argument("svuc level sampler: dimension mismatch");
    if (p.sigma2_mu <= 0.0) return std::vector<double>(z.size(), 0.0);
    const double ar[1] = {p.rho_mu};
    auto q = ar_prior_precision(n, ar, p.sigma2_mu);
    std::vector<double> b(z.size());
    for (int t = 0; t < n; ++t) {
        const double prec = std::exp(-zeta[t]);
        q(t, t) += prec;
        b[t] = z[t] * prec;
    }
    return sample_gaussian_states_banded(std::move(q), b, rng);
}

// ------------------------------------------------------------------ SV mixture

const KscMixture& ksc_mixture() {
    static const KscMixture m = [] {
        KscMixture k{{0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750},
                     {-10.12999, -3.97281, -8.56686, 2.77786, 0.61942, 1.79518, -1.08819},
                     {5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261}};
        for (auto& v : k.mean) v -= 1.2704;
        return k;
    }();
    return m;
}

std::vector<double> sample_sv_logvols(std::span<const double> resid, std::span<const double> zeta,
                                      double rho_zeta, double sigma2_zeta, double zeta_bar, Rng& rng) {
    check_finite(resid, "sv sampler");
    const int n = static_cast<int>(resid.size());
    if (static_cast<int>(zeta.size()) != n) throw std::invalid_argument("sv sampler: dimension mismatch");
    if (sigma2_zeta <= 0.0) return std::vector<double>(resid.size(), zeta_bar);
    const auto& mix = ksc_mixture();
    std::uniform_real_distribution<double> unif;
    std::vector<double> ystar(n), off(n), prec(n);
    std::array<double, 7> lw;
    for (int t = 0; t < n; ++t) {
        ystar[t] = std::log(resid[t] * resid[t] + kSvOffset);
        for (int k = 0; k < 7; ++k)
            lw[k] = std::log(mix.prob[k]) + norm_logpdf(ystar[t], zeta[t] + mix.mean[k], mix.var[k]);
        const double tot = log_sum_exp(lw);
        double u = unif(rng), acc = 0.0;
        int k = 0;
        for (; k < 6; ++k) {
            acc += std::exp(lw[k] - tot);
            if (u < acc) break;
        }
        off[t] = mix.mean[k];
        prec[t] = 1.0 / mix.var[k];
    }
    const double ar[1] = {rho_zeta};
    auto q = ar_prior_precision(n, ar, sigma2_zeta);
    // Prior mean zeta_bar enters b through Q_prior * (zeta_bar, ..., zeta_bar).
    std::vector<double> b(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = std::max(0, i - q.bandwidth()); j <= i; ++j) {
            b[i] += q(i, j) * zeta_bar;
            if (j != i) b[j] += q(i, j) * zeta_bar;
        }
    for (int t = 0; t < n; ++t) {
        q(t, t) += prec[t];
        b[t] += (ystar[t] - off[t]) * prec[t];
    }
    return sample_gaussian_states_banded(std::move(q), b, rng);
}

// ------------------------------------------------------------------ Hamilton

FilterOutput hamilton_filter(std::span<const double> z, const MsarParams& p) {
    check_finite(z, "hamilton filter");
    const std::size_t n = z.size();
    FilterOutput out;
    out.increments.resize(n);
    out.log_prob.resize(n);
    std::array<double, 2> lp;
    for (int j = 0; j < 2; ++j) lp[j] = std::log(p.pi(j)) + norm_logpdf(z[0], p.mu(j), p.s2(j));
    for (std::size_t t = 0; t < n; ++t) {
        if (t > 0) {
            const auto prev = out.log_prob[t - 1];
            for (int j = 0; j < 2; ++j) {
                double acc = -INFINITY;
                for (int i = 0; i < 2; ++i) {
                    const double tr = p.trans(i, j);
                    if (tr <= 0.0) continue;
                    acc = log_add_exp(acc, prev[i] + std::log(tr) +
                                               norm_logpdf(z[t], p.cond_mean(i, j, z[t - 1]), p.cond_var(i, j)));
                }
                lp[j] = acc;
            }
        }
        const double tot = log_add_exp(lp[0], lp[1]);
        if (!std::isfinite(tot)) throw NumericalError("hamilton filter: zero likelihood");
        out.increments[t] = tot;
        out.log_prob[t] = {lp[0] - tot, lp[1] - tot};
        out.loglik += tot;
    }
    return out;
}

std::vector<int> ffbs_regimes(const FilterOutput& filt, std::span<const double> z, const MsarParams& p,
                              Rng& rng) {
    const std::size_t n = z.size();
    if (filt.log_prob.size() != n) throw std::invalid_argument("ffbs: filter output does not match z");
    std::uniform_real_distribution<double> unif;
    std::vector<int> s(n);
    s[n - 1] = unif(rng) < std::exp(filt.log_prob[n - 1][0]) ? 0 : 1;
    for (std::size_t t = n - 1; t-- > 0;) {
        const int j = s[t + 1];
        std::array<double, 2> lw;
        for (int i = 0; i < 2; ++i) {
            const double tr = p.trans(i, j);
            lw[i] = tr <= 0.0 ? -INFINITY
                              : filt.log_prob[t][i] + std::log(tr) +
                                    norm_logpdf(z[t + 1], p.cond_mean(i, j, z[t]), p.cond_var(i, j));
        }
        const double p0 = std::exp(lw[0] - log_add_exp(lw[0], lw[1]));
        s[t] = unif(rng) < p0 ? 0 : 1;
    }
    return s;
}

// ------------------------------------------------------------------ particle filters

std::vector<int> systematic_resample(std::span<const double> weights, double u0) {
    const int n = static_cast<int>(weights.size());
    std::vector<int> idx(n);
    double cum = weights[0];
    int j = 0;
    for (int k = 0; k < n; ++k) {
        const double u = (u0 + k) / n;
        while (u > cum && j < n - 1) cum += weights[++j];
        idx[k] = j;
    }
    return idx;
}

namespace {

// Normalizes log weights in place, returns log mean weight.
double normalize_log_weights(std::vector<double>& lw, std::vector<double>& w) {
    const double tot = log_sum_exp(lw);
    if (!std::isfinite(tot)) throw NumericalError("particle filter degeneracy: all weights zero");
    w.resize(lw.size());
    for (std::size_t i = 0; i < lw.size(); ++i) {
        lw[i] -= tot;
        w[i] = std::exp(lw[i]);
    }
    return tot - std::log(static_cast<double>(lw.size()));
}

template <class V>
void reorder(V& v, const std::vector<int>& idx, V& scratch) {
    scratch.resize(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) scratch[i] = v[idx[i]];
    std::swap(v, scratch);
}

}  // namespace

FilterOutput bootstrap_pf_loglik(std::span<const double> z, const SvucParams& p, int n_particles,
                                 std::uint64_t seed, const PfObserver& observe) {
    check_finite(z, "particle filter");
    if (n_particles < 100) throw std::invalid_argument("particle filter: need at least 100 particles");
    const std::size_t T = z.size();
    const std::size_t N = static_cast<std::size_t>(n_particles);
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> unif;

    std::vector<double> zeta(N), m(N, 0.0), P(N, p.s2_mu), lw(N), w, scratch;
    std::vector<int> order(N);
    const double sz = std::sqrt(p.s2_zeta), se = std::sqrt(p.sigma2_zeta);
    for (auto& v : zeta) v = p.zeta_bar + sz * nd(rng);

    FilterOutput out;
    out.increments.resize(T);
    out.state_mean.resize(T);
    out.state_var.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        if (t > 0) {
            for (std::size_t i = 0; i < N; ++i) {
                zeta[i] = p.zeta_bar + p.rho_zeta * (zeta[i] - p.zeta_bar) + se * nd(rng);
                m[i] *= p.rho_mu;
                P[i] = p.rho_mu * p.rho_mu * P[i] + p.sigma2_mu;
            }
        }
        if (observe) observe(t, PfParticles{zeta, m, P, {}});
        for (std::size_t i = 0; i < N; ++i) {
            const double F = P[i] + std::exp(zeta[i]);
            lw[i] = norm_logpdf(z[t], m[i], F);
            const double K = P[i] / F;
            m[i] += K * (z[t] - m[i]);
            P[i] *= 1.0 - K;
        }
        out.increments[t] = normalize_log_weights(lw, w);
        out.loglik += out.increments[t];
        double em = 0.0, e2 = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            em += w[i] * zeta[i];
            e2 += w[i] * zeta[i] * zeta[i];
        }
        out.state_mean[t] = em;
        out.state_var[t] = std::max(0.0, e2 - em * em);
        if (t + 1 == T) {
            out.final_particles = {zeta, m, P, lw};
            break;
        }
        // Sorting by log-volatility before systematic resampling keeps the
        // fixed-seed likelihood nearly continuous in the parameters.
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return zeta[a] < zeta[b]; });
        reorder(zeta, order, scratch);
        reorder(m, order, scratch);
        reorder(P, order, scratch);
        reorder(w, order, scratch);
        const auto idx = systematic_resample(w, unif(rng));
        reorder(zeta, idx, scratch);
        reorder(m, idx, scratch);
        reorder(P, idx, scratch);
    }
    return out;
}

FilterOutput bootstrap_pf_generic(std::span<const double> z, const SsmSpec& spec, int n_particles,
                                  std::uint64_t seed) {
    check_finite(z, "particle filter");
    if (n_particles < 100) throw std::invalid_argument("particle filter: need at least 100 particles");
    const std::size_t T = z.size();
    const std::size_t N = static_cast<std::size_t>(n_particles);
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> unif;

    // State: lags[i*d .. i*d+d) (UCAR lag vector or SVUC level), zeta, regime.
    int d = 0;
    Eigen::MatrixXd chol;
    if (spec.kind == ModelKind::Ucar) {
        d = spec.ucar().order();
        const Eigen::MatrixXd G = stationary_cov(spec.ucar().ar, spec.ucar().sigma2_mu);
        chol = G.llt().matrixL();
        if (spec.ucar().sigma2_mu <= 0.0) chol = Eigen::MatrixXd::Zero(d, d);
    } else if (spec.kind == ModelKind::Svuc) {
        d = 1;
    }
    std::vector<double> lags(N * d, 0.0), zeta(N, 0.0), lw(N), w;
    std::vector<int> reg(N, 0);

    FilterOutput out;
    out.increments.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < N; ++i) {
            double* L = lags.data() + i * d;
            switch (spec.kind) {
                case ModelKind::Ucar: {
                    const auto& p = spec.ucar();
                    if (t == 0) {
                        Eigen::VectorXd e(d);
                        for (int k = 0; k < d; ++k) e(k) = nd(rng);
                        const Eigen::VectorXd x = chol * e;
                        for (int k = 0; k < d; ++k) L[k] = x(k);
                    } else {
                        double v = std::sqrt(p.sigma2_mu) * nd(rng);
                        for (int k = 0; k < d; ++k) v += p.ar[k] * L[k];
                        for (int k = d - 1; k > 0; --k) L[k] = L[k - 1];
                        L[0] = v;
                    }
                    lw[i] = norm_logpdf(z[t], L[0], p.sigma2);
                    break;
                }
                case ModelKind::Svuc: {
                    const auto& p = spec.svuc();
                    if (t == 0) {
                        L[0] = std::sqrt(p.s2_mu) * nd(rng);
                        zeta[i] = p.zeta_bar + std::sqrt(p.s2_zeta) * nd(rng);
                    } else {
                        L[0] = p.rho_mu * L[0] + std::sqrt(p.sigma2_mu) * nd(rng);
                        zeta[i] = p.zeta_bar + p.rho_zeta * (zeta[i] - p.zeta_bar) +
                                  std::sqrt(p.sigma2_zeta) * nd(rng);
                    }
                    lw[i] = norm_logpdf(z[t], L[0], std::exp(zeta[i]));
                    break;
                }
                case ModelKind::Msar1: {
                    const auto& p = spec.msar();
                    if (t == 0) {
                        reg[i] = unif(rng) < p.pi1 ? 0 : 1;
                        lw[i] = norm_logpdf(z[0], p.mu(reg[i]), p.s2(reg[i]));
                    } else {
                        const int prev = reg[i];
                        reg[i] = unif(rng) < p.trans(prev, prev) ? prev : 1 - prev;
                        lw[i] = norm_logpdf(z[t], p.cond_mean(prev, reg[i], z[t - 1]), p.cond_var(prev, reg[i]));
                    }
                    break;
                }
            }
        }
        out.increments[t] = normalize_log_weights(lw, w);
        out.loglik += out.increments[t];
        if (t + 1 == T) break;
        const auto idx = systematic_resample(w, unif(rng));
        std::vector<double> nl(N * d), nz(N);
        std::vector<int> nr(N);
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t s = static_cast<std::size_t>(idx[i]);
            for (int k = 0; k < d; ++k) nl[i * d + k] = lags[s * d + k];
            nz[i] = zeta[s];
            nr[i] = reg[s];
        }
        lags.swap(nl);
        zeta.swap(nz);
        reg.swap(nr);
    }
    return out;
}

}  // namespace invcop
