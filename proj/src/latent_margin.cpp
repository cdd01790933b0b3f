#include "invcop/latent_margin.hpp"

#include <cmath>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "invcop/error.hpp"

namespace invcop {

namespace {

constexpr double kZetaHalfWidth = 8.0;  // integrate over zeta_bar +- 8 s_zeta
constexpr double kQuadTol = 1e-11;

template <class F>
double integrate_zeta(F&& f, const char* what, double z) {
    double err = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        f, -kZetaHalfWidth, kZetaHalfWidth, 12, kQuadTol, &err);
    if (!std::isfinite(v) || err > 1e-7 * std::abs(v) + 1e-300) {
        std::ostringstream os;
        os << what << ": quadrature did not converge at z=" << z << " (value " << v
           << ", error estimate " << err << ")";
        throw NumericalError(os.str());
    }
    return v;
}

double svuc_pdf(const SvucParams& p, double z) {
    const double sz = std::sqrt(p.s2_zeta);
    if (sz < 1e-12) return std::exp(norm_logpdf(z, 0.0, p.s2_mu + std::exp(p.zeta_bar)));
    auto f = [&](double x) {
        const double w2 = p.s2_mu + std::exp(p.zeta_bar + sz * x);
        return norm_pdf(x) * std::exp(norm_logpdf(z, 0.0, w2));
    };
    return integrate_zeta(f, "svuc latent pdf", z);
}

// Lower tail probability P(Z <= z) for z <= 0 (upper tail by symmetry).
double svuc_lower_cdf(const SvucParams& p, double z) {
    const double sz = std::sqrt(p.s2_zeta);
    if (sz < 1e-12) return norm_cdf(z / std::sqrt(p.s2_mu + std::exp(p.zeta_bar)));
    auto f = [&](double x) {
        const double w = std::sqrt(p.s2_mu + std::exp(p.zeta_bar + sz * x));
        return norm_pdf(x) * norm_cdf(z / w);
    };
    return integrate_zeta(f, "svuc latent cdf", z);
}

double msar_pdf(const MsarParams& p, double z) {
    return p.pi1 * std::exp(norm_logpdf(z, p.mu1, p.s2_1)) +
           p.pi2 * std::exp(norm_logpdf(z, p.mu2, p.s2_2));
}

double msar_logpdf(const MsarParams& p, double z) {
    return log_add_exp(std::log(p.pi1) + norm_logpdf(z, p.mu1, p.s2_1),
                       std::log(p.pi2) + norm_logpdf(z, p.mu2, p.s2_2));
}

double msar_cdf(const MsarParams& p, double z) {
    return p.pi1 * norm_cdf((z - p.mu1) / std::sqrt(p.s2_1)) +
           p.pi2 * norm_cdf((z - p.mu2) / std::sqrt(p.s2_2));
}

}  // namespace

double latent_pdf(const SsmSpec& spec, double z) {
    switch (spec.kind) {
        case ModelKind::Svuc: return svuc_pdf(spec.svuc(), z);
        case ModelKind::Msar1: return msar_pdf(spec.msar(), z);
        case ModelKind::Ucar: return norm_pdf(z);
    }
    return 0.0;
}

double latent_logpdf(const SsmSpec& spec, double z) {
    switch (spec.kind) {
        case ModelKind::Svuc: return std::log(svuc_pdf(spec.svuc(), z));
        case ModelKind::Msar1: return msar_logpdf(spec.msar(), z);
        case ModelKind::Ucar: return norm_logpdf(z);
    }
    return 0.0;
}

double latent_cdf(const SsmSpec& spec, double z) {
    switch (spec.kind) {
        case ModelKind::Svuc:
            return z <= 0.0 ? svuc_lower_cdf(spec.svuc(), z) : 1.0 - svuc_lower_cdf(spec.svuc(), -z);
        case ModelKind::Msar1: return msar_cdf(spec.msar(), z);
        case ModelKind::Ucar: return norm_cdf(z);
    }
    return 0.0;
}

bool latent_symmetric(const SsmSpec& spec) {
    switch (spec.kind) {
        case ModelKind::Svuc: return true;
        case ModelKind::Msar1: return spec.msar().c2 == 0.0;
        case ModelKind::Ucar: return true;
    }
    return false;
}

double latent_quantile_exact(const SsmSpec& spec, double u) {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("latent_quantile_exact: u outside (0,1)");
    if (spec.kind == ModelKind::Ucar) return norm_quantile(u);
    if (latent_symmetric(spec)) {
        if (u == 0.5) return 0.0;
        if (u > 0.5) return -latent_quantile_exact(spec, 1.0 - u);
    }
    const double start = norm_quantile(u);
    return solve_monotone([&](double z) { return latent_cdf(spec, z); }, u, start - 1.0,
                          start + 1.0, 1e-12 * std::min(1.0, 10.0 * std::min(u, 1.0 - u)));
}

LatentMarginTable build_spline_table(const SsmSpec& spec, int n) {
    if (n < 4) throw std::invalid_argument("build_spline_table: need at least 4 anchors");
    LatentMarginTable t;
    t.kind_ = spec.kind;
    t.psi_ = free_params(spec);
    t.symmetric_ = latent_symmetric(spec);
    t.exact_ = spec.kind == ModelKind::Ucar;

    const double p1 = LatentMarginTable::kP1;
    const double pn = LatentMarginTable::kPN;
    const double q1 = latent_quantile_exact(spec, p1);
    const double qn = t.symmetric_ ? -q1 : latent_quantile_exact(spec, pn);
    const double delta = (qn - q1) / (n - 1);

    t.q_.resize(n);
    t.p_.resize(n);
    t.b_.resize(n);
    for (int i = 0; i < n; ++i) t.q_[i] = q1 + i * delta;
    t.q_[n - 1] = qn;
    if (t.symmetric_) {
        // F(-q) = 1 - F(q) and f(-q) = f(q): evaluate the lower half only.
        for (int i = 0; i < n; ++i) {
            const int j = n - 1 - i;
            if (j < i) break;
            const double pi = latent_cdf(spec, t.q_[i]);
            const double bi = latent_logpdf(spec, t.q_[i]);
            t.q_[j] = -t.q_[i];
            t.p_[i] = pi;
            t.b_[i] = bi;
            t.p_[j] = i == j ? 0.5 : 1.0 - pi;
            t.b_[j] = bi;
            if (i == j) t.q_[i] = 0.0;
        }
    } else {
        for (int i = 0; i < n; ++i) {
            t.p_[i] = latent_cdf(spec, t.q_[i]);
            t.b_[i] = latent_logpdf(spec, t.q_[i]);
        }
    }
    for (int i = 1; i < n; ++i) {
        if (!(t.p_[i] > t.p_[i - 1]))
            throw NumericalError("build_spline_table: probability anchors not increasing");
    }
    t.p_to_q_ = CubicSpline(t.p_, t.q_, SplineEnd::Natural);
    t.q_to_p_ = CubicSpline(t.q_, t.p_, SplineEnd::Natural);
    t.q_to_b_ = CubicSpline(t.q_, t.b_, SplineEnd::NotAKnot);

    const double x1 = norm_quantile(t.p_[0]);
    t.lo_b_ = norm_pdf(x1) / std::exp(t.b_[0]);
    t.lo_a_ = t.q_[0] - t.lo_b_ * x1;
    const double xn = norm_quantile(t.p_[n - 1]);
    t.hi_b_ = norm_pdf(xn) / std::exp(t.b_[n - 1]);
    t.hi_a_ = t.q_[n - 1] - t.hi_b_ * xn;
    return t;
}

double LatentMarginTable::quantile(double u) const {
    if (exact_) return norm_quantile(u);
    if (u < p_.front()) return lo_a_ + lo_b_ * norm_quantile(u);
    if (u > p_.back()) return hi_a_ + hi_b_ * norm_quantile(u);
    return p_to_q_(u);
}

double LatentMarginTable::logpdf(double z) const {
    if (exact_) return norm_logpdf(z);
    if (z < q_.front()) return norm_logpdf((z - lo_a_) / lo_b_) - std::log(lo_b_);
    if (z > q_.back()) return norm_logpdf((z - hi_a_) / hi_b_) - std::log(hi_b_);
    return q_to_b_(z);
}

double LatentMarginTable::cdf(double z) const {
    if (exact_) return norm_cdf(z);
    if (z < q_.front()) return norm_cdf((z - lo_a_) / lo_b_);
    if (z > q_.back()) return norm_cdf((z - hi_a_) / hi_b_);
    return q_to_p_(z);
}

}  // namespace invcop
