#include "invcop/dependence.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "invcop/copula_density.hpp"
#include "invcop/latent_margin.hpp"
#include "invcop/numerics.hpp"

namespace invcop {

std::string to_string(DependenceMethod m) {
    return m == DependenceMethod::Quadrature ? "quadrature" : "monte-carlo";
}

const QuantileDependence& DependenceReport::at(double alpha) const {
    for (const auto& q : lambda)
        if (std::abs(q.alpha - alpha) < 1e-12) return q;
    throw std::out_of_range("no quantile dependence at alpha " + std::to_string(alpha));
}

nlohmann::json DependenceReport::to_json() const {
    nlohmann::json j;
    j["lag"] = lag;
    j["method"] = to_string(method);
    j["tau"] = tau;
    j["r"] = r;
    if (method == DependenceMethod::MonteCarlo) {
        j["tau_se"] = tau_se;
        j["r_se"] = r_se;
        j["draws"] = draws;
    }
    for (const auto& q : lambda) {
        nlohmann::json e{{"alpha", q.alpha}, {"mm", q.mm}, {"pp", q.pp}, {"pm", q.pm}, {"mp", q.mp}};
        if (method == DependenceMethod::MonteCarlo)
            e["se"] = {{"mm", q.se_mm}, {"pp", q.se_pp}, {"pm", q.se_pm}, {"mp", q.se_mp}};
        j["lambda"].push_back(e);
    }
    return j;
}

std::string DependenceReport::to_csv() const {
    std::ostringstream os;
    os.precision(6);
    os << "lag,method,statistic,alpha,value,se\n";
    const std::string head = std::to_string(lag) + "," + to_string(method) + ",";
    os << head << "tau,," << tau << "," << tau_se << "\n";
    os << head << "r,," << r << "," << r_se << "\n";
    for (const auto& q : lambda) {
        os << head << "lambda--," << q.alpha << "," << q.mm << "," << q.se_mm << "\n";
        os << head << "lambda++," << q.alpha << "," << q.pp << "," << q.se_pp << "\n";
        os << head << "lambda+-," << q.alpha << "," << q.pm << "," << q.se_pm << "\n";
        os << head << "lambda-+," << q.alpha << "," << q.mp << "," << q.se_mp << "\n";
    }
    return os.str();
}

namespace {

void check_alphas(const std::vector<double>& alphas) {
    for (double a : alphas)
        if (!(a > 0.0 && a < 0.5)) throw std::invalid_argument("quantile levels must lie in (0, 0.5)");
}

}  // namespace

DependenceReport dependence_mc(const SsmSpec& spec, int lag, long long J, const std::vector<double>& alphas,
                               std::uint64_t seed) {
    if (lag < 1) throw std::invalid_argument("dependence_mc: lag must be >= 1");
    if (J < 10000) throw std::invalid_argument("dependence_mc: need J >= 10000");
    check_alphas(alphas);
    constexpr int kShards = 50;
    const std::size_t A = alphas.size();
    std::vector<long long> n_lo(A, 0), n_hi(A, 0), mm(A, 0), pp(A, 0), pm(A, 0), mp(A, 0);
    std::vector<double> shard_tau, shard_r;
    std::vector<double> us, ut;
    for (int k = 0; k < kShards; ++k) {
        const long long n = J / kShards + (k < J % kShards ? 1 : 0);
        std::seed_seq seq{seed, static_cast<std::uint64_t>(k)};
        Rng rng(seq);
        LatentProcess proc(spec);
        us.resize(n);
        ut.resize(n);
        for (long long i = 0; i < n; ++i) {
            const double z0 = proc.start(rng);
            double z = z0;
            for (int l = 0; l < lag; ++l) z = proc.next(rng);
            us[i] = latent_cdf(spec, z0);
            ut[i] = latent_cdf(spec, z);
        }
        // Centred form 12 cov(u, v): same target as 12 E[uv] - 3 for uniform
        // margins, with far less Monte Carlo noise.
        const double mu_s = mean_of(us), mu_t = mean_of(ut);
        double cov = 0.0;
        for (long long i = 0; i < n; ++i) cov += (us[i] - mu_s) * (ut[i] - mu_t);
        shard_r.push_back(12.0 * cov / n);
        for (long long i = 0; i < n; ++i) {
            for (std::size_t a = 0; a < A; ++a) {
                const double lo = alphas[a], hi = 1.0 - alphas[a];
                if (us[i] < lo) {
                    ++n_lo[a];
                    mm[a] += ut[i] < lo;
                    pm[a] += ut[i] > hi;
                }
                if (us[i] > hi) {
                    ++n_hi[a];
                    pp[a] += ut[i] > hi;
                    mp[a] += ut[i] < lo;
                }
            }
        }
        shard_tau.push_back(kendall_tau(us, ut));
    }

    DependenceReport rep;
    rep.lag = lag;
    rep.method = DependenceMethod::MonteCarlo;
    rep.draws = J;
    // Means of shard estimates; their spread gives the standard errors. The
    // O(1/n) bias of each shard estimate is negligible at these sizes.
    rep.r = mean_of(shard_r);
    rep.r_se = std::sqrt(variance_of(shard_r) / kShards);
    rep.tau = mean_of(shard_tau);
    rep.tau_se = std::sqrt(variance_of(shard_tau) / kShards);
    auto prop = [](long long hits, long long n, double& se) {
        if (n == 0) {
            se = std::numeric_limits<double>::quiet_NaN();
            return se;
        }
        const double p = static_cast<double>(hits) / n;
        se = std::sqrt(p * (1.0 - p) / n);
        return p;
    };
    for (std::size_t a = 0; a < A; ++a) {
        QuantileDependence q;
        q.alpha = alphas[a];
        q.mm = prop(mm[a], n_lo[a], q.se_mm);
        q.pm = prop(pm[a], n_lo[a], q.se_pm);
        q.pp = prop(pp[a], n_hi[a], q.se_pp);
        q.mp = prop(mp[a], n_hi[a], q.se_mp);
        rep.lambda.push_back(q);
    }
    return rep;
}

DependenceReport dependence_quadrature(const SsmSpec& spec, const std::vector<double>& alphas) {
    check_alphas(alphas);
    auto comps = latent_pair_mixture(spec);
    double wsum = 0.0;
    for (const auto& c : comps) wsum += c.weight;
    for (auto& c : comps) c.weight /= wsum;

    DependenceReport rep;
    rep.lag = 1;
    rep.method = DependenceMethod::Quadrature;

    // Quadrant probabilities: closed form per normal component.
    for (double a : alphas) {
        const double qa = latent_quantile_exact(spec, a), qA = latent_quantile_exact(spec, 1.0 - a);
        double lo_lo = 0.0, hi_hi = 0.0, lo_hi = 0.0, hi_lo = 0.0;
        for (const auto& c : comps) {
            const double sd1 = std::sqrt(c.s11), sd2 = std::sqrt(c.s22), rho = c.s12 / (sd1 * sd2);
            const double h_lo = (qa - c.m1) / sd1, h_hi = (qA - c.m1) / sd1;
            const double k_lo = (qa - c.m2) / sd2, k_hi = (qA - c.m2) / sd2;
            lo_lo += c.weight * bvn_cdf(h_lo, k_lo, rho);
            hi_hi += c.weight * bvn_cdf(-h_hi, -k_hi, rho);
            lo_hi += c.weight * bvn_cdf(h_lo, -k_hi, -rho);
            hi_lo += c.weight * bvn_cdf(-h_hi, k_lo, -rho);
        }
        QuantileDependence q;
        q.alpha = a;
        q.mm = lo_lo / a;
        q.pp = hi_hi / a;
        q.pm = lo_hi / a;
        q.mp = hi_lo / a;
        rep.lambda.push_back(q);
    }

    // r = 12 E[F(Z_s) F(Z_t)] - 3 and tau = 1 - 4 int int C_u C_v du dv; on the
    // latent scale du dv = f1 f2 dz1 dz2 cancels the conditional densities.
    constexpr double kTail = 1e-11;
    const double zlo = latent_quantile_exact(spec, kTail), zhi = latent_quantile_exact(spec, 1.0 - kTail);
    constexpr int kPanels = 28, kPer = 8;
    const auto& gl = gauss_legendre(kPer);
    std::vector<double> z, w;
    const double h = (zhi - zlo) / kPanels;
    for (int p = 0; p < kPanels; ++p)
        for (int i = 0; i < kPer; ++i) {
            z.push_back(zlo + h * (p + 0.5 + 0.5 * gl.nodes[i]));
            w.push_back(0.5 * h * gl.weights[i]);
        }
    const std::size_t N = z.size();
    std::vector<double> F1(N, 0.0), F2(N, 0.0);
    for (const auto& c : comps)
        for (std::size_t i = 0; i < N; ++i) {
            F1[i] += c.weight * norm_cdf((z[i] - c.m1) / std::sqrt(c.s11));
            F2[i] += c.weight * norm_cdf((z[i] - c.m2) / std::sqrt(c.s22));
        }
    std::vector<double> dens(N * N, 0.0), A(N * N, 0.0), B(N * N, 0.0), phi1(N), phi2(N);
    for (const auto& c : comps) {
        const double sd1 = std::sqrt(c.s11), sd2 = std::sqrt(c.s22);
        const double det = c.s11 * c.s22 - c.s12 * c.s12;
        const double b21 = c.s12 / c.s11, sd21 = std::sqrt(det / c.s11);
        const double b12 = c.s12 / c.s22, sd12 = std::sqrt(det / c.s22);
        const double norm2 = c.weight / (2.0 * kPi * std::sqrt(det));
        for (std::size_t i = 0; i < N; ++i) {
            phi1[i] = c.weight * norm_pdf((z[i] - c.m1) / sd1) / sd1;
            phi2[i] = c.weight * norm_pdf((z[i] - c.m2) / sd2) / sd2;
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double d1 = z[i] - c.m1;
            for (std::size_t j = 0; j < N; ++j) {
                const double d2 = z[j] - c.m2;
                const std::size_t k = i * N + j;
                const double qf = (c.s22 * d1 * d1 - 2.0 * c.s12 * d1 * d2 + c.s11 * d2 * d2) / det;
                dens[k] += norm2 * std::exp(-0.5 * qf);
                A[k] += phi1[i] * norm_cdf((d2 - b21 * d1) / sd21);
                B[k] += phi2[j] * norm_cdf((d1 - b12 * d2) / sd12);
            }
        }
    }
    double e_uv = 0.0, e_ab = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = i * N + j;
            const double ww = w[i] * w[j];
            e_uv += ww * F1[i] * F2[j] * dens[k];
            e_ab += ww * A[k] * B[k];
        }
    rep.r = 12.0 * e_uv - 3.0;
    rep.tau = 1.0 - 4.0 * e_ab;
    return rep;
}

}  // namespace invcop
