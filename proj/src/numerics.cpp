#include "invcop/numerics.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/erf.hpp>

#include "invcop/error.hpp"

namespace invcop {

double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -INFINITY;
        if (p == 1.0) return INFINITY;
        throw std::domain_error("norm_quantile: probability outside [0,1]");
    }
    if (p < 0.5) return -1.4142135623730950488 * boost::math::erfc_inv(2.0 * p);
    return 1.4142135623730950488 * boost::math::erfc_inv(2.0 * (1.0 - p));
}

double log_add_exp(double a, double b) {
    if (a == -INFINITY) return b;
    if (b == -INFINITY) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

double log_sum_exp(std::span<const double> v) {
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x);
    if (m == -INFINITY) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

namespace {

// Upper orthant probability P(X > h, Y > k).
double bvn_upper(double h, double k, double r) {
    const QuadRule* rule;
    if (std::abs(r) < 0.3)
        rule = &gauss_legendre(6);
    else if (std::abs(r) < 0.75)
        rule = &gauss_legendre(12);
    else
        rule = &gauss_legendre(20);
    const auto& x = rule->nodes;
    const auto& w = rule->weights;
    double hk = h * k;
    double bvn = 0.0;
    if (std::abs(r) < 0.925) {
        const double hs = 0.5 * (h * h + k * k);
        const double asr = std::asin(r);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double sn = std::sin(asr * (x[i] + 1.0) / 2.0);
            bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
        return bvn * asr / (4.0 * kPi) + norm_cdf(-h) * norm_cdf(-k);
    }
    if (r < 0.0) {
        k = -k;
        hk = -hk;
    }
    if (std::abs(r) < 1.0) {
        const double as = (1.0 - r) * (1.0 + r);
        double a = std::sqrt(as);
        const double bs = (h - k) * (h - k);
        const double c = (4.0 - hk) / 8.0;
        const double d = (12.0 - hk) / 16.0;
        bvn = a * std::exp(-(bs / as + hk) / 2.0) *
              (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
        if (hk > -160.0) {
            const double b = std::sqrt(bs);
            bvn -= std::exp(-hk / 2.0) * std::sqrt(2.0 * kPi) * norm_cdf(-b / a) * b *
                   (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double xs = std::pow(a * (x[i] + 1.0), 2);
            const double rs = std::sqrt(1.0 - xs);
            const double asr = -(bs / xs + hk) / 2.0;
            if (asr > -100.0) {
                bvn += a * w[i] * std::exp(asr) *
                       (std::exp(-hk * xs / (2.0 * (1.0 + rs) * (1.0 + rs))) / rs -
                        (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / (2.0 * kPi);
    }
    if (r > 0.0) return bvn + norm_cdf(-std::max(h, k));
    if (h >= k) return -bvn;
    const double l = h < 0.0 ? norm_cdf(k) - norm_cdf(h) : norm_cdf(-h) - norm_cdf(-k);
    return l - bvn;
}

QuadRule golub_welsch(int n, bool hermite) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        const double b = hermite ? std::sqrt(static_cast<double>(i))
                                 : i / std::sqrt(4.0 * i * i - 1.0);
        jac(i, i - 1) = b;
        jac(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    QuadRule rule;
    const double mu0 = hermite ? 1.0 : 2.0;
    for (int i = 0; i < n; ++i) {
        rule.nodes.push_back(es.eigenvalues()(i));
        const double v = es.eigenvectors()(0, i);
        rule.weights.push_back(mu0 * v * v);
    }
    if (!hermite) {
        // Polish Legendre nodes by Newton on P_n for full precision.
        for (int i = 0; i < n; ++i) {
            double x = rule.nodes[i];
            double dp = 1.0;
            for (int it = 0; it < 3; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                x -= p1 / dp;
            }
            rule.nodes[i] = x;
            rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
    return rule;
}

const QuadRule& cached_rule(int n, bool hermite) {
    static std::mutex mu;
    static std::map<std::pair<int, bool>, QuadRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, hermite);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, golub_welsch(n, hermite)).first;
    return it->second;
}

}  // namespace

double bvn_cdf(double h, double k, double r) {
    if (h == -INFINITY || k == -INFINITY) return 0.0;
    if (h == INFINITY) return norm_cdf(k);
    if (k == INFINITY) return norm_cdf(h);
    return std::clamp(bvn_upper(-h, -k, r), 0.0, 1.0);
}

const QuadRule& gauss_legendre(int n) { return cached_rule(n, false); }
const QuadRule& gauss_hermite_prob(int n) { return cached_rule(n, true); }

double solve_monotone(const std::function<double(double)>& f, double target, double lo, double hi,
                      double ftol, double xtol, int max_iter) {
    double flo = f(lo) - target;
    double fhi = f(hi) - target;
    double width = hi - lo;
    for (int i = 0; flo > 0.0 && i < 60; ++i) {
        hi = lo;
        fhi = flo;
        width *= 2.0;
        lo -= width;
        flo = f(lo) - target;
    }
    for (int i = 0; fhi < 0.0 && i < 60; ++i) {
        lo = hi;
        flo = fhi;
        width *= 2.0;
        hi += width;
        fhi = f(hi) - target;
    }
    if (flo > 0.0 || fhi < 0.0 || std::isnan(flo) || std::isnan(fhi))
        throw NumericalError("solve_monotone: could not bracket root");
    if (std::abs(flo) < ftol) return lo;
    if (std::abs(fhi) < ftol) return hi;
    int side = 0;
    for (int it = 0; it < max_iter; ++it) {
        double x = (lo * fhi - hi * flo) / (fhi - flo);
        // Bisect when regula falsi stalls near an endpoint.
        if (!(x > lo && x < hi) || it % 8 == 7) x = 0.5 * (lo + hi);
        const double fx = f(x) - target;
        if (std::abs(fx) < ftol || hi - lo < xtol) return x;
        if (fx < 0.0) {
            lo = x;
            flo = fx;
            if (side == -1) fhi *= 0.5;
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if (side == 1) flo *= 0.5;
            side = 1;
        }
    }
    return 0.5 * (lo + hi);
}

CubicSpline::CubicSpline(std::vector<double> x, std::vector<double> y, SplineEnd end)
    : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw std::invalid_argument("CubicSpline: need >= 2 matching knots");
    for (std::size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1])) throw std::invalid_argument("CubicSpline: knots not increasing");
    if (end == SplineEnd::NotAKnot && n < 4) end = SplineEnd::Natural;

    std::vector<double> dx(n - 1), m(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        dx[i] = x_[i + 1] - x_[i];
        m[i] = (y_[i + 1] - y_[i]) / dx[i];
    }
    // Tridiagonal system for the knot slopes s.
    std::vector<double> lower(n, 0.0), diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        lower[i] = dx[i];
        diag[i] = 2.0 * (dx[i - 1] + dx[i]);
        upper[i] = dx[i - 1];
        rhs[i] = 3.0 * (dx[i] * m[i - 1] + dx[i - 1] * m[i]);
    }
    if (n == 2) {
        diag[0] = diag[1] = 1.0;
        rhs[0] = rhs[1] = m[0];
    } else if (end == SplineEnd::Natural) {
        diag[0] = 2.0;
        upper[0] = 1.0;
        rhs[0] = 3.0 * m[0];
        lower[n - 1] = 1.0;
        diag[n - 1] = 2.0;
        rhs[n - 1] = 3.0 * m[n - 2];
    } else {
        const double d0 = x_[2] - x_[0];
        diag[0] = dx[1];
        upper[0] = d0;
        rhs[0] = ((dx[0] + 2.0 * d0) * dx[1] * m[0] + dx[0] * dx[0] * m[1]) / d0;
        const double d1 = x_[n - 1] - x_[n - 3];
        lower[n - 1] = d1;
        diag[n - 1] = dx[n - 3];
        rhs[n - 1] = (dx[n - 2] * dx[n - 2] * m[n - 3] +
                      (2.0 * d1 + dx[n - 2]) * dx[n - 3] * m[n - 2]) /
                     d1;
    }
    // Thomas algorithm.
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    b_.assign(n, 0.0);
    b_[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) b_[i] = (rhs[i] - upper[i] * b_[i + 1]) / diag[i];

    c_.assign(n - 1, 0.0);
    d_.assign(n - 1, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        c_[i] = (3.0 * m[i] - 2.0 * b_[i] - b_[i + 1]) / dx[i];
        d_[i] = (b_[i] + b_[i + 1] - 2.0 * m[i]) / (dx[i] * dx[i]);
    }
    h_ = (x_[n - 1] - x_[0]) / static_cast<double>(n - 1);
    uniform_ = true;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (std::abs(dx[i] - h_) > 1e-12 * std::max(1.0, std::abs(h_))) uniform_ = false;
}

std::size_t CubicSpline::segment(double x) const {
    const std::size_t last = x_.size() - 2;
    if (x <= x_[0]) return 0;
    if (x >= x_[last + 1]) return last;
    if (uniform_) {
        std::size_t i = static_cast<std::size_t>((x - x_[0]) / h_);
        if (i > last) i = last;
        while (i > 0 && x < x_[i]) --i;
        while (i < last && x >= x_[i + 1]) ++i;
        return i;
    }
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    return static_cast<std::size_t>(it - x_.begin()) - 1;
}

double CubicSpline::operator()(double x) const {
    const std::size_t i = segment(x);
    const double t = x - x_[i];
    return y_[i] + t * (b_[i] + t * (c_[i] + t * d_[i]));
}

double CubicSpline::derivative(double x) const {
    const std::size_t i = segment(x);
    const double t = x - x_[i];
    return b_[i] + t * (2.0 * c_[i] + 3.0 * t * d_[i]);
}

namespace {

// Standard normal truncated to [a, inf) with a large, Robert (1995).
double upper_tail_normal(double a, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
        const double z = a - std::log(1.0 - unif(rng)) / lambda;
        if (unif(rng) <= std::exp(-0.5 * (z - lambda) * (z - lambda))) return z;
    }
}

}  // namespace

double sample_truncated_normal(double mean, double sd, double lo, double hi, Rng& rng) {
    if (!(sd > 0.0) || !(hi > lo)) throw std::invalid_argument("sample_truncated_normal: bad arguments");
    double a = (lo - mean) / sd;
    double b = (hi - mean) / sd;
    double sign = 1.0;
    if (a > 0.0) {
        // Work in the lower tail where the cdf is accurate.
        sign = -1.0;
        std::swap(a, b);
        a = -a;
        b = -b;
    }
    const double pa = norm_cdf(a);
    const double pb = norm_cdf(b);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double z;
    if (pb - pa > 1e-280) {
        z = norm_quantile(pa + unif(rng) * (pb - pa));
        z = std::clamp(z, a, b);
    } else {
        // Both bounds far in the lower tail: sample -Z on [-b, -a].
        do {
            z = -upper_tail_normal(-b, rng);
        } while (z < a);
    }
    return mean + sd * sign * z;
}

double mean_of(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean_of(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

namespace {

// Merge sort on y counting exchanges.
std::uint64_t merge_count(std::vector<double>& y, std::vector<double>& buf, std::size_t lo,
                          std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = merge_count(y, buf, lo, mid) + merge_count(y, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (y[j] < y[i]) {
            swaps += mid - i;
            buf[k++] = y[j++];
        } else {
            buf[k++] = y[i++];
        }
    }
    while (i < mid) buf[k++] = y[i++];
    while (j < hi) buf[k++] = y[j++];
    std::copy(buf.begin() + lo, buf.begin() + hi, y.begin() + lo);
    return swaps;
}

std::uint64_t tie_pairs(const std::vector<double>& sorted) {
    std::uint64_t ties = 0, run = 1;
    for (std::size_t i = 1; i <= sorted.size(); ++i) {
        if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
            ++run;
        } else {
            ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    return ties;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw std::invalid_argument("kendall_tau: need >= 2 paired values");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[idx[i]];
        ys[i] = y[idx[i]];
    }
    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t n1 = tie_pairs(xs);
    std::uint64_t n3 = 0, run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i < n && xs[i] == xs[i - 1] && ys[i] == ys[i - 1]) {
            ++run;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    std::vector<double> buf(n);
    const std::uint64_t swaps = merge_count(ys, buf, 0, n);
    const std::uint64_t n2 = tie_pairs(ys);
    const double num = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                       static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
    const double den = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace invcop

namespace invcop {

double log_norm_interval(double a, double b) {
    if (!(b > a)) return -INFINITY;
    if (a > 0.0) return log_norm_interval(-b, -a);
    // Now a <= 0: Phi(a) is the smaller term and is accurate as a tail value.
    const double pb = norm_cdf(b), pa = norm_cdf(a);
    if (pb > 1e-300) return std::log(pb) + std::log1p(-pa / pb);
    // Both far in the lower tail: Mills-ratio asymptotics.
    auto log_tail = [](double x) {  // log Phi(x), x << 0
        const double t = -x;
        return -0.5 * t * t - std::log(t) - kLogSqrt2Pi + std::log1p(-1.0 / (t * t) + 3.0 / (t * t * t * t));
    };
    const double lb = log_tail(b), la = log_tail(a);
    return lb + std::log1p(-std::exp(la - lb));
}

OptimResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                        std::vector<double> x0, const NelderMeadOptions& opt) {
    const std::size_t n = x0.size();
    if (n == 0) throw std::invalid_argument("nelder_mead: empty start");
    int evals = 0;
    auto eval = [&](const std::vector<double>& x) {
        ++evals;
        const double v = f(x);
        return std::isfinite(v) ? v : INFINITY;
    };
    std::vector<std::vector<double>> s(n + 1, x0);
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double h = opt.step.empty() ? 0.1 * std::max(std::abs(x0[i]), 1.0) : opt.step[i];
        s[i + 1][i] += h;
    }
    for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(s[i]);

    std::vector<std::size_t> idx(n + 1);
    bool converged = false;
    while (evals < opt.max_evals) {
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
        const std::size_t best = idx[0], worst = idx[n], second = idx[n - 1];
        double diam = 0.0;
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t k = 0; k < n; ++k) diam = std::max(diam, std::abs(s[i][k] - s[best][k]));
        if (std::isfinite(fv[worst]) && fv[worst] - fv[best] <= opt.ftol * (1.0 + std::abs(fv[best])) &&
            diam <= opt.xtol * (1.0 + std::abs(s[best][0]))) {
            converged = true;
            break;
        }
        std::vector<double> c(n, 0.0);
        for (std::size_t i = 0; i <= n; ++i)
            if (i != worst)
                for (std::size_t k = 0; k < n; ++k) c[k] += s[i][k] / static_cast<double>(n);
        auto along = [&](double t) {
            std::vector<double> x(n);
            for (std::size_t k = 0; k < n; ++k) x[k] = c[k] + t * (s[worst][k] - c[k]);
            return x;
        };
        auto xr = along(-1.0);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            auto xe = along(-2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                s[worst] = xe;
                fv[worst] = fe;
            } else {
                s[worst] = xr;
                fv[worst] = fr;
            }
        } else if (fr < fv[second]) {
            s[worst] = xr;
            fv[worst] = fr;
        } else {
            const bool outside = fr < fv[worst];
            auto xc = along(outside ? -0.5 : 0.5);
            const double fc = eval(xc);
            if (fc < (outside ? fr : fv[worst])) {
                s[worst] = xc;
                fv[worst] = fc;
            } else {
                for (std::size_t i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    for (std::size_t k = 0; k < n; ++k) s[i][k] = s[best][k] + 0.5 * (s[i][k] - s[best][k]);
                    fv[i] = eval(s[i]);
                }
            }
        }
    }
    const auto b = std::min_element(fv.begin(), fv.end()) - fv.begin();
    return {s[b], fv[b], evals, converged};
}

}  // namespace invcop
