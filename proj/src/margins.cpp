#include "invcop/margins.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <unsupported/Eigen/FFT>

#include "invcop/numerics.hpp"

namespace invcop {

std::string to_string(MarginKind k) {
    switch (k) {
        case MarginKind::Kde: return "kde";
        case MarginKind::SkewT: return "skewt";
        case MarginKind::Gamma: return "gamma";
        case MarginKind::Empirical: return "empirical";
        case MarginKind::Normal: return "normal";
    }
    return "?";
}

// ---------------------------------------------------------------- skew t

namespace {

constexpr double kDeltaMax = 1.0 - 1e-10;
constexpr double kNuMax = 1e6;

// E|T| factor b_nu = sqrt(nu) Gamma((nu-1)/2) / (sqrt(pi) Gamma(nu/2)).
double b_nu(double nu) {
    return std::sqrt(nu / kPi) * std::exp(std::lgamma(0.5 * (nu - 1.0)) - std::lgamma(0.5 * nu));
}

double skew_t_std_pdf(double z, double delta, double nu) {
    const double alpha = delta / std::sqrt(1.0 - delta * delta);
    const boost::math::students_t_distribution<double> t(nu), t1(nu + 1.0);
    const double arg = alpha * z * std::sqrt((nu + 1.0) / (nu + z * z));
    return 2.0 * boost::math::pdf(t, z) * boost::math::cdf(t1, arg);
}

// F(z) = F_t(z; nu) - 2 T_nu(z, alpha), with the t analogue of Owen's T
// T_nu(h, a) = (1/2pi) int_0^{atan a} (1 + h^2 / (nu cos^2 th))^{-nu/2} dth.
double skew_t_std_cdf(double z, double delta, double nu) {
    const double alpha = delta / std::sqrt(1.0 - delta * delta);
    const double z2 = z * z;
    auto f = [&](double th) {
        const double c = std::cos(th);
        return std::exp(-0.5 * nu * std::log1p(z2 / (nu * c * c)));
    };
    const double T = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
                         f, 0.0, std::atan(alpha), 10, 1e-13) /
                     (2.0 * kPi);
    const boost::math::students_t_distribution<double> t(nu);
    return std::clamp(boost::math::cdf(t, z) - 2.0 * T, 0.0, 1.0);
}

// Smallest skew reachable at nu is 0; largest is at delta -> 1.
double max_skew(double nu) { return skew_t_moment_coefficients(kDeltaMax, nu).first; }

double delta_for_skew(double g1, double nu) {
    double lo = 0.0, hi = kDeltaMax;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        (skew_t_moment_coefficients(mid, nu).first < g1 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

std::pair<double, double> skew_t_moment_coefficients(double delta, double nu) {
    if (!(nu > 4.0)) throw std::domain_error("skew t moments need nu > 4");
    const double b = b_nu(nu);
    const double m1 = b * delta;
    const double m2 = nu / (nu - 2.0);
    const double m3 = b * delta * (3.0 - delta * delta) * nu / (nu - 3.0);
    const double m4 = 3.0 * nu * nu / ((nu - 2.0) * (nu - 4.0));
    const double v = m2 - m1 * m1;
    const double g1 = (m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1) / std::pow(v, 1.5);
    const double g2 =
        (m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1 * m1 * m1 * m1) / (v * v);
    return {g1, g2};
}

std::pair<double, double> skew_t_shape_from_moments(double gamma1, double gamma2) {
    if (!std::isfinite(gamma1) || !std::isfinite(gamma2))
        throw std::domain_error("skew t: non-finite moment coefficients");
    const double g1 = std::abs(gamma1);
    const double sign = gamma1 < 0.0 ? -1.0 : 1.0;

    // Work on x = log(nu - 4). Skew capacity falls as nu grows, so the
    // feasible nu for this |gamma1| is (4, nu_star].
    auto nu_of = [](double x) { return 4.0 + std::exp(x); };
    double xlo = std::log(1e-8), xhi = std::log(kNuMax);
    if (max_skew(nu_of(xhi)) <= g1) {
        if (max_skew(nu_of(xlo)) <= g1) throw std::domain_error("skew t: skew coefficient unreachable");
        double a = xlo, b = xhi;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (a + b);
            (max_skew(nu_of(mid)) > g1 ? a : b) = mid;
        }
        xhi = a;
    }
    // Along the curve delta(nu) that holds the skew fixed, kurtosis falls with nu.
    auto kurt = [&](double x) {
        const double nu = nu_of(x);
        return skew_t_moment_coefficients(delta_for_skew(g1, nu), nu).second;
    };
    if (gamma2 <= kurt(xhi))
        throw std::domain_error("skew t: kurtosis coefficient below the feasible bound");
    if (gamma2 >= kurt(xlo)) throw std::domain_error("skew t: kurtosis coefficient too large");
    for (int i = 0; i < 200 && xhi - xlo > 1e-13; ++i) {
        const double mid = 0.5 * (xlo + xhi);
        (kurt(mid) > gamma2 ? xlo : xhi) = mid;
    }
    const double nu = nu_of(0.5 * (xlo + xhi));
    return {sign * delta_for_skew(g1, nu), nu};
}

// ---------------------------------------------------------------- evaluation

namespace {

double kde_cdf(const KdeMargin& k, double y) {
    double s = 0.0;
    for (std::size_t i = 0; i < k.sample.size(); ++i) s += norm_cdf((y - k.sample[i]) / k.bandwidths[i]);
    return s / k.sample.size();
}

double kde_pdf(const KdeMargin& k, double y) {
    double s = 0.0;
    for (std::size_t i = 0; i < k.sample.size(); ++i) {
        const double h = k.bandwidths[i];
        s += norm_pdf((y - k.sample[i]) / h) / h;
    }
    return s / k.sample.size();
}

std::size_t emp_segment(const EmpiricalMargin& e, double y) {
    const auto it = std::upper_bound(e.knots.begin(), e.knots.end(), y);
    return static_cast<std::size_t>(it - e.knots.begin()) - 1;
}

double emp_cdf(const EmpiricalMargin& e, double y) {
    if (y <= e.knots.front()) return 0.0;
    if (y >= e.knots.back()) return 1.0;
    const std::size_t i = emp_segment(e, y);
    const double w = (y - e.knots[i]) / (e.knots[i + 1] - e.knots[i]);
    return e.probs[i] + w * (e.probs[i + 1] - e.probs[i]);
}

double emp_pdf(const EmpiricalMargin& e, double y) {
    if (y <= e.knots.front() || y >= e.knots.back()) return 0.0;
    const std::size_t i = emp_segment(e, y);
    return (e.probs[i + 1] - e.probs[i]) / (e.knots[i + 1] - e.knots[i]);
}

double emp_quantile(const EmpiricalMargin& e, double u) {
    const auto it = std::upper_bound(e.probs.begin(), e.probs.end(), u);
    std::size_t i = static_cast<std::size_t>(it - e.probs.begin());
    i = std::clamp<std::size_t>(i, 1, e.probs.size() - 1) - 1;
    const double w = (u - e.probs[i]) / (e.probs[i + 1] - e.probs[i]);
    return e.knots[i] + w * (e.knots[i + 1] - e.knots[i]);
}

}  // namespace

MarginModel MarginModel::normal(double mean, double sd) {
    if (!(sd > 0.0) || !std::isfinite(mean)) throw std::domain_error("normal margin: need sd > 0");
    return MarginModel(NormalMargin{mean, sd});
}

MarginModel MarginModel::gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
        throw std::domain_error("gamma margin: need shape > 0 and scale > 0");
    return MarginModel(GammaMargin{shape, scale});
}

MarginModel MarginModel::skew_t(double xi, double omega, double gamma1, double gamma2) {
    if (!(omega > 0.0) || !std::isfinite(xi)) throw std::domain_error("skew t margin: need omega > 0");
    const auto [delta, nu] = skew_t_shape_from_moments(gamma1, gamma2);
    return MarginModel(SkewTMargin{xi, omega, gamma1, gamma2, delta, nu});
}

MarginModel MarginModel::empirical(std::span<const double> sample) {
    if (sample.size() < 2) throw std::invalid_argument("insufficient data");
    std::vector<double> x(sample.begin(), sample.end());
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("invalid sample");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    const double d = (x.back() - x.front()) / (n - 1.0);
    if (!(d > 0.0)) throw std::invalid_argument("invalid sample");
    EmpiricalMargin e;
    e.knots.push_back(x.front() - d);
    e.probs.push_back(0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (i + 1 < x.size() && x[i + 1] == x[i]) continue;  // ties: keep the highest rank
        e.knots.push_back(x[i]);
        e.probs.push_back((i + 1.0) / (n + 1.0));
    }
    e.knots.push_back(x.back() + d);
    e.probs.push_back(1.0);
    return MarginModel(std::move(e));
}

MarginModel MarginModel::kde(std::vector<double> sample, std::vector<double> bandwidths) {
    if (sample.size() != bandwidths.size() || sample.empty())
        throw std::invalid_argument("kde margin: sample and bandwidths must align");
    std::vector<std::size_t> idx(sample.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return sample[a] < sample[b]; });
    KdeMargin k;
    for (auto i : idx) {
        if (!std::isfinite(sample[i]) || !(bandwidths[i] > 0.0))
            throw std::invalid_argument("kde margin: invalid sample or bandwidth");
        k.sample.push_back(sample[i]);
        k.bandwidths.push_back(bandwidths[i]);
    }
    return MarginModel(std::move(k));
}

MarginKind MarginModel::kind() const {
    return std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, KdeMargin>) return MarginKind::Kde;
            else if constexpr (std::is_same_v<T, SkewTMargin>) return MarginKind::SkewT;
            else if constexpr (std::is_same_v<T, GammaMargin>) return MarginKind::Gamma;
            else if constexpr (std::is_same_v<T, EmpiricalMargin>) return MarginKind::Empirical;
            else return MarginKind::Normal;
        },
        m_);
}

double MarginModel::cdf(double y) const {
    return std::visit(
        [y](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, KdeMargin>) return kde_cdf(m, y);
            else if constexpr (std::is_same_v<T, SkewTMargin>)
                return skew_t_std_cdf((y - m.xi) / m.omega, m.delta, m.nu);
            else if constexpr (std::is_same_v<T, GammaMargin>)
                return y <= 0.0 ? 0.0
                                : boost::math::cdf(boost::math::gamma_distribution<double>(m.shape, m.scale), y);
            else if constexpr (std::is_same_v<T, EmpiricalMargin>) return emp_cdf(m, y);
            else return norm_cdf((y - m.mean) / m.sd);
        },
        m_);
}

double MarginModel::pdf(double y) const {
    return std::visit(
        [y](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, KdeMargin>) return kde_pdf(m, y);
            else if constexpr (std::is_same_v<T, SkewTMargin>)
                return skew_t_std_pdf((y - m.xi) / m.omega, m.delta, m.nu) / m.omega;
            else if constexpr (std::is_same_v<T, GammaMargin>)
                return y <= 0.0 ? 0.0
                                : boost::math::pdf(boost::math::gamma_distribution<double>(m.shape, m.scale), y);
            else if constexpr (std::is_same_v<T, EmpiricalMargin>) return emp_pdf(m, y);
            else return norm_pdf((y - m.mean) / m.sd) / m.sd;
        },
        m_);
}

double MarginModel::logpdf(double y) const {
    if (const auto* n = std::get_if<NormalMargin>(&m_)) return norm_logpdf(y, n->mean, n->sd * n->sd);
    return std::log(pdf(y));
}

double MarginModel::quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("margin quantile: u outside (0,1)");
    return std::visit(
        [u, this](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, NormalMargin>) return m.mean + m.sd * norm_quantile(u);
            else if constexpr (std::is_same_v<T, GammaMargin>)
                return boost::math::quantile(boost::math::gamma_distribution<double>(m.shape, m.scale), u);
            else if constexpr (std::is_same_v<T, EmpiricalMargin>) return emp_quantile(m, u);
            else if constexpr (std::is_same_v<T, SkewTMargin>) {
                const double start = m.xi + m.omega * b_nu(m.nu) * m.delta;
                return solve_monotone([this](double y) { return cdf(y); }, u, start - m.omega,
                                      start + m.omega, 1e-13 * std::min(1.0, 100.0 * std::min(u, 1 - u)));
            } else {
                const double lo = m.sample.front(), hi = m.sample.back();
                return solve_monotone([this](double y) { return cdf(y); }, u, lo, hi,
                                      1e-13 * std::min(1.0, 100.0 * std::min(u, 1 - u)));
            }
        },
        m_);
}

std::vector<double> MarginModel::params() const {
    if (const auto* n = std::get_if<NormalMargin>(&m_)) return {n->mean, n->sd};
    if (const auto* g = std::get_if<GammaMargin>(&m_)) return {g->shape, g->scale};
    if (const auto* s = std::get_if<SkewTMargin>(&m_)) return {s->xi, s->omega, s->gamma1, s->gamma2};
    return {};
}

std::vector<std::string> MarginModel::param_names(MarginKind k) {
    switch (k) {
        case MarginKind::Normal: return {"mean", "sd"};
        case MarginKind::Gamma: return {"shape", "scale"};
        case MarginKind::SkewT: return {"xi", "omega", "gamma1", "gamma2"};
        default: return {};
    }
}

MarginModel MarginModel::with_params(std::span<const double> t) const {
    const auto need = param_names(kind()).size();
    if (need == 0) throw std::invalid_argument("margin has no parametric form");
    if (t.size() != need) throw std::invalid_argument("margin parameter vector has wrong length");
    switch (kind()) {
        case MarginKind::Normal: return normal(t[0], t[1]);
        case MarginKind::Gamma: return gamma(t[0], t[1]);
        default: return skew_t(t[0], t[1], t[2], t[3]);
    }
}

nlohmann::json MarginModel::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind());
    std::visit(
        [&j](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, KdeMargin>) {
                j["sample"] = m.sample;
                j["bandwidths"] = m.bandwidths;
            } else if constexpr (std::is_same_v<T, SkewTMargin>) {
                j["xi"] = m.xi;
                j["omega"] = m.omega;
                j["gamma1"] = m.gamma1;
                j["gamma2"] = m.gamma2;
            } else if constexpr (std::is_same_v<T, GammaMargin>) {
                j["shape"] = m.shape;
                j["scale"] = m.scale;
            } else if constexpr (std::is_same_v<T, EmpiricalMargin>) {
                j["knots"] = m.knots;
                j["probs"] = m.probs;
            } else {
                j["mean"] = m.mean;
                j["sd"] = m.sd;
            }
        },
        m_);
    return j;
}

MarginModel MarginModel::from_json(const nlohmann::json& j) {
    const std::string k = j.at("kind").get<std::string>();
    if (k == "kde")
        return kde(j.at("sample").get<std::vector<double>>(), j.at("bandwidths").get<std::vector<double>>());
    if (k == "skewt")
        return skew_t(j.at("xi").get<double>(), j.at("omega").get<double>(), j.at("gamma1").get<double>(),
                      j.at("gamma2").get<double>());
    if (k == "gamma") return gamma(j.at("shape").get<double>(), j.at("scale").get<double>());
    if (k == "normal") return normal(j.at("mean").get<double>(), j.at("sd").get<double>());
    if (k == "empirical") {
        EmpiricalMargin e{j.at("knots").get<std::vector<double>>(), j.at("probs").get<std::vector<double>>()};
        if (e.knots.size() != e.probs.size() || e.knots.size() < 3)
            throw std::invalid_argument("empirical margin: malformed record");
        return MarginModel(std::move(e));
    }
    throw std::invalid_argument("unknown margin kind '" + k + "'");
}

double margin_cdf(const MarginModel& m, double y) { return m.cdf(y); }
double margin_pdf(const MarginModel& m, double y) { return m.pdf(y); }
double margin_quantile(const MarginModel& m, double u) { return m.quantile(u); }

std::vector<double> to_copula_data(const MarginModel& m, std::span<const double> y) {
    std::vector<double> u(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) u[i] = std::clamp(m.cdf(y[i]), kUClamp, 1.0 - kUClamp);
    return u;
}

// ---------------------------------------------------------------- adaptive KDE

namespace {

double logexp(double x) { return x < 1e2 ? std::log1p(std::exp(x)) : x; }
double ilogexp(double x) { return x < 1e2 ? std::log(std::expm1(x)) : x; }

// Gaussian smoothing of a binned signal by multiplication in the frequency
// domain, zero padded to n points. `w` is the kernel sd in bins.
class FftSmoother {
public:
    FftSmoother(std::size_t len, std::size_t n) : len_(len), n_(n) {}

    std::vector<std::complex<double>> forward(const std::vector<double>& x) {
        std::vector<double> pad(n_, 0.0);
        std::copy(x.begin(), x.end(), pad.begin());
        std::vector<std::complex<double>> out;
        fft_.fwd(out, pad);
        return out;
    }

    std::vector<double> smooth(const std::vector<std::complex<double>>& X, double w) {
        std::vector<std::complex<double>> Y(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            const double f = (i <= n_ / 2 ? static_cast<double>(i) : static_cast<double>(n_ - i)) / n_;
            const double a = w * 2.0 * kPi * f;
            Y[i] = X[i] * std::exp(-0.5 * a * a);
        }
        std::vector<double> y;
        fft_.inv(y, Y);
        y.resize(len_);
        return y;
    }

private:
    std::size_t len_, n_;
    Eigen::FFT<double> fft_;
};

struct SsGrid {
    std::vector<double> t;     // bin centres
    std::vector<double> hist;  // counts / bin width
    std::vector<double> win;   // candidate bandwidths
    std::vector<std::vector<double>> optws;  // [window i][bin k]
    double dt = 0.0;
    double n = 0.0;
};

// Stiffness-g cost of the variable-bandwidth estimate, returning the smoothed
// bandwidth path through `optwp`.
double ss_cost(const SsGrid& s, double g, std::vector<double>& optwp) {
    const std::size_t L = s.t.size(), M = s.win.size();
    std::vector<double> optwv(L);
    for (std::size_t k = 0; k < L; ++k) {
        double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
        std::ptrdiff_t last = -1;
        for (std::size_t i = 0; i < M; ++i) {
            const double gs = s.optws[i][k] / s.win[i];
            gmin = std::min(gmin, gs);
            gmax = std::max(gmax, gs);
            if (gs >= g) last = static_cast<std::ptrdiff_t>(i);
        }
        if (g > gmax) optwv[k] = s.win.front();
        else if (g < gmin) optwv[k] = s.win.back();
        else optwv[k] = g * s.win[static_cast<std::size_t>(last)];
    }
    // Nadaraya-Watson smoothing of the bandwidth path.
    optwp.assign(L, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            const double w = optwv[j] / g;
            const double z = norm_pdf((s.t[k] - s.t[j]) / w) / w;
            num += optwv[j] * z;
            den += z;
        }
        optwp[k] = num / den;
    }
    // Sample-point estimate with the smoothed path (each bin's kernel uses the
    // bandwidth at its own location), then its integrated cost.
    std::vector<double> yv(L, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            if (s.hist[j] == 0.0) continue;
            acc += s.hist[j] * s.dt * norm_pdf((s.t[k] - s.t[j]) / optwp[j]) / optwp[j];
        }
        yv[k] = acc;
        total += acc * s.dt;
    }
    double cost = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
        const double y = yv[k] * s.n / total;  // rescaled to integrate to n
        cost += (y * y - 2.0 * y * s.hist[k] + 2.0 * kInvSqrt2Pi / optwp[k] * s.hist[k]) * s.dt;
    }
    return cost;
}

}  // namespace

KdeBandwidthPath ss_variable_bandwidth(std::span<const double> sample, int grid_size) {
    if (sample.size() < 30) throw std::invalid_argument("insufficient data");
    std::vector<double> x(sample.begin(), sample.end());
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("invalid sample");
    std::sort(x.begin(), x.end());
    const double range = x.back() - x.front();
    if (!(range > 0.0)) throw std::invalid_argument("invalid sample");
    if (grid_size < 16) throw std::invalid_argument("kde grid too small");

    SsGrid s;
    const std::size_t L = static_cast<std::size_t>(grid_size);
    s.dt = range / (L - 1.0);
    s.n = static_cast<double>(x.size());
    s.t.resize(L);
    for (std::size_t k = 0; k < L; ++k) s.t[k] = x.front() + k * s.dt;
    s.hist.assign(L, 0.0);
    for (double v : x) {
        const auto k = static_cast<std::size_t>(
            std::clamp(std::floor((v - x.front()) / s.dt + 0.5), 0.0, static_cast<double>(L - 1)));
        s.hist[k] += 1.0;
    }
    for (auto& h : s.hist) h /= s.dt;  // counts per unit, as the cost scaling expects

    const std::size_t M = 80;
    const double wmin = 2.0 * s.dt, wmax = range;
    s.win.resize(M);
    const double a0 = ilogexp(wmin), b0 = ilogexp(wmax);
    for (std::size_t j = 0; j < M; ++j) s.win[j] = logexp(a0 + (b0 - a0) * j / (M - 1.0));

    std::size_t nfft = 1;
    while (nfft < L + 3 * static_cast<std::size_t>(std::ceil(wmax / s.dt))) nfft <<= 1;
    FftSmoother fft(L, nfft);

    // Local MISE integrand for each candidate bandwidth.
    const auto H = fft.forward(s.hist);
    std::vector<std::vector<std::complex<double>>> Cf(M);
    for (std::size_t j = 0; j < M; ++j) {
        const double w = s.win[j];
        const auto yh = fft.smooth(H, w / s.dt);
        std::vector<double> c(L);
        for (std::size_t k = 0; k < L; ++k)
            c[k] = yh[k] * yh[k] - 2.0 * yh[k] * s.hist[k] + 2.0 * kInvSqrt2Pi / w * s.hist[k];
        Cf[j] = fft.forward(c);
    }
    // For each smoothing window, the locally optimal bandwidth at every bin.
    s.optws.assign(M, std::vector<double>(L));
    std::vector<double> best(L);
    std::vector<std::size_t> arg(L);
    for (std::size_t i = 0; i < M; ++i) {
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < M; ++j) {
            const auto cl = fft.smooth(Cf[j], s.win[i] / s.dt);
            for (std::size_t k = 0; k < L; ++k)
                if (cl[k] < best[k]) {
                    best[k] = cl[k];
                    arg[k] = j;
                }
        }
        for (std::size_t k = 0; k < L; ++k) s.optws[i][k] = s.win[arg[k]];
    }

    // Golden-section search over the stiffness g in (0, 1].
    const double phi = 0.5 * (std::sqrt(5.0) + 1.0), tol = 1e-5;
    double a = 1e-12, b = 1.0;
    double c1 = (phi - 1.0) * a + (2.0 - phi) * b;
    double c2 = (2.0 - phi) * a + (phi - 1.0) * b;
    std::vector<double> p1, p2;
    double f1 = ss_cost(s, c1, p1), f2 = ss_cost(s, c2, p2);
    for (int k = 0; k < 30 && std::abs(b - a) > tol * (std::abs(c1) + std::abs(c2)); ++k) {
        if (f1 < f2) {
            b = c2;
            c2 = c1;
            p2 = p1;
            f2 = f1;
            c1 = (phi - 1.0) * a + (2.0 - phi) * b;
            f1 = ss_cost(s, c1, p1);
        } else {
            a = c1;
            c1 = c2;
            p1 = p2;
            f1 = f2;
            c2 = (2.0 - phi) * a + (phi - 1.0) * b;
            f2 = ss_cost(s, c2, p2);
        }
    }
    KdeBandwidthPath out;
    out.grid = s.t;
    if (f1 < f2) {
        out.bandwidth = std::move(p1);
        out.stiffness = c1;
    } else {
        out.bandwidth = std::move(p2);
        out.stiffness = c2;
    }
    return out;
}

MarginModel kde_fit(std::span<const double> sample, int grid_size) {
    const auto path = ss_variable_bandwidth(sample, grid_size);
    std::vector<double> x(sample.begin(), sample.end()), h(sample.size());
    const double t0 = path.grid.front(), dt = path.grid[1] - path.grid[0];
    const std::size_t L = path.grid.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double pos = std::clamp((x[i] - t0) / dt, 0.0, static_cast<double>(L - 1));
        const std::size_t k = std::min(static_cast<std::size_t>(pos), L - 2);
        const double w = pos - k;
        h[i] = (1.0 - w) * path.bandwidth[k] + w * path.bandwidth[k + 1];
    }
    return MarginModel::kde(std::move(x), std::move(h));
}

}  // namespace invcop

namespace invcop {

namespace {

double sample_skew(std::span<const double> x, double m, double sd) {
    double s = 0.0;
    for (double v : x) s += std::pow((v - m) / sd, 3);
    return s / static_cast<double>(x.size());
}

double sample_kurt(std::span<const double> x, double m, double sd) {
    double s = 0.0;
    for (double v : x) s += std::pow((v - m) / sd, 4);
    return s / static_cast<double>(x.size());
}

double margin_loglik(const MarginModel& m, std::span<const double> x) {
    double l = 0.0;
    for (double v : x) l += m.logpdf(v);
    return l;
}

}  // namespace

MarginModel fit_margin(MarginKind kind, std::span<const double> sample) {
    if (sample.size() < 2) throw std::invalid_argument("insufficient data");
    for (double v : sample)
        if (!std::isfinite(v)) throw std::invalid_argument("invalid sample");
    const double m = mean_of(sample);
    const double sd = std::sqrt(variance_of(sample));
    switch (kind) {
        case MarginKind::Kde: return kde_fit(sample);
        case MarginKind::Empirical: return MarginModel::empirical(sample);
        case MarginKind::Normal: return MarginModel::normal(m, sd);
        case MarginKind::Gamma: {
            if (*std::min_element(sample.begin(), sample.end()) <= 0.0)
                throw std::invalid_argument("gamma margin needs positive data");
            auto nll = [&](std::span<const double> v) {
                return -margin_loglik(MarginModel::gamma(std::exp(v[0]), std::exp(v[1])), sample);
            };
            const double k0 = m * m / (sd * sd);
            const auto r = nelder_mead(nll, {std::log(k0), std::log(sd * sd / m)});
            return MarginModel::gamma(std::exp(r.x[0]), std::exp(r.x[1]));
        }
        case MarginKind::SkewT: {
            auto build = [](std::span<const double> v) {
                return MarginModel::skew_t(v[0], std::exp(v[1]), v[2], v[3]);
            };
            auto nll = [&](std::span<const double> v) {
                try {
                    return -margin_loglik(build(v), sample);
                } catch (const std::domain_error&) {
                    return std::numeric_limits<double>::infinity();
                }
            };
            std::vector<double> start{m, std::log(sd), 0.0, 6.0};
            const double g1 = std::clamp(sample_skew(sample, m, sd), -1.5, 1.5);
            const double g2 = std::max(sample_kurt(sample, m, sd), 4.0 + g1 * g1 * 2.0);
            if (std::isfinite(nll(std::vector<double>{m, std::log(sd), g1, g2}))) start = {m, std::log(sd), g1, g2};
            auto r = nelder_mead(nll, start, {.max_evals = 3000, .ftol = 1e-9, .xtol = 1e-7, .step = {0.2 * sd, 0.2, 0.2, 1.0}});
            // One restart from the optimum refreshes a collapsed simplex.
            r = nelder_mead(nll, r.x, {.max_evals = 2000, .ftol = 1e-10, .xtol = 1e-8, .step = {0.05 * sd, 0.05, 0.05, 0.3}});
            return build(r.x);
        }
    }
    throw std::invalid_argument("unknown margin kind");
}

}  // namespace invcop
