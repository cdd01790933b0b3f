#include <gtest/gtest.h>

#include <algorithm>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include "invcop/margins.hpp"
#include "invcop/numerics.hpp"

using namespace invcop;

namespace {

std::vector<double> normal_sample(std::size_t n, unsigned seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> x(n);
    for (auto& v : x) v = nd(rng);
    return x;
}

std::vector<double> gamma_sample(std::size_t n, double k, double s, unsigned seed) {
    Rng rng(seed);
    std::gamma_distribution<double> gd(k, s);
    std::vector<double> x(n);
    for (auto& v : x) v = gd(rng);
    return x;
}

// Skew t draws from the stochastic representation, independent of the cdf.
std::vector<double> skew_t_sample(const SkewTMargin& m, std::size_t n, unsigned seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::chi_squared_distribution<double> chi(m.nu);
    std::vector<double> x(n);
    for (auto& v : x) {
        const double z = m.delta * std::abs(nd(rng)) + std::sqrt(1 - m.delta * m.delta) * nd(rng);
        v = m.xi + m.omega * z / std::sqrt(chi(rng) / m.nu);
    }
    return x;
}

double ks_uniform(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
    return d * std::sqrt(n);
}

constexpr double kKs1pct = 1.628;

std::vector<MarginModel> parametric_variants() {
    return {MarginModel::normal(0.3, 1.7), MarginModel::gamma(2.0, 2.0),
            MarginModel::skew_t(0.202, 0.549, 1.565, 7.89), MarginModel::skew_t(-1.0, 2.0, -0.4, 4.0),
            MarginModel::skew_t(0.0, 1.0, 0.0, 5.0)};
}

}  // namespace

TEST(Kde, RecoversStandardNormalDensity) {
    const auto m = kde_fit(normal_sample(10000, 1));
    EXPECT_EQ(m.kind(), MarginKind::Kde);
    EXPECT_NEAR(m.pdf(0.0), norm_pdf(0.0), 0.02);
    EXPECT_NEAR(m.cdf(0.0), 0.5, 0.02);
}

TEST(Kde, RejectsBadSamples) {
    std::vector<double> zeros(100, 0.0);
    try {
        kde_fit(zeros);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "invalid sample");
    }
    auto few = normal_sample(29, 2);
    try {
        kde_fit(few);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "insufficient data");
    }
    auto bad = normal_sample(50, 3);
    bad[7] = std::nan("");
    EXPECT_THROW(kde_fit(bad), std::invalid_argument);
}

TEST(Kde, RightSkewedSampleGivesRightSkewedFit) {
    // 240 draws with skew near 1.3, standing in for a monthly inflation series.
    const auto y = gamma_sample(240, 2.3, 1.0, 4);
    const auto m = kde_fit(y);
    EXPECT_GT(m.cdf(mean_of(y)), 0.5);
}

TEST(Kde, StrictlyIncreasingOnExtendedHull) {
    const auto y = gamma_sample(300, 2.0, 1.0, 5);
    const auto m = kde_fit(y);
    const auto* k = m.as_kde();
    ASSERT_NE(k, nullptr);
    const double hmax = *std::max_element(k->bandwidths.begin(), k->bandwidths.end());
    const double lo = k->sample.front() - 3 * hmax, hi = k->sample.back() + 3 * hmax;
    double prev = -1.0;
    for (int i = 0; i <= 2000; ++i) {
        const double c = m.cdf(lo + (hi - lo) * i / 2000.0);
        ASSERT_GT(c, prev);
        prev = c;
    }
}

TEST(Kde, AdaptiveBandwidthsNarrowWhereDataAreDense) {
    const auto y = gamma_sample(2000, 1.5, 1.0, 6);
    const auto path = ss_variable_bandwidth(y);
    ASSERT_EQ(path.grid.size(), 512u);
    const auto at = [&](double v) {
        const auto it = std::lower_bound(path.grid.begin(), path.grid.end(), v);
        return path.bandwidth[it - path.grid.begin()];
    };
    EXPECT_LT(at(0.8), at(6.0));
}

TEST(Gamma, ClosedFormDensityAndSkew) {
    const auto m = MarginModel::gamma(2.0, 2.0);
    EXPECT_NEAR(m.pdf(2.0), 0.5 * std::exp(-1.0), 1e-14);
    // Skew coefficient by quadrature of the central moments.
    boost::math::quadrature::tanh_sinh<double> ts;
    auto mom = [&](auto f) { return ts.integrate([&](double y) { return f(y) * m.pdf(y); }, 0.0, 200.0); };
    const double mu = mom([](double y) { return y; });
    const double v = mom([&](double y) { return (y - mu) * (y - mu); });
    const double m3 = mom([&](double y) { return std::pow(y - mu, 3); });
    EXPECT_NEAR(m3 / std::pow(v, 1.5), 1.41, 0.005);
}

TEST(SkewT, SymmetricCaseHasMedianAtLocation) {
    const auto m = MarginModel::skew_t(0.7, 1.3, 0.0, 6.0);
    EXPECT_NEAR(m.cdf(0.7), 0.5, 1e-12);
    EXPECT_NEAR(m.as_skew_t()->nu, 6.0, 1e-8);  // kurtosis 3 + 6/(nu-4)
}

TEST(SkewT, MomentsOfFittedDensityMatchRequestedCoefficients) {
    for (auto [g1, g2] : {std::pair{1.565, 7.89}, {-0.4, 4.0}, {0.2, 3.5}, {1.0, 6.0}}) {
        const auto m = MarginModel::skew_t(0.0, 1.0, g1, g2);
        auto mom = [&](auto f) {
            return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                [&](double y) { return f(y) * m.pdf(y); }, -300.0, 300.0, 15, 1e-12);
        };
        const double mu = mom([](double y) { return y; });
        const double v = mom([&](double y) { return (y - mu) * (y - mu); });
        const double m3 = mom([&](double y) { return std::pow(y - mu, 3); });
        const double m4 = mom([&](double y) { return std::pow(y - mu, 4); });
        EXPECT_NEAR(m3 / std::pow(v, 1.5), g1, 2e-3 * std::max(1.0, std::abs(g1))) << g1 << "," << g2;
        EXPECT_NEAR(m4 / (v * v), g2, 2e-2 * g2) << g1 << "," << g2;
    }
}

TEST(SkewT, ShapeMapIsBijective) {
    for (double delta : {-0.95, -0.5, 0.0, 0.3, 0.8, 0.99}) {
        for (double nu : {4.5, 6.0, 10.0, 40.0}) {
            const auto [g1, g2] = skew_t_moment_coefficients(delta, nu);
            const auto [d2, n2] = skew_t_shape_from_moments(g1, g2);
            EXPECT_NEAR(d2, delta, 1e-6) << delta << " " << nu;
            EXPECT_NEAR(n2, nu, 1e-5 * nu) << delta << " " << nu;
        }
    }
}

TEST(SkewT, InfeasibleMomentsRejected) {
    EXPECT_THROW(MarginModel::skew_t(0, 1, 1.565, 4.0), std::domain_error);  // too light tailed
    EXPECT_THROW(MarginModel::skew_t(0, 1, 0.0, 2.9), std::domain_error);
    EXPECT_THROW(MarginModel::skew_t(0, -1, 0.0, 5.0), std::domain_error);
}

TEST(Margins, RoundTripOnProbabilityGrid) {
    auto variants = parametric_variants();
    for (const auto& m : variants)
        for (int i = 1; i <= 99; ++i) {
            const double u = i / 100.0;
            EXPECT_NEAR(m.cdf(m.quantile(u)), u, 1e-8) << to_string(m.kind()) << " u=" << u;
        }
    const auto kde = kde_fit(gamma_sample(400, 2.0, 1.0, 7));
    for (int i = 1; i <= 99; ++i) EXPECT_NEAR(kde.cdf(kde.quantile(i / 100.0)), i / 100.0, 1e-6);
    const auto emp = MarginModel::empirical(normal_sample(200, 8));
    for (int i = 1; i <= 99; ++i) EXPECT_NEAR(emp.cdf(emp.quantile(i / 100.0)), i / 100.0, 1e-12);
    EXPECT_THROW(variants[0].quantile(0.0), std::domain_error);
    EXPECT_THROW(kde.quantile(1.0), std::domain_error);
}

TEST(Margins, PdfIsDerivativeOfCdf) {
    auto variants = parametric_variants();
    variants.push_back(kde_fit(normal_sample(300, 9)));
    for (const auto& m : variants) {
        for (int i = 1; i < 20; ++i) {
            const double y = m.quantile(i / 20.0), h = 1e-5;
            const double d = (m.cdf(y + h) - m.cdf(y - h)) / (2 * h);
            EXPECT_NEAR(d, m.pdf(y), 1e-6 * std::max(1.0, m.pdf(y))) << to_string(m.kind());
        }
    }
}

TEST(Margins, DensityIntegratesToOne) {
    auto variants = parametric_variants();
    variants.push_back(kde_fit(normal_sample(300, 10)));
    variants.push_back(MarginModel::empirical(gamma_sample(100, 2, 1, 11)));
    for (const auto& m : variants) {
        const double lo = m.quantile(1e-9), hi = m.quantile(1 - 1e-9);
        const double w = hi - lo;
        double s = 0.0;
        // Piecewise adaptive integration so the empirical kinks are resolved.
        for (int i = 0; i < 200; ++i) {
            const double a = lo - w + 3 * w * i / 200.0, b = lo - w + 3 * w * (i + 1) / 200.0;
            s += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                [&](double y) { return m.pdf(y); }, a, b, 10, 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-4) << to_string(m.kind());
    }
}

TEST(Margins, ProbabilityIntegralTransformIsUniform) {
    const std::size_t n = 20000;
    {
        const auto m = MarginModel::normal(0.3, 1.7);
        auto x = normal_sample(n, 12);
        for (auto& v : x) v = 0.3 + 1.7 * v;
        EXPECT_LT(ks_uniform(to_copula_data(m, x)), kKs1pct);
    }
    {
        const auto m = MarginModel::gamma(2.0, 2.0);
        EXPECT_LT(ks_uniform(to_copula_data(m, gamma_sample(n, 2.0, 2.0, 13))), kKs1pct);
    }
    for (auto [g1, g2] : {std::pair{1.565, 7.89}, {-0.4, 4.0}}) {
        const auto m = MarginModel::skew_t(0.202, 0.549, g1, g2);
        EXPECT_LT(ks_uniform(to_copula_data(m, skew_t_sample(*m.as_skew_t(), n, 14))), kKs1pct);
    }
    {
        // Draw from the fitted Gaussian mixture directly.
        const auto m = kde_fit(gamma_sample(500, 2.0, 1.0, 15));
        const auto* k = m.as_kde();
        Rng rng(16);
        std::uniform_int_distribution<std::size_t> pick(0, k->sample.size() - 1);
        std::normal_distribution<double> nd;
        std::vector<double> x(n);
        for (auto& v : x) {
            const auto i = pick(rng);
            v = k->sample[i] + k->bandwidths[i] * nd(rng);
        }
        EXPECT_LT(ks_uniform(to_copula_data(m, x)), kKs1pct);
    }
}

TEST(Margins, EmpiricalUsesRescaledRanks) {
    std::vector<double> y{3.0, 1.0, 2.0, 2.0, 5.0};
    const auto m = MarginModel::empirical(y);
    EXPECT_NEAR(m.cdf(1.0), 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(m.cdf(2.0), 3.0 / 6.0, 1e-15);
    EXPECT_NEAR(m.cdf(5.0), 5.0 / 6.0, 1e-15);
    EXPECT_GT(m.cdf(0.5), 0.0);
    EXPECT_LT(m.cdf(5.5), 1.0);
}

TEST(Margins, CopulaDataIsClamped) {
    const auto m = MarginModel::normal(0.0, 1.0);
    std::vector<double> y{-50.0, 0.0, 50.0};
    const auto u = to_copula_data(m, y);
    EXPECT_EQ(u[0], kUClamp);
    EXPECT_EQ(u[2], 1.0 - kUClamp);
}

TEST(Margins, JsonRoundTrip) {
    auto variants = parametric_variants();
    variants.push_back(kde_fit(normal_sample(100, 17)));
    variants.push_back(MarginModel::empirical(normal_sample(50, 18)));
    for (const auto& m : variants) {
        const auto j = nlohmann::json::parse(m.to_json().dump());
        const auto r = MarginModel::from_json(j);
        EXPECT_EQ(r.kind(), m.kind());
        for (double y : {-1.0, 0.2, 1.5}) EXPECT_DOUBLE_EQ(r.cdf(y), m.cdf(y));
    }
    EXPECT_THROW(MarginModel::from_json({{"kind", "weibull"}}), std::invalid_argument);
}

TEST(Margins, ParametricFamiliesRebuildFromParams) {
    for (const auto& m : parametric_variants()) {
        const auto p = m.params();
        EXPECT_EQ(p.size(), MarginModel::param_names(m.kind()).size());
        const auto r = m.with_params(p);
        EXPECT_DOUBLE_EQ(r.cdf(0.4), m.cdf(0.4));
    }
}

TEST(FitMargin, GammaMleSatisfiesScoreEquations) {
    Rng rng(8);
    std::gamma_distribution<double> gd(3.0, 0.5);
    std::vector<double> y(2000);
    for (auto& v : y) v = gd(rng);
    const auto g = fit_margin(MarginKind::Gamma, y);
    const double k = g.as_gamma()->shape, s = g.as_gamma()->scale;
    // Gamma MLE: k s = mean and log k - digamma(k) = log(mean) - mean(log y).
    double mlog = 0.0;
    for (double v : y) mlog += std::log(v) / y.size();
    EXPECT_NEAR(k * s, mean_of(y), 1e-4);
    EXPECT_NEAR(std::log(k) - boost::math::digamma(k), std::log(mean_of(y)) - mlog, 1e-5);
}

TEST(FitMargin, SkewTRecoversGeneratingParameters) {
    const auto truth = MarginModel::skew_t(0.2, 0.55, 1.2, 7.0);
    Rng rng(4);
    std::uniform_real_distribution<double> unif;
    std::vector<double> y(4000);
    for (auto& v : y) v = truth.quantile(unif(rng));
    const auto fit = fit_margin(MarginKind::SkewT, y);
    const auto* st = fit.as_skew_t();
    EXPECT_NEAR(st->xi, 0.2, 0.08);
    EXPECT_NEAR(st->omega, 0.55, 0.08);
    // The fit is a maximum: small perturbations do not improve the likelihood.
    auto ll = [&](const MarginModel& m) {
        double s = 0.0;
        for (double v : y) s += m.logpdf(v);
        return s;
    };
    const double best = ll(fit);
    const auto p = fit.params();
    for (std::size_t i = 0; i < p.size(); ++i)
        for (double d : {-1e-3, 1e-3}) {
            auto q = p;
            q[i] += d * std::max(1.0, std::abs(q[i]));
            try {
                EXPECT_LE(ll(fit.with_params(q)), best + 1e-6);
            } catch (const std::domain_error&) {
            }
        }
}

TEST(FitMargin, NormalUsesMoments) {
    const std::vector<double> y{1.0, 2.0, 4.0, 7.0};
    const auto m = fit_margin(MarginKind::Normal, y);
    EXPECT_DOUBLE_EQ(m.params()[0], 3.5);
    EXPECT_NEAR(m.params()[1], std::sqrt(variance_of(y)), 1e-12);
    EXPECT_THROW(fit_margin(MarginKind::Gamma, std::vector<double>{-1.0, 2.0}), std::invalid_argument);
}
