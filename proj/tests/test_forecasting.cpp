#include <gtest/gtest.h>

#include <algorithm>

#include "invcop/filters.hpp"
#include "invcop/forecasting.hpp"

using namespace invcop;

namespace {

// Max distance between the empirical cdf of x and a cdf F.
template <class F>
double ks_distance(std::vector<double> x, F&& cdf) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    return d;
}

// z_{T+l} | z_{1:T} for a UCAR model by dense Gaussian conditioning.
std::pair<double, double> dense_conditional(const UcarParams& p, std::span<const double> z, int l) {
    const int T = static_cast<int>(z.size());
    const auto a = ucar_autocovariance(p, T + l);
    Eigen::MatrixXd S(T, T);
    Eigen::VectorXd c(T), zz(T);
    for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) S(i, j) = a[std::abs(i - j)];
        c(i) = a[T - 1 + l - i];
        zz(i) = z[i];
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    return {c.dot(ldlt.solve(zz)), 1.0 - c.dot(ldlt.solve(c))};
}

const SsmSpec kMsar = make_spec(constrain_msar(0.040, 0.207, 0.914, 0.199, 0.865, 0.930));
const SsmSpec kSvuc = make_spec(constrain_svuc(0.959, 0.789, 0.066, 0.603));

}  // namespace

TEST(Forecast, IndependentLatentGivesMarginItself) {
    const auto spec = make_spec(constrain_ucar({0.5}, 0.0));
    const std::vector<double> y{2.0, 2.1, 1.9, 2.5};
    const auto d = predictive_sample(point_model(spec, MarginModel::normal(0.0, 1.0)), y, 1, 5000, 3);
    // 1% critical value of the one-sample KS statistic.
    EXPECT_LT(ks_distance(d.sample, [](double v) { return norm_cdf(v); }), 1.63 / std::sqrt(5000.0));
}

TEST(Forecast, IdentityMarginMatchesGaussianConditioning) {
    const auto p = constrain_ucar({0.7}, 0.25);
    const auto path = simulate(make_spec(p), 60, 4);
    const auto model = point_model(make_spec(p), MarginModel::normal(0.0, 1.0));
    for (int l : {1, 3}) {
        const auto [m, v] = dense_conditional(p, path.z, l);
        const auto d = predictive_density_grid(model, path.z, l);
        for (std::size_t i = 0; i < d.grid.size(); i += 17)
            EXPECT_NEAR(d.density[i], norm_pdf((d.grid[i] - m) / std::sqrt(v)) / std::sqrt(v), 1e-6);
        EXPECT_NEAR(d.grid_mass(), 1.0, 1e-3);
        EXPECT_TRUE(d.warnings.empty());
        // Monte Carlo moments of the sample route.
        const auto s = predictive_sample(model, path.z, l, 20000, 11);
        EXPECT_NEAR(mean_of(s.sample), m, 4.0 * std::sqrt(v / 20000));
        EXPECT_NEAR(variance_of(s.sample), v, 4.0 * v * std::sqrt(2.0 / 20000));
    }
}

TEST(Forecast, UcarFourMatchesGaussianConditioning) {
    const auto p = constrain_ucar({0.866, 0.371, -0.037, 0.113}, 0.181);
    const auto path = simulate(make_spec(p), 40, 8);
    const auto lat = latent_predictive(point_model_direct(make_spec(p), 0.0, 1.0), path.z, 2);
    const auto [m, v] = dense_conditional(p, path.z, 2);
    ASSERT_EQ(lat.size(), 1u);
    EXPECT_NEAR(lat[0][0].mean, m, 1e-9);
    EXPECT_NEAR(lat[0][0].var, v, 1e-9);
}

TEST(Forecast, DirectMapRescalesLatentDensity) {
    const auto p = constrain_ucar({0.6}, 0.3);
    const auto path = simulate(make_spec(p), 30, 2);
    std::vector<double> y;
    for (double v : path.z) y.push_back(5.0 + 2.0 * v);
    const auto d = predictive_density_grid(point_model_direct(make_spec(p), 5.0, 2.0), y, 1);
    const auto [m, v] = dense_conditional(p, path.z, 1);
    EXPECT_NEAR(d.mean(), 5.0 + 2.0 * m, 1e-4);
    EXPECT_NEAR(d.sd(), 2.0 * std::sqrt(v), 1e-4);
    EXPECT_NEAR(d.logpdf(6.0), norm_logpdf((6.0 - 5.0) / 2.0, m, v) - std::log(2.0), 1e-10);
}

TEST(Forecast, DensityGridsIntegrateToOne) {
    const std::vector<std::pair<SsmSpec, MarginModel>> cases{
        {make_spec(constrain_ucar({0.866, 0.371, -0.037, 0.113}, 0.181)), MarginModel::gamma(2.0, 2.0)},
        {kMsar, MarginModel::skew_t(0.202, 0.549, 1.565, 7.89)},
        {kSvuc, MarginModel::normal(1.0, 0.5)},
    };
    for (const auto& [spec, g] : cases) {
        const auto model = point_model(spec, g);
        const auto path = simulate(spec, 80, 21);
        std::vector<double> y;
        for (double v : path.z) y.push_back(g.quantile(latent_cdf(spec, v)));
        for (int l : {1, 4}) {
            const auto d = predictive_density_grid(model, y, l);
            EXPECT_NEAR(d.grid_mass(), 1.0, 1e-3) << to_string(spec.kind) << " l=" << l;
            EXPECT_TRUE(d.warnings.empty()) << to_string(spec.kind);
            for (double f : d.density) ASSERT_GE(f, 0.0);
        }
    }
}

TEST(Forecast, SampleAgreesWithGrid) {
    for (const auto& spec : {kMsar, kSvuc}) {
        const auto g = MarginModel::gamma(2.0, 2.0);
        const auto model = point_model(spec, g);
        const auto path = simulate(spec, 100, 5);
        std::vector<double> y;
        for (double v : path.z) y.push_back(g.quantile(latent_cdf(spec, v)));
        const auto d = predictive_sample(model, y, 1, 10000, 17);
        // Integrated grid density as the reference cdf.
        const auto grid = predictive_density_grid(model, y, 1);
        std::vector<double> F(grid.grid.size(), 0.0);
        for (std::size_t i = 1; i < F.size(); ++i)
            F[i] = F[i - 1] + 0.5 * (grid.grid[i] - grid.grid[i - 1]) * (grid.density[i] + grid.density[i - 1]);
        auto cdf = [&](double v) {
            if (v <= grid.grid.front()) return 0.0;
            if (v >= grid.grid.back()) return 1.0;
            const auto it = std::upper_bound(grid.grid.begin(), grid.grid.end(), v);
            const std::size_t i = static_cast<std::size_t>(it - grid.grid.begin());
            const double w = (v - grid.grid[i - 1]) / (grid.grid[i] - grid.grid[i - 1]);
            return F[i - 1] + w * (F[i] - F[i - 1]);
        };
        EXPECT_LT(ks_distance(d.sample, cdf), 0.02) << to_string(spec.kind);
    }
}

TEST(Forecast, QuantilesTransformLatentQuantiles) {
    const auto g = MarginModel::skew_t(0.202, 0.549, 1.565, 7.89);
    const auto model = point_model(kMsar, g);
    const auto path = simulate(kMsar, 50, 6);
    std::vector<double> y;
    for (double v : path.z) y.push_back(g.quantile(latent_cdf(kMsar, v)));
    const auto d = predictive_density_grid(model, y, 2);
    const auto lat = latent_predictive(model, y, 2)[0];
    auto latent_cdf_mix = [&](double z) {
        double F = 0.0, W = 0.0;
        for (const auto& c : lat) {
            F += c.weight * norm_cdf((z - c.mean) / std::sqrt(c.var));
            W += c.weight;
        }
        return F / W;
    };
    const auto& map = model.draws[0].map;
    for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) {
        double lo = -20.0, hi = 20.0;
        for (int k = 0; k < 200; ++k) {
            const double mid = 0.5 * (lo + hi);
            (latent_cdf_mix(mid) < p ? lo : hi) = mid;
        }
        const double want = g.quantile(map.table()->cdf(0.5 * (lo + hi)));
        // The spline quantile and cdf maps are inverses only to about 1e-6.
        EXPECT_NEAR(d.quantile(p), want, 2e-6 * (1.0 + std::abs(want))) << p;
        EXPECT_NEAR(d.mixture.quantile(p), want, 2e-6 * (1.0 + std::abs(want))) << p;
    }
}

TEST(Forecast, SwitchingMultiStepMatchesSimulation) {
    const auto path = simulate(kMsar, 40, 12);
    const auto model = point_model_direct(kMsar, 0.0, 1.0);
    constexpr int l = 3;
    const auto lat = latent_predictive(model, path.z, l)[0];
    double m = 0.0, m2 = 0.0;
    for (const auto& c : lat) {
        m += c.weight * c.mean;
        m2 += c.weight * (c.var + c.mean * c.mean);
    }
    // Oracle: draw s_T from the Hamilton filter, then run the process forward.
    const auto f = hamilton_filter(path.z, kMsar.msar());
    Rng rng(3);
    std::uniform_real_distribution<double> unif;
    LatentProcess proc(kMsar);
    constexpr int J = 200000;
    std::vector<double> x(J);
    for (auto& v : x) {
        const int s = unif(rng) < std::exp(f.log_prob.back()[0]) ? 0 : 1;
        proc.set_state({}, 0.0, s, path.z.back());
        for (int k = 0; k < l; ++k) v = proc.next(rng);
    }
    const double v = m2 - m * m;
    EXPECT_NEAR(mean_of(x), m, 4.0 * std::sqrt(v / J));
    EXPECT_NEAR(variance_of(x), v, 4.0 * v * std::sqrt(2.0 / J));
}

TEST(Forecast, ConstantVolatilityMatchesKalman) {
    // With a nearly frozen log-volatility SVUC is a UCAR(1) with noise
    // variance exp(zeta_bar).
    const auto sv = constrain_svuc(0.8, 0.0, 0.2, 1e-8);
    const auto spec = make_spec(sv);
    const auto path = simulate(spec, 50, 9);
    const auto f = kalman_ar_plus_noise(path.z, std::vector<double>{0.8}, 0.2, std::exp(sv.zeta_bar));
    const auto rolled = rolling_one_step(point_model_direct(spec, 0.0, 1.0), path.z);
    for (std::size_t t = 1; t < path.z.size(); t += 7) {
        const auto& d = rolled[t - 1];
        EXPECT_NEAR(d.mean(), f.pred_mean[t], 0.02) << t;
        EXPECT_NEAR(d.sd(), std::sqrt(f.pred_var[t]), 0.02) << t;
    }
}

TEST(Forecast, RollingMatchesPrefixForecasts) {
    const auto spec = make_spec(constrain_ucar({0.7, 0.2}, 0.25));
    const auto path = simulate(spec, 30, 13);
    std::vector<double> y;
    for (double v : path.z) y.push_back(1.0 + 0.5 * v);
    const auto model = point_model_direct(spec, 1.0, 0.5);
    const auto rolled = rolling_one_step(model, y);
    ASSERT_EQ(rolled.size(), y.size() - 1);
    for (std::size_t t : {1u, 10u, 29u}) {
        const auto d = predictive_density_grid(model, std::span<const double>(y).first(t), 1);
        EXPECT_EQ(rolled[t - 1].target, t);
        EXPECT_NEAR(rolled[t - 1].mean(), d.mean(), 1e-9);
        EXPECT_NEAR(rolled[t - 1].logpdf(y[t]), d.logpdf(y[t]), 1e-9);
    }
    // A UCAR predictive is one normal per draw.
    EXPECT_EQ(rolled[0].mixture.parts()[0].comps.size(), 1u);
}

TEST(Forecast, SkewedMarginMakesHomoskedasticModelHeteroskedastic) {
    const auto spec = make_spec(constrain_ucar({0.866, 0.371, -0.037, 0.113}, 0.181));
    const auto g = MarginModel::gamma(2.0, 2.0);
    const auto path = simulate(spec, 120, 4);
    std::vector<double> y;
    for (double v : path.z) y.push_back(g.quantile(norm_cdf(v)));
    const auto rolled = rolling_one_step(point_model(spec, g), y, {.grid_size = 256});
    std::vector<double> sds;
    for (const auto& d : rolled) sds.push_back(d.sd());
    const auto [lo, hi] = std::minmax_element(sds.begin(), sds.end());
    EXPECT_GT(*hi - *lo, 0.1 * sample_quantile(sds, 0.5));
    const auto csv = predictive_summaries_csv(rolled);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,mean,sd,p_below_zero,q05,q25,q50,q75,q95");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(rolled.size()) + 1);
}

TEST(Forecast, PosteriorIntegratedPredictive) {
    const auto truth = make_spec(constrain_ucar({0.7}, 0.25));
    const auto path = simulate(truth, 200, 41);
    const auto g = MarginModel::normal(0.0, 1.0);
    McmcInput in;
    in.data = to_copula_data(g, path.z);
    in.start = default_spec(ModelKind::Ucar, 1);
    McmcConfig cfg;
    cfg.burnin = 300;
    cfg.draws = 600;
    const auto tr = mcmc_fit(in, cfg);
    const auto model = trace_model(tr, 50, g);
    EXPECT_EQ(model.draws.size(), 50u);
    const auto d = predictive_density_grid(model, path.z, 1);
    EXPECT_NEAR(d.grid_mass(), 1.0, 1e-3);
    EXPECT_EQ(d.provenance, "posterior(50 draws)");
    // Mixing over draws widens the predictive relative to its average member.
    const auto lat = latent_predictive(model, path.z, 1);
    double mean_var = 0.0;
    for (const auto& m : lat) mean_var += m[0].var / lat.size();
    EXPECT_GE(d.sd() * d.sd(), mean_var - 1e-6);
    EXPECT_THROW(trace_model(tr, 10), std::invalid_argument);
}

TEST(Forecast, SvucTerminalStatesFromTrace) {
    const auto path = simulate(kSvuc, 150, 2);
    McmcInput in;
    in.data.clear();
    for (double v : path.z) in.data.push_back(latent_cdf(kSvuc, v));
    in.start = kSvuc;
    McmcConfig cfg;
    cfg.burnin = 50;
    cfg.draws = 100;
    cfg.init_from_states = false;
    const auto tr = mcmc_fit(in, cfg);
    const auto g = MarginModel::normal(0.0, 1.0);
    const auto model = trace_model(tr, 20, g);
    ASSERT_TRUE(model.draws[0].terminal.has_value());
    std::vector<double> y;
    for (double u : in.data) y.push_back(g.quantile(u));
    const auto d = predictive_density_grid(model, y, 2);
    EXPECT_NEAR(d.grid_mass(), 1.0, 1e-3);
    // One terminal state per draw, nine log-volatility nodes each.
    EXPECT_EQ(d.mixture.parts()[0].comps.size(), 9u);
}

TEST(Forecast, ReproducibleUnderFixedSeed) {
    const auto model = point_model(kSvuc, MarginModel::gamma(2.0, 2.0));
    const std::vector<double> y{3.0, 4.0, 2.5, 5.0, 3.5};
    const auto a = predictive_sample(model, y, 1, 200, 7);
    const auto b = predictive_sample(model, y, 1, 200, 7);
    const auto c = predictive_sample(model, y, 1, 200, 8);
    EXPECT_EQ(a.sample, b.sample);
    EXPECT_NE(a.sample, c.sample);
}

TEST(Forecast, RejectsBadInput) {
    const auto model = point_model_direct(make_spec(constrain_ucar({0.5}, 0.2)), 0.0, 1.0);
    const std::vector<double> y{0.1, 0.2};
    EXPECT_THROW(predictive_sample(model, y, 0, 10, 1), std::invalid_argument);
    EXPECT_THROW(predictive_sample(model, {}, 1, 10, 1), std::invalid_argument);
    EXPECT_THROW(predictive_density_grid(model, y, 1, {1.0, 0.0}), std::invalid_argument);
    const auto narrow = predictive_density_grid(model, y, 1, {-0.1, 0.0, 0.1});
    EXPECT_FALSE(narrow.warnings.empty());
    EXPECT_THROW(ObservationMap::direct(0.0, -1.0), std::invalid_argument);
}
