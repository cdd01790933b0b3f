#include <gtest/gtest.h>

#include <sstream>

#include "invcop/bayes.hpp"
#include "invcop/copula_density.hpp"

using namespace invcop;

namespace {

std::vector<double> normal_cdf_all(std::span<const double> z) {
    std::vector<double> u;
    for (double v : z) u.push_back(norm_cdf(v));
    return u;
}

McmcTrace run_ucar(std::vector<double> u, const SsmSpec& start, int burnin, int draws, std::uint64_t seed) {
    McmcInput in;
    in.mode = MarginMode::Fixed;
    in.data = std::move(u);
    in.start = start;
    McmcConfig cfg;
    cfg.burnin = burnin;
    cfg.draws = draws;
    cfg.seed = seed;
    return mcmc_fit(in, cfg);
}

// log N(z; 0, Sigma) with Sigma the UCAR autocovariance matrix.
double ucar_dense_loglik(std::span<const double> z, const UcarParams& p) {
    const int T = static_cast<int>(z.size());
    const auto a = ucar_autocovariance(p, T);
    Eigen::MatrixXd S(T, T);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) S(i, j) = a[std::abs(i - j)];
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    const Eigen::VectorXd y = llt.matrixL().solve(Eigen::Map<const Eigen::VectorXd>(z.data(), T));
    double l = -T * kLogSqrt2Pi - 0.5 * y.squaredNorm();
    for (int i = 0; i < T; ++i) l -= std::log(llt.matrixL()(i, i));
    return l;
}

}  // namespace

TEST(NrProposal, GaussianTargetIsFixedPoint) {
    auto f = [](double x) { return norm_logpdf(x, 3.0, 4.0); };
    const auto q = nr_truncnorm_proposal(f, -5.0, -INFINITY, INFINITY);
    EXPECT_NEAR(q.mean, 3.0, 1e-6);
    EXPECT_NEAR(q.var, 4.0, 1e-6);
    EXPECT_FALSE(q.flagged);
}

TEST(NrProposal, BetaTwoTwoCurvatureAtMode) {
    // log x + log(1 - x): second derivative -8 at x = 1/2.
    auto f = [](double x) { return std::log(x) + std::log1p(-x); };
    const auto q = nr_truncnorm_proposal(f, 0.1, 0.0, 1.0);
    EXPECT_NEAR(q.mean, 0.5, 1e-6);
    EXPECT_NEAR(q.var, 0.125, 1e-4);
}

TEST(NrProposal, ModeOutsideBoundsIsClampedAndFlagged) {
    auto f = [](double x) { return norm_logpdf(x, 5.0, 1.0); };
    const auto q = nr_truncnorm_proposal(f, 0.0, -1.0, 1.0);
    EXPECT_TRUE(q.flagged);
    EXPECT_DOUBLE_EQ(q.mean, 1.0);
}

TEST(NrProposal, FlatTargetFallsBackToWideMidpoint) {
    const auto q = nr_truncnorm_proposal([](double) { return 0.0; }, 0.2, -1.0, 3.0);
    EXPECT_TRUE(q.flagged);
    EXPECT_DOUBLE_EQ(q.mean, 1.0);
    EXPECT_DOUBLE_EQ(q.var, 16.0);
}

TEST(NrProposal, TruncnormLogpdfIntegratesToOne) {
    NrProposal q{0.3, 0.5, -1.0, 0.5, false};
    const auto& gl = gauss_legendre(64);
    double s = 0.0;
    for (int i = 0; i < 64; ++i) {
        const double x = -0.25 + 0.75 * gl.nodes[i];
        s += 0.75 * gl.weights[i] * std::exp(truncnorm_logpdf(q, x));
    }
    EXPECT_NEAR(s, 1.0, 1e-10);
    EXPECT_EQ(truncnorm_logpdf(q, 0.6), -INFINITY);
}

TEST(NrProposal, MultivariateGaussianTarget) {
    Eigen::Matrix2d S;
    S << 0.04, 0.01, 0.01, 0.09;
    const Eigen::Vector2d m(0.2, -0.3);
    const Eigen::Matrix2d P = S.inverse();
    auto f = [&](std::span<const double> x) {
        const Eigen::Vector2d d = Eigen::Vector2d(x[0], x[1]) - m;
        return -0.5 * d.dot(P * d);
    };
    const std::vector<double> lo{-1, -1}, hi{1, 1};
    const auto q = nr_mvn_proposal(f, {0.0, 0.0}, lo, hi);
    EXPECT_NEAR(q.mean(0), 0.2, 1e-6);
    EXPECT_NEAR(q.mean(1), -0.3, 1e-6);
    EXPECT_NEAR((q.cov - S).cwiseAbs().maxCoeff(), 0.0, 1e-5);
}

TEST(FeasibleInterval, UcarPartialRespectsVarianceBound) {
    // var_mu = s / (1 - pi^2) < 1 gives |pi| < sqrt(1 - s).
    const std::vector<double> v{0.1, 0.36};
    const auto [lo, hi] = feasible_interval(ModelKind::Ucar, 1, v, 0);
    EXPECT_NEAR(hi, 0.8, 1e-9);
    EXPECT_NEAR(lo, -0.8, 1e-9);
    const auto [slo, shi] = feasible_interval(ModelKind::Ucar, 1, v, 1);
    EXPECT_DOUBLE_EQ(slo, 1e-8);
    EXPECT_NEAR(shi, 0.99, 1e-9);
}

TEST(StateLogPrior, UcarMatchesDenseGaussian) {
    const auto p = constrain_ucar({0.6, -0.2}, 0.3);
    const std::vector<double> mu{0.3, -0.1, 0.5, 0.2, -0.4};
    LatentStates x;
    x.mu = mu;
    // Dense oracle from the AR autocovariance.
    const auto g = ar_autocovariance(p, 5);
    Eigen::MatrixXd S(5, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) S(i, j) = g[std::abs(i - j)];
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    const Eigen::VectorXd y = llt.matrixL().solve(Eigen::Map<const Eigen::VectorXd>(mu.data(), 5));
    double want = -5 * kLogSqrt2Pi - 0.5 * y.squaredNorm();
    for (int i = 0; i < 5; ++i) want -= std::log(llt.matrixL()(i, i));
    EXPECT_NEAR(state_log_prior(x, make_spec(p)), want, 1e-10);
}

TEST(InitializePsi, ArPathRecoversCoefficient) {
    const auto truth = constrain_ucar({0.9}, 0.03);
    const auto path = simulate(make_spec(truth), 1000, 11);
    const auto v = initialize_psi(ModelKind::Ucar, 1, {0.3, 0.05}, path.states);
    EXPECT_NEAR(v[0], 0.9, 0.05);
    EXPECT_FALSE(check_free(ModelKind::Ucar, 1, v));
}

TEST(InitializePsi, WhiteNoisePathGivesSampleVariance) {
    Rng rng(5);
    std::normal_distribution<double> nd(0.0, std::sqrt(0.3));
    LatentStates x;
    for (int t = 0; t < 1000; ++t) x.mu.push_back(nd(rng));
    const auto v = initialize_psi(ModelKind::Ucar, 1, {0.0, 0.2}, x);
    EXPECT_NEAR(v[0], 0.0, 0.1);
    EXPECT_NEAR(v[1], variance_of(x.mu), 0.03);
}

TEST(InitializePsi, AlwaysFeasible) {
    for (auto kind : {ModelKind::Svuc, ModelKind::Msar1, ModelKind::Ucar}) {
        const int order = kind == ModelKind::Ucar ? 2 : 1;
        const auto spec = default_spec(kind, order);
        const auto path = simulate(spec, 300, 3);
        const auto v = initialize_psi(kind, order, free_params(spec), path.states);
        EXPECT_FALSE(check_free(kind, order, v)) << to_string(kind);
    }
}

TEST(Mcmc, DetailedBalanceOnThreeObservations) {
    // Exact posterior of (pi_1, log sigma2_mu) for T = 3 on a fine grid,
    // against the marginal histograms of the chain.
    const std::vector<double> u{0.8, 0.9, 0.7};
    std::vector<double> z;
    for (double v : u) z.push_back(norm_quantile(v));
    const double ylo = std::log(1e-8), yhi = 0.0;
    constexpr int kFine = 400, kBins = 20;
    std::vector<double> grid_pi(kBins, 0.0), grid_y(kBins, 0.0);
    std::vector<double> logw;
    std::vector<std::pair<int, int>> cell;
    for (int i = 0; i < kFine; ++i)
        for (int j = 0; j < kFine; ++j) {
            const double pi = -1.0 + (i + 0.5) * 2.0 / kFine;
            const double y = ylo + (j + 0.5) * (yhi - ylo) / kFine;
            const std::vector<double> v{pi, std::exp(y)};
            if (check_free(ModelKind::Ucar, 1, v)) continue;
            const auto p = constrain_ucar({pi}, std::exp(y));
            double l = ucar_dense_loglik(z, p);
            for (double zz : z) l -= norm_logpdf(zz);
            logw.push_back(l);
            cell.push_back({i * kBins / kFine, j * kBins / kFine});
        }
    const double mx = *std::max_element(logw.begin(), logw.end());
    double tot = 0.0;
    for (std::size_t k = 0; k < logw.size(); ++k) {
        const double w = std::exp(logw[k] - mx);
        grid_pi[cell[k].first] += w;
        grid_y[cell[k].second] += w;
        tot += w;
    }

    McmcInput in;
    in.data = u;
    in.start = make_spec(constrain_ucar({0.3}, 0.2));
    McmcConfig cfg;
    cfg.burnin = 2000;
    cfg.draws = 100000;
    cfg.seed = 7;
    const auto tr = mcmc_fit(in, cfg);
    std::vector<double> h_pi(kBins, 0.0), h_y(kBins, 0.0);
    for (const auto& d : tr.psi) {
        h_pi[std::clamp(static_cast<int>((d[0] + 1.0) / 2.0 * kBins), 0, kBins - 1)] += 1.0;
        h_y[std::clamp(static_cast<int>((std::log(d[1]) - ylo) / (yhi - ylo) * kBins), 0, kBins - 1)] += 1.0;
    }
    double tv_pi = 0.0, tv_y = 0.0;
    for (int b = 0; b < kBins; ++b) {
        tv_pi += 0.5 * std::abs(h_pi[b] / tr.size() - grid_pi[b] / tot);
        tv_y += 0.5 * std::abs(h_y[b] / tr.size() - grid_y[b] / tot);
    }
    EXPECT_LT(tv_pi, 0.05);
    EXPECT_LT(tv_y, 0.05);
}

TEST(Mcmc, EveryDrawSatisfiesConstraints) {
    for (auto kind : {ModelKind::Svuc, ModelKind::Msar1, ModelKind::Ucar}) {
        const int order = kind == ModelKind::Ucar ? 2 : 1;
        const auto spec = default_spec(kind, order);
        const auto path = simulate(spec, 200, 21);
        const auto table = build_spline_table(spec);
        std::vector<double> u;
        for (double v : path.z) u.push_back(table.cdf(v));
        McmcInput in;
        in.data = u;
        in.start = spec;
        McmcConfig cfg;
        cfg.burnin = 50;
        cfg.draws = 100;
        const auto tr = mcmc_fit(in, cfg);
        ASSERT_EQ(tr.size(), 100u);
        for (const auto& d : tr.psi) EXPECT_FALSE(check_free(kind, order, d));
        for (const auto& [name, r] : tr.acceptance) {
            EXPECT_GE(r, 0.0) << name;
            EXPECT_LE(r, 1.0) << name;
        }
    }
}

TEST(Mcmc, BitReproducibleForFixedSeed) {
    const auto spec = make_spec(constrain_svuc(0.8, 0.9, 0.1, 0.2));
    const auto path = simulate(spec, 150, 4);
    const auto table = build_spline_table(spec);
    std::vector<double> u;
    for (double v : path.z) u.push_back(table.cdf(v));
    McmcInput in;
    in.data = u;
    in.start = spec;
    McmcConfig cfg;
    cfg.burnin = 20;
    cfg.draws = 40;
    cfg.seed = 99;
    std::ostringstream s1, s2;
    cfg.trace_stream = &s1;
    const auto a = mcmc_fit(in, cfg);
    cfg.trace_stream = &s2;
    const auto b = mcmc_fit(in, cfg);
    EXPECT_EQ(a.psi, b.psi);
    EXPECT_EQ(a.loglik, b.loglik);
    EXPECT_EQ(s1.str(), s2.str());
    std::istringstream lines(s1.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto rec = nlohmann::json::parse(line);
        EXPECT_TRUE(rec.contains("psi") && rec.contains("loglik") && rec.contains("accepted"));
        ++n;
    }
    EXPECT_EQ(n, 40);
}

TEST(Mcmc, JointSkewTMarginMovesTheta) {
    const auto spec = make_spec(constrain_ucar({0.5}, 0.2));
    const auto path = simulate(spec, 300, 8);
    const auto g = MarginModel::skew_t(1.0, 2.0, 0.5, 5.0);
    std::vector<double> y;
    for (double v : path.z) y.push_back(g.quantile(norm_cdf(v)));
    McmcInput in;
    in.mode = MarginMode::JointParametric;
    in.data = y;
    in.start = spec;
    in.margin = fit_margin(MarginKind::SkewT, y);
    McmcConfig cfg;
    cfg.burnin = 600;
    cfg.draws = 600;
    const auto tr = mcmc_fit(in, cfg);
    EXPECT_EQ(tr.theta_names.size(), 4u);
    EXPECT_GT(tr.acceptance.at("theta"), 0.05);
    EXPECT_LT(tr.acceptance.at("theta"), 0.6);
    EXPECT_NEAR(mean_of(tr.column("xi")), 1.0, 0.5);
    EXPECT_NO_THROW(tr.margin_at(0));
}

TEST(Mcmc, DirectModeRecoversLocationScale) {
    const auto spec = make_spec(constrain_ucar({0.6}, 0.3));
    const auto path = simulate(spec, 500, 13);
    std::vector<double> y;
    for (double v : path.z) y.push_back(2.0 + 0.5 * v);
    McmcInput in;
    in.mode = MarginMode::Direct;
    in.data = y;
    in.start = spec;
    McmcConfig cfg;
    cfg.burnin = 500;
    cfg.draws = 1000;
    const auto tr = mcmc_fit(in, cfg);
    EXPECT_NEAR(mean_of(tr.column("a")), 2.0, 0.15);
    EXPECT_NEAR(mean_of(tr.column("b")), 0.5, 0.05);
}

TEST(Mcmc, UcarCalibrationCoverage) {
    const auto truth = constrain_ucar({0.7}, 0.25);
    int cover_pi = 0, cover_s = 0;
    constexpr int kReps = 20;
    for (int r = 0; r < kReps; ++r) {
        const auto path = simulate(make_spec(truth), 1000, 1000 + r);
        const auto tr = run_ucar(normal_cdf_all(path.z), default_spec(ModelKind::Ucar, 1), 400, 1200, 50 + r);
        const auto pi = tr.column(tr.psi_names[0]);
        const auto s = tr.column(tr.psi_names[1]);
        cover_pi += sample_quantile(pi, 0.05) <= 0.7 && 0.7 <= sample_quantile(pi, 0.95);
        cover_s += sample_quantile(s, 0.05) <= 0.25 && 0.25 <= sample_quantile(s, 0.95);
    }
    EXPECT_GE(cover_pi, 17);
    EXPECT_GE(cover_s, 17);
}

TEST(Mcmc, IndependentUniformsShrinkStateVariance) {
    Rng rng(17);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> u(500);
    for (auto& v : u) v = unif(rng);
    const auto tr = run_ucar(u, default_spec(ModelKind::Ucar, 1), 1000, 3000, 3);
    EXPECT_LT(sample_quantile(tr.column(tr.psi_names[1]), 0.95), 0.1);
}

TEST(Mcmc, RejectsBadInput) {
    McmcInput in;
    in.data = {0.2, 1.2, 0.4};
    in.start = default_spec(ModelKind::Ucar);
    EXPECT_THROW(mcmc_fit(in, {}), std::invalid_argument);
    in.data = {0.2, 0.3, 0.4};
    McmcConfig cfg;
    cfg.nr_steps = 0;
    EXPECT_THROW(mcmc_fit(in, cfg), std::invalid_argument);
    in.mode = MarginMode::JointParametric;
    EXPECT_THROW(mcmc_fit(in, {}), std::invalid_argument);
}

TEST(Mcmc, EffectiveSampleSize) {
    Rng rng(2);
    std::normal_distribution<double> nd;
    std::vector<double> iid(20000), ar(20000);
    double prev = 0.0;
    for (std::size_t t = 0; t < iid.size(); ++t) {
        iid[t] = nd(rng);
        prev = 0.8 * prev + nd(rng);
        ar[t] = prev;
    }
    EXPECT_NEAR(effective_sample_size(iid) / 20000.0, 1.0, 0.1);
    // AR(1): n (1 - rho) / (1 + rho).
    EXPECT_NEAR(effective_sample_size(ar) / 20000.0, 0.2 / 1.8, 0.03);
}
