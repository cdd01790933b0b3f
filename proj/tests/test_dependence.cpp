#include <gtest/gtest.h>

#include "invcop/dependence.hpp"

using namespace invcop;

namespace {

SsmSpec fig1a() { return make_spec(constrain_svuc(0.0, 0.952, 0.0, 0.045)); }
SsmSpec fig1b() { return make_spec(constrain_msar(0.02, -0.5, 0.6, 0.6, 0.92, 0.95)); }

// UCAR(1) with lag-one latent correlation a1 = var_mu * pi = 0.5.
SsmSpec ucar_half() {
    const double pi = 0.625, var_mu = 0.8;
    return make_spec(constrain_ucar({pi}, var_mu * (1.0 - pi * pi)));
}

}  // namespace

TEST(DependenceQuadrature, GaussianCopulaClosedForms) {
    const auto rep = dependence_quadrature(ucar_half());
    EXPECT_NEAR(rep.r, 6.0 / kPi * std::asin(0.25), 1e-6);
    EXPECT_NEAR(rep.tau, 2.0 / kPi * std::asin(0.5), 1e-6);
    // Lower corner of a Gaussian copula: Phi2(q, q; 0.5) / alpha.
    const double q = norm_quantile(0.1);
    EXPECT_NEAR(rep.at(0.1).mm, bvn_cdf(q, q, 0.5) / 0.1, 1e-12);
}

TEST(DependenceQuadrature, IndependenceGivesZero) {
    const auto rep = dependence_quadrature(make_spec(constrain_ucar({0.5}, 0.0)));
    EXPECT_NEAR(rep.r, 0.0, 1e-6);
    EXPECT_NEAR(rep.tau, 0.0, 1e-6);
    for (const auto& q : rep.lambda) {
        EXPECT_NEAR(q.mm, q.alpha, 1e-10);
        EXPECT_NEAR(q.pm, q.alpha, 1e-10);
    }
}

TEST(DependenceQuadrature, PureVolatilityQuantileDependence) {
    const auto rep = dependence_quadrature(fig1a());
    EXPECT_NEAR(rep.at(0.1).pp, 0.1428, 0.01);
    EXPECT_NEAR(rep.at(0.05).pp, 0.0964, 0.01);
    EXPECT_NEAR(rep.at(0.01).pp, 0.0454, 0.01);
    EXPECT_NEAR(rep.r, 0.0, 1e-5);
    EXPECT_NEAR(rep.tau, 0.0, 1e-5);
    // Symmetric in all four quadrants.
    for (const auto& q : rep.lambda) {
        EXPECT_NEAR(q.mm, q.pp, 1e-9);
        EXPECT_NEAR(q.pm, q.mp, 1e-9);
        EXPECT_NEAR(q.mm, q.pm, 1e-9);
    }
}

TEST(DependenceQuadrature, SwitchingModelValues) {
    const auto rep = dependence_quadrature(fig1b());
    EXPECT_NEAR(rep.r, 0.159, 0.01);
    EXPECT_NEAR(rep.tau, 0.113, 0.01);
    EXPECT_NEAR(rep.at(0.1).pm, 0.141, 0.015);
    EXPECT_NEAR(rep.at(0.1).mp, 0.144, 0.015);
    // The published same-tail pair (0.249 lower, 0.201 upper) appears with
    // its labels exchanged; the exact mixture gives the reverse.
    EXPECT_NEAR(rep.at(0.1).pp, 0.249, 0.015);
    EXPECT_NEAR(rep.at(0.1).mm, 0.201, 0.015);
}

TEST(DependenceQuadrature, SameTailDependenceIncreasesWithAlpha) {
    const std::vector<SsmSpec> points{
        make_spec(constrain_svuc(0.959, 0.789, 0.066, 0.603)),
        make_spec(constrain_msar(0.040, 0.207, 0.914, 0.199, 0.865, 0.930)),
        make_spec(constrain_ucar({0.866, 0.371, -0.037, 0.113}, 0.181)),
    };
    for (const auto& s : points) {
        if (s.kind == ModelKind::Ucar) continue;  // lag-one quadrature needs order 1
        const auto rep = dependence_quadrature(s);
        for (std::size_t k = 1; k < rep.lambda.size(); ++k) {
            EXPECT_GE(rep.lambda[k].mm, rep.lambda[k - 1].mm) << to_string(s.kind);
            EXPECT_GE(rep.lambda[k].pp, rep.lambda[k - 1].pp) << to_string(s.kind);
        }
    }
    // UCAR(4) by simulation.
    const auto rep = dependence_mc(points[2], 1, 200000);
    for (std::size_t k = 1; k < rep.lambda.size(); ++k) {
        EXPECT_GE(rep.lambda[k].mm, rep.lambda[k - 1].mm);
        EXPECT_GE(rep.lambda[k].pp, rep.lambda[k - 1].pp);
    }
}

TEST(DependenceMc, PureVolatilityMatchesPublishedValues) {
    const auto rep = dependence_mc(fig1a(), 1, 500000);
    EXPECT_NEAR(rep.at(0.1).pp, 0.1428, 0.01);
    EXPECT_NEAR(rep.at(0.05).pp, 0.0964, 0.01);
    EXPECT_NEAR(rep.at(0.01).pp, 0.0454, 0.01);
    EXPECT_NEAR(rep.r, 0.0, 0.01);
    EXPECT_NEAR(rep.tau, 0.0, 0.01);
    // Symmetry within Monte Carlo error.
    for (const auto& q : rep.lambda) {
        EXPECT_NEAR(q.pp, q.mm, 4.0 * std::hypot(q.se_pp, q.se_mm));
        EXPECT_NEAR(q.pm, q.mp, 4.0 * std::hypot(q.se_pm, q.se_mp));
    }
}

TEST(DependenceMc, IndependenceGivesAlpha) {
    const auto rep = dependence_mc(make_spec(constrain_ucar({0.3}, 0.0)), 2, 100000, kDefaultAlphas, 4);
    EXPECT_NEAR(rep.r, 0.0, 4.0 * rep.r_se);
    EXPECT_NEAR(rep.tau, 0.0, 4.0 * rep.tau_se);
    for (const auto& q : rep.lambda) {
        EXPECT_NEAR(q.mm, q.alpha, 4.0 * q.se_mm);
        EXPECT_NEAR(q.pp, q.alpha, 4.0 * q.se_pp);
        EXPECT_NEAR(q.pm, q.alpha, 4.0 * q.se_pm);
        EXPECT_NEAR(q.mp, q.alpha, 4.0 * q.se_mp);
    }
}

TEST(DependenceMc, AgreesWithQuadratureOnSwitchingModel) {
    const auto quad = dependence_quadrature(fig1b());
    const auto mc = dependence_mc(fig1b(), 1, 1000000);
    EXPECT_NEAR(mc.r, quad.r, 3.0 * mc.r_se);
    EXPECT_NEAR(mc.tau, quad.tau, 3.0 * mc.tau_se);
    for (std::size_t k = 0; k < quad.lambda.size(); ++k) {
        const auto& a = quad.lambda[k];
        const auto& b = mc.lambda[k];
        EXPECT_NEAR(b.mm, a.mm, 3.0 * b.se_mm) << a.alpha;
        EXPECT_NEAR(b.pp, a.pp, 3.0 * b.se_pp) << a.alpha;
        EXPECT_NEAR(b.pm, a.pm, 3.0 * b.se_pm) << a.alpha;
        EXPECT_NEAR(b.mp, a.mp, 3.0 * b.se_mp) << a.alpha;
    }
}

TEST(DependenceMc, GaussianLagTwoClosedForm) {
    // At lag l the latent correlation is var_mu * pi^l.
    const auto rep = dependence_mc(ucar_half(), 2, 400000, kDefaultAlphas, 8);
    const double a2 = 0.8 * 0.625 * 0.625;
    EXPECT_NEAR(rep.r, 6.0 / kPi * std::asin(a2 / 2.0), 4.0 * rep.r_se);
    EXPECT_NEAR(rep.tau, 2.0 / kPi * std::asin(a2), 4.0 * rep.tau_se);
}

TEST(Dependence, ReportsAndValidation) {
    const auto rep = dependence_quadrature(ucar_half(), {0.1});
    EXPECT_EQ(rep.to_json()["method"], "quadrature");
    EXPECT_NE(rep.to_csv().find("lambda++,0.1"), std::string::npos);
    EXPECT_THROW(rep.at(0.2), std::out_of_range);
    EXPECT_THROW(dependence_quadrature(ucar_half(), {0.6}), std::invalid_argument);
    EXPECT_THROW(dependence_mc(ucar_half(), 1, 100), std::invalid_argument);
    EXPECT_THROW(dependence_mc(ucar_half(), 0, 100000), std::invalid_argument);
}
