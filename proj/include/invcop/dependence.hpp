#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "invcop/ssm.hpp"

namespace invcop {

enum class DependenceMethod { Quadrature, MonteCarlo };
std::string to_string(DependenceMethod m);

/// Quantile dependence at one alpha, with U_s the earlier and U_t the later
/// value:
///   mm = P(U_t < a | U_s < a),       pp = P(U_t > 1-a | U_s > 1-a),
///   pm = P(U_t > 1-a | U_s < a),     mp = P(U_t < a | U_s > 1-a).
struct QuantileDependence {
    double alpha = 0.0;
    double mm = 0.0, pp = 0.0, pm = 0.0, mp = 0.0;
    double se_mm = 0.0, se_pp = 0.0, se_pm = 0.0, se_mp = 0.0;  // Monte Carlo only
};

struct DependenceReport {
    int lag = 1;
    DependenceMethod method = DependenceMethod::Quadrature;
    double tau = 0.0, r = 0.0;
    double tau_se = 0.0, r_se = 0.0;  // Monte Carlo only
    long long draws = 0;              // Monte Carlo sample size J
    std::vector<QuantileDependence> lambda;

    const QuantileDependence& at(double alpha) const;
    nlohmann::json to_json() const;
    /// One `statistic,alpha,value,se` row per entry, with a header line.
    std::string to_csv() const;
};

inline const std::vector<double> kDefaultAlphas{0.01, 0.05, 0.1, 0.25};

/// Simulates J independent stationary pairs (Z_1, Z_{1+lag}) and maps them
/// through the exact latent cdf. Work is split into 50 seeded shards; the
/// standard errors of tau and r come from the spread across shards.
DependenceReport dependence_mc(const SsmSpec& spec, int lag = 1, long long J = 500000,
                               const std::vector<double>& alphas = kDefaultAlphas, std::uint64_t seed = 1);

/// Lag-one measures by quadrature against the bivariate copula density:
/// quadrant probabilities in closed form per normal component, r and tau by
/// composite Gauss-Legendre on the latent scale.
DependenceReport dependence_quadrature(const SsmSpec& spec,
                                       const std::vector<double>& alphas = kDefaultAlphas);

}  // namespace invcop
