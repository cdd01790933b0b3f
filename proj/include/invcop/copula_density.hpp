#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invcop/latent_margin.hpp"
#include "invcop/ssm.hpp"

namespace invcop {

/// Copula data u_1..u_T, each strictly inside (0, 1).
struct CopulaData {
    std::vector<double> u;
    std::vector<std::string> timestamps;  // optional, same length as u when set

    std::size_t size() const { return u.size(); }
};

/// Validates and wraps copula data. Throws std::invalid_argument when a value
/// is outside (0, 1), non-finite, or fewer than two values are given.
CopulaData make_copula_data(std::vector<double> u, std::vector<std::string> timestamps = {});

/// z_t = F_{Z1}^{-1}(u_t) through the table.
std::vector<double> to_latent(std::span<const double> u, const LatentMarginTable& table);

/// Sum over t of log h_t(z_t | states) - log f_{Z1}(z_t). MSAR1 conditions on
/// the regime path and z_{t-1}; SVUC on (mu_t, zeta_t); UCAR on mu_t.
double conditional_loglike(std::span<const double> u, const LatentStates& states,
                           const SsmSpec& spec, const LatentMarginTable& table);
/// Sum over t of log h_t(z_t | states) alone.
double conditional_state_loglik(std::span<const double> z, const LatentStates& states,
                                const SsmSpec& spec);
/// Same as conditional_loglike, for data already on the latent scale.
double conditional_loglike_latent(std::span<const double> z, const LatentStates& states,
                                  const SsmSpec& spec, const LatentMarginTable& table);

struct ParticleSettings {
    int particles = 10000;
    std::uint64_t seed = 1;
};

/// log c(u) = log f_Z(z) - sum log f_{Z1}(z_t). Exact for UCAR (Kalman) and
/// MSAR1 (Hamilton); for SVUC a particle-filter estimate with the given
/// settings.
double log_copula_density(std::span<const double> u, const SsmSpec& spec,
                          const LatentMarginTable& table, const ParticleSettings& pf = {});
/// Plain bootstrap particle-filter estimate for any model, with its Monte
/// Carlo draw controlled by `pf`.
double log_copula_density_pf(std::span<const double> u, const SsmSpec& spec,
                             const LatentMarginTable& table, const ParticleSettings& pf);

/// Quadrature size for the SVUC bivariate density: nodes per axis over
/// +-6 standard deviations.
inline constexpr int kSvucPairNodes = 41;

/// Density of (Z_t, Z_{t+1}) at (z1, z2). SVUC integrates the log-volatility
/// pair by tensor Gauss-Legendre; MSAR1 is a four-component Gaussian
/// mixture; UCAR is bivariate normal with the lag-one autocorrelation.
double latent_pair_density(double z1, double z2, const SsmSpec& spec, int nodes = kSvucPairNodes);

/// One bivariate normal component of the (Z_t, Z_{t+1}) distribution.
struct BvnComponent {
    double weight;
    double m1, m2;
    double s11, s12, s22;
};
/// (Z_t, Z_{t+1}) as a mixture of bivariate normals: one component for UCAR,
/// four for MSAR1, and for SVUC one per Gauss-Legendre node pair of the
/// log-volatilities (weights sum to 1 up to quadrature error).
std::vector<BvnComponent> latent_pair_mixture(const SsmSpec& spec, int nodes = kSvucPairNodes);

/// Bivariate copula density c^(2)(u1, u2) of (U_t, U_{t+1}).
double bivariate_copula_density(double u1, double u2, const SsmSpec& spec,
                                const LatentMarginTable& table);

/// Sum over t >= 2 of log c^(2)(u_{t-1}, u_t). Throws std::invalid_argument
/// for UCAR with order above one.
double markov_factorized_logdensity(std::span<const double> u, const SsmSpec& spec,
                                    const LatentMarginTable& table);

}  // namespace invcop
