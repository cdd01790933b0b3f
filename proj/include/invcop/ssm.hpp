#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "invcop/numerics.hpp"

namespace invcop {

enum class ModelKind { Svuc, Msar1, Ucar };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// Stochastic volatility with an unobserved AR(1) level. Free parameters are
/// the AR coefficients and innovation variances; the rest is derived so that
/// E(Z) = 0 and Var(Z) = 1.
struct SvucParams {
    double rho_mu = 0.0;
    double rho_zeta = 0.0;
    double sigma2_mu = 0.0;
    double sigma2_zeta = 0.0;
    // derived
    double s2_mu = 0.0;
    double s2_zeta = 0.0;
    double zeta_bar = 0.0;
};

/// Two-regime Markov switching AR(1). Regime 1 quantities are derived.
struct MsarParams {
    double c2 = 0.0;
    double rho1 = 0.0;
    double rho2 = 0.0;
    double sigma2_2 = 0.0;
    double p11 = 0.0;
    double p22 = 0.0;
    // derived
    double pi1 = 0.0;
    double pi2 = 0.0;
    double c1 = 0.0;
    double sigma2_1 = 0.0;
    double s2_1 = 0.0;
    double s2_2 = 0.0;
    double mu1 = 0.0;
    double mu2 = 0.0;

    double rho(int i) const { return i == 0 ? rho1 : rho2; }
    double s2(int i) const { return i == 0 ? s2_1 : s2_2; }
    double mu(int i) const { return i == 0 ? mu1 : mu2; }
    double pi(int i) const { return i == 0 ? pi1 : pi2; }
    /// Transition probability P(s_t = j | s_{t-1} = i), zero-based regimes.
    double trans(int i, int j) const {
        const double stay = i == 0 ? p11 : p22;
        return i == j ? stay : 1.0 - stay;
    }
    /// Mean and variance of z_t given z_{t-1} = z, s_{t-1} = i, s_t = j.
    double cond_mean(int i, int j, double z) const { return mu(j) + rho(j) * (z - mu(i)); }
    double cond_var(int i, int j) const { return s2(j) - rho(j) * rho(j) * s2(i); }
};

/// Gaussian unobserved-component model with an AR(p) component,
/// parameterized by partial autocorrelations.
struct UcarParams {
    std::vector<double> partials;
    double sigma2_mu = 0.0;
    // derived
    std::vector<double> ar;
    double var_mu = 0.0;
    double sigma2 = 1.0;

    int order() const { return static_cast<int>(partials.size()); }
};

struct SsmSpec {
    ModelKind kind = ModelKind::Ucar;
    std::variant<SvucParams, MsarParams, UcarParams> params;

    const SvucParams& svuc() const { return std::get<SvucParams>(params); }
    const MsarParams& msar() const { return std::get<MsarParams>(params); }
    const UcarParams& ucar() const { return std::get<UcarParams>(params); }
};

/// Returns the name of the first violated inequality, or nothing.
std::optional<std::string> check_svuc(double rho_mu, double rho_zeta, double sigma2_mu,
                                      double sigma2_zeta);
std::optional<std::string> check_msar(double c2, double rho1, double rho2, double sigma2_2,
                                      double p11, double p22);
std::optional<std::string> check_ucar(std::span<const double> partials, double sigma2_mu);

/// Validated constructors. Throw ConstraintViolation naming the inequality.
SvucParams constrain_svuc(double rho_mu, double rho_zeta, double sigma2_mu, double sigma2_zeta);
MsarParams constrain_msar(double c2, double rho1, double rho2, double sigma2_2, double p11,
                          double p22);
UcarParams constrain_ucar(std::vector<double> partials, double sigma2_mu);

SsmSpec make_spec(const SvucParams& p);
SsmSpec make_spec(const MsarParams& p);
SsmSpec make_spec(const UcarParams& p);

/// Partial autocorrelations to AR coefficients and back.
std::vector<double> durbin_levinson(std::span<const double> partials);
std::vector<double> ar_to_partials(std::span<const double> ar);

/// a_0 = 1 and a_l = Cov(Z_t, Z_{t-l}) for l = 1..maxlag.
std::vector<double> ucar_autocovariance(const UcarParams& p, int maxlag);

/// Autocovariances gamma_0..gamma_maxlag of the AR(p) component alone.
std::vector<double> ar_autocovariance(const UcarParams& p, int maxlag);

/// Free parameter vector in a fixed order per model:
/// SVUC (rho_mu, sigma2_mu, rho_zeta, sigma2_zeta); MSAR1 (c2, rho1, rho2,
/// sigma2_2, p11, p22); UCAR (partials..., sigma2_mu).
std::vector<double> free_params(const SsmSpec& spec);
std::vector<std::string> free_param_names(ModelKind kind, int order);
std::optional<std::string> check_free(ModelKind kind, int order, std::span<const double> v);
SsmSpec spec_from_free(ModelKind kind, int order, std::span<const double> v);
int model_order(const SsmSpec& spec);

/// Latent state paths. Only the fields used by the model are filled:
/// SVUC mu and zeta, MSAR1 regime (0/1), UCAR mu.
struct LatentStates {
    std::vector<double> mu;
    std::vector<double> zeta;
    std::vector<int> regime;
};

struct SimulatedPath {
    std::vector<double> z;
    LatentStates states;
};

/// Stationary latent process driven step by step.
class LatentProcess {
public:
    explicit LatentProcess(const SsmSpec& spec);
    /// Draw the state at time 1 from its stationary law and return z_1.
    double start(Rng& rng);
    /// Advance one step and return the new z.
    double next(Rng& rng);

    double mu() const { return mu_.empty() ? 0.0 : mu_[0]; }
    double zeta() const { return zeta_; }
    int regime() const { return regime_; }

    /// Set the current state explicitly (used to propagate from a filtered
    /// or sampled terminal state). `lags` holds mu_t, mu_{t-1}, ... for UCAR.
    void set_state(std::span<const double> lags, double zeta, int regime, double z);

private:
    SsmSpec spec_;
    std::vector<double> chol_;  // UCAR stationary covariance factor, row-major
    std::vector<double> mu_;    // UCAR: mu_t..mu_{t-p+1}; SVUC: mu_t
    double zeta_ = 0.0;
    int regime_ = 0;
    double z_ = 0.0;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

SimulatedPath simulate(const SsmSpec& spec, std::size_t T, std::uint64_t seed);

nlohmann::json spec_to_json(const SsmSpec& spec);
SsmSpec spec_from_json(const nlohmann::json& j);

}  // namespace invcop
