#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "invcop/numerics.hpp"
#include "invcop/ssm.hpp"

namespace invcop {

/// Final-time particle cloud of the Rao-Blackwellized SVUC filter, before
/// resampling: log-volatility, Gaussian moments of the level, log weights.
struct PfParticles {
    std::vector<double> zeta;
    std::vector<double> mu_mean;
    std::vector<double> mu_var;
    std::vector<double> log_weight;  // normalized: log_sum_exp = 0
};

struct FilterOutput {
    double loglik = 0.0;
    std::vector<double> increments;  // log p(z_t | z_{1:t-1})
    // Kalman: filtered mean/variance of the current level. PF: filtered
    // mean/variance of the log-volatility.
    std::vector<double> state_mean;
    std::vector<double> state_var;
    // Kalman: one-step predictive moments of z_t given z_{1:t-1}.
    std::vector<double> pred_mean;
    std::vector<double> pred_var;
    // Hamilton: log P(s_t = j | z_{1:t}).
    std::vector<std::array<double, 2>> log_prob;
    // Kalman: terminal filtered state vector (mu_T, ..., mu_{T-p+1}).
    Eigen::VectorXd final_mean;
    Eigen::MatrixXd final_cov;
    PfParticles final_particles;
};

/// Exact log-likelihood of z_t = mu_t + e_t, e_t ~ N(0, obs_var), with mu_t a
/// stationary AR(p) with coefficients `ar` and innovation variance sigma2_mu.
FilterOutput kalman_ar_plus_noise(std::span<const double> z, std::span<const double> ar,
                                  double sigma2_mu, double obs_var);
/// Kalman filter for the UCAR(p) latent process.
FilterOutput kalman_loglik(std::span<const double> z, const UcarParams& p);

/// Symmetric positive definite matrix with lower bandwidth w, stored by rows
/// as entries (i, i-w..i).
class BandedMatrix {
public:
    BandedMatrix() = default;
    BandedMatrix(int n, int w) : n_(n), w_(w), a_(static_cast<std::size_t>(n) * (w + 1), 0.0) {}

    int size() const { return n_; }
    int bandwidth() const { return w_; }
    /// Entry (i, j) with 0 <= i - j <= w.
    double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * (w_ + 1) + (i - j)]; }
    double operator()(int i, int j) const {
        return a_[static_cast<std::size_t>(i) * (w_ + 1) + (i - j)];
    }
    Eigen::MatrixXd dense() const;

private:
    int n_ = 0, w_ = 0;
    std::vector<double> a_;
};

/// In-place banded Cholesky: on return the band holds L with Q = L L'.
/// Throws NumericalError when Q is not positive definite.
void band_cholesky(BandedMatrix& q);
/// Solves L y = b (forward) and L' x = y (backward) in place.
void band_forward(const BandedMatrix& l, std::span<double> b);
void band_backward(const BandedMatrix& l, std::span<double> b);
/// Solves Q x = b given the factor L.
std::vector<double> band_solve(const BandedMatrix& l, std::span<const double> b);

/// One exact draw x ~ N(Q^{-1} b, Q^{-1}) for banded precision Q (copied).
std::vector<double> sample_gaussian_states_banded(BandedMatrix q, std::span<const double> b,
                                                  Rng& rng);

/// Precision of a stationary AR(p) path of length n with the given
/// coefficients and innovation variance (bandwidth min(p, n-1)).
BandedMatrix ar_prior_precision(int n, std::span<const double> ar, double sigma2);

/// Draw the UCAR level path mu_{1:T} | z.
std::vector<double> sample_ucar_states(std::span<const double> z, const UcarParams& p, Rng& rng);
/// Draw the SVUC level path mu_{1:T} | z, zeta.
std::vector<double> sample_svuc_levels(std::span<const double> z, std::span<const double> zeta,
                                       const SvucParams& p, Rng& rng);

/// Seven-component normal mixture approximation to log chi^2_1 (means shifted
/// so that the mixture has mean -1.2704).
struct KscMixture {
    std::array<double, 7> prob;
    std::array<double, 7> mean;
    std::array<double, 7> var;
};
const KscMixture& ksc_mixture();
inline constexpr double kSvOffset = 1e-4;

/// One auxiliary-mixture sweep for the log-volatilities given the residuals
/// e_t = z_t - mu_t and the current zeta path (used to draw indicators).
std::vector<double> sample_sv_logvols(std::span<const double> resid, std::span<const double> zeta,
                                      double rho_zeta, double sigma2_zeta, double zeta_bar, Rng& rng);

/// Log-space Hamilton filter for MSAR1. z_1 uses the stationary mixture.
FilterOutput hamilton_filter(std::span<const double> z, const MsarParams& p);
/// Backward sampling of the regime path from a Hamilton filter run.
std::vector<int> ffbs_regimes(const FilterOutput& filt, std::span<const double> z,
                              const MsarParams& p, Rng& rng);

/// Rao-Blackwellized bootstrap particle filter for SVUC: particles carry
/// zeta_t, the level is integrated out by a per-particle Kalman step, and
/// particles are resampled systematically each step.
/// The optional observer sees the equally weighted predicted cloud for each
/// t before z_t is absorbed (mu moments include the level innovation).
using PfObserver = std::function<void(std::size_t t, const PfParticles& predicted)>;
FilterOutput bootstrap_pf_loglik(std::span<const double> z, const SvucParams& p,
                                 int n_particles, std::uint64_t seed, const PfObserver& observe = {});
/// Plain bootstrap particle filter over the model's full state (no
/// marginalization); used as a generic nonlinear-filter check.
FilterOutput bootstrap_pf_generic(std::span<const double> z, const SsmSpec& spec, int n_particles,
                                  std::uint64_t seed);

/// Systematic resampling indices for normalized weights.
std::vector<int> systematic_resample(std::span<const double> weights, double u0);

}  // namespace invcop
