#pragma once

#include <vector>

#include "invcop/numerics.hpp"
#include "invcop/ssm.hpp"

namespace invcop {

/// Exact marginal density, log density and cdf of Z_t. SVUC integrates over
/// the log-volatility by adaptive Gauss-Kronrod; MSAR1 is a two-component
/// Gaussian mixture; UCAR is standard normal.
double latent_pdf(const SsmSpec& spec, double z);
double latent_logpdf(const SsmSpec& spec, double z);
double latent_cdf(const SsmSpec& spec, double z);
/// Exact quantile by root finding on latent_cdf.
double latent_quantile_exact(const SsmSpec& spec, double u);
/// True when F_{Z1}(-z) = 1 - F_{Z1}(z) for this parameter point.
bool latent_symmetric(const SsmSpec& spec);

/// Spline approximation of F_{Z1}, log f_{Z1} and F_{Z1}^{-1} on a uniform
/// quantile grid between the 1e-4 and 0.9999 quantiles, with Gaussian tails
/// beyond the end anchors. UCAR tables evaluate the normal functions exactly.
class LatentMarginTable {
public:
    static constexpr double kP1 = 1e-4;
    static constexpr double kPN = 0.9999;

    LatentMarginTable() = default;

    double quantile(double u) const;
    double logpdf(double z) const;
    double cdf(double z) const;

    ModelKind kind() const { return kind_; }
    const std::vector<double>& psi() const { return psi_; }
    int size() const { return static_cast<int>(q_.size()); }
    bool symmetric() const { return symmetric_; }
    bool exact() const { return exact_; }
    const std::vector<double>& p_anchors() const { return p_; }
    const std::vector<double>& q_anchors() const { return q_; }
    const std::vector<double>& b_anchors() const { return b_; }

private:
    friend LatentMarginTable build_spline_table(const SsmSpec& spec, int n);

    ModelKind kind_ = ModelKind::Ucar;
    std::vector<double> psi_;
    std::vector<double> p_, q_, b_;
    CubicSpline p_to_q_, q_to_b_, q_to_p_;
    bool symmetric_ = false;
    bool exact_ = false;
    // Gaussian tail maps z = a + b * Phi^{-1}(u) below p_1 and above p_N.
    double lo_a_ = 0.0, lo_b_ = 1.0, hi_a_ = 0.0, hi_b_ = 1.0;
};

LatentMarginTable build_spline_table(const SsmSpec& spec, int n = 100);

inline double latent_quantile(const LatentMarginTable& t, double u) { return t.quantile(u); }
inline double latent_logpdf_fast(const LatentMarginTable& t, double z) { return t.logpdf(z); }
inline double latent_cdf_fast(const LatentMarginTable& t, double z) { return t.cdf(z); }

}  // namespace invcop
