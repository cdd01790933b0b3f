#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace invcop {

enum class MarginKind { Kde, SkewT, Gamma, Empirical, Normal };

std::string to_string(MarginKind k);

/// Gaussian mixture with one bandwidth per sample point.
struct KdeMargin {
    std::vector<double> sample;      // sorted
    std::vector<double> bandwidths;  // aligned with sample
};

/// Azzalini-Capitanio skew t with location xi, scale omega, parameterized by
/// its skew and (full) kurtosis coefficients instead of (alpha, nu).
struct SkewTMargin {
    double xi = 0.0, omega = 1.0, gamma1 = 0.0, gamma2 = 6.0;
    // Solved shape: delta = alpha / sqrt(1 + alpha^2) and degrees of freedom.
    double delta = 0.0, nu = 8.0;
};

struct GammaMargin {
    double shape = 1.0, scale = 1.0;
};

/// Rescaled empirical cdf: rank/(n+1) at the distinct sample values, linear in
/// between and linear down to 0 and up to 1 over one mean spacing.
struct EmpiricalMargin {
    std::vector<double> knots;  // distinct sorted values with the two outer end points
    std::vector<double> probs;
};

struct NormalMargin {
    double mean = 0.0, sd = 1.0;
};

/// Univariate marginal distribution G of the observed series. Immutable after
/// construction; all evaluations are thread safe.
class MarginModel {
public:
    MarginModel() : m_(NormalMargin{}) {}

    static MarginModel normal(double mean, double sd);
    static MarginModel gamma(double shape, double scale);
    /// Throws std::domain_error when (gamma1, gamma2) is outside the region the
    /// skew t family can reach (needs nu > 4).
    static MarginModel skew_t(double xi, double omega, double gamma1, double gamma2);
    static MarginModel empirical(std::span<const double> sample);
    static MarginModel kde(std::vector<double> sample, std::vector<double> bandwidths);

    MarginKind kind() const;
    double cdf(double y) const;
    double pdf(double y) const;
    double logpdf(double y) const;
    double quantile(double u) const;

    /// Parameter vector used by joint estimation: normal (mean, sd), gamma
    /// (shape, scale), skew t (xi, omega, gamma1, gamma2). Empty otherwise.
    std::vector<double> params() const;
    /// Same family at a new parameter vector.
    MarginModel with_params(std::span<const double> theta) const;
    static std::vector<std::string> param_names(MarginKind k);

    const KdeMargin* as_kde() const { return std::get_if<KdeMargin>(&m_); }
    const SkewTMargin* as_skew_t() const { return std::get_if<SkewTMargin>(&m_); }
    const GammaMargin* as_gamma() const { return std::get_if<GammaMargin>(&m_); }

    nlohmann::json to_json() const;
    static MarginModel from_json(const nlohmann::json& j);

private:
    using Variant = std::variant<KdeMargin, SkewTMargin, GammaMargin, EmpiricalMargin, NormalMargin>;
    explicit MarginModel(Variant v) : m_(std::move(v)) {}
    Variant m_;
};

/// Locally adaptive Gaussian KDE (Shimazaki-Shinomoto). Local MISE costs are
/// computed on `grid_size` bins across the data range; the resulting bandwidth
/// curve is interpolated at each sample point.
MarginModel kde_fit(std::span<const double> sample, int grid_size = 512);

/// Bandwidth curve on the evaluation grid, exposed for diagnostics.
struct KdeBandwidthPath {
    std::vector<double> grid;
    std::vector<double> bandwidth;
    double stiffness = 0.0;
};
KdeBandwidthPath ss_variable_bandwidth(std::span<const double> sample, int grid_size = 512);

/// Fits a margin of the given family to a sample: KDE and empirical as
/// above, normal by moments, gamma and skew t by maximum likelihood
/// (Nelder-Mead from moment-based starting values).
MarginModel fit_margin(MarginKind kind, std::span<const double> sample);

double margin_cdf(const MarginModel& m, double y);
double margin_pdf(const MarginModel& m, double y);
double margin_quantile(const MarginModel& m, double u);

/// Copula data u_t = G(y_t), clamped to [1e-12, 1 - 1e-12].
std::vector<double> to_copula_data(const MarginModel& m, std::span<const double> y);
inline constexpr double kUClamp = 1e-12;

/// Standardized (delta, nu) skew t moments: skew and full kurtosis coefficients.
std::pair<double, double> skew_t_moment_coefficients(double delta, double nu);
/// Inverse of skew_t_moment_coefficients on the feasible region.
std::pair<double, double> skew_t_shape_from_moments(double gamma1, double gamma2);

}  // namespace invcop
