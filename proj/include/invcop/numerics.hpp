#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace invcop {

using Rng = std::mt19937_64;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
inline double norm_logpdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }
inline double norm_logpdf(double x, double mean, double var) {
    const double d = x - mean;
    return -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

/// Standard normal quantile, accurate to full double precision on (0,1).
double norm_quantile(double p);

/// log(exp(a) + exp(b)) without overflow.
double log_add_exp(double a, double b);
double log_sum_exp(std::span<const double> v);

/// P(X < h, Y < k) for a standard bivariate normal with correlation r
/// (Genz's adaptation of the Drezner-Wesolowsky method, ~1e-15 accuracy).
double bvn_cdf(double h, double k, double r);

/// Gauss-Legendre rule on [-1, 1].
struct QuadRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
const QuadRule& gauss_legendre(int n);
/// Probabilists' Gauss-Hermite rule: sum w_i f(x_i) ~ E f(X), X ~ N(0,1).
const QuadRule& gauss_hermite_prob(int n);

/// Root of f(x) = target for nondecreasing f. Starts from [lo, hi], expands
/// the bracket geometrically if needed, then runs Illinois regula falsi with
/// a bisection safeguard until |f(x) - target| < ftol or the bracket width
/// drops below xtol. Throws NumericalError when no bracket is found.
double solve_monotone(const std::function<double(double)>& f, double target, double lo = -10.0,
                      double hi = 10.0, double ftol = 1e-12, double xtol = 1e-14,
                      int max_iter = 300);

enum class SplineEnd { Natural, NotAKnot };

/// Interpolating cubic spline through strictly increasing knots.
class CubicSpline {
public:
    CubicSpline() = default;
    CubicSpline(std::vector<double> x, std::vector<double> y, SplineEnd end = SplineEnd::Natural);

    double operator()(double x) const;
    double derivative(double x) const;
    bool empty() const { return x_.empty(); }
    const std::vector<double>& knots() const { return x_; }
    const std::vector<double>& values() const { return y_; }

private:
    std::size_t segment(double x) const;

    std::vector<double> x_, y_, b_, c_, d_;
    bool uniform_ = false;
    double h_ = 0.0;
};

/// Draw from N(mean, sd^2) truncated to [lo, hi] by inversion, with an
/// exponential-rejection fallback deep in the tail.
double sample_truncated_normal(double mean, double sd, double lo, double hi, Rng& rng);

/// Sample mean and (n-1) variance.
double mean_of(std::span<const double> x);
double variance_of(std::span<const double> x);

/// Kendall's tau-b by Knight's O(n log n) algorithm.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// log(Phi(b) - Phi(a)) for a < b, accurate when both lie deep in one tail.
double log_norm_interval(double a, double b);

struct NelderMeadOptions {
    int max_evals = 4000;
    double ftol = 1e-10;  // spread of simplex values
    double xtol = 1e-8;   // simplex diameter
    std::vector<double> step;  // initial simplex offsets; 0.1 * max(|x|, 1) if empty
};

struct OptimResult {
    std::vector<double> x;
    double f = 0.0;
    int evals = 0;
    bool converged = false;
};

/// Minimizes f by the Nelder-Mead simplex method. Infinite or NaN values are
/// treated as +infinity, so infeasible points act as walls.
OptimResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                        std::vector<double> x0, const NelderMeadOptions& opt = {});

}  // namespace invcop
