#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "invcop/latent_margin.hpp"
#include "invcop/margins.hpp"
#include "invcop/ssm.hpp"

namespace invcop {

/// How the observations enter the sampler.
///  Fixed: copula data u given (two-stage, margin estimated beforehand).
///  JointParametric: raw y with a parametric margin whose parameters are
///   sampled in Step 3.
///  Direct: raw y = a + b z, i.e. the state space model fitted to the data
///   itself, with (a, b) sampled in Step 3.
enum class MarginMode { Fixed, JointParametric, Direct };
std::string to_string(MarginMode m);
MarginMode margin_mode_from_string(const std::string& s);

/// Sampling box for one free parameter. Variance parameters carry the 1/x
/// scale prior and are sampled on the log scale, where that prior is flat.
struct ParamBox {
    double lo = 0.0;
    double hi = 0.0;
    bool log_scale = false;
};
std::vector<ParamBox> param_boxes(ModelKind kind, int order);

/// Feasible interval for element i of the free vector, others held fixed.
std::pair<double, double> feasible_interval(ModelKind kind, int order, std::span<const double> v,
                                            int i);

struct NrProposal {
    double mean = 0.0;
    double var = 1.0;
    double lo = -INFINITY;
    double hi = INFINITY;
    bool flagged = false;  // boundary mode or no usable curvature
};

/// Damped Newton-Raphson on a 1-D log target using central differences,
/// returning the truncated normal approximation at the terminal point.
NrProposal nr_truncnorm_proposal(const std::function<double(double)>& log_target, double x0,
                                 double lo, double hi, int steps = 15);
/// log density of the truncated normal proposal at x.
double truncnorm_logpdf(const NrProposal& q, double x);

struct MvnProposal {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    bool flagged = false;
};
/// Multivariate analogue over a box; the target returns -inf outside the
/// feasible set.
MvnProposal nr_mvn_proposal(const std::function<double(std::span<const double>)>& log_target,
                            std::vector<double> x0, std::span<const double> lo,
                            std::span<const double> hi, int steps = 15);

/// log f(x | psi): density of the latent state path under the model.
double state_log_prior(const LatentStates& x, const SsmSpec& spec);

/// Default mid-range starting point.
SsmSpec default_spec(ModelKind kind, int order = 1);

/// Coordinate-wise means of q(psi) ~ f(x | psi) pi(psi), each by 1-D
/// quadrature over its feasible interval with the others held fixed.
std::vector<double> initialize_psi(ModelKind kind, int order, std::vector<double> start,
                                   const LatentStates& x);

struct McmcConfig {
    int burnin = 5000;
    int draws = 20000;
    std::uint64_t seed = 1;
    int nr_steps = 15;
    int thin = 1;
    int state_every = 0;         // keep a full state path every n retained draws (0: never)
    double rw_target = 0.23;     // Step 3 acceptance target during burn-in
    int init_state_sweeps = 20;  // Step 1 sweeps before psi initialization
    bool init_from_states = true;
    std::ostream* trace_stream = nullptr;  // newline-delimited JSON, one record per draw
};

struct McmcInput {
    MarginMode mode = MarginMode::Fixed;
    std::vector<double> data;  // u for Fixed, y otherwise
    SsmSpec start;             // model kind, order and starting psi
    std::optional<MarginModel> margin;  // JointParametric: family and starting theta
};

struct McmcTrace {
    ModelKind kind = ModelKind::Ucar;
    int order = 1;
    MarginMode mode = MarginMode::Fixed;
    std::optional<MarginModel> base_margin;
    std::vector<std::string> psi_names;
    std::vector<std::string> theta_names;
    std::vector<std::vector<double>> psi;
    std::vector<std::vector<double>> theta;
    std::vector<double> loglik;
    std::vector<LatentStates> terminal;  // last max(p, 1) states of each draw
    std::vector<LatentStates> paths;     // thinned full paths
    std::map<std::string, double> acceptance;
    std::vector<std::string> warnings;

    std::size_t size() const { return psi.size(); }
    SsmSpec spec_at(std::size_t i) const;
    /// Margin at draw i (JointParametric only).
    MarginModel margin_at(std::size_t i) const;
    std::vector<double> column(const std::string& name) const;
    /// Posterior mean of the free parameters.
    std::vector<double> psi_mean() const;
    nlohmann::json summary() const;
};

McmcTrace mcmc_fit(const McmcInput& input, const McmcConfig& config);

/// Empirical quantile (type 7) of a sample.
double sample_quantile(std::vector<double> x, double q);
/// Effective sample size by the initial positive sequence estimator.
double effective_sample_size(std::span<const double> x);

}  // namespace invcop
