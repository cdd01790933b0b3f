#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "invcop/margins.hpp"
#include "invcop/ssm.hpp"

namespace invcop {

struct MleConfig {
    int max_evals = 4000;       // per Nelder-Mead run
    int restarts = 1;           // extra Nelder-Mead runs from the previous optimum
    int polish_rounds = 3;      // coordinate-wise Brent sweeps after the simplex
    int particles = 5000;       // SVUC particle filter
    std::uint64_t pf_seed = 1;  // common random numbers across evaluations
};

struct MleResult {
    SsmSpec spec;
    std::vector<std::string> names;
    std::vector<double> psi;
    MarginModel margin;  // stage-one fit (standard uniform placeholder for copula_mle)
    double max_logdensity = 0.0;
    int evals = 0;
    bool converged = false;

    nlohmann::json to_json() const;
};

/// Stage-two objective log c(u; psi): Kalman for UCAR, Hamilton for MSAR1,
/// fixed-seed particle filter for SVUC. -inf when psi is infeasible.
double copula_objective(std::span<const double> u, ModelKind kind, int order, std::span<const double> psi,
                        const MleConfig& config = {});

/// Maximizes log c(u; psi) over the constraint set, starting from `start`.
MleResult copula_mle(std::span<const double> u, const SsmSpec& start, const MleConfig& config = {});

/// Fits the margin to y, maps to u_t = G(y_t) and runs copula_mle.
MleResult two_stage_mle(std::span<const double> y, MarginKind margin, const SsmSpec& start,
                        const MleConfig& config = {});

}  // namespace invcop
