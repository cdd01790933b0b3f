#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "invcop/bayes.hpp"
#include "invcop/latent_margin.hpp"
#include "invcop/margins.hpp"
#include "invcop/numerics.hpp"
#include "invcop/ssm.hpp"

namespace invcop {

struct GaussianComponent {
    double weight = 1.0;
    double mean = 0.0;
    double var = 1.0;
};

/// Monotone map between the observed and latent scales. Copula models use
/// z = F_Z1^{-1}(G(y)); direct state space fits use z = (y - a) / b.
class ObservationMap {
public:
    static ObservationMap copula(std::shared_ptr<const MarginModel> g,
                                 std::shared_ptr<const LatentMarginTable> table);
    static ObservationMap direct(double a, double b);

    bool is_direct() const { return !g_; }
    double to_latent(double y) const;
    double to_observed(double z) const;
    /// log dz/dy at (y, z = to_latent(y)).
    double log_jacobian(double y, double z) const;

    const MarginModel* margin() const { return g_.get(); }
    const LatentMarginTable* table() const { return table_.get(); }

private:
    std::shared_ptr<const MarginModel> g_;
    std::shared_ptr<const LatentMarginTable> table_;
    double a_ = 0.0, b_ = 1.0;
};

/// One parameter point: latent model, observation map and (optionally) the
/// terminal latent state of a posterior draw.
struct PredictiveSource {
    SsmSpec spec;
    ObservationMap map;
    std::optional<LatentStates> terminal;
};

/// A fixed parameter point or an equally weighted set of posterior draws.
struct PredictiveModel {
    std::vector<PredictiveSource> draws;
    std::string provenance;
};

PredictiveModel point_model(const SsmSpec& spec, const MarginModel& margin);
PredictiveModel point_model_direct(const SsmSpec& spec, double a, double b);
/// Up to `max_draws` evenly spaced draws of the trace. Fixed-margin traces
/// need the margin that produced the copula data.
PredictiveModel trace_model(const McmcTrace& trace, std::size_t max_draws = 200,
                            const std::optional<MarginModel>& fixed_margin = std::nullopt);

/// Predictive law of Y: for each draw a normal mixture on that draw's latent
/// scale, pushed through its observation map. Draws are equally weighted.
class PredictiveMixture {
public:
    struct Part {
        ObservationMap map;
        std::vector<GaussianComponent> comps;  // weights sum to one
    };

    void add(ObservationMap map, std::vector<GaussianComponent> comps);
    const std::vector<Part>& parts() const { return parts_; }

    double cdf(double y) const;
    double pdf(double y) const;
    double logpdf(double y) const;
    /// Evaluates cdf and pdf together.
    void evaluate(double y, double& cdf, double& pdf) const;
    double draw(Rng& rng) const;
    /// y with cdf(y) = p, by bisection on the exact cdf.
    double quantile(double p) const;

private:
    std::vector<Part> parts_;
};

struct PredictiveOptions {
    int particles = 1000;   // SVUC particle filter size per draw
    int components = 64;    // SVUC particles kept per draw and time point
    int zeta_nodes = 9;     // quadrature nodes for future log-volatility
    int grid_size = 512;
    std::uint64_t seed = 1;
};

struct PredictiveDistribution {
    std::size_t target = 0;  // zero-based time index of the forecast
    int horizon = 1;
    std::vector<double> sample;
    std::vector<double> grid, density, cdf;  // cdf from the exact mixture at each node
    std::string provenance;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
    PredictiveMixture mixture;

    bool has_grid() const { return !grid.empty(); }
    /// Trapezoid integral of the density grid.
    double grid_mass() const;
    double mean() const;
    double sd() const;
    double quantile(double p) const;
    double prob_below(double y) const;
    double logpdf(double y) const { return mixture.logpdf(y); }
    nlohmann::json summary() const;
};

/// Latent predictive mixtures for z_{T+l}, one list per draw, given the
/// latent history z (one vector per draw).
std::vector<std::vector<GaussianComponent>> latent_predictive(const PredictiveModel& model,
                                                              std::span<const double> y_hist, int horizon,
                                                              const PredictiveOptions& opt = {});

/// Monte Carlo sample of Y_{T+l} given y_{1:T}; the mixture is attached too.
PredictiveDistribution predictive_sample(const PredictiveModel& model, std::span<const double> y_hist,
                                         int horizon, int n, std::uint64_t seed,
                                         const PredictiveOptions& opt = {});

/// Density of Y_{T+l} on a grid. An empty grid is chosen to span the
/// 1e-7 and 1 - 1e-7 predictive quantiles.
PredictiveDistribution predictive_density_grid(const PredictiveModel& model, std::span<const double> y_hist,
                                               int horizon, std::vector<double> grid = {},
                                               const PredictiveOptions& opt = {});

/// Wraps a mixture built elsewhere, with an automatic density grid.
PredictiveDistribution predictive_from_mixture(PredictiveMixture mixture, std::size_t target = 0,
                                               int grid_size = 512);

/// One-step predictives of y_t given y_{1:t-1} for t = 2..T, all from the
/// same fitted model. Element k targets zero-based index k + 1.
std::vector<PredictiveDistribution> rolling_one_step(const PredictiveModel& model, std::span<const double> y,
                                                     const PredictiveOptions& opt = {});

/// `t,mean,sd,p_below_zero,q05,q25,q50,q75,q95` rows with a header line.
std::string predictive_summaries_csv(const std::vector<PredictiveDistribution>& preds);

}  // namespace invcop
