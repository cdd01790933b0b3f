#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "invcop/bayes.hpp"
#include "invcop/dependence.hpp"
#include "invcop/forecasting.hpp"
#include "invcop/mle.hpp"
#include "invcop/scoring.hpp"

namespace invcop {

// ------------------------------------------------------------------ data

struct TimeSeries {
    std::vector<std::string> dates;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    /// y_t = log P_t - log P_{t-1}, dated by the later observation.
    TimeSeries log_diff() const;
};

/// Two delimited columns (date, value); comma, semicolon or tab. A header
/// line is optional. Dates must increase, compared numerically when both
/// parse as numbers and as text otherwise (ISO dates sort as text). All bad
/// lines are reported together in one InputError.
TimeSeries parse_series(std::istream& in, const std::string& source = "input");
TimeSeries ingest_csv(const std::filesystem::path& path, bool log_diff = false);
void write_series_csv(const std::filesystem::path& path, const TimeSeries& s);

// ------------------------------------------------------------------ workers

/// Pool size from INVCOP_WORKERS, else the hardware concurrency.
std::size_t worker_count();
/// Runs fn(0..n-1) on the pool; the first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

// ------------------------------------------------------------------ fitting

/// What to fit: latent model, how y enters and which margin.
struct ModelChoice {
    std::string label;
    ModelKind kind = ModelKind::Ucar;
    int order = 1;
    bool direct = false;               // state space model fitted to y itself
    MarginKind margin = MarginKind::Kde;
};

/// `svuc`, `msar` or `ucar:p`; margin `kde|skewt|empirical|gamma|normal`.
ModelChoice parse_model_choice(const std::string& model, const std::string& margin = "kde", bool direct = false,
                               std::string label = {});

struct FitSettings {
    std::string method = "mcmc";  // or "mle" (copula models)
    McmcConfig mcmc;
    MleConfig mle;
    std::size_t predictive_draws = 100;
    PredictiveOptions predictive;
};

struct FittedModel {
    ModelChoice choice;
    std::optional<McmcTrace> trace;
    std::optional<MleResult> mle;
    std::optional<MarginModel> margin;  // fixed margin of a two-stage fit
    PredictiveModel predictive;

    /// Posterior mean (falling back to the best draw when the mean is
    /// infeasible) or the MLE.
    SsmSpec point_spec() const;
    nlohmann::json summary() const;
};

/// Nonparametric margins (KDE, empirical) are fitted first and held fixed;
/// parametric margins are sampled jointly with the copula parameters.
FittedModel fit_model(const ModelChoice& choice, std::span<const double> y, const FitSettings& settings);

/// Rolling one-step predictives for t = 2..T and their scores.
ModelScores score_fitted(const FittedModel& fit, std::span<const double> y,
                         std::vector<PredictiveDistribution>* keep = nullptr, const PredictiveOptions& opt = {});

/// Lag-one dependence at a point: quadrature where available, otherwise
/// Monte Carlo.
DependenceReport dependence_at(const SsmSpec& spec, long long mc_draws = 200000, std::uint64_t seed = 1);

// ------------------------------------------------------------------ studies

struct SimulationStudyConfig {
    int replications = 20;
    int length = 500;
    std::uint64_t seed = 1;
    FitSettings fit;
    std::size_t workers = 0;  // 0: worker_count()
};

struct SimulationStudyResult {
    ScoreReport sim1;  // M1 vs M2 on UCAR1 data
    ScoreReport sim2;  // M2 vs M1 on copula data with a Gamma(2,2) margin
    /// Table: dataset,model,RMSE,LP,CRPS,TW-CRPS with stars.
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

/// Sim1: y = mu + eps with mu_t = 0.7 mu_{t-1} + N(0, 0.25), eps ~ N(0, 0.5).
/// Sim2: the same dependence through a Gamma(shape 2, scale 2) margin.
std::vector<double> simulate_study_series(int which, int length, std::uint64_t seed);

SimulationStudyResult run_simulation_study(const SimulationStudyConfig& config);

struct InflationStudyConfig {
    TimeSeries series;
    std::vector<ModelChoice> models;  // empty: C1-C3 and S1-S3
    FitSettings fit;
    std::filesystem::path out_dir;
    std::size_t workers = 0;
};

struct InflationStudyResult {
    std::vector<FittedModel> fits;
    ScoreReport scores;
    std::vector<std::pair<std::string, DependenceReport>> dependence;
    std::vector<std::filesystem::path> files;
};

/// The default six-model set: SVUC, MSAR1 and UCAR(4) as copula models with
/// the given margin (C1-C3), and the same three fitted directly (S1-S3).
std::vector<ModelChoice> default_study_models(MarginKind copula_margin = MarginKind::Kde);

/// Fits every model, scores one-step predictives for t = 2..T, and writes
/// parameters.csv, dependence.csv, scores.csv, predictive_<label>.csv,
/// margins.csv and fits.json to out_dir (when set).
InflationStudyResult run_inflation_study(const InflationStudyConfig& config);

}  // namespace invcop
