#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "invcop/error.hpp"
#include "invcop/harness.hpp"
#include "invcop/latent_margin.hpp"

using namespace invcop;

namespace {

struct Common {
    std::string data;
    bool log_diff = false;
    std::string model = "ucar:1";
    std::string margin = "kde";
    bool direct = false;
    std::string method = "mcmc";
    std::uint64_t seed = 1;
    int burnin = 5000;
    int draws = 20000;
    std::size_t predictive_draws = 100;
    std::string out;
};

void add_data(CLI::App* cmd, Common& c) {
    cmd->add_option("--data", c.data, "CSV with date,value columns")->required()->check(CLI::ExistingFile);
    cmd->add_flag("--log-diff", c.log_diff, "Model log differences of the series");
}

void add_model(CLI::App* cmd, Common& c) {
    cmd->add_option("--model", c.model, "svuc, msar or ucar:p")->capture_default_str();
    cmd->add_option("--margin", c.margin, "kde, skewt, empirical, gamma or normal")->capture_default_str();
    cmd->add_flag("--direct", c.direct, "Fit the state space model to the data itself");
}

void add_estimation(CLI::App* cmd, Common& c) {
    cmd->add_option("--method", c.method, "mcmc or mle")->capture_default_str()->check(CLI::IsMember({"mcmc", "mle"}));
    cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    cmd->add_option("--burnin", c.burnin, "MCMC burn-in sweeps")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--draws", c.draws, "Retained MCMC draws")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--predictive-draws", c.predictive_draws, "Posterior draws mixed into each predictive")
        ->capture_default_str();
}

FitSettings settings_of(const Common& c) {
    FitSettings fs;
    fs.method = c.method;
    fs.mcmc.seed = c.seed;
    fs.mcmc.burnin = c.burnin;
    fs.mcmc.draws = c.draws;
    fs.mle.pf_seed = c.seed;
    fs.predictive_draws = c.predictive_draws;
    fs.predictive.seed = c.seed;
    return fs;
}

TimeSeries load(const Common& c) { return ingest_csv(c.data, c.log_diff); }

// Writes to --out when given, else stdout.
void emit(const std::string& out, const std::string& text) {
    if (out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out);
    if (!f) throw InputError("cannot write " + out);
    f << text;
    spdlog::info("wrote {}", out);
}

SsmSpec spec_of(const std::string& model, const std::string& params) {
    const auto choice = parse_model_choice(model);
    std::vector<double> v;
    std::stringstream ss(params);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            v.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw InputError("cannot parse parameter '" + tok + "'");
        }
    }
    if (v.empty()) return default_spec(choice.kind, choice.order);
    if (auto why = check_free(choice.kind, choice.order, v)) throw InputError("infeasible parameters: " + *why);
    return spec_from_free(choice.kind, choice.order, v);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inversion copula time series models: fitting, forecasting and dependence"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    Common c;

    auto* fit = app.add_subcommand("fit", "Estimate a model and print its summary as JSON");
    add_data(fit, c);
    add_model(fit, c);
    add_estimation(fit, c);
    std::string trace_path;
    fit->add_option("--trace", trace_path, "Write MCMC draws as newline-delimited JSON");
    fit->add_option("--out", c.out, "Output JSON file");

    auto* forecast = app.add_subcommand("forecast", "Predictive distribution after the last observation");
    add_data(forecast, c);
    add_model(forecast, c);
    add_estimation(forecast, c);
    int horizon = 1;
    bool rolling = false;
    forecast->add_option("--horizon", horizon, "Steps ahead")->capture_default_str()->check(CLI::Range(1, 1000));
    forecast->add_flag("--rolling", rolling, "Print rolling one-step summaries for t = 2..T instead");
    forecast->add_option("--out", c.out, "Output file");

    auto* depend = app.add_subcommand("depend", "Serial dependence metrics at a parameter point");
    std::string params, dep_method = "auto";
    int lag = 1;
    long long mc_draws = 500000;
    depend->add_option("--model", c.model, "svuc, msar or ucar:p")->capture_default_str();
    depend->add_option("--params", params, "Comma-separated free parameters (default: a mid-range point)");
    depend->add_option("--how", dep_method, "auto, quadrature or mc")->capture_default_str()
        ->check(CLI::IsMember({"auto", "quadrature", "mc"}));
    depend->add_option("--lag", lag, "Lag for Monte Carlo")->capture_default_str()->check(CLI::PositiveNumber);
    depend->add_option("--mc-draws", mc_draws, "Monte Carlo draws")->capture_default_str();
    depend->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    depend->add_option("--out", c.out, "Output CSV file");

    auto* score = app.add_subcommand("score", "Fit several models and score their one-step predictives");
    std::vector<std::string> models;
    add_data(score, c);
    add_estimation(score, c);
    score->add_option("--models", models, "Model specs model[/margin|/direct], first is compared with the rest")
        ->required();
    score->add_option("--out", c.out, "Output CSV file");

    auto* sim = app.add_subcommand("simulate-study", "Repeated-sample comparison of direct and copula fits");
    SimulationStudyConfig sc;
    sim->add_option("--replications", sc.replications, "Replications")->capture_default_str();
    sim->add_option("--length", sc.length, "Series length")->capture_default_str();
    add_estimation(sim, c);
    sim->add_option("--out", c.out, "Output CSV file");

    auto* infl = app.add_subcommand("inflation-study", "Six-model study of a price index series");
    infl->add_option("--data", c.data, "CSV with date,price index columns")->required()->check(CLI::ExistingFile);
    add_estimation(infl, c);
    infl->add_option("--margin", c.margin, "Margin of the copula models")->capture_default_str();
    infl->add_option("--out", c.out, "Output directory")->required();
    bool levels = false;
    infl->add_flag("--levels", levels, "Use the values as given instead of log differences");

    auto* spline = app.add_subcommand("spline-check", "Accuracy and cost of the latent margin spline table");
    int nodes = 100;
    spline->add_option("--model", c.model, "svuc, msar or ucar:p")->capture_default_str();
    spline->add_option("--params", params, "Comma-separated free parameters");
    spline->add_option("--nodes", nodes, "Spline nodes")->capture_default_str()->check(CLI::Range(10, 100000));

    CLI11_PARSE(app, argc, argv);
    spdlog::set_default_logger(spdlog::stderr_color_mt("invcop"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (fit->parsed()) {
            const auto y = load(c);
            auto fs = settings_of(c);
            std::ofstream trace;
            if (!trace_path.empty()) {
                trace.open(trace_path);
                if (!trace) throw InputError("cannot write " + trace_path);
                fs.mcmc.trace_stream = &trace;
            }
            const auto fm = fit_model(parse_model_choice(c.model, c.margin, c.direct), y.values, fs);
            emit(c.out, fm.summary().dump(2) + "\n");
        } else if (forecast->parsed()) {
            const auto y = load(c);
            const auto fs = settings_of(c);
            const auto fm = fit_model(parse_model_choice(c.model, c.margin, c.direct), y.values, fs);
            if (rolling) {
                emit(c.out, predictive_summaries_csv(rolling_one_step(fm.predictive, y.values, fs.predictive)));
            } else {
                const auto d = predictive_density_grid(fm.predictive, y.values, horizon, {}, fs.predictive);
                std::ostringstream os;
                os.precision(8);
                os << "y,density,cdf\n";
                for (std::size_t i = 0; i < d.grid.size(); ++i)
                    os << d.grid[i] << "," << d.density[i] << "," << d.cdf[i] << "\n";
                std::cerr << d.summary().dump(2) << "\n";
                emit(c.out, os.str());
            }
        } else if (depend->parsed()) {
            const auto spec = spec_of(c.model, params);
            const bool quad = dep_method == "quadrature" ||
                              (dep_method == "auto" && lag == 1 &&
                               !(spec.kind == ModelKind::Ucar && model_order(spec) > 1));
            const auto rep = quad ? dependence_quadrature(spec) : dependence_mc(spec, lag, mc_draws, kDefaultAlphas, c.seed);
            emit(c.out, rep.to_csv());
        } else if (score->parsed()) {
            const auto y = load(c);
            const auto fs = settings_of(c);
            ScoreReport rep;
            for (const auto& m : models) {
                const auto slash = m.find('/');
                const std::string kind = m.substr(0, slash);
                const std::string tail = slash == std::string::npos ? "kde" : m.substr(slash + 1);
                const bool direct = tail == "direct";
                const auto fm = fit_model(parse_model_choice(kind, direct ? "kde" : tail, direct, m), y.values, fs);
                rep.models.push_back(score_fitted(fm, y.values, nullptr, fs.predictive));
                spdlog::info("scored {}", m);
            }
            for (std::size_t i = 1; i < rep.models.size(); ++i) rep.compare(0, i);
            emit(c.out, rep.to_csv());
        } else if (sim->parsed()) {
            sc.seed = c.seed;
            sc.fit = settings_of(c);
            emit(c.out, run_simulation_study(sc).to_csv());
        } else if (infl->parsed()) {
            InflationStudyConfig ic;
            c.log_diff = !levels;
            ic.series = load(c);
            ic.fit = settings_of(c);
            ic.out_dir = c.out;
            const auto margin = parse_model_choice("svuc", c.margin).margin;
            ic.models = default_study_models(margin);
            const auto res = run_inflation_study(ic);
            std::cout << res.scores.to_csv();
        } else if (spline->parsed()) {
            const auto spec = spec_of(c.model, params);
            const auto t0 = std::chrono::steady_clock::now();
            const auto table = build_spline_table(spec, nodes);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            double q_err = 0.0, ld_err = 0.0;
            for (int i = 0; i <= 400; ++i) {
                const double u = LatentMarginTable::kP1 + (LatentMarginTable::kPN - LatentMarginTable::kP1) * i / 400.0;
                const double z = latent_quantile_exact(spec, u);
                q_err = std::max(q_err, std::abs(table.quantile(u) - z));
                ld_err = std::max(ld_err, std::abs(table.logpdf(z) - latent_logpdf(spec, z)));
            }
            nlohmann::json j{{"spec", spec_to_json(spec)},
                             {"nodes", nodes},
                             {"build_seconds", secs},
                             {"max_quantile_error", q_err},
                             {"max_logdensity_error", ld_err}};
            std::cout << j.dump(2) << "\n";
        }
    } catch (const InputError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
