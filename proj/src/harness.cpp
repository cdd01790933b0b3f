#include "invcop/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "invcop/error.hpp"
#include "invcop/latent_margin.hpp"

namespace invcop {

// ------------------------------------------------------------------ data

namespace {

std::string trim(std::string s) {
    const auto ws = " \t\r\n\"";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

bool date_after(const std::string& later, const std::string& earlier) {
    const auto a = parse_number(later), b = parse_number(earlier);
    if (a && b) return *a > *b;
    return later > earlier;
}

}  // namespace

TimeSeries TimeSeries::log_diff() const {
    if (values.size() < 2) throw InputError("log difference needs at least two observations");
    TimeSeries out;
    for (std::size_t t = 0; t < values.size(); ++t)
        if (!(values[t] > 0.0))
            throw InputError("log difference needs positive values; observation " + std::to_string(t + 1) + " is " +
                             std::to_string(values[t]));
    for (std::size_t t = 1; t < values.size(); ++t) {
        out.dates.push_back(dates[t]);
        out.values.push_back(std::log(values[t]) - std::log(values[t - 1]));
    }
    return out;
}

TimeSeries parse_series(std::istream& in, const std::string& source) {
    TimeSeries s;
    std::vector<std::string> errors;
    std::string line;
    char delim = 0;
    int lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        if (!delim) {
            for (char c : {',', ';', '\t'})
                if (line.find(c) != std::string::npos) {
                    delim = c;
                    break;
                }
            if (!delim) {
                errors.push_back("line " + std::to_string(lineno) + ": expected two delimited columns");
                first = false;
                continue;
            }
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, delim)) fields.push_back(trim(f));
        if (line.back() == delim) fields.emplace_back();
        const bool header_candidate = first;
        first = false;
        if (fields.size() < 2) {
            errors.push_back("line " + std::to_string(lineno) + ": expected two columns");
            continue;
        }
        const auto& date = fields[0];
        const auto& val = fields[1];
        const auto v = parse_number(val);
        if (header_candidate && !v && !val.empty()) continue;  // header line
        if (val.empty()) {
            errors.push_back("line " + std::to_string(lineno) + ": missing value");
            continue;
        }
        if (!v || !std::isfinite(*v)) {
            errors.push_back("line " + std::to_string(lineno) + ": cannot parse value '" + val + "'");
            continue;
        }
        if (date.empty()) {
            errors.push_back("line " + std::to_string(lineno) + ": missing date");
            continue;
        }
        if (!s.dates.empty() && !date_after(date, s.dates.back())) {
            errors.push_back("line " + std::to_string(lineno) + ": date '" + date + "' does not follow '" +
                             s.dates.back() + "'");
            continue;
        }
        s.dates.push_back(date);
        s.values.push_back(*v);
    }
    if (!errors.empty()) {
        constexpr std::size_t kShown = 20;
        std::string msg = source + ":";
        for (std::size_t i = 0; i < std::min(errors.size(), kShown); ++i) msg += " " + errors[i] + ";";
        msg.pop_back();
        if (errors.size() > kShown) msg += " (and " + std::to_string(errors.size() - kShown) + " more bad lines)";
        throw InputError(msg);
    }
    if (s.values.empty()) throw InputError(source + ": no observations");
    return s;
}

TimeSeries ingest_csv(const std::filesystem::path& path, bool log_diff) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    auto s = parse_series(in, path.string());
    return log_diff ? s.log_diff() : s;
}

void write_series_csv(const std::filesystem::path& path, const TimeSeries& s) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out.precision(12);
    out << "date,value\n";
    for (std::size_t t = 0; t < s.size(); ++t) out << s.dates[t] << "," << s.values[t] << "\n";
}

// ------------------------------------------------------------------ workers

std::size_t worker_count() {
    if (const char* env = std::getenv("INVCOP_WORKERS")) {
        const auto v = parse_number(env);
        if (!v || *v < 1.0) throw InputError(std::string("INVCOP_WORKERS must be a positive integer, got '") + env + "'");
        return static_cast<std::size_t>(*v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers) {
    if (workers == 0) workers = worker_count();
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ------------------------------------------------------------------ fitting

ModelChoice parse_model_choice(const std::string& model, const std::string& margin, bool direct, std::string label) {
    ModelChoice c;
    c.direct = direct;
    if (model == "svuc") {
        c.kind = ModelKind::Svuc;
    } else if (model == "msar" || model == "msar1") {
        c.kind = ModelKind::Msar1;
    } else if (model.rfind("ucar", 0) == 0) {
        c.kind = ModelKind::Ucar;
        if (model.size() > 4) {
            const auto p = model[4] == ':' ? parse_number(model.substr(5)) : std::nullopt;
            if (!p || *p < 1.0 || *p != std::floor(*p)) throw InputError("bad UCAR order in '" + model + "'");
            c.order = static_cast<int>(*p);
        }
    } else {
        throw InputError("unknown model '" + model + "' (svuc, msar, ucar:p)");
    }
    if (margin == "kde") c.margin = MarginKind::Kde;
    else if (margin == "skewt" || margin == "skew-t") c.margin = MarginKind::SkewT;
    else if (margin == "empirical") c.margin = MarginKind::Empirical;
    else if (margin == "gamma") c.margin = MarginKind::Gamma;
    else if (margin == "normal") c.margin = MarginKind::Normal;
    else throw InputError("unknown margin '" + margin + "' (kde, skewt, empirical, gamma, normal)");
    if (label.empty()) {
        label = model == "msar" ? "msar1" : model;
        if (c.kind == ModelKind::Ucar && c.order == 1 && model == "ucar") label = "ucar:1";
        label += direct ? "/direct" : "/" + margin;
    }
    c.label = std::move(label);
    return c;
}

SsmSpec FittedModel::point_spec() const {
    if (mle) return mle->spec;
    if (!trace || trace->size() == 0) throw std::logic_error("FittedModel: nothing fitted");
    const auto m = trace->psi_mean();
    if (!check_free(trace->kind, trace->order, m)) return spec_from_free(trace->kind, trace->order, m);
    const auto best = std::max_element(trace->loglik.begin(), trace->loglik.end()) - trace->loglik.begin();
    return trace->spec_at(static_cast<std::size_t>(best));
}

nlohmann::json FittedModel::summary() const {
    nlohmann::json j;
    j["label"] = choice.label;
    j["model"] = to_string(choice.kind);
    j["order"] = choice.order;
    j["direct"] = choice.direct;
    if (!choice.direct) j["margin"] = to_string(choice.margin);
    if (trace) j["mcmc"] = trace->summary();
    if (mle) {
        j["mle"] = mle->to_json();
        j["mle"].erase("margin");
    }
    j["point"] = spec_to_json(point_spec());
    j["predictive"] = predictive.provenance;
    return j;
}

FittedModel fit_model(const ModelChoice& choice, std::span<const double> y, const FitSettings& settings) {
    FittedModel fm;
    fm.choice = choice;
    const auto start = default_spec(choice.kind, choice.order);
    const bool nonparametric = choice.margin == MarginKind::Kde || choice.margin == MarginKind::Empirical;
    if (settings.method == "mle") {
        if (choice.direct) throw InputError("mle is available for copula models only");
        auto r = two_stage_mle(y, choice.margin, start, settings.mle);
        fm.margin = r.margin;
        fm.predictive = point_model(r.spec, r.margin);
        fm.mle = std::move(r);
        return fm;
    }
    if (settings.method != "mcmc") throw InputError("unknown method '" + settings.method + "' (mcmc, mle)");
    McmcInput in;
    in.start = start;
    if (choice.direct) {
        in.mode = MarginMode::Direct;
        in.data.assign(y.begin(), y.end());
    } else if (nonparametric) {
        fm.margin = fit_margin(choice.margin, y);
        in.mode = MarginMode::Fixed;
        in.data = to_copula_data(*fm.margin, y);
    } else {
        in.mode = MarginMode::JointParametric;
        in.margin = fit_margin(choice.margin, y);
        in.data.assign(y.begin(), y.end());
    }
    fm.trace = mcmc_fit(in, settings.mcmc);
    fm.predictive = trace_model(*fm.trace, settings.predictive_draws, fm.margin);
    return fm;
}

ModelScores score_fitted(const FittedModel& fit, std::span<const double> y, std::vector<PredictiveDistribution>* keep,
                         const PredictiveOptions& opt) {
    auto preds = rolling_one_step(fit.predictive, y, opt);
    auto s = score_forecasts(preds, y.subspan(1), {}, fit.choice.label);
    if (keep) *keep = std::move(preds);
    return s;
}

DependenceReport dependence_at(const SsmSpec& spec, long long mc_draws, std::uint64_t seed) {
    if (spec.kind == ModelKind::Ucar && spec.ucar().order() > 1) return dependence_mc(spec, 1, mc_draws, kDefaultAlphas, seed);
    return dependence_quadrature(spec);
}

// ------------------------------------------------------------------ simulation study

std::vector<double> simulate_study_series(int which, int length, std::uint64_t seed) {
    if (which != 1 && which != 2) throw std::invalid_argument("simulate_study_series: which must be 1 or 2");
    if (length < 2) throw std::invalid_argument("simulate_study_series: length must be >= 2");
    constexpr double rho = 0.7, s2_mu = 0.25, s2 = 0.5;
    const double var_mu = s2_mu / (1.0 - rho * rho);
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> y(static_cast<std::size_t>(length));
    double mu = std::sqrt(var_mu) * nd(rng);
    for (auto& v : y) {
        v = mu + std::sqrt(s2) * nd(rng);
        mu = rho * mu + std::sqrt(s2_mu) * nd(rng);
    }
    if (which == 2) {
        const auto g = MarginModel::gamma(2.0, 2.0);
        const double sd = std::sqrt(var_mu + s2);
        for (auto& v : y) v = g.quantile(std::clamp(norm_cdf(v / sd), kUClamp, 1.0 - kUClamp));
    }
    return y;
}

namespace {

std::uint64_t shard_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{seed, a, b};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void append(ModelScores& into, const ModelScores& from) {
    const std::size_t off = into.lp.size();
    into.lp.insert(into.lp.end(), from.lp.begin(), from.lp.end());
    into.crps.insert(into.crps.end(), from.crps.begin(), from.crps.end());
    into.tw_crps.insert(into.tw_crps.end(), from.tw_crps.begin(), from.tw_crps.end());
    into.sq_err.insert(into.sq_err.end(), from.sq_err.begin(), from.sq_err.end());
    for (auto c : from.capped) into.capped.push_back(off + c);
}

}  // namespace

std::string SimulationStudyResult::to_csv() const {
    std::ostringstream os;
    os << "dataset," << sim1.to_csv().substr(0, sim1.to_csv().find('\n') + 1);
    for (const auto& [name, rep] : {std::pair{"Sim1", &sim1}, std::pair{"Sim2", &sim2}}) {
        const auto body = rep->to_csv();
        std::istringstream in(body.substr(body.find('\n') + 1));
        for (std::string line; std::getline(in, line);) os << name << "," << line << "\n";
    }
    return os.str();
}

nlohmann::json SimulationStudyResult::to_json() const { return {{"sim1", sim1.to_json()}, {"sim2", sim2.to_json()}}; }

SimulationStudyResult run_simulation_study(const SimulationStudyConfig& config) {
    if (config.replications < 1 || config.length < 50)
        throw std::invalid_argument("simulation study: need replications >= 1 and length >= 50");
    const auto m1 = parse_model_choice("ucar:1", "kde", true, "M1: UCAR1");
    const auto m2 = parse_model_choice("ucar:1", "kde", false, "M2: InvCop3 & KDE");
    const std::size_t R = static_cast<std::size_t>(config.replications);
    // [rep][dataset][model]
    std::vector<std::array<std::array<ModelScores, 2>, 2>> per_rep(R);
    parallel_for(
        R,
        [&](std::size_t r) {
            for (int which = 1; which <= 2; ++which) {
                const auto y = simulate_study_series(which, config.length, shard_seed(config.seed, r, which));
                int k = 0;
                for (const auto* choice : {&m1, &m2}) {
                    FitSettings fs = config.fit;
                    fs.mcmc.seed = shard_seed(config.seed, r, 10 * which + k);
                    fs.mcmc.trace_stream = nullptr;
                    fs.predictive.seed = fs.mcmc.seed;
                    const auto fit = fit_model(*choice, y, fs);
                    per_rep[r][which - 1][k] = score_fitted(fit, y, nullptr, fs.predictive);
                    ++k;
                }
                spdlog::info("simulation study: replication {} dataset Sim{} done", r + 1, which);
            }
        },
        config.workers);
    SimulationStudyResult out;
    for (int d = 0; d < 2; ++d) {
        ScoreReport& rep = d == 0 ? out.sim1 : out.sim2;
        rep.models.resize(2);
        rep.models[0].name = m1.label;
        rep.models[1].name = m2.label;
        for (std::size_t r = 0; r < R; ++r)
            for (int k = 0; k < 2; ++k) append(rep.models[k], per_rep[r][d][k]);
        if (d == 0) rep.compare(0, 1);
        else rep.compare(1, 0);
    }
    return out;
}

// ------------------------------------------------------------------ inflation study

std::vector<ModelChoice> default_study_models(MarginKind copula_margin) {
    const std::string m = copula_margin == MarginKind::SkewT ? "skewt" : to_string(copula_margin);
    return {
        parse_model_choice("svuc", m, false, "C1"),   parse_model_choice("msar", m, false, "C2"),
        parse_model_choice("ucar:4", m, false, "C3"), parse_model_choice("svuc", m, true, "S1"),
        parse_model_choice("msar", m, true, "S2"),    parse_model_choice("ucar:4", m, true, "S3"),
    };
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& text, std::vector<std::filesystem::path>& files) {
    std::ofstream out(p);
    if (!out) throw InputError("cannot write " + p.string());
    out << text;
    files.push_back(p);
}

std::string parameter_rows(const FittedModel& f) {
    std::ostringstream os;
    os.precision(6);
    if (f.mle) {
        for (std::size_t k = 0; k < f.mle->names.size(); ++k)
            os << f.choice.label << "," << f.mle->names[k] << "," << f.mle->psi[k] << ",,,,\n";
        return os.str();
    }
    const auto s = f.trace->summary();
    for (const char* group : {"psi", "theta"}) {
        if (!s.contains(group)) continue;
        for (const auto& [name, v] : s[group].items())
            os << f.choice.label << "," << name << "," << v["mean"].get<double>() << "," << v["sd"].get<double>()
               << "," << v["q05"].get<double>() << "," << v["q95"].get<double>() << "," << v["ess"].get<double>()
               << "\n";
    }
    return os.str();
}

// Marginal density of y implied by a fit, on a grid.
std::vector<double> implied_margin(const FittedModel& f, const std::vector<double>& grid) {
    std::vector<double> d(grid.size());
    if (!f.choice.direct) {
        MarginModel g;
        if (f.margin) {
            g = *f.margin;
        } else {
            const auto& tr = *f.trace;
            std::vector<double> theta(tr.theta_names.size(), 0.0);
            for (const auto& th : tr.theta)
                for (std::size_t k = 0; k < theta.size(); ++k) theta[k] += th[k] / tr.theta.size();
            g = tr.base_margin->with_params(theta);
        }
        for (std::size_t i = 0; i < grid.size(); ++i) d[i] = g.pdf(grid[i]);
        return d;
    }
    const auto spec = f.point_spec();
    const auto a = mean_of(f.trace->column("a")), b = mean_of(f.trace->column("b"));
    for (std::size_t i = 0; i < grid.size(); ++i) d[i] = latent_pdf(spec, (grid[i] - a) / b) / b;
    return d;
}

}  // namespace

InflationStudyResult run_inflation_study(const InflationStudyConfig& config) {
    const auto& y = config.series.values;
    if (y.size() < 50) throw InputError("inflation study: need at least 50 observations");
    const auto models = config.models.empty() ? default_study_models() : config.models;
    InflationStudyResult res;
    res.fits.resize(models.size());
    std::vector<ModelScores> scores(models.size());
    std::vector<std::vector<PredictiveDistribution>> preds(models.size());
    parallel_for(
        models.size(),
        [&](std::size_t i) {
            FitSettings fs = config.fit;
            fs.mcmc.seed = shard_seed(config.fit.mcmc.seed, i, 0);
            fs.mcmc.trace_stream = nullptr;
            res.fits[i] = fit_model(models[i], y, fs);
            scores[i] = score_fitted(res.fits[i], y, &preds[i], fs.predictive);
            spdlog::info("inflation study: {} fitted and scored", models[i].label);
        },
        config.workers);

    res.scores.models = scores;
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (models[i].direct) continue;
        for (std::size_t j = 0; j < models.size(); ++j)
            if (models[j].direct && models[j].kind == models[i].kind && models[j].order == models[i].order) {
                res.scores.compare(i, j);
                break;
            }
        res.dependence.emplace_back(models[i].label, dependence_at(res.fits[i].point_spec()));
    }
    if (config.out_dir.empty()) return res;

    std::filesystem::create_directories(config.out_dir);
    std::string params = "model,parameter,mean,sd,q05,q95,ess\n";
    for (const auto& f : res.fits) params += parameter_rows(f);
    write_file(config.out_dir / "parameters.csv", params, res.files);

    std::string dep = "model,lag,method,statistic,alpha,value,se\n";
    for (const auto& [label, rep] : res.dependence) {
        const auto body = rep.to_csv();
        std::istringstream in(body.substr(body.find('\n') + 1));
        for (std::string line; std::getline(in, line);) dep += label + "," + line + "\n";
    }
    write_file(config.out_dir / "dependence.csv", dep, res.files);
    write_file(config.out_dir / "scores.csv", res.scores.to_csv(), res.files);

    for (std::size_t i = 0; i < models.size(); ++i) {
        auto csv = predictive_summaries_csv(preds[i]);
        // Replace the time index by the date of the target observation.
        std::istringstream in(csv);
        std::ostringstream out;
        std::string line;
        std::getline(in, line);
        out << "date," << line << "\n";
        for (std::size_t k = 0; std::getline(in, line); ++k) out << config.series.dates[k + 1] << "," << line << "\n";
        std::string name = models[i].label;
        std::replace_if(name.begin(), name.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)); }, '_');
        write_file(config.out_dir / ("predictive_" + name + ".csv"), out.str(), res.files);
    }

    const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
    const double pad = 0.25 * (*hi_it - *lo_it);
    std::vector<double> grid(200);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = *lo_it - pad + (*hi_it - *lo_it + 2 * pad) * i / 199.0;
    std::ostringstream mg;
    mg.precision(8);
    mg << "model,y,density\n";
    for (const auto& f : res.fits) {
        const auto d = implied_margin(f, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) mg << f.choice.label << "," << grid[i] << "," << d[i] << "\n";
    }
    write_file(config.out_dir / "margins.csv", mg.str(), res.files);

    nlohmann::json fits = nlohmann::json::array();
    for (const auto& f : res.fits) fits.push_back(f.summary());
    nlohmann::json all{{"fits", fits}, {"scores", res.scores.to_json()}};
    for (const auto& [label, rep] : res.dependence) all["dependence"][label] = rep.to_json();
    write_file(config.out_dir / "fits.json", all.dump(2) + "\n", res.files);
    return res;
}

}  // namespace invcop
