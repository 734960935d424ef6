#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tme/stability.hpp"

namespace tme {

// --- configuration -----------------------------------------------------------

/// Benchmark configuration: flat key=value file merged with CLI overrides.
/// The seed is mandatory; there is no wall-clock fallback.
struct ExperimentConfig {
    std::string model = "lorenz63";
    double kappa = 10.0, lambda = 28.0, mu = 2.0, sigma = 5.0;  // lorenz63
    double theta = 1.0;                                         // ou
    // linear2 fixture: lightly damped oscillator
    double lin_omega2 = 4.0, lin_damping = 0.6, lin_l1 = 0.3, lin_l2 = 0.5;

    int obs_coord = 0;
    double meas_var = 2.0;

    double t0 = 0.0;
    double dt = 0.02;
    int steps = 100;

    std::vector<double> init_mean;      // defaults to zeros
    std::vector<double> init_cov_diag;  // defaults to ones

    int n_sub = kDefaultTruthSubsteps;
    int ekf_sub = kDefaultEkfSubsteps;
    std::string rule = "gh:3";
    int order = 2;  // fig1 / constants expansion order
    std::vector<std::string> filters = {"ekf-rk4", "ghf-em", "ghf-tme-2", "ghf-tme-3"};
    std::vector<std::string> smoothers = {"eks-rk4", "ghs-em", "ghs-tme-2", "ghs-tme-3"};
    std::vector<double> sigma_list = {0.2, 15.0};

    std::optional<std::uint64_t> seed;
    int runs = 100;
    int fig1_runs = 500;
    int threads = 1;
    std::string out_dir = ".";
    std::string tag = "lorenz";

    // constants subcommand
    double box_lo = -20.0, box_hi = 20.0;
    int box_samples = 1000;
    std::optional<double> c_P, c_S, c_bar, c_f;
    int bound_T = 100;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(std::stod(item));
    return out;
}

}  // namespace detail

/// Parses a flat key=value file; '#' starts a comment line.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line is not key=value: " + line);
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
    if (key == "model") cfg.model = value;
    else if (key == "kappa") cfg.kappa = std::stod(value);
    else if (key == "lambda") cfg.lambda = std::stod(value);
    else if (key == "mu") cfg.mu = std::stod(value);
    else if (key == "sigma") cfg.sigma = std::stod(value);
    else if (key == "theta") cfg.theta = std::stod(value);
    else if (key == "obs_coord") cfg.obs_coord = std::stoi(value);
    else if (key == "meas_var") cfg.meas_var = std::stod(value);
    else if (key == "t0") cfg.t0 = std::stod(value);
    else if (key == "dt") cfg.dt = std::stod(value);
    else if (key == "steps") cfg.steps = std::stoi(value);
    else if (key == "init_mean") cfg.init_mean = detail::split_doubles(value);
    else if (key == "init_cov_diag") cfg.init_cov_diag = detail::split_doubles(value);
    else if (key == "nsub") cfg.n_sub = std::stoi(value);
    else if (key == "ekf_sub") cfg.ekf_sub = std::stoi(value);
    else if (key == "rule") cfg.rule = value;
    else if (key == "order") cfg.order = std::stoi(value);
    else if (key == "filters") cfg.filters = detail::split_list(value);
    else if (key == "smoothers") cfg.smoothers = detail::split_list(value);
    else if (key == "sigma_list") cfg.sigma_list = detail::split_doubles(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "runs") cfg.runs = std::stoi(value);
    else if (key == "fig1_runs") cfg.fig1_runs = std::stoi(value);
    else if (key == "out") cfg.out_dir = value;
    else if (key == "tag") cfg.tag = value;
    else if (key == "box_lo") cfg.box_lo = std::stod(value);
    else if (key == "box_hi") cfg.box_hi = std::stod(value);
    else if (key == "box_samples") cfg.box_samples = std::stoi(value);
    else if (key == "c_P") cfg.c_P = std::stod(value);
    else if (key == "c_S") cfg.c_S = std::stod(value);
    else if (key == "c_bar") cfg.c_bar = std::stod(value);
    else if (key == "c_f") cfg.c_f = std::stod(value);
    else if (key == "bound_T") cfg.bound_T = std::stoi(value);
    else if (key == "threads") cfg.threads = std::stoi(value);
    else throw ConfigError("unknown config key: " + key);
}

inline ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig cfg;
    for (const auto& [k, v] : parse_config_file(path)) apply_config_entry(cfg, k, v);
    return cfg;
}

// --- resolved experiment pieces ------------------------------------------------

struct ResolvedExperiment {
    DiffusionModel model;
    std::optional<LinearSde> linear;
    MeasurementModel meas;
    InitialLaw init;
    ObservationSchedule schedule;
    SigmaRule rule;
};

inline DiffusionModel build_model(const ExperimentConfig& cfg, std::optional<LinearSde>* lin) {
    if (lin) lin->reset();
    if (cfg.model == "lorenz63") return make_lorenz63(cfg.kappa, cfg.lambda, cfg.mu, cfg.sigma);
    if (cfg.model == "ou") return make_ou(cfg.theta, cfg.sigma);
    if (cfg.model == "benes") return make_benes();
    if (cfg.model == "linear2") {
        Mat f(2, 2), l(2, 2);
        f << 0.0, 1.0, -cfg.lin_omega2, -cfg.lin_damping;
        l << cfg.lin_l1, 0.0, 0.0, cfg.lin_l2;
        if (lin) *lin = LinearSde{f, l};
        return make_linear(f, l);
    }
    throw ConfigError("unknown model: " + cfg.model);
}

inline ResolvedExperiment resolve_experiment(const ExperimentConfig& cfg) {
    ResolvedExperiment r;
    r.model = build_model(cfg, &r.linear);
    const int d = r.model.dim;
    if (cfg.obs_coord < 0 || cfg.obs_coord >= d)
        throw ConfigError("obs_coord out of range for the model");
    r.meas = measure_coordinate(d, cfg.obs_coord, cfg.meas_var);

    Vec m0 = Vec::Zero(d);
    for (std::size_t i = 0; i < cfg.init_mean.size() && i < static_cast<std::size_t>(d); ++i)
        m0[static_cast<Eigen::Index>(i)] = cfg.init_mean[i];
    Vec p0 = Vec::Ones(d);
    for (std::size_t i = 0; i < cfg.init_cov_diag.size() && i < static_cast<std::size_t>(d); ++i)
        p0[static_cast<Eigen::Index>(i)] = cfg.init_cov_diag[i];
    r.init = make_initial_law(m0, p0.asDiagonal());

    r.schedule = uniform_schedule(cfg.t0, cfg.dt, cfg.steps);
    r.rule = parse_rule(cfg.rule, d);
    return r;
}

/// Builds a moment scheme from a filter/smoother name: *-em, *-tme-M, or
/// *-exact (linear models only). EKF/EKS names are handled by the callers.
inline std::shared_ptr<const MomentScheme> build_scheme(const std::string& name,
                                                        const ResolvedExperiment& exp) {
    const auto dash = name.find('-');
    if (dash == std::string::npos) throw ConfigError("unknown scheme name: " + name);
    const std::string tail = name.substr(dash + 1);
    if (tail == "em") return std::make_shared<EulerMaruyamaScheme>(exp.model);
    if (tail == "exact") {
        if (!exp.linear)
            throw ConfigError("scheme " + name + " requires the linear2 model");
        return std::make_shared<LinearExactScheme>(*exp.linear);
    }
    if (tail.rfind("tme-", 0) == 0) {
        const int order = std::stoi(tail.substr(4));
        return std::make_shared<TmeScheme>(exp.model, TmeOrder(order));
    }
    throw ConfigError("unknown scheme name: " + name);
}

// --- RMSE ----------------------------------------------------------------------

/// Pooled root mean square error: squared errors are summed over all time
/// steps and state dimensions of one run before the root.
inline double rmse(const Trajectory& truth, const std::vector<Vec>& estimate) {
    if (truth.states.size() != estimate.size())
        throw DimensionError("rmse: truth/estimate length mismatch");
    if (truth.states.empty()) return 0.0;
    const auto d = truth.states.front().size();
    double acc = 0.0;
    for (std::size_t k = 0; k < estimate.size(); ++k)
        acc += (truth.states[k] - estimate[k]).squaredNorm();
    return std::sqrt(acc / (static_cast<double>(estimate.size()) * static_cast<double>(d)));
}

// --- CSV -----------------------------------------------------------------------

namespace detail {

inline std::string fmt17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string fmt_short(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", x);
    return buf;
}

class CsvWriter {
    std::ofstream out_;

public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw ConfigError("cannot open output file: " + path.string());
    }
    void comment(const std::string& text) { out_ << "# " << text << "\n"; }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ",";
            out_ << cells[i];
        }
        out_ << "\n";
    }
};

}  // namespace detail

// --- table1 ----------------------------------------------------------------------

struct CellStats {
    double mean_rmse = 0.0;
    double std_rmse = 0.0;
    int n_ok = 0;
    int n_failed = 0;
};

struct Table1Result {
    std::vector<std::string> filters;
    std::vector<std::string> smoothers;
    std::vector<std::vector<CellStats>> cells;  // [filter][smoother]
    std::vector<std::string> failures;          // "filter,smoother,run,message"
};

namespace detail {

struct RunGrid {
    // rmse[f][s], failure message empty on success
    std::vector<std::vector<double>> value;
    std::vector<std::vector<std::string>> error;
};

}  // namespace detail

/// Full filter x smoother RMSE grid under common random numbers: every cell
/// of one Monte Carlo run consumes the identical simulated record. Failed
/// runs are counted and excluded per cell, never silently dropped.
inline Table1Result run_table1(const ExperimentConfig& cfg) {
    if (!cfg.seed) throw ConfigError("seed is required (no wall-clock default)");
    ResolvedExperiment exp = resolve_experiment(cfg);

    const int nf = static_cast<int>(cfg.filters.size());
    const int ns = static_cast<int>(cfg.smoothers.size());
    // schemes are immutable; construct once and share across runs
    std::vector<std::shared_ptr<const MomentScheme>> filter_schemes(
        static_cast<std::size_t>(nf));
    std::vector<std::shared_ptr<const MomentScheme>> smoother_schemes(
        static_cast<std::size_t>(ns));
    for (int f = 0; f < nf; ++f)
        if (cfg.filters[static_cast<std::size_t>(f)] != "ekf-rk4")
            filter_schemes[static_cast<std::size_t>(f)] =
                build_scheme(cfg.filters[static_cast<std::size_t>(f)], exp);
    for (int s = 0; s < ns; ++s)
        if (cfg.smoothers[static_cast<std::size_t>(s)] != "eks-rk4")
            smoother_schemes[static_cast<std::size_t>(s)] =
                build_scheme(cfg.smoothers[static_cast<std::size_t>(s)], exp);

    std::vector<detail::RunGrid> grids(static_cast<std::size_t>(cfg.runs));
    auto run_one = [&](int r) {
        auto& grid = grids[static_cast<std::size_t>(r)];
        grid.value.assign(static_cast<std::size_t>(nf),
                          std::vector<double>(static_cast<std::size_t>(ns), 0.0));
        grid.error.assign(static_cast<std::size_t>(nf),
                          std::vector<std::string>(static_cast<std::size_t>(ns)));
        SimConfig sim{exp.model, exp.meas, exp.init, exp.schedule, cfg.n_sub, *cfg.seed,
                      static_cast<std::uint64_t>(r)};
        SimRecord rec = simulate_experiment(sim);
        for (int f = 0; f < nf; ++f) {
            FilterResult fr;
            std::string filter_error;
            try {
                if (cfg.filters[static_cast<std::size_t>(f)] == "ekf-rk4")
                    fr = ekf_rk4_filter(exp.model, exp.meas, exp.schedule, rec.data, exp.init,
                                        cfg.ekf_sub);
                else
                    fr = run_filter(*filter_schemes[static_cast<std::size_t>(f)], exp.rule,
                                    exp.meas, exp.schedule, rec.data, exp.init);
            } catch (const std::exception& e) {
                filter_error = e.what();
            }
            for (int s = 0; s < ns; ++s) {
                auto& err = grid.error[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)];
                if (!filter_error.empty()) {
                    err = filter_error;
                    continue;
                }
                try {
                    SmootherResult sr;
                    if (cfg.smoothers[static_cast<std::size_t>(s)] == "eks-rk4")
                        sr = eks_rk4_smoother(exp.model, fr, cfg.ekf_sub);
                    else
                        sr = smooth_with(*smoother_schemes[static_cast<std::size_t>(s)],
                                         exp.rule, fr);
                    std::vector<Vec> means;
                    means.reserve(sr.smoothed.size());
                    for (const auto& st : sr.smoothed) means.push_back(st.mean);
                    grid.value[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)] =
                        rmse(rec.truth, means);
                } catch (const std::exception& e) {
                    err = e.what();
                }
            }
        }
    };
    auto run_errors = parallel_runs(cfg.runs, cfg.threads, run_one);

    Table1Result out;
    out.filters = cfg.filters;
    out.smoothers = cfg.smoothers;
    out.cells.assign(static_cast<std::size_t>(nf),
                     std::vector<CellStats>(static_cast<std::size_t>(ns)));
    for (int f = 0; f < nf; ++f) {
        for (int s = 0; s < ns; ++s) {
            std::vector<double> ok;
            for (int r = 0; r < cfg.runs; ++r) {
                const auto ru = static_cast<std::size_t>(r);
                std::string msg;
                if (run_errors[ru]) {
                    try {
                        std::rethrow_exception(run_errors[ru]);
                    } catch (const std::exception& e) {
                        msg = e.what();
                    }
                } else {
                    msg = grids[ru].error[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)];
                }
                if (msg.empty()) {
                    ok.push_back(
                        grids[ru].value[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)]);
                } else {
                    out.failures.push_back(cfg.filters[static_cast<std::size_t>(f)] + "," +
                                           cfg.smoothers[static_cast<std::size_t>(s)] + "," +
                                           std::to_string(r) + "," + msg);
                }
            }
            CellStats& cell = out.cells[static_cast<std::size_t>(f)][static_cast<std::size_t>(s)];
            cell.n_ok = static_cast<int>(ok.size());
            cell.n_failed = cfg.runs - cell.n_ok;
            if (!ok.empty()) {
                double sum = 0.0;
                for (double v : ok) sum += v;
                cell.mean_rmse = sum / static_cast<double>(ok.size());
                if (ok.size() > 1) {
                    double ss = 0.0;
                    for (double v : ok) ss += (v - cell.mean_rmse) * (v - cell.mean_rmse);
                    cell.std_rmse = std::sqrt(ss / static_cast<double>(ok.size() - 1));
                }
            }
        }
    }
    return out;
}

namespace detail {

inline void echo_config(CsvWriter& csv, const ExperimentConfig& cfg) {
    csv.comment("model=" + cfg.model + " rule=" + cfg.rule + " dt=" + fmt_short(cfg.dt) +
                " steps=" + std::to_string(cfg.steps) + " nsub=" + std::to_string(cfg.n_sub) +
                " seed=" + std::to_string(cfg.seed.value_or(0)));
    csv.comment("filters initialized at the simulation initial law (m0, P0)");
}

}  // namespace detail

/// Writes table1-<tag>.csv (grid layout: one row per filter, mean/std/n
/// columns per smoother) and, when failures occurred, table1-<tag>-failures.csv.
inline std::filesystem::path write_table1_csv(const Table1Result& res,
                                              const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    auto path = std::filesystem::path(cfg.out_dir) / ("table1-" + cfg.tag + ".csv");
    detail::CsvWriter csv(path);
    csv.comment("smoothing RMSE grid, mean (std) over Monte Carlo runs");
    csv.comment("rmse pools squared errors over all time steps and state dimensions per run");
    detail::echo_config(csv, cfg);
    std::vector<std::string> header{"filter"};
    for (const auto& s : res.smoothers) {
        header.push_back(s + "_mean");
        header.push_back(s + "_std");
        header.push_back(s + "_n");
    }
    csv.row(header);
    for (std::size_t f = 0; f < res.filters.size(); ++f) {
        std::vector<std::string> row{res.filters[f]};
        for (std::size_t s = 0; s < res.smoothers.size(); ++s) {
            const CellStats& cell = res.cells[f][s];
            row.push_back(detail::fmt17(cell.mean_rmse));
            row.push_back(detail::fmt17(cell.std_rmse));
            row.push_back(std::to_string(cell.n_ok));
        }
        csv.row(row);
    }
    if (!res.failures.empty()) {
        detail::CsvWriter fcsv(std::filesystem::path(cfg.out_dir) /
                               ("table1-" + cfg.tag + "-failures.csv"));
        fcsv.row({"filter", "smoother", "run", "message"});
        for (const auto& line : res.failures) fcsv.row({line});
    }
    return path;
}

// --- fig1 -----------------------------------------------------------------------

/// Monte Carlo error curves for each process-noise setting in sigma_list,
/// using the order-`cfg.order` expansion for both filter and smoother.
/// Returns one curve per sigma; write_fig1_csv emits one file per sigma.
inline std::vector<std::pair<double, std::vector<ErrorCurvePoint>>> run_fig1(
    const ExperimentConfig& cfg) {
    if (!cfg.seed) throw ConfigError("seed is required (no wall-clock default)");
    if (cfg.model != "lorenz63" && cfg.sigma_list.size() > 1)
        throw ConfigError("the sigma sweep applies to the lorenz63 model");
    std::vector<std::pair<double, std::vector<ErrorCurvePoint>>> out;
    for (double sigma : cfg.sigma_list) {
        ExperimentConfig c = cfg;
        c.sigma = sigma;
        ResolvedExperiment exp = resolve_experiment(c);
        McStudyConfig study;
        study.sim = SimConfig{exp.model, exp.meas, exp.init, exp.schedule, c.n_sub, *c.seed, 0};
        study.scheme = std::make_shared<TmeScheme>(exp.model, TmeOrder(cfg.order));
        study.rule = exp.rule;
        study.threads = cfg.threads;
        out.emplace_back(sigma, mc_error_estimate(study, cfg.fig1_runs));
    }
    return out;
}

inline std::vector<std::filesystem::path> write_fig1_csv(
    const std::vector<std::pair<double, std::vector<ErrorCurvePoint>>>& curves,
    const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::filesystem::path> paths;
    for (const auto& [sigma, curve] : curves) {
        auto path = std::filesystem::path(cfg.out_dir) /
                    ("fig1-" + cfg.tag + "-sigma" + detail::fmt_short(sigma) + ".csv");
        detail::CsvWriter csv(path);
        csv.comment("monte carlo estimate of E||X_k - m^s_k||^2 with 0.95 CI, sigma=" +
                    detail::fmt_short(sigma) + ", order=" + std::to_string(cfg.order) +
                    ", runs=" + std::to_string(cfg.fig1_runs));
        detail::echo_config(csv, cfg);
        csv.row({"k", "mean", "ci_low", "ci_high"});
        for (const auto& pt : curve)
            csv.row({std::to_string(pt.k), detail::fmt17(pt.mean), detail::fmt17(pt.ci_lo),
                     detail::fmt17(pt.ci_hi)});
        paths.push_back(path);
    }
    return paths;
}

// --- single ----------------------------------------------------------------------

struct SingleRunResult {
    SimRecord record;
    FilterResult filter;
    SmootherResult smoother;
};

/// One seeded record filtered with filters.front() and smoothed with
/// smoothers.front().
inline SingleRunResult run_single(const ExperimentConfig& cfg) {
    if (!cfg.seed) throw ConfigError("seed is required (no wall-clock default)");
    if (cfg.filters.empty() || cfg.smoothers.empty())
        throw ConfigError("run_single requires at least one filter and one smoother");
    ResolvedExperiment exp = resolve_experiment(cfg);
    SingleRunResult out;
    SimConfig sim{exp.model, exp.meas, exp.init, exp.schedule, cfg.n_sub, *cfg.seed, 0};
    out.record = simulate_experiment(sim);
    const std::string& fname = cfg.filters.front();
    if (fname == "ekf-rk4")
        out.filter = ekf_rk4_filter(exp.model, exp.meas, exp.schedule, out.record.data,
                                    exp.init, cfg.ekf_sub);
    else
        out.filter = run_filter(*build_scheme(fname, exp), exp.rule, exp.meas, exp.schedule,
                                out.record.data, exp.init);
    const std::string& sname = cfg.smoothers.front();
    if (sname == "eks-rk4")
        out.smoother = eks_rk4_smoother(exp.model, out.filter, cfg.ekf_sub);
    else
        out.smoother = smooth_with(*build_scheme(sname, exp), exp.rule, out.filter);
    return out;
}

inline std::filesystem::path write_single_csv(const SingleRunResult& res,
                                              const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    auto path = std::filesystem::path(cfg.out_dir) / ("single-" + cfg.tag + ".csv");
    detail::CsvWriter csv(path);
    csv.comment("one filtering+smoothing pass: truth, measurements, filter and smoother moments");
    csv.comment("filter=" + cfg.filters.front() + " smoother=" + cfg.smoothers.front());
    detail::echo_config(csv, cfg);
    const int T = res.filter.steps();
    const int d = static_cast<int>(res.filter.init.mean.size());
    const int dy = res.record.data.empty() ? 1 : static_cast<int>(res.record.data[0].size());
    std::vector<std::string> header{"t"};
    for (int i = 0; i < d; ++i) header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < dy; ++i) header.push_back("y" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) header.push_back("fm" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) header.push_back("fP" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) header.push_back("sm" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) header.push_back("sP" + std::to_string(i + 1));
    csv.row(header);
    if (T == 0) {
        // no measurements: emit the prior at t0 only
        std::vector<std::string> row{detail::fmt17(res.filter.t0)};
        for (int i = 0; i < d; ++i) row.push_back(detail::fmt17(res.record.x0[i]));
        for (int i = 0; i < dy; ++i) row.push_back("nan");
        for (int i = 0; i < d; ++i) row.push_back(detail::fmt17(res.filter.init.mean[i]));
        for (int i = 0; i < d; ++i) row.push_back(detail::fmt17(res.filter.init.cov(i, i)));
        for (int i = 0; i < d; ++i) row.push_back(detail::fmt17(res.filter.init.mean[i]));
        for (int i = 0; i < d; ++i) row.push_back(detail::fmt17(res.filter.init.cov(i, i)));
        csv.row(row);
        return path;
    }
    for (int k = 0; k < T; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        std::vector<std::string> row{detail::fmt17(res.filter.times[ku])};
        for (int i = 0; i < d; ++i)
            row.push_back(detail::fmt17(res.record.truth.states[ku][i]));
        for (int i = 0; i < dy; ++i) row.push_back(detail::fmt17(res.record.data[ku][i]));
        for (int i = 0; i < d; ++i) row.push_back(detail::fmt17(res.filter.filtered[ku].mean[i]));
        for (int i = 0; i < d; ++i)
            row.push_back(detail::fmt17(res.filter.filtered[ku].cov(i, i)));
        for (int i = 0; i < d; ++i)
            row.push_back(detail::fmt17(res.smoother.smoothed[ku].mean[i]));
        for (int i = 0; i < d; ++i)
            row.push_back(detail::fmt17(res.smoother.smoothed[ku].cov(i, i)));
        csv.row(row);
    }
    return path;
}

// --- constants ---------------------------------------------------------------------

struct ConstantsResult {
    EmpiricalConstants estimates;
    std::optional<GainConstant> gain;
    std::vector<double> bound;  // per k = 1..bound_T when what-if constants given
};

/// Sampled estimates of the assumption constants over the configured box,
/// plus an optional bound evaluation when the what-if constants are supplied.
inline ConstantsResult run_constants(const ExperimentConfig& cfg) {
    if (!cfg.seed) throw ConfigError("seed is required (no wall-clock default)");
    ResolvedExperiment exp = resolve_experiment(cfg);
    SampleBox box;
    box.lo = Vec::Constant(exp.model.dim, cfg.box_lo);
    box.hi = Vec::Constant(exp.model.dim, cfg.box_hi);
    box.count = cfg.box_samples;
    box.seed = *cfg.seed;
    ConstantsResult out;
    out.estimates =
        empirical_constants(exp.model, exp.rule, TmeOrder(cfg.order), cfg.dt, box);
    if (cfg.c_P && cfg.c_S && cfg.c_bar && cfg.c_f) {
        StabilityConstants c;
        const double cf = *cfg.c_f;
        c.c_f = [cf](int) { return cf; };
        c.c_P = *cfg.c_P;
        c.c_S = *cfg.c_S;
        c.c_bar = *cfg.c_bar;
        c.c_g = out.estimates.c_g_max;
        c.c_Q = out.estimates.c_Q_min;
        c.c_chi = out.estimates.c_chi;
        out.gain = gain_constant(c);
        if (out.gain->contractive || cfg.bound_T <= 2) {
            out.bound.reserve(static_cast<std::size_t>(cfg.bound_T));
            for (int k = 1; k <= cfg.bound_T; ++k)
                out.bound.push_back(theoretical_bound(c, cfg.bound_T, k));
        }
    }
    return out;
}

inline std::filesystem::path write_constants_csv(const ConstantsResult& res,
                                                 const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    auto path = std::filesystem::path(cfg.out_dir) / ("constants-" + cfg.tag + ".csv");
    detail::CsvWriter csv(path);
    csv.comment("sampled assumption-constant estimates (box extrema, not certified)");
    csv.comment("model=" + cfg.model + " order=" + std::to_string(cfg.order) +
                " dt=" + detail::fmt_short(cfg.dt) + " box=[" + detail::fmt_short(cfg.box_lo) +
                "," + detail::fmt_short(cfg.box_hi) + "] samples=" +
                std::to_string(cfg.box_samples));
    csv.row({"quantity", "value"});
    csv.row({"c_Q_min", detail::fmt17(res.estimates.c_Q_min)});
    csv.row({"c_g_max", detail::fmt17(res.estimates.c_g_max)});
    csv.row({"c_chi", detail::fmt17(res.estimates.c_chi)});
    if (res.gain) {
        csv.row({"c_G", detail::fmt17(res.gain->value)});
        csv.row({"two_cG_lt_1", res.gain->contractive ? "1" : "0"});
    }
    if (!res.bound.empty()) {
        detail::CsvWriter bcsv(std::filesystem::path(cfg.out_dir) /
                               ("constants-" + cfg.tag + "-bound.csv"));
        bcsv.comment("theoretical mean-square smoothing error bound per step");
        bcsv.row({"k", "bound"});
        for (std::size_t k = 0; k < res.bound.size(); ++k)
            bcsv.row({std::to_string(k + 1), detail::fmt17(res.bound[k])});
    }
    return path;
}

}  // namespace tme
