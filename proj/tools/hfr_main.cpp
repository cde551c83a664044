// Command-line interface for the hierarchical feature regression library.
//
// Subcommands: fit, cv, predict, simulate, trace, plot.
// Exit codes: 0 success, 2 usage, 3 data validation, 4 numerical failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hfr/hfr.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonIo {
    std::string input;
    std::string response;
    std::vector<std::string> deterministic;
    bool rescale_unit = false;
};

void add_io_options(CLI::App* cmd, CommonIo& io, bool response_required = true) {
    cmd->add_option("-i,--input", io.input, "input CSV file (header row required)")
        ->required()
        ->check(CLI::ExistingFile);
    auto* r = cmd->add_option("-r,--response", io.response, "name of the response column");
    if (response_required) r->required();
    cmd->add_option("-d,--deterministic", io.deterministic,
                    "columns kept outside the hierarchy (unregularized)")
        ->delimiter(',');
    cmd->add_flag("--rescale-unit", io.rescale_unit,
                  "rescale predictors to [-1,1] and 0/1 dummies to [-0.5,0.5]");
}

struct FitFlags {
    bool no_intercept = false;
    bool sign_invariant = false;
    std::string ward = "d2";
};

void add_fit_options(CLI::App* cmd, FitFlags& flags) {
    cmd->add_flag("--no-intercept", flags.no_intercept, "drop the regression constant");
    cmd->add_flag("--sign-invariant", flags.sign_invariant,
                  "cluster on absolute partial correlations");
    cmd->add_option("--ward", flags.ward, "ward recurrence variant")
        ->check(CLI::IsMember({"d", "d2"}))
        ->capture_default_str();
}

hfr::FitOptions make_options(const FitFlags& flags, const hfr::Dataset& data) {
    hfr::FitOptions options;
    options.intercept = !flags.no_intercept;
    options.sign_invariant = flags.sign_invariant;
    options.ward = flags.ward == "d" ? hfr::WardVariant::ward_d : hfr::WardVariant::ward_d2;
    if (data.dets.cols() > 0) options.extra_deterministic = data.dets;
    return options;
}

std::string coefficients_csv(const hfr::HfrFit& fit, const std::vector<std::string>& names) {
    std::vector<std::vector<std::string>> rows;
    for (int j = 0; j < fit.k; ++j) {
        const double p = fit.p_values(j);
        rows.push_back({names[static_cast<std::size_t>(j)], hfr::detail::format_full(fit.beta(j)),
                        hfr::detail::format_full(fit.se(j)),
                        std::isnan(p) ? "" : hfr::detail::format_full(p)});
    }
    return hfr::to_csv({"predictor", "beta", "se", "p_value"}, rows);
}

void write_fit_artifacts(const fs::path& out_dir, const hfr::HfrFit& fit,
                         const hfr::Dataset& data, std::uint64_t seed) {
    hfr::atomic_write(out_dir / "model.json",
                      hfr::fit_to_json(fit, data.predictor_names, seed).dump(2) + "\n");
    hfr::atomic_write(out_dir / "coefficients.csv", coefficients_csv(fit, data.predictor_names));
    hfr::atomic_write(out_dir / "hierarchy.json",
                      hfr::hierarchy_to_json(fit.hierarchy).dump(2) + "\n");
    std::printf("n=%d k=%d kappa=%.6g eff_df=%.4f r2=%.4f seed=%llu\n", fit.n, fit.k,
                fit.path.kappa, fit.nu_eff_total, fit.r2_total,
                static_cast<unsigned long long>(seed));
    for (const auto& w : fit.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

std::vector<double> descending_grid(int points, double floor_value) {
    std::vector<double> grid;
    for (int i = 0; i < points; ++i)
        grid.push_back(1.0 - static_cast<double>(i) / static_cast<double>(points - 1));
    grid.back() = floor_value;
    return grid;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical feature regression toolkit"};
    app.require_subcommand(1);

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit an HFR model at a fixed kappa");
    CommonIo fit_io;
    FitFlags fit_flags;
    double kappa = 1.0;
    std::string fit_out = "hfr_fit";
    std::uint64_t fit_seed = 0;
    add_io_options(fit_cmd, fit_io);
    add_fit_options(fit_cmd, fit_flags);
    fit_cmd->add_option("-k,--kappa", kappa, "effective model size fraction in [0,1]")
        ->required()
        ->check(CLI::Range(0.0, 1.0));
    fit_cmd->add_option("-o,--out", fit_out, "output directory")->capture_default_str();
    fit_cmd->add_option("--seed", fit_seed, "seed echoed into the outputs");

    // cv
    auto* cv_cmd = app.add_subcommand("cv", "choose kappa by k-fold cross-validation, then fit");
    CommonIo cv_io;
    FitFlags cv_flags;
    int folds = 10;
    int grid_points = 21;
    std::vector<double> cv_kappas;
    std::string cv_out = "hfr_cv";
    std::uint64_t cv_seed = 42;
    bool one_se = false;
    add_io_options(cv_cmd, cv_io);
    add_fit_options(cv_cmd, cv_flags);
    cv_cmd->add_option("--folds", folds, "number of folds")->capture_default_str();
    cv_cmd->add_option("--grid", grid_points, "evenly spaced kappa grid size")
        ->capture_default_str();
    cv_cmd->add_option("--kappas", cv_kappas, "explicit kappa grid")->delimiter(',');
    cv_cmd->add_flag("--one-se", one_se, "apply the one-standard-error rule");
    cv_cmd->add_option("-o,--out", cv_out, "output directory")->capture_default_str();
    cv_cmd->add_option("--seed", cv_seed, "fold assignment seed")->capture_default_str();

    // predict
    auto* pred_cmd = app.add_subcommand("predict", "predict new data from a saved model");
    CommonIo pred_io;
    std::string model_path;
    std::string pred_out = "predictions.csv";
    pred_cmd->add_option("-m,--model", model_path, "model.json produced by fit/cv")
        ->required()
        ->check(CLI::ExistingFile);
    add_io_options(pred_cmd, pred_io, /*response_required=*/false);
    pred_cmd->add_option("-o,--out", pred_out, "output CSV")->capture_default_str();

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "run the benchmark harness");
    std::string specs_arg = "a,b,c,d,e,f";
    std::vector<std::string> method_args = {"hfr", "ridge", "plsr", "pcr",
                                            "lasso", "elasticnet", "adalasso", "ols"};
    int runs = 500;
    std::uint64_t sim_seed = 42;
    int threads = 0;
    std::string sim_out = "hfr_sim";
    std::vector<std::string> formats = {"csv", "json", "svg"};
    sim_cmd->add_option("--specs", specs_arg, "letters a..f, comma separated")
        ->capture_default_str();
    sim_cmd->add_option("--methods", method_args, "methods to benchmark")->delimiter(',');
    sim_cmd->add_option("--runs", runs, "simulation runs per spec")->capture_default_str();
    sim_cmd->add_option("--seed", sim_seed, "master seed")->capture_default_str();
    sim_cmd->add_option("--threads", threads, "worker threads (0 = HFR_THREADS or hardware)");
    sim_cmd->add_option("--formats", formats, "output formats: csv, json, svg")->delimiter(',');
    sim_cmd->add_option("-o,--out", sim_out, "output directory")->capture_default_str();

    // trace
    auto* trace_cmd = app.add_subcommand("trace", "coefficient paths over a kappa grid");
    CommonIo trace_io;
    FitFlags trace_flags;
    int trace_points = 21;
    double trace_floor = 1e-3;
    std::string trace_out = "hfr_trace";
    add_io_options(trace_cmd, trace_io);
    add_fit_options(trace_cmd, trace_flags);
    trace_cmd->add_option("--grid", trace_points, "grid size (descending from 1)")
        ->capture_default_str();
    trace_cmd->add_option("--floor", trace_floor, "final (smallest) kappa")
        ->capture_default_str();
    trace_cmd->add_option("-o,--out", trace_out, "output directory")->capture_default_str();

    // plot
    auto* plot_cmd = app.add_subcommand("plot", "render a fitted hierarchy");
    std::string plot_model;
    std::string plot_format = "svg";
    std::string plot_out = "dendrogram.svg";
    plot_cmd->add_option("-m,--model", plot_model, "model.json produced by fit/cv")
        ->required()
        ->check(CLI::ExistingFile);
    plot_cmd->add_option("--format", plot_format, "svg or dot")
        ->check(CLI::IsMember({"svg", "dot"}))
        ->capture_default_str();
    plot_cmd->add_option("-o,--out", plot_out, "output file")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;   // 0 is --help
    }

    try {
        if (*fit_cmd) {
            const hfr::Dataset data = hfr::load_csv(fit_io.input, fit_io.response,
                                                    fit_io.deterministic, fit_io.rescale_unit);
            const hfr::HfrFit fit = hfr::fit(data.x, data.y, kappa, make_options(fit_flags, data));
            write_fit_artifacts(fit_out, fit, data, fit_seed);
        } else if (*cv_cmd) {
            const hfr::Dataset data = hfr::load_csv(cv_io.input, cv_io.response,
                                                    cv_io.deterministic, cv_io.rescale_unit);
            const hfr::FitOptions options = make_options(cv_flags, data);
            std::vector<double> grid = cv_kappas;
            if (grid.empty()) {
                for (int i = 0; i < grid_points; ++i)
                    grid.push_back(static_cast<double>(i) / static_cast<double>(grid_points - 1));
            }
            const hfr::CvResult cv =
                hfr::cross_validate(data.x, data.y, grid, folds, cv_seed, options, one_se);
            hfr::atomic_write(fs::path(cv_out) / "cv_curve.csv", hfr::cv_to_csv(cv));
            hfr::atomic_write(fs::path(cv_out) / "cv_curve.svg", hfr::cv_to_svg(cv));
            const hfr::HfrFit fit = hfr::fit(data.x, data.y, cv.kappa_star, options);
            write_fit_artifacts(cv_out, fit, data, cv_seed);
            std::printf("kappa_star=%.6g\n", cv.kappa_star);
        } else if (*pred_cmd) {
            const hfr::Json model = hfr::load_json(model_path);
            const hfr::HfrFit fit = hfr::fit_from_json(model);
            const hfr::Dataset data = hfr::load_csv(pred_io.input, pred_io.response,
                                                    pred_io.deterministic, pred_io.rescale_unit);
            const auto expected = model.value("predictors", std::vector<std::string>{});
            if (!expected.empty() && expected != data.predictor_names)
                throw hfr::ValidationError(
                    "predict: predictor columns do not match the model (expected " +
                    std::to_string(expected.size()) + " named columns in the same order)");
            const hfr::Vector yhat =
                hfr::predict(fit, data.x, data.dets.cols() > 0 ? data.dets : hfr::Matrix());
            std::vector<std::vector<std::string>> rows;
            for (hfr::Index i = 0; i < yhat.size(); ++i)
                rows.push_back({std::to_string(i), hfr::detail::format_full(yhat(i))});
            hfr::atomic_write(pred_out, hfr::to_csv({"row", "prediction"}, rows));
            std::printf("wrote %lld predictions to %s\n", static_cast<long long>(yhat.size()),
                        pred_out.c_str());
        } else if (*sim_cmd) {
            std::vector<hfr::Method> methods;
            for (const auto& name : method_args) methods.push_back(hfr::method_from_name(name));
            std::vector<hfr::SimulationReport> reports;
            for (char c : specs_arg) {
                if (c == ',') continue;
                const hfr::DgpSpec spec = hfr::DgpSpec::standard(hfr::dgp_from_letter(c));
                reports.push_back(hfr::run_benchmark(spec, methods, runs, sim_seed, threads));
                std::printf("spec (%c) done: %d runs\n", c, runs);
            }
            const fs::path dir(sim_out);
            for (const auto& f : formats) {
                if (f == "csv") {
                    hfr::atomic_write(dir / "report.csv", hfr::report_to_csv(reports));
                    hfr::atomic_write(dir / "runs.csv", hfr::runs_to_csv(reports));
                } else if (f == "json") {
                    hfr::atomic_write(dir / "report.json",
                                      hfr::report_to_json(reports).dump(2) + "\n");
                } else if (f == "svg") {
                    for (const auto& report : reports)
                        hfr::atomic_write(
                            dir / (std::string("mse_") + hfr::dgp_letter(report.spec) + ".svg"),
                            hfr::report_to_svg(report));
                } else {
                    throw hfr::ValidationError("unknown format '" + f + "'");
                }
            }
            std::printf("seed=%llu out=%s\n", static_cast<unsigned long long>(sim_seed),
                        sim_out.c_str());
        } else if (*trace_cmd) {
            const hfr::Dataset data = hfr::load_csv(trace_io.input, trace_io.response,
                                                    trace_io.deterministic, trace_io.rescale_unit);
            const std::vector<double> grid = descending_grid(trace_points, trace_floor);
            const hfr::Matrix path =
                hfr::trace_path(data.x, data.y, grid, make_options(trace_flags, data));
            hfr::atomic_write(fs::path(trace_out) / "trace.csv",
                              hfr::trace_to_csv(grid, path, data.predictor_names));
            hfr::atomic_write(fs::path(trace_out) / "trace.svg", hfr::trace_to_svg(grid, path));
        } else if (*plot_cmd) {
            const hfr::Json model = hfr::load_json(plot_model);
            const hfr::HfrFit fit = hfr::fit_from_json(model);
            const auto names = model.value("predictors", std::vector<std::string>{});
            const auto format = plot_format == "dot" ? hfr::PlotFormat::dot : hfr::PlotFormat::svg;
            hfr::atomic_write(plot_out, hfr::render_dendrogram(fit, names, format));
        }
    } catch (const hfr::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const hfr::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
