#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "hfr/baselines.hpp"
#include "hfr/estimator.hpp"
#include "hfr/rng.hpp"
#include "hfr/types.hpp"

namespace hfr {

enum class DgpId { a, b, c, d, e, f };

inline char dgp_letter(DgpId id) { return static_cast<char>('a' + static_cast<int>(id)); }

inline DgpId dgp_from_letter(char c) {
    detail::require(c >= 'a' && c <= 'f', std::string("unknown simulation spec '") + c + "'");
    return static_cast<DgpId>(c - 'a');
}

/// One of the six benchmark data generating processes. The standard()
/// constructor pins every field to its published value; custom variants can
/// be built by editing the returned struct.
struct DgpSpec {
    DgpId id = DgpId::a;
    int n_train = 0, n_valid = 0, n_test = 0;
    int k = 0;
    Vector beta_true;      // length K; length 4 (factor loadings) for spec d
    double sigma2 = 0.0;

    static DgpSpec standard(DgpId id) {
        DgpSpec s;
        s.id = id;
        switch (id) {
            case DgpId::a:
                s.n_train = 20; s.n_valid = 20; s.n_test = 200;
                s.k = 8;
                s.beta_true = Vector::Constant(8, 0.85);
                s.sigma2 = 3.0;
                break;
            case DgpId::b:
            case DgpId::f: {
                s.n_train = 100; s.n_valid = 100; s.n_test = 400;
                s.k = 40;
                s.beta_true = Vector::Zero(40);
                s.beta_true.segment(10, 10).setConstant(2.0);
                s.beta_true.segment(30, 10).setConstant(2.0);
                s.sigma2 = 15.0;
                break;
            }
            case DgpId::c: {
                s.n_train = 50; s.n_valid = 50; s.n_test = 400;
                s.k = 40;
                s.beta_true = Vector::Zero(40);
                s.beta_true.head(15).setConstant(3.0);
                s.sigma2 = 15.0;
                break;
            }
            case DgpId::d: {
                s.n_train = 20; s.n_valid = 20; s.n_test = 200;
                s.k = 8;
                s.beta_true.resize(4);
                s.beta_true << 1.0, 1.5, 2.0, 1.5;
                s.sigma2 = 3.0;
                break;
            }
            case DgpId::e: {
                s.n_train = 100; s.n_valid = 100; s.n_test = 400;
                s.k = 40;
                s.beta_true = Vector::Zero(40);
                s.beta_true.segment(10, 10) = Vector::LinSpaced(10, 1.0, 3.0);
                s.beta_true.segment(30, 10) = Vector::LinSpaced(10, -1.0, -3.0);
                s.sigma2 = 15.0;
                break;
            }
        }
        return s;
    }
};

struct SimDataset {
    Matrix x;
    Vector y;
};

struct SimulationDraw {
    SimDataset train, valid, test;
};

namespace detail {

inline Matrix toeplitz_chol(int k, double base) {
    Matrix corr(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) corr(i, j) = std::pow(base, std::abs(i - j));
    return Eigen::LLT<Matrix>(corr).matrixL();
}

inline Matrix compound_chol(int k, double rho) {
    Matrix corr = Matrix::Constant(k, k, rho);
    corr.diagonal().setOnes();
    return Eigen::LLT<Matrix>(corr).matrixL();
}

// draw order is fixed per row so datasets are reproducible no matter how
// the caller schedules runs
inline SimDataset draw_split(const DgpSpec& spec, Rng rng, int n) {
    SimDataset out;
    out.x.resize(n, spec.k);
    out.y.resize(n);
    const double sigma = std::sqrt(spec.sigma2);

    switch (spec.id) {
        case DgpId::a:
        case DgpId::b:
        case DgpId::e:
        case DgpId::f: {
            const Matrix chol = (spec.id == DgpId::f) ? compound_chol(spec.k, 0.5)
                                                      : toeplitz_chol(spec.k, 0.5);
            Vector g(spec.k);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < spec.k; ++j) g(j) = rng.gaussian();
                out.x.row(i) = (chol * g).transpose();
            }
            for (int i = 0; i < n; ++i)
                out.y(i) = out.x.row(i).dot(spec.beta_true) + sigma * rng.gaussian();
            break;
        }
        case DgpId::c: {
            for (int i = 0; i < n; ++i) {
                const double xi1 = rng.gaussian();
                const double xi2 = rng.gaussian();
                const double xi3 = rng.gaussian();
                for (int j = 0; j < 15; ++j) {
                    const double xi = (j < 5) ? xi1 : (j < 10) ? xi2 : xi3;
                    out.x(i, j) = xi + 0.1 * rng.gaussian();
                }
                for (int j = 15; j < 40; ++j) out.x(i, j) = rng.gaussian();
            }
            for (int i = 0; i < n; ++i)
                out.y(i) = out.x.row(i).dot(spec.beta_true) + sigma * rng.gaussian();
            break;
        }
        case DgpId::d: {
            const Matrix chol = toeplitz_chol(4, 0.5);
            Vector g(4);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < 4; ++j) g(j) = rng.gaussian();
                const Vector f = chol * g;
                for (int j = 0; j < 8; ++j) {
                    const int f1 = j / 2;              // pairs load on (f1, f1+1 mod 4)
                    const int f2 = (f1 + 1) % 4;
                    out.x(i, j) = f(f1) + f(f2) + rng.gaussian();
                }
                out.y(i) = f.dot(spec.beta_true) + sigma * rng.gaussian();
            }
            break;
        }
    }
    return out;
}

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace detail

/// Train/validation/test draw with one independent stream per split.
inline SimulationDraw generate(const DgpSpec& spec, std::uint64_t seed) {
    detail::require(spec.n_train > 0 && spec.n_valid > 0 && spec.n_test > 0 && spec.k >= 2,
                    "generate: invalid simulation spec");
    const Index expected_beta = (spec.id == DgpId::d) ? 4 : spec.k;
    detail::require(spec.beta_true.size() == expected_beta, "generate: beta length mismatch");

    SimulationDraw draw;
    draw.train = detail::draw_split(spec, Rng::stream(seed, 0), spec.n_train);
    draw.valid = detail::draw_split(spec, Rng::stream(seed, 1), spec.n_valid);
    draw.test = detail::draw_split(spec, Rng::stream(seed, 2), spec.n_test);
    return draw;
}

inline std::uint64_t dataset_hash(const SimDataset& d) {
    std::uint64_t h = detail::fnv1a(d.x.data(), sizeof(double) * static_cast<std::size_t>(d.x.size()));
    return detail::fnv1a(d.y.data(), sizeof(double) * static_cast<std::size_t>(d.y.size()), h);
}

enum class Method { hfr, ols, ridge, lasso, elasticnet, adalasso, pcr, plsr };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::hfr: return "HFR";
        case Method::ols: return "OLS";
        case Method::ridge: return "Ridge";
        case Method::lasso: return "Lasso";
        case Method::elasticnet: return "ElasticNet";
        case Method::adalasso: return "AdaLasso";
        case Method::pcr: return "PCR";
        case Method::plsr: return "PLSR";
    }
    return "?";
}

inline Method method_from_name(const std::string& name) {
    for (Method m : {Method::hfr, Method::ols, Method::ridge, Method::lasso, Method::elasticnet,
                     Method::adalasso, Method::pcr, Method::plsr}) {
        std::string lower = method_name(m);
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        std::string probe = name;
        std::transform(probe.begin(), probe.end(), probe.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (lower == probe) return m;
    }
    throw ValidationError("unknown method '" + name + "'");
}

struct MethodSummary {
    Method method = Method::ols;
    std::vector<double> mses;      // successful runs only
    int failures = 0;
    double median_mse = 0.0;
    double bootstrap_se = 0.0;
    double mean_rank = 0.0;
    double rank_ci_low = 0.0;
    double rank_ci_high = 0.0;
};

struct SimulationReport {
    DgpId spec = DgpId::a;
    int runs = 0;
    std::uint64_t seed = 0;
    std::vector<MethodSummary> methods;
};

namespace detail {

inline double mse_of(const Vector& predictions, const Vector& truth) {
    return (predictions - truth).squaredNorm() / static_cast<double>(truth.size());
}

inline double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-method tuning on the validation split, exactly one grid per method.
/// Penalty grids are walked top-down with warm starts.
inline double evaluate_method(Method method, const SimulationDraw& draw) {
    const Matrix& xtr = draw.train.x;
    const Vector& ytr = draw.train.y;

    switch (method) {
        case Method::hfr: {
            HfrProblem prob = prepare(xtr, ytr);
            double best_mse = std::numeric_limits<double>::infinity();
            double best_kappa = 1.0;
            for (int i = 0; i < 21; ++i) {
                const double kappa = static_cast<double>(i) / 20.0;
                HfrFit fit = solve_prepared(prob, kappa);
                const double vm = mse_of(predict(fit, draw.valid.x), draw.valid.y);
                if (vm < best_mse) {
                    best_mse = vm;
                    best_kappa = kappa;
                }
            }
            HfrFit fit = solve_prepared(prob, best_kappa);
            return mse_of(predict(fit, draw.test.x), draw.test.y);
        }
        case Method::ols: {
            BaselineFit fit = fit_ols(xtr, ytr);
            return mse_of(fit.predict(draw.test.x), draw.test.y);
        }
        default: break;
    }

    // standardized-scale paths share one problem setup per draw
    const auto p = detail::standardized_problem(xtr, ytr);
    auto select_from_path = [&](const Matrix& path) {
        double best_mse = std::numeric_limits<double>::infinity();
        Index best_col = 0;
        for (Index c = 0; c < path.cols(); ++c) {
            const Vector beta = path.col(c).array() / p.info.scales.array();
            const double icept = p.y_mean - beta.dot(p.info.centers);
            const double vm = mse_of((draw.valid.x * beta).array() + icept, draw.valid.y);
            if (vm < best_mse) {
                best_mse = vm;
                best_col = c;
            }
        }
        const Vector beta = path.col(best_col).array() / p.info.scales.array();
        const double icept = p.y_mean - beta.dot(p.info.centers);
        return mse_of((draw.test.x * beta).array() + icept, draw.test.y);
    };

    std::vector<double> lambdas = lambda_grid(xtr, ytr);
    std::sort(lambdas.begin(), lambdas.end(), std::greater<double>());
    const Vector ones = Vector::Ones(xtr.cols());

    switch (method) {
        case Method::ridge:
            return select_from_path(detail::penalized_path(p.xs, p.yc, lambdas, 0.0, ones));
        case Method::lasso:
            return select_from_path(detail::penalized_path(p.xs, p.yc, lambdas, 1.0, ones));
        case Method::elasticnet: {
            Matrix grid(p.xs.cols(), static_cast<Index>(5 * lambdas.size()));
            Index col = 0;
            for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
                grid.middleCols(col, static_cast<Index>(lambdas.size())) =
                    detail::penalized_path(p.xs, p.yc, lambdas, alpha, ones);
                col += static_cast<Index>(lambdas.size());
            }
            return select_from_path(grid);
        }
        case Method::adalasso: {
            // stage 1: ridge pilot penalty chosen on the validation split
            double pilot_lambda = lambdas.front();
            double pilot_best = std::numeric_limits<double>::infinity();
            Vector pilot;
            for (double lam : lambdas) {
                const Vector b = detail::ridge_closed_form(p.xs, p.yc, lam);
                const Vector beta = b.array() / p.info.scales.array();
                const double icept = p.y_mean - beta.dot(p.info.centers);
                const double vm = mse_of((draw.valid.x * beta).array() + icept, draw.valid.y);
                if (vm < pilot_best) {
                    pilot_best = vm;
                    pilot_lambda = lam;
                    pilot = b;
                }
            }
            // stage 2: weighted lasso over its own descending grid
            Vector weights(pilot.size());
            for (Index j = 0; j < pilot.size(); ++j)
                weights(j) = 1.0 / std::max(std::abs(pilot(j)), 1e-12);
            const Vector grad = p.xs.transpose() * p.yc / static_cast<double>(xtr.rows());
            double lmax = 0.0;
            for (Index j = 0; j < pilot.size(); ++j)
                lmax = std::max(lmax, std::abs(grad(j)) * std::abs(pilot(j)));
            lmax = std::max(lmax, 2e-4);
            std::vector<double> wgrid(50);
            for (int i = 0; i < 50; ++i)
                wgrid[static_cast<std::size_t>(i)] = lmax * std::pow(1e-4 / lmax, i / 49.0);
            return select_from_path(detail::penalized_path(p.xs, p.yc, wgrid, 1.0, weights));
        }
        case Method::pcr:
        case Method::plsr: {
            const BaselineMethod bm =
                (method == Method::pcr) ? BaselineMethod::pcr : BaselineMethod::plsr;
            const int cmax = static_cast<int>(std::min<Index>(xtr.rows() - 1, xtr.cols()));
            return select_from_path(detail::latent_coefficient_path(p, bm, cmax));
        }
        default: break;
    }
    throw ValidationError("evaluate_method: unhandled method");
}

} // namespace detail

inline int default_thread_count() {
    if (const char* env = std::getenv("HFR_THREADS")) {
        const int t = std::atoi(env);
        if (t > 0) return t;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Multi-method benchmark over seeded replications. Every method in a run
/// sees the identical draw; per-run RNG streams are derived from the master
/// seed so results do not depend on the thread schedule.
inline SimulationReport run_benchmark(const DgpSpec& spec, const std::vector<Method>& methods,
                                      int runs, std::uint64_t seed, int threads = 0) {
    detail::require(runs >= 1, "run_benchmark: need at least one run");
    detail::require(!methods.empty(), "run_benchmark: no methods");
    if (threads <= 0) threads = default_thread_count();

    const std::size_t n_methods = methods.size();
    std::vector<std::vector<double>> mse(n_methods,
                                         std::vector<double>(static_cast<std::size_t>(runs), 0.0));
    std::vector<std::vector<char>> ok(n_methods,
                                      std::vector<char>(static_cast<std::size_t>(runs), 0));

    std::atomic<int> next_run{0};
    auto worker = [&]() {
        for (;;) {
            const int run = next_run.fetch_add(1);
            if (run >= runs) return;
            const SimulationDraw draw =
                generate(spec, detail::mix_seed(seed, static_cast<std::uint64_t>(run)));
            for (std::size_t m = 0; m < n_methods; ++m) {
                try {
                    mse[m][static_cast<std::size_t>(run)] =
                        detail::evaluate_method(methods[m], draw);
                    ok[m][static_cast<std::size_t>(run)] = 1;
                } catch (const Error&) {
                    ok[m][static_cast<std::size_t>(run)] = 0;
                }
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(threads, runs);
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    SimulationReport report;
    report.spec = spec.id;
    report.runs = runs;
    report.seed = seed;
    report.methods.resize(n_methods);

    // failure policy: under 1% of runs may fail per method, otherwise abort
    for (std::size_t m = 0; m < n_methods; ++m) {
        int failures = 0;
        for (int r = 0; r < runs; ++r)
            if (!ok[m][static_cast<std::size_t>(r)]) ++failures;
        if (failures * 100 >= runs && failures > 0)
            throw NumericError(std::string("run_benchmark: method ") +
                               method_name(methods[m]) + " failed in " + std::to_string(failures) +
                               " of " + std::to_string(runs) + " runs");
        report.methods[m].method = methods[m];
        report.methods[m].failures = failures;
    }

    // ranks are computed over runs where every method succeeded
    std::vector<double> rank_sum(n_methods, 0.0), rank_sq(n_methods, 0.0);
    int ranked_runs = 0;
    for (int r = 0; r < runs; ++r) {
        bool all_ok = true;
        for (std::size_t m = 0; m < n_methods; ++m)
            all_ok = all_ok && ok[m][static_cast<std::size_t>(r)];
        if (!all_ok) continue;
        ++ranked_runs;
        std::vector<std::size_t> order(n_methods);
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            return mse[x][static_cast<std::size_t>(r)] < mse[y][static_cast<std::size_t>(r)];
        });
        // average ranks across ties
        std::size_t i = 0;
        while (i < n_methods) {
            std::size_t j = i;
            while (j + 1 < n_methods &&
                   mse[order[j + 1]][static_cast<std::size_t>(r)] ==
                       mse[order[i]][static_cast<std::size_t>(r)])
                ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t t = i; t <= j; ++t) {
                rank_sum[order[t]] += avg_rank;
                rank_sq[order[t]] += avg_rank * avg_rank;
            }
            i = j + 1;
        }
    }

    for (std::size_t m = 0; m < n_methods; ++m) {
        auto& summary = report.methods[m];
        for (int r = 0; r < runs; ++r)
            if (ok[m][static_cast<std::size_t>(r)])
                summary.mses.push_back(mse[m][static_cast<std::size_t>(r)]);
        summary.median_mse = detail::median_of(summary.mses);

        // bootstrap SE of the median, 500 resamples
        Rng boot = Rng::stream(seed, 0xb00737ULL, m);
        const std::size_t n = summary.mses.size();
        std::vector<double> medians(500);
        std::vector<double> resample(n);
        for (int bidx = 0; bidx < 500; ++bidx) {
            for (std::size_t i = 0; i < n; ++i)
                resample[i] = summary.mses[static_cast<std::size_t>(boot.below(n))];
            medians[static_cast<std::size_t>(bidx)] = detail::median_of(resample);
        }
        const double mmean =
            std::accumulate(medians.begin(), medians.end(), 0.0) / static_cast<double>(medians.size());
        double var = 0.0;
        for (double v : medians) var += (v - mmean) * (v - mmean);
        summary.bootstrap_se = std::sqrt(var / static_cast<double>(medians.size() - 1));

        if (ranked_runs > 0) {
            const double mean_rank = rank_sum[m] / static_cast<double>(ranked_runs);
            double rank_var =
                rank_sq[m] / static_cast<double>(ranked_runs) - mean_rank * mean_rank;
            rank_var = std::max(rank_var, 0.0);
            const double half =
                1.96 * std::sqrt(rank_var / static_cast<double>(ranked_runs));
            summary.mean_rank = mean_rank;
            summary.rank_ci_low = mean_rank - half;
            summary.rank_ci_high = mean_rank + half;
        }
    }
    return report;
}

/// HFR coefficients along a descending kappa grid (original scale), one row
/// per grid value.
inline Matrix trace_path(const Matrix& x, const Vector& y, const std::vector<double>& kappa_grid,
                         const FitOptions& options = {}) {
    detail::require(!kappa_grid.empty(), "trace_path: empty grid");
    detail::require(std::abs(kappa_grid.front() - 1.0) <= 1e-12,
                    "trace_path: grid must start at kappa = 1");
    for (std::size_t i = 1; i < kappa_grid.size(); ++i)
        detail::require(kappa_grid[i] <= kappa_grid[i - 1],
                        "trace_path: grid must be sorted descending");

    HfrProblem prob = prepare(x, y, options);
    Matrix path(static_cast<Index>(kappa_grid.size()), x.cols());
    for (std::size_t i = 0; i < kappa_grid.size(); ++i) {
        HfrFit fit = solve_prepared(prob, kappa_grid[i]);
        path.row(static_cast<Index>(i)) = fit.beta.transpose();
    }
    return path;
}

} // namespace hfr
