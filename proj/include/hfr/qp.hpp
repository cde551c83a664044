#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "hfr/types.hpp"

namespace hfr {

/// Level-weight quadratic program: minimize phi'U phi - V'phi subject to
/// phi >= 0, sum(phi) <= 1 and sum_l l*phi_l = kappa_rhs. The sum cap is not
/// implied by the box constraints alone but is required for theta_1 <= 1.
struct QpProblem {
    Matrix u;
    Vector v;
    int l = 0;
    double kappa = 0.0;
    double kappa_rhs = 0.0;
};

/// Optimal level weights and the derived shrinkage vector. theta is the
/// suffix sum of phi, hence nonincreasing, and sum(theta) = kappa_rhs.
struct ShrinkagePath {
    Vector phi;
    Vector theta;
    double kappa = 0.0;
    double kappa_rhs = 0.0;
    double nu_eff = 0.0;
};

/// KKT residuals of the returned solution.
struct QpDiagnostics {
    double stationarity = 0.0;
    double primal = 0.0;
    double slackness = 0.0;
    int iterations = 0;
    bool fallback_used = false;
};

inline Vector phi_to_theta(const Vector& phi) {
    const Index l = phi.size();
    Vector theta(l);
    double acc = 0.0;
    for (Index i = l - 1; i >= 0; --i) {
        acc += phi(i);
        theta(i) = acc;
    }
    return theta;
}

inline Vector theta_to_phi(const Vector& theta) {
    const Index l = theta.size();
    Vector phi(l);
    for (Index i = 0; i < l; ++i) phi(i) = (i + 1 < l) ? theta(i) - theta(i + 1) : theta(i);
    return phi;
}

inline QpProblem build_qp(const Matrix& level_fits, const Vector& y, double kappa, int rhs_scale) {
    detail::require(kappa >= 0.0 && kappa <= 1.0, "build_qp: kappa outside [0, 1]");
    detail::require(level_fits.cols() >= 1, "build_qp: need at least one level");
    detail::require(level_fits.rows() == y.size(), "build_qp: row count mismatch");
    detail::require(rhs_scale >= 1, "build_qp: rhs_scale must be positive");
    if (!level_fits.allFinite() || !y.allFinite())
        throw ValidationError("build_qp: non-finite level fits or response");

    const double n = static_cast<double>(level_fits.rows());
    QpProblem p;
    p.l = static_cast<int>(level_fits.cols());
    Matrix u = level_fits.transpose() * level_fits / n;
    p.u = 0.5 * (u + u.transpose());
    p.v = 2.0 * level_fits.transpose() * y / n;
    p.kappa = kappa;
    p.kappa_rhs = kappa * static_cast<double>(rhs_scale);
    return p;
}

namespace detail {

struct QpWork {
    Matrix u;            // repaired + solver-regularized quadratic term
    Vector v;
    Vector a;            // equality coefficients (1, 2, ..., L)
    double b = 0.0;      // kappa_rhs
    int l = 0;
};

// Equality-constrained subproblem on the free variables: minimizer over
// {A x = rhs} plus the multipliers for the rows of A.
inline void solve_eq_subproblem(const QpWork& w, const std::vector<int>& free_idx, bool cap_active,
                                Vector& x, double& lambda_a, double& lambda_cap) {
    const int nf = static_cast<int>(free_idx.size());
    const int na = cap_active ? 2 : 1;
    Matrix kkt = Matrix::Zero(nf + na, nf + na);
    Vector rhs = Vector::Zero(nf + na);
    for (int i = 0; i < nf; ++i) {
        for (int j = 0; j < nf; ++j) kkt(i, j) = 2.0 * w.u(free_idx[i], free_idx[j]);
        rhs(i) = w.v(free_idx[i]);
        kkt(nf, i) = w.a(free_idx[i]);
        kkt(i, nf) = w.a(free_idx[i]);
        if (cap_active) {
            kkt(nf + 1, i) = 1.0;
            kkt(i, nf + 1) = 1.0;
        }
    }
    rhs(nf) = w.b;
    if (cap_active) rhs(nf + 1) = 1.0;

    Vector sol = Eigen::CompleteOrthogonalDecomposition<Matrix>(kkt).solve(rhs);
    x = sol.head(nf);
    // stationarity is 2Ux - V = -A'y, so in the g = lambda_a*a - lambda_cap
    // convention the multipliers are the negated KKT unknowns
    lambda_a = -sol(nf);
    lambda_cap = cap_active ? sol(nf + 1) : 0.0;
}

// Projection onto {phi >= 0, sum(phi) <= 1}: clip, and if the clipped point
// still violates the cap, project onto the probability simplex.
inline Vector project_box_cap(Vector phi) {
    phi = phi.cwiseMax(0.0);
    if (phi.sum() <= 1.0) return phi;
    std::vector<double> u(phi.data(), phi.data() + phi.size());
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, tau = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        css += u[i];
        const double t = (css - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) tau = t;
    }
    return (phi.array() - tau).cwiseMax(0.0);
}

// Dykstra alternating projections onto the affine constraint and the capped
// box; used only by the projected-gradient fallback.
inline Vector project_feasible(const QpWork& w, Vector phi) {
    Vector p = Vector::Zero(w.l);
    Vector q = Vector::Zero(w.l);
    const double a_norm2 = w.a.squaredNorm();
    for (int sweep = 0; sweep < 200; ++sweep) {
        Vector y1 = phi + p;
        Vector x1 = y1 + (w.b - w.a.dot(y1)) / a_norm2 * w.a;
        p = y1 - x1;
        Vector y2 = x1 + q;
        Vector x2 = project_box_cap(y2);
        q = y2 - x2;
        if ((x2 - phi).lpNorm<Eigen::Infinity>() < 1e-15 && std::abs(w.a.dot(x2) - w.b) < 1e-13)
            return x2;
        phi = x2;
    }
    return phi;
}

inline Vector projected_gradient(const QpWork& w, Vector phi, int max_iter) {
    const double lip = 2.0 * w.u.operatorNorm() + 1e-12;
    const double step = 1.0 / lip;
    for (int it = 0; it < max_iter; ++it) {
        const Vector grad = 2.0 * w.u * phi - w.v;
        Vector next = project_feasible(w, phi - step * grad);
        if ((next - phi).lpNorm<Eigen::Infinity>() < 1e-14) return next;
        phi = next;
    }
    return phi;
}

inline ShrinkagePath make_path(Vector phi, const QpProblem& problem) {
    ShrinkagePath path;
    path.phi = std::move(phi);
    path.theta = phi_to_theta(path.phi);
    path.kappa = problem.kappa;
    path.kappa_rhs = problem.kappa_rhs;
    path.nu_eff = path.theta.sum();
    return path;
}

} // namespace detail

/// Dense primal active-set solve of the level-weight QP. Deterministic:
/// all-inactive initial working set, most-negative-multiplier release with
/// smallest-index ties, smallest-index blocking constraint. Falls back to
/// projected gradient if the working set cycles or the iteration cap
/// (10 L^2) is hit; failing KKT tolerances after that is a hard error.
inline ShrinkagePath solve_qp(const QpProblem& problem, QpDiagnostics* diagnostics = nullptr) {
    const int l = problem.l;
    detail::require(l >= 1 && problem.u.rows() == l && problem.u.cols() == l &&
                        problem.v.size() == l,
                    "solve_qp: inconsistent problem dimensions");
    detail::require((problem.u - problem.u.transpose()).lpNorm<Eigen::Infinity>() <=
                        1e-10 * (1.0 + problem.u.lpNorm<Eigen::Infinity>()),
                    "solve_qp: U not symmetric");

    const double b = problem.kappa_rhs;
    if (b < -1e-12 || b > static_cast<double>(l) + 1e-12) {
        throw NumericError("solve_qp: infeasible kappa_rhs = " + std::to_string(b) +
                           ", feasible interval is [0, " + std::to_string(l) + "]");
    }

    QpDiagnostics diag;

    // the feasible set degenerates to a single point at both ends of the
    // kappa range (phi = 0 and phi = e_L); KKT holds there with suitable
    // multipliers, so return the corner exactly
    if (b <= 1e-13) {
        if (diagnostics) *diagnostics = diag;
        return detail::make_path(Vector::Zero(l), problem);
    }
    if (b >= static_cast<double>(l) - 1e-13) {
        Vector phi = Vector::Zero(l);
        phi(l - 1) = 1.0;
        if (diagnostics) *diagnostics = diag;
        return detail::make_path(std::move(phi), problem);
    }

    detail::QpWork w;
    w.l = l;
    w.v = problem.v;
    w.b = std::clamp(b, 0.0, static_cast<double>(l));
    w.a.resize(l);
    for (int i = 0; i < l; ++i) w.a(i) = static_cast<double>(i + 1);

    // PSD repair: U = Yhat'Yhat/N is PSD in exact arithmetic, so anything
    // below -1e-8*||U|| is a caller bug; smaller negative eigenvalues are
    // rounding noise and get shifted out.
    w.u = problem.u;
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(w.u, Eigen::EigenvaluesOnly);
        const double emin = es.eigenvalues().minCoeff();
        const double scale = std::max(std::abs(es.eigenvalues().maxCoeff()), std::abs(emin));
        if (emin < -1e-8 * std::max(scale, 1e-300))
            throw NumericError("solve_qp: U is not positive semidefinite (min eigenvalue " +
                               std::to_string(emin) + ")");
        if (emin < 0.0) w.u.diagonal().array() += 1e-10 * w.u.trace() / static_cast<double>(l);
    }
    // tiny uniform ridge keeps every reduced subproblem definite; it perturbs
    // the minimizer far below the 1e-8 KKT tolerance
    w.u.diagonal().array() += 1e-12 * (1.0 + std::abs(w.u.trace()) / static_cast<double>(l));

    Vector phi = Vector::Zero(l);
    phi(l - 1) = w.b / static_cast<double>(l);   // feasible start

    std::vector<bool> bound_active(static_cast<std::size_t>(l), false);
    bool cap_active = false;
    double lambda_a = 0.0, lambda_cap = 0.0;
    const int max_iter = std::max(100, 10 * l * l);
    bool converged = false;

    for (; diag.iterations < max_iter; ++diag.iterations) {
        std::vector<int> free_idx;
        for (int i = 0; i < l; ++i)
            if (!bound_active[static_cast<std::size_t>(i)]) free_idx.push_back(i);

        Vector x;
        detail::solve_eq_subproblem(w, free_idx, cap_active, x, lambda_a, lambda_cap);

        Vector target = Vector::Zero(l);
        for (std::size_t i = 0; i < free_idx.size(); ++i)
            target(free_idx[i]) = x(static_cast<Index>(i));

        const Vector step = target - phi;
        if (step.lpNorm<Eigen::Infinity>() <= 1e-12) {
            // at the subproblem minimizer; look for a constraint to release
            const Vector grad = 2.0 * w.u * phi - w.v;
            int worst = -1;
            double worst_mu = -1e-10;
            for (int i = 0; i < l; ++i) {
                if (!bound_active[static_cast<std::size_t>(i)]) continue;
                const double mu = grad(i) - lambda_a * w.a(i) + lambda_cap;
                if (mu < worst_mu) {
                    worst_mu = mu;
                    worst = i;
                }
            }
            const bool release_cap = worst < 0 && cap_active && lambda_cap < -1e-10;
            if (worst < 0 && !release_cap) {
                converged = true;
                break;
            }
            if (worst >= 0)
                bound_active[static_cast<std::size_t>(worst)] = false;
            else
                cap_active = false;
            continue;
        }

        // step toward the subproblem minimizer, stopping at the first
        // blocking constraint (smallest index wins near-ties)
        double alpha = 1.0;
        int blocker = -1;       // 0..l-1 bound, l = cap
        for (int i = 0; i < l; ++i) {
            if (bound_active[static_cast<std::size_t>(i)] || step(i) >= -1e-15) continue;
            const double limit = phi(i) / (-step(i));
            if (limit < alpha - 1e-14) {
                alpha = limit;
                blocker = i;
            }
        }
        if (!cap_active) {
            const double sum_step = step.sum();
            if (sum_step > 1e-15) {
                const double limit = (1.0 - phi.sum()) / sum_step;
                if (limit < alpha - 1e-14) {
                    alpha = limit;
                    blocker = l;
                }
            }
        }
        alpha = std::clamp(alpha, 0.0, 1.0);
        phi += alpha * step;
        if (blocker >= 0) {
            if (blocker == l) {
                cap_active = true;
            } else {
                bound_active[static_cast<std::size_t>(blocker)] = true;
                phi(blocker) = 0.0;
            }
        }
    }

    if (!converged) {
        diag.fallback_used = true;
        phi = detail::projected_gradient(w, phi, 20000);
    }

    for (int i = 0; i < l; ++i)
        if (phi(i) < 0.0 && phi(i) > -1e-11) phi(i) = 0.0;

    // KKT residuals against the original problem data
    const Vector grad = 2.0 * problem.u * phi - problem.v;
    if (converged) {
        double stat = 0.0, slack = 0.0;
        for (int i = 0; i < l; ++i) {
            const double mu = grad(i) - lambda_a * w.a(i) + (cap_active ? lambda_cap : 0.0);
            if (bound_active[static_cast<std::size_t>(i)]) {
                stat = std::max(stat, std::max(0.0, -mu));
                slack = std::max(slack, std::abs(mu * phi(i)));
            } else {
                stat = std::max(stat, std::abs(mu));
            }
        }
        if (cap_active) slack = std::max(slack, std::abs(lambda_cap * (1.0 - phi.sum())));
        diag.stationarity = stat;
        diag.slackness = slack;
    } else {
        // fallback: estimate multipliers from the support of the solution
        std::vector<int> support;
        for (int i = 0; i < l; ++i)
            if (phi(i) > 1e-9) support.push_back(i);
        if (support.empty()) support.push_back(l - 1);
        const bool with_cap = phi.sum() >= 1.0 - 1e-9;
        Matrix basis(static_cast<Index>(support.size()), with_cap ? 2 : 1);
        Vector g_free(static_cast<Index>(support.size()));
        for (std::size_t i = 0; i < support.size(); ++i) {
            basis(static_cast<Index>(i), 0) = w.a(support[i]);
            if (with_cap) basis(static_cast<Index>(i), 1) = -1.0;
            g_free(static_cast<Index>(i)) = grad(support[i]);
        }
        Vector lam = basis.colPivHouseholderQr().solve(g_free);
        const double la = lam(0);
        const double lc = with_cap ? std::max(0.0, lam(1)) : 0.0;
        double stat = 0.0, slack = 0.0;
        for (int i = 0; i < l; ++i) {
            const double mu = grad(i) - la * w.a(i) + lc;
            if (phi(i) > 1e-9) {
                stat = std::max(stat, std::abs(mu));
            } else {
                stat = std::max(stat, std::max(0.0, -mu));
                slack = std::max(slack, std::abs(mu * phi(i)));
            }
        }
        slack = std::max(slack, std::abs(lc * (1.0 - phi.sum())));
        diag.stationarity = stat;
        diag.slackness = slack;
    }
    diag.primal = std::max({std::abs(w.a.dot(phi) - w.b), std::max(0.0, phi.sum() - 1.0),
                            std::max(0.0, -phi.minCoeff())});

    const double kkt_tol = 1e-8 * (1.0 + problem.v.lpNorm<Eigen::Infinity>());
    if (diag.fallback_used &&
        (diag.stationarity > kkt_tol || diag.primal > 1e-10 || diag.slackness > 1e-8)) {
        throw NumericError("solve_qp: did not converge; KKT residuals stationarity=" +
                           std::to_string(diag.stationarity) + " primal=" +
                           std::to_string(diag.primal) + " slackness=" +
                           std::to_string(diag.slackness));
    }

    if (diagnostics) *diagnostics = diag;
    return detail::make_path(std::move(phi), problem);
}

} // namespace hfr
