#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "hfr/estimator.hpp"
#include "hfr/io.hpp"
#include "hfr/model_selection.hpp"
#include "hfr/simulation.hpp"
#include "hfr/types.hpp"

namespace hfr {

namespace detail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

/// Crossing-free positions: walk the nested partition from the root,
/// keeping each parent's children contiguous. Returns, per level, the x slot
/// of every cluster (unit leaf spacing), plus the deepest-level order.
struct DendroLayout {
    std::vector<std::vector<double>> cluster_x;   // [level][cluster]
    std::vector<int> leaf_order;                  // deepest-level cluster indices
};

inline DendroLayout dendro_layout(const Hierarchy& h) {
    const int levels = h.level_count();
    // order the deepest level so every coarser cluster is contiguous
    std::vector<int> order;
    {
        const auto& deepest = h.levels.back();
        std::vector<int> current(deepest.clusters.size());
        for (std::size_t i = 0; i < deepest.clusters.size(); ++i) current[i] = static_cast<int>(i);
        // sort deepest clusters by the chain of their ancestors' positions
        // simple approach: sort by (root cluster idx, ..., own min member)
        std::vector<std::vector<int>> keys(deepest.clusters.size());
        for (std::size_t c = 0; c < deepest.clusters.size(); ++c) {
            const int probe = deepest.clusters[c].members.front();
            for (int ell = 1; ell <= levels; ++ell) {
                const auto& level = h.level(ell);
                for (std::size_t pc = 0; pc < level.clusters.size(); ++pc) {
                    const auto& mem = level.clusters[pc].members;
                    if (std::find(mem.begin(), mem.end(), probe) != mem.end()) {
                        keys[c].push_back(static_cast<int>(pc));
                        break;
                    }
                }
            }
        }
        std::sort(current.begin(), current.end(), [&](int a, int b) {
            return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
        });
        order = current;
    }

    DendroLayout layout;
    layout.leaf_order = order;
    layout.cluster_x.resize(static_cast<std::size_t>(levels));
    // deepest level: slot positions by order
    const auto& deepest = h.levels.back();
    std::vector<double> deep_x(deepest.clusters.size(), 0.0);
    for (std::size_t pos = 0; pos < order.size(); ++pos)
        deep_x[static_cast<std::size_t>(order[pos])] = static_cast<double>(pos);
    layout.cluster_x.back() = deep_x;

    // coarser levels: mean of member leaf-cluster positions
    for (int ell = levels - 1; ell >= 1; --ell) {
        const auto& level = h.level(ell);
        std::vector<double> xs(level.clusters.size(), 0.0);
        for (std::size_t c = 0; c < level.clusters.size(); ++c) {
            double sum = 0.0;
            int count = 0;
            for (std::size_t dc = 0; dc < deepest.clusters.size(); ++dc) {
                const int probe = deepest.clusters[dc].members.front();
                const auto& mem = level.clusters[c].members;
                if (std::find(mem.begin(), mem.end(), probe) != mem.end()) {
                    sum += deep_x[dc];
                    ++count;
                }
            }
            xs[c] = sum / std::max(count, 1);
        }
        layout.cluster_x[static_cast<std::size_t>(ell - 1)] = std::move(xs);
    }
    return layout;
}

} // namespace detail

enum class PlotFormat { svg, dot };

/// Dendrogram with level band heights proportional to theta (zero-weight
/// levels collapse) and a side bar shaded by the per-level R2 contribution.
/// Total drawn height of the tree equals nu_eff.
inline std::string render_dendrogram(const HfrFit& fit,
                                     const std::vector<std::string>& names_in,
                                     PlotFormat format) {
    const Hierarchy& h = fit.hierarchy;
    const int levels = h.level_count();
    std::vector<std::string> names = names_in;
    if (static_cast<int>(names.size()) != h.k) {
        names.resize(static_cast<std::size_t>(h.k));
        for (int j = 0; j < h.k; ++j) names[static_cast<std::size_t>(j)] = "x" + std::to_string(j + 1);
    }

    const auto& deepest = h.levels.back();
    auto leaf_label = [&](std::size_t cluster_idx) {
        const auto& c = deepest.clusters[cluster_idx];
        std::string label;
        for (std::size_t m = 0; m < c.members.size() && m < 3; ++m) {
            if (m) label += "+";
            if (c.signs[m] < 0) label += "-";
            label += names[static_cast<std::size_t>(c.members[m])];
        }
        if (c.members.size() > 3) label += "+" + std::to_string(c.members.size() - 3);
        return label;
    };

    if (format == PlotFormat::dot) {
        std::string out = "digraph hierarchy {\n  rankdir=TB;\n  node [shape=box];\n";
        for (int ell = 1; ell <= levels; ++ell) {
            const auto& level = h.level(ell);
            for (std::size_t c = 0; c < level.clusters.size(); ++c) {
                std::string label;
                if (ell == levels) {
                    label = leaf_label(c);
                } else {
                    label = "L" + std::to_string(ell) + " (theta=" +
                            detail::fmt2(fit.path.theta(ell - 1)) + ")";
                }
                out += "  n" + std::to_string(ell) + "_" + std::to_string(c) + " [label=\"" +
                       label + "\"];\n";
            }
        }
        for (int ell = 1; ell < levels; ++ell) {
            const auto& parent = h.level(ell);
            const auto& child = h.level(ell + 1);
            for (std::size_t pc = 0; pc < parent.clusters.size(); ++pc) {
                for (std::size_t cc = 0; cc < child.clusters.size(); ++cc) {
                    const int probe = child.clusters[cc].members.front();
                    const auto& mem = parent.clusters[pc].members;
                    if (std::find(mem.begin(), mem.end(), probe) != mem.end())
                        out += "  n" + std::to_string(ell) + "_" + std::to_string(pc) + " -> n" +
                               std::to_string(ell + 1) + "_" + std::to_string(cc) + ";\n";
                }
            }
        }
        out += "}\n";
        return out;
    }
    if (format != PlotFormat::svg) throw ValidationError("render_dendrogram: unsupported format");

    const detail::DendroLayout layout = detail::dendro_layout(h);
    const int n_leaves = static_cast<int>(deepest.clusters.size());

    // vertical geometry: theta bands stacked from the leaves upward
    std::vector<double> y_top(static_cast<std::size_t>(levels + 1), 0.0);   // y_top[ell], 1-based
    double cum = 0.0;
    for (int ell = levels; ell >= 1; --ell) {
        cum += fit.path.theta(ell - 1);
        y_top[static_cast<std::size_t>(ell)] = cum;
    }
    const double total = std::max(cum, 1e-9);

    const double margin = 40.0, label_h = 90.0, bar_w = 26.0;
    const double slot_w = 46.0;
    const double tree_h = 360.0;
    const double width = margin * 2 + slot_w * std::max(n_leaves - 1, 1) + 70.0 + bar_w;
    const double height = margin + tree_h + label_h;
    auto px = [&](double slot) { return margin + slot * slot_w; };
    auto py = [&](double theta_height) { return margin + tree_h * (1.0 - theta_height / total); };

    std::string out;
    out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt2(width) +
           "\" height=\"" + detail::fmt2(height) + "\" viewBox=\"0 0 " + detail::fmt2(width) + " " +
           detail::fmt2(height) + "\">\n";
    out += "<g stroke=\"#333333\" stroke-width=\"1.5\" fill=\"none\">\n";

    // vertical connectors: every cluster rises from its first appearance to
    // the level where it merges into a parent
    for (int ell = levels; ell >= 2; --ell) {
        const auto& level = h.level(ell);
        const auto& xs = layout.cluster_x[static_cast<std::size_t>(ell - 1)];
        const double y0 = (ell == levels) ? py(0.0) : py(y_top[static_cast<std::size_t>(ell + 1)]);
        (void)y0;
        for (std::size_t c = 0; c < level.clusters.size(); ++c) {
            const double y_from = (ell == levels) ? py(0.0) : py(y_top[static_cast<std::size_t>(ell)]);
            const double y_to = py(y_top[static_cast<std::size_t>(ell - 1)]);
            out += "<line x1=\"" + detail::fmt2(px(xs[c])) + "\" y1=\"" + detail::fmt2(y_from) +
                   "\" x2=\"" + detail::fmt2(px(xs[c])) + "\" y2=\"" + detail::fmt2(y_to) +
                   "\"/>\n";
        }
        // horizontal joins at the top of the band where clusters merge
        const auto& parent = h.level(ell - 1);
        const auto& pxs = layout.cluster_x[static_cast<std::size_t>(ell - 2)];
        for (std::size_t pc = 0; pc < parent.clusters.size(); ++pc) {
            double lo = 1e300, hi = -1e300;
            int children = 0;
            for (std::size_t cc = 0; cc < level.clusters.size(); ++cc) {
                const int probe = level.clusters[cc].members.front();
                const auto& mem = parent.clusters[pc].members;
                if (std::find(mem.begin(), mem.end(), probe) != mem.end()) {
                    lo = std::min(lo, xs[cc]);
                    hi = std::max(hi, xs[cc]);
                    ++children;
                }
            }
            if (children > 1) {
                const double y = py(y_top[static_cast<std::size_t>(ell - 1)]);
                out += "<line x1=\"" + detail::fmt2(px(lo)) + "\" y1=\"" + detail::fmt2(y) +
                       "\" x2=\"" + detail::fmt2(px(hi)) + "\" y2=\"" + detail::fmt2(y) + "\"/>\n";
            }
            (void)pxs;
        }
    }
    out += "</g>\n";

    // contribution bar: one segment per level, darker = larger R2 share
    double max_contrib = 1e-12;
    for (Index i = 0; i < fit.r2_levels.size(); ++i)
        max_contrib = std::max(max_contrib, fit.r2_levels(i));
    const double bar_x = width - margin - bar_w;
    for (int ell = 1; ell <= levels; ++ell) {
        const double y1 = py(y_top[static_cast<std::size_t>(ell)]);
        const double y2 = (ell == levels) ? py(0.0) : py(y_top[static_cast<std::size_t>(ell + 1)]);
        if (y2 - y1 < 1e-9) continue;
        const double share = std::max(fit.r2_levels(ell - 1), 0.0) / max_contrib;
        const int grey = static_cast<int>(235.0 - 190.0 * share);
        char color[16];
        std::snprintf(color, sizeof(color), "#%02x%02x%02x", grey, grey, grey);
        out += "<rect x=\"" + detail::fmt2(bar_x) + "\" y=\"" + detail::fmt2(y1) + "\" width=\"" +
               detail::fmt2(bar_w) + "\" height=\"" + detail::fmt2(y2 - y1) + "\" fill=\"" + color +
               "\" stroke=\"#777777\"/>\n";
    }

    // leaf labels
    out += "<g font-family=\"monospace\" font-size=\"11\" fill=\"#000000\">\n";
    for (std::size_t pos = 0; pos < layout.leaf_order.size(); ++pos) {
        const auto idx = static_cast<std::size_t>(layout.leaf_order[pos]);
        out += "<text x=\"" + detail::fmt2(px(static_cast<double>(pos))) + "\" y=\"" +
               detail::fmt2(margin + tree_h + 14.0) + "\" transform=\"rotate(60 " +
               detail::fmt2(px(static_cast<double>(pos))) + " " + detail::fmt2(margin + tree_h + 14.0) +
               ")\">" + detail::xml_escape(leaf_label(idx)) + "</text>\n";
    }
    out += "<text x=\"" + detail::fmt2(margin) + "\" y=\"" + detail::fmt2(margin - 14.0) +
           "\">eff. df (levels) = " + detail::fmt2(fit.path.nu_eff) +
           ", R2 = " + detail::fmt2(fit.r2_total) + "</text>\n";
    out += "</g>\n</svg>\n";
    return out;
}

// -- simulation / CV / trace artifacts --

inline std::string report_to_csv(const std::vector<SimulationReport>& reports) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& report : reports) {
        for (const auto& m : report.methods) {
            rows.push_back({std::string(1, dgp_letter(report.spec)), method_name(m.method),
                            std::to_string(report.runs), detail::format_full(m.median_mse),
                            detail::format_full(m.bootstrap_se), detail::format_full(m.mean_rank),
                            detail::format_full(m.rank_ci_low),
                            detail::format_full(m.rank_ci_high)});
        }
    }
    return to_csv({"spec", "method", "run_count", "median_mse", "bootstrap_se", "mean_rank",
                   "rank_ci_low", "rank_ci_high"},
                  rows);
}

inline Json report_to_json(const std::vector<SimulationReport>& reports) {
    Json out;
    out["schema_version"] = 1;
    out["kind"] = "simulation_report";
    Json specs = Json::array();
    for (const auto& report : reports) {
        Json methods = Json::array();
        for (const auto& m : report.methods) {
            methods.push_back(Json{{"method", method_name(m.method)},
                                   {"run_count", report.runs},
                                   {"median_mse", m.median_mse},
                                   {"bootstrap_se", m.bootstrap_se},
                                   {"mean_rank", m.mean_rank},
                                   {"rank_ci_low", m.rank_ci_low},
                                   {"rank_ci_high", m.rank_ci_high},
                                   {"failures", m.failures}});
        }
        specs.push_back(Json{{"spec", std::string(1, dgp_letter(report.spec))},
                             {"seed", report.seed},
                             {"runs", report.runs},
                             {"methods", std::move(methods)}});
    }
    out["reports"] = std::move(specs);
    return out;
}

/// Per-run data underlying the aggregates (one row per spec, method, run).
inline std::string runs_to_csv(const std::vector<SimulationReport>& reports) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& report : reports)
        for (const auto& m : report.methods)
            for (std::size_t r = 0; r < m.mses.size(); ++r)
                rows.push_back({std::string(1, dgp_letter(report.spec)), method_name(m.method),
                                std::to_string(r), detail::format_full(m.mses[r])});
    return to_csv({"spec", "method", "run", "mse"}, rows);
}

inline std::string cv_to_csv(const CvResult& cv) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < cv.kappa_grid.size(); ++i)
        rows.push_back({detail::format_full(cv.kappa_grid[i]), detail::format_full(cv.cv_mse[i]),
                        detail::format_full(cv.cv_se[i]),
                        cv.kappa_grid[i] == cv.kappa_star ? "1" : "0"});
    return to_csv({"kappa", "cv_mse", "cv_se", "selected"}, rows);
}

inline std::string trace_to_csv(const std::vector<double>& kappa_grid, const Matrix& path,
                                const std::vector<std::string>& names) {
    std::vector<std::string> header = {"kappa"};
    for (Index j = 0; j < path.cols(); ++j)
        header.push_back(j < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                              : "x" + std::to_string(j + 1));
    std::vector<std::vector<std::string>> rows;
    for (Index i = 0; i < path.rows(); ++i) {
        std::vector<std::string> row = {detail::format_full(kappa_grid[static_cast<std::size_t>(i)])};
        for (Index j = 0; j < path.cols(); ++j) row.push_back(detail::format_full(path(i, j)));
        rows.push_back(std::move(row));
    }
    return to_csv(header, rows);
}

namespace detail {

struct SvgCanvas {
    double width, height;
    std::string body;

    std::string finish() const {
        std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(width) + "\" height=\"" +
               fmt2(height) + "\" viewBox=\"0 0 " + fmt2(width) + " " + fmt2(height) + "\">\n";
        out += body;
        out += "</svg>\n";
        return out;
    }

    void line(double x1, double y1, double x2, double y2, const char* color = "#333333") {
        body += "<line x1=\"" + fmt2(x1) + "\" y1=\"" + fmt2(y1) + "\" x2=\"" + fmt2(x2) +
                "\" y2=\"" + fmt2(y2) + "\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    }
    void rect(double x, double y, double w, double h, const char* fill) {
        body += "<rect x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) + "\" width=\"" + fmt2(w) +
                "\" height=\"" + fmt2(h) + "\" fill=\"" + fill + "\" stroke=\"#333333\"/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 11) {
        body += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) + "\" font-family=\"monospace\" font-size=\"" +
                std::to_string(size) + "\">" + xml_escape(s) + "</text>\n";
    }
};

inline std::vector<double> quartiles(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto at = [&](double q) {
        const double pos = q * static_cast<double>(v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

} // namespace detail

/// Box chart of per-run MSEs, one box per method.
inline std::string report_to_svg(const SimulationReport& report) {
    const std::size_t n = report.methods.size();
    detail::SvgCanvas canvas;
    canvas.width = 120.0 + 90.0 * static_cast<double>(n);
    canvas.height = 420.0;

    double lo = 1e300, hi = -1e300;
    std::vector<std::vector<double>> q(n);
    for (std::size_t m = 0; m < n; ++m) {
        q[m] = detail::quartiles(report.methods[m].mses);
        lo = std::min(lo, q[m][0]);
        hi = std::max(hi, q[m][4]);
    }
    const double span = std::max(hi - lo, 1e-12);
    auto py = [&](double v) { return 30.0 + 320.0 * (1.0 - (v - lo) / span); };

    for (std::size_t m = 0; m < n; ++m) {
        const double cx = 100.0 + 90.0 * static_cast<double>(m);
        canvas.line(cx, py(q[m][0]), cx, py(q[m][1]));
        canvas.line(cx, py(q[m][3]), cx, py(q[m][4]));
        canvas.rect(cx - 25.0, py(q[m][3]), 50.0, py(q[m][1]) - py(q[m][3]), "#dddddd");
        canvas.line(cx - 25.0, py(q[m][2]), cx + 25.0, py(q[m][2]), "#000000");
        canvas.text(cx - 25.0, 395.0, method_name(report.methods[m].method));
    }
    canvas.text(10.0, 15.0, std::string("simulation (") + dgp_letter(report.spec) +
                                "), test MSE, " + std::to_string(report.runs) + " runs, seed " +
                                std::to_string(report.seed));
    canvas.text(10.0, py(lo) + 4.0, detail::format_full(lo).substr(0, 6));
    canvas.text(10.0, py(hi) + 4.0, detail::format_full(hi).substr(0, 6));
    return canvas.finish();
}

/// CV curve with one-standard-error whiskers.
inline std::string cv_to_svg(const CvResult& cv) {
    detail::SvgCanvas canvas;
    canvas.width = 560.0;
    canvas.height = 360.0;
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < cv.cv_mse.size(); ++i) {
        lo = std::min(lo, cv.cv_mse[i] - cv.cv_se[i]);
        hi = std::max(hi, cv.cv_mse[i] + cv.cv_se[i]);
    }
    const double span = std::max(hi - lo, 1e-12);
    auto px = [&](double kappa) { return 60.0 + 460.0 * kappa; };
    auto py = [&](double v) { return 30.0 + 270.0 * (1.0 - (v - lo) / span); };
    for (std::size_t i = 0; i + 1 < cv.kappa_grid.size(); ++i)
        canvas.line(px(cv.kappa_grid[i]), py(cv.cv_mse[i]), px(cv.kappa_grid[i + 1]),
                    py(cv.cv_mse[i + 1]), "#1f4e9c");
    for (std::size_t i = 0; i < cv.kappa_grid.size(); ++i)
        canvas.line(px(cv.kappa_grid[i]), py(cv.cv_mse[i] - cv.cv_se[i]), px(cv.kappa_grid[i]),
                    py(cv.cv_mse[i] + cv.cv_se[i]), "#9db7dd");
    canvas.line(px(cv.kappa_star), 30.0, px(cv.kappa_star), 300.0, "#c23b23");
    canvas.text(10.0, 15.0, "cross-validated MSE over kappa; selected kappa = " +
                                detail::fmt2(cv.kappa_star));
    canvas.text(px(0.0) - 4.0, 320.0, "0");
    canvas.text(px(1.0) - 4.0, 320.0, "1");
    return canvas.finish();
}

/// Coefficient traces over the kappa grid, one polyline per predictor.
inline std::string trace_to_svg(const std::vector<double>& kappa_grid, const Matrix& path) {
    detail::SvgCanvas canvas;
    canvas.width = 560.0;
    canvas.height = 360.0;
    const double lo = std::min(path.minCoeff(), 0.0);
    const double hi = std::max(path.maxCoeff(), 0.0);
    const double span = std::max(hi - lo, 1e-12);
    auto px = [&](double kappa) { return 60.0 + 460.0 * kappa; };
    auto py = [&](double v) { return 30.0 + 290.0 * (1.0 - (v - lo) / span); };
    canvas.line(px(0.0), py(0.0), px(1.0), py(0.0), "#aaaaaa");
    const char* palette[] = {"#1f4e9c", "#c23b23", "#2e7d32", "#7b1fa2",
                             "#00838f", "#ef6c00", "#5d4037", "#455a64"};
    for (Index j = 0; j < path.cols(); ++j) {
        const char* color = palette[static_cast<std::size_t>(j) % 8];
        for (Index i = 0; i + 1 < path.rows(); ++i)
            canvas.line(px(kappa_grid[static_cast<std::size_t>(i)]), py(path(i, j)),
                        px(kappa_grid[static_cast<std::size_t>(i + 1)]), py(path(i + 1, j)), color);
    }
    canvas.text(10.0, 15.0, "coefficient traces over kappa");
    return canvas.finish();
}

} // namespace hfr
