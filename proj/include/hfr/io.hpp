#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfr/estimator.hpp"
#include "hfr/hierarchy.hpp"
#include "hfr/types.hpp"

namespace hfr {

using Json = nlohmann::json;

/// Column-typed dataset loaded from CSV: response, predictors and optional
/// extra deterministic columns, each addressed by header name.
struct Dataset {
    Matrix x;
    std::vector<std::string> predictor_names;
    Vector y;
    std::string response_name;
    Matrix dets;
    std::vector<std::string> deterministic_names;
    bool has_response = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

/// Atomic file write: temp file in the target directory, then rename.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
    std::filesystem::create_directories(dir, ec);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write to " + tmp);
        out << content;
        if (!out.good()) throw IoError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
}

/// CSV ingestion: header required, comma separated, '.' decimal point,
/// scientific notation accepted. Blank cells and non-numeric cells are
/// rejected with their file line and column. The optional unit rescale maps
/// continuous predictors to [-1, 1] and 0/1 dummies to [-0.5, 0.5].
inline Dataset load_csv(const std::filesystem::path& path, const std::string& response_column,
                        const std::vector<std::string>& deterministic_columns = {},
                        bool rescale_unit = false) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = detail::split_csv_line(line);
    detail::require(!header.empty(), path.string() + ": empty header");
    for (std::size_t i = 0; i < header.size(); ++i) {
        detail::require(!header[i].empty(), path.string() + ": blank column name in header");
        for (std::size_t j = i + 1; j < header.size(); ++j)
            if (header[i] == header[j])
                throw ValidationError(path.string() + ": duplicate column name '" + header[i] + "'");
    }

    std::vector<std::vector<double>> rows;
    std::vector<int> bad_rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ValidationError(path.string() + ": line " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(header.size()));
        std::vector<double> row(cells.size());
        bool missing = false;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c].empty()) {
                missing = true;
                continue;
            }
            const char* start = cells[c].c_str();
            char* end = nullptr;
            row[c] = std::strtod(start, &end);
            if (end != start + cells[c].size() || !std::isfinite(row[c]))
                throw ValidationError(path.string() + ": non-numeric cell at line " +
                                      std::to_string(line_no) + ", column '" + header[c] + "'");
        }
        if (missing) {
            bad_rows.push_back(line_no);
            continue;
        }
        rows.push_back(std::move(row));
    }
    if (!bad_rows.empty()) {
        std::string list;
        for (std::size_t i = 0; i < bad_rows.size() && i < 20; ++i)
            list += (i ? ", " : "") + std::to_string(bad_rows[i]);
        if (bad_rows.size() > 20) list += ", ...";
        throw ValidationError(path.string() + ": rows with missing values rejected (lines " + list +
                              ")");
    }
    detail::require(!rows.empty(), path.string() + ": no data rows");

    auto column_index = [&](const std::string& name) {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        throw ValidationError(path.string() + ": no column named '" + name + "'");
    };

    Dataset d;
    const int n = static_cast<int>(rows.size());
    int y_col = -1;
    if (!response_column.empty()) {
        y_col = column_index(response_column);
        d.has_response = true;
        d.response_name = response_column;
        d.y.resize(n);
        for (int i = 0; i < n; ++i)
            d.y(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(y_col)];
    }
    std::vector<int> det_cols;
    for (const auto& name : deterministic_columns) {
        const int c = column_index(name);
        detail::require(c != y_col, "deterministic column equals the response column");
        det_cols.push_back(c);
        d.deterministic_names.push_back(name);
    }
    std::vector<int> x_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const int ci = static_cast<int>(c);
        if (ci == y_col) continue;
        if (std::find(det_cols.begin(), det_cols.end(), ci) != det_cols.end()) continue;
        x_cols.push_back(ci);
        d.predictor_names.push_back(header[c]);
    }
    detail::require(!x_cols.empty(), path.string() + ": no predictor columns left");

    d.x.resize(n, static_cast<Index>(x_cols.size()));
    for (int i = 0; i < n; ++i)
        for (std::size_t c = 0; c < x_cols.size(); ++c)
            d.x(i, static_cast<Index>(c)) =
                rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(x_cols[c])];
    d.dets.resize(n, static_cast<Index>(det_cols.size()));
    for (int i = 0; i < n; ++i)
        for (std::size_t c = 0; c < det_cols.size(); ++c)
            d.dets(i, static_cast<Index>(c)) =
                rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(det_cols[c])];

    if (rescale_unit) {
        for (Index j = 0; j < d.x.cols(); ++j) {
            const double lo = d.x.col(j).minCoeff();
            const double hi = d.x.col(j).maxCoeff();
            bool dummy = true;
            for (Index i = 0; i < d.x.rows() && dummy; ++i)
                dummy = d.x(i, j) == 0.0 || d.x(i, j) == 1.0;
            if (dummy) {
                d.x.col(j).array() -= 0.5;
            } else {
                if (hi == lo)
                    throw ValidationError("rescale: predictor '" + d.predictor_names[static_cast<std::size_t>(j)] +
                                          "' is constant");
                d.x.col(j) = 2.0 * (d.x.col(j).array() - lo) / (hi - lo) - 1.0;
            }
        }
    }
    return d;
}

/// CSV emission at full precision (17 significant digits).
inline std::string to_csv(const std::vector<std::string>& header,
                          const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
    out += "\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
        out += "\n";
    }
    return out;
}

inline std::string matrix_to_csv(const std::vector<std::string>& header, const Matrix& m) {
    std::vector<std::vector<std::string>> rows(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i) {
        auto& row = rows[static_cast<std::size_t>(i)];
        row.reserve(static_cast<std::size_t>(m.cols()));
        for (Index j = 0; j < m.cols(); ++j) row.push_back(detail::format_full(m(i, j)));
    }
    return to_csv(header, rows);
}

// -- hierarchy JSON (documented schema: schema_version, k, levels, heights) --

inline Json hierarchy_to_json(const Hierarchy& h) {
    Json levels = Json::array();
    for (const auto& level : h.levels) {
        Json clusters = Json::array();
        for (const auto& cluster : level.clusters)
            clusters.push_back(Json{{"members", cluster.members}, {"signs", cluster.signs}});
        levels.push_back(Json{{"clusters", std::move(clusters)}});
    }
    return Json{{"schema_version", 1},
                {"k", h.k},
                {"levels", std::move(levels)},
                {"heights", h.merge_heights}};
}

inline Hierarchy hierarchy_from_json(const Json& j) {
    detail::require(j.value("schema_version", 0) == 1, "hierarchy json: unsupported schema_version");
    Hierarchy h;
    h.k = j.at("k").get<int>();
    for (const auto& jl : j.at("levels")) {
        HierarchyLevel level;
        for (const auto& jc : jl.at("clusters")) {
            Cluster c;
            c.members = jc.at("members").get<std::vector<int>>();
            c.signs = jc.at("signs").get<std::vector<int>>();
            detail::require(c.members.size() == c.signs.size() && !c.members.empty(),
                            "hierarchy json: malformed cluster");
            for (int s : c.signs)
                detail::require(s == 1 || s == -1, "hierarchy json: signs must be +-1");
            level.clusters.push_back(std::move(c));
        }
        h.levels.push_back(std::move(level));
    }
    h.merge_heights = j.at("heights").get<std::vector<double>>();
    detail::require(h.merge_heights.size() == h.levels.size(),
                    "hierarchy json: heights/levels length mismatch");
    return h;
}

// -- fitted model JSON --

namespace detail {

inline Json vector_to_json(const Vector& v) {
    Json arr = Json::array();
    for (Index i = 0; i < v.size(); ++i) {
        if (std::isnan(v(i)))
            arr.push_back(nullptr);
        else
            arr.push_back(v(i));
    }
    return arr;
}

inline Vector vector_from_json(const Json& arr) {
    Vector v(static_cast<Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
        v(static_cast<Index>(i)) = arr[i].is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                    : arr[i].get<double>();
    return v;
}

} // namespace detail

inline Json fit_to_json(const HfrFit& fit, const std::vector<std::string>& predictor_names,
                        std::uint64_t seed) {
    Json j;
    j["schema_version"] = 1;
    j["kind"] = "hfr_fit";
    j["seed"] = seed;
    j["kappa"] = fit.path.kappa;
    j["n"] = fit.n;
    j["k"] = fit.k;
    j["m"] = fit.m;
    j["intercept"] = fit.intercept;
    j["predictors"] = predictor_names;
    j["beta"] = detail::vector_to_json(fit.beta);
    j["beta_std"] = detail::vector_to_json(fit.beta_std);
    j["deterministic"] = detail::vector_to_json(fit.deterministic);
    j["se"] = detail::vector_to_json(fit.se);
    j["p_values"] = detail::vector_to_json(fit.p_values);
    j["theta"] = detail::vector_to_json(fit.path.theta);
    j["phi"] = detail::vector_to_json(fit.path.phi);
    j["nu_eff"] = fit.path.nu_eff;
    j["nu_eff_total"] = fit.nu_eff_total;
    j["r2_levels"] = detail::vector_to_json(fit.r2_levels);
    j["r2_total"] = fit.r2_total;
    j["standardization"] = Json{{"centers", detail::vector_to_json(fit.standardization.centers)},
                                {"scales", detail::vector_to_json(fit.standardization.scales)}};
    j["hierarchy"] = hierarchy_to_json(fit.hierarchy);
    j["warnings"] = fit.warnings;
    return j;
}

inline HfrFit fit_from_json(const Json& j) {
    detail::require(j.value("kind", "") == "hfr_fit", "model json: not an hfr_fit document");
    detail::require(j.value("schema_version", 0) == 1, "model json: unsupported schema_version");
    HfrFit fit;
    fit.n = j.at("n").get<int>();
    fit.k = j.at("k").get<int>();
    fit.m = j.at("m").get<int>();
    fit.intercept = j.at("intercept").get<bool>();
    fit.beta = detail::vector_from_json(j.at("beta"));
    fit.beta_std = detail::vector_from_json(j.at("beta_std"));
    fit.deterministic = detail::vector_from_json(j.at("deterministic"));
    fit.se = detail::vector_from_json(j.at("se"));
    fit.p_values = detail::vector_from_json(j.at("p_values"));
    fit.path.theta = detail::vector_from_json(j.at("theta"));
    fit.path.phi = detail::vector_from_json(j.at("phi"));
    fit.path.kappa = j.at("kappa").get<double>();
    fit.path.nu_eff = j.at("nu_eff").get<double>();
    fit.nu_eff_total = j.at("nu_eff_total").get<double>();
    fit.r2_levels = detail::vector_from_json(j.at("r2_levels"));
    fit.r2_total = j.at("r2_total").get<double>();
    fit.standardization.centers = detail::vector_from_json(j.at("standardization").at("centers"));
    fit.standardization.scales = detail::vector_from_json(j.at("standardization").at("scales"));
    fit.hierarchy = hierarchy_from_json(j.at("hierarchy"));
    fit.warnings = j.value("warnings", std::vector<std::string>{});
    return fit;
}

inline Json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return j;
}

} // namespace hfr
