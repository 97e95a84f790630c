#pragma once

#include <oec/core.hpp>
#include <oec/mortality.hpp>
#include <oec/optimal_ensemble.hpp>
#include <oec/simulation.hpp>
#include <oec/stacking.hpp>
#include <oec/tuning.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace oec {

inline constexpr int model_format_version = 1;

/// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    detail::require(ec == std::errc{}, "cannot format double");
    return std::string(buf.data(), ptr);
}

// ---- study CSV -------------------------------------------------------------

/// `study_id,y,x1..xp`. Studies come back in order of first appearance.
inline std::vector<Study> read_studies_csv(std::istream& in)
{
    std::string line;
    detail::require(static_cast<bool>(std::getline(in, line)), "study CSV is empty");
    const auto header = detail::split_csv_line(line);
    detail::require(header.size() >= 3 && header[0] == "study_id" && header[1] == "y",
                    "study CSV header must start with study_id,y and list at least one covariate");
    const std::size_t p = header.size() - 2;

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::vector<double>>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        const std::string at = "line " + std::to_string(line_no);
        detail::require(cells.size() == header.size(), at + ": expected " + std::to_string(header.size()) +
                                                           " cells, got " + std::to_string(cells.size()));
        detail::require(!cells[0].empty(), at + ": empty study_id");
        std::vector<double> r(p + 1);
        for (std::size_t j = 1; j < cells.size(); ++j)
            r[j - 1] = detail::parse_number<double>(cells[j], at + " " + header[j]);
        if (!rows.contains(cells[0])) order.push_back(cells[0]);
        rows[cells[0]].push_back(std::move(r));
    }
    detail::require(!order.empty(), "study CSV has no data rows");

    std::vector<Study> out;
    for (const auto& id : order) {
        const auto& rs = rows[id];
        Study s{id, VectorXd(static_cast<Index>(rs.size())), MatrixXd(static_cast<Index>(rs.size()), static_cast<Index>(p))};
        for (std::size_t i = 0; i < rs.size(); ++i) {
            s.y(static_cast<Index>(i)) = rs[i][0];
            for (std::size_t j = 0; j < p; ++j) s.x(static_cast<Index>(i), static_cast<Index>(j)) = rs[i][j + 1];
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_studies_csv(std::ostream& out, std::span<const Study> studies)
{
    detail::require(!studies.empty(), "no studies to write");
    const Index p = studies.front().covariates();
    out << "study_id,y";
    for (Index j = 1; j <= p; ++j) out << ",x" << j;
    out << '\n';
    for (const auto& s : studies) {
        detail::require(s.covariates() == p, "studies disagree on covariate count");
        for (Index i = 0; i < s.rows(); ++i) {
            out << s.id << ',' << format_double(s.y(i));
            for (Index j = 0; j < p; ++j) out << ',' << format_double(s.x(i, j));
            out << '\n';
        }
    }
}

// ---- result CSVs -----------------------------------------------------------

inline void write_replicate_csv(std::ostream& out, const ExperimentResult& result)
{
    out << "replicate,method,rmse\n";
    for (const auto& r : result.rows) out << r.replicate << ',' << to_string(r.method) << ',' << format_double(r.rmse) << '\n';
}

inline void write_ratio_summary_csv(std::ostream& out, const std::vector<RatioSummary>& rows,
                                    const std::vector<std::pair<std::string, std::string>>& setting)
{
    for (const auto& [k, v] : setting) out << k << ',';
    out << "ratio,mean,std_error,count\n";
    for (const auto& r : rows) {
        for (const auto& kv : setting) out << kv.second << ',';
        out << to_string(r.numerator) << '/' << to_string(r.denominator) << ',' << format_double(r.mean_ratio) << ','
            << format_double(r.std_error) << ',' << r.count << '\n';
    }
}

inline void write_loco_csv(std::ostream& out, const LocoResult& result)
{
    out << "country,test_year,method,rmse\n";
    for (const auto& r : result.rows)
        out << r.country << ',' << r.test_year << ',' << to_string(r.method) << ',' << format_double(r.rmse) << '\n';
}

/// One row per ratio, one column per test year, like the per-year table.
inline void write_loco_summary_csv(std::ostream& out, const std::vector<SummaryCell>& cells)
{
    std::vector<int> years;
    std::vector<std::string> rows;
    std::map<std::pair<std::string, int>, double> value;
    for (const auto& c : cells) {
        if (std::find(years.begin(), years.end(), c.year) == years.end()) years.push_back(c.year);
        if (std::find(rows.begin(), rows.end(), c.row) == rows.end()) rows.push_back(c.row);
        value[{c.row, c.year}] = c.value;
    }
    std::sort(years.begin(), years.end());
    out << "ratio";
    for (int y : years) out << ',' << y;
    out << '\n';
    for (const auto& r : rows) {
        out << r;
        for (int y : years) {
            out << ',';
            if (auto it = value.find({r, y}); it != value.end()) out << format_double(it->second);
        }
        out << '\n';
    }
}

inline void write_cv_csv(std::ostream& out, const std::vector<CvRecord>& table)
{
    out << "parameter,value,fold,rmse\n";
    for (const auto& r : table)
        out << r.parameter << ',' << format_double(r.value) << ',' << r.fold << ',' << format_double(r.rmse) << '\n';
}

// ---- model documents -------------------------------------------------------

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson vector_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VectorXd vector_from(const ojson& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline ojson standardizer_json(const Standardizer& s)
{
    return {{"means", vector_json(s.means)}, {"sds", vector_json(s.sds)}};
}

inline Standardizer standardizer_from(const ojson& j)
{
    Standardizer s{vector_from(j.at("means")), vector_from(j.at("sds"))};
    require(s.means.size() == s.sds.size(), "standardizer means and sds differ in length");
    return s;
}

inline ojson coefficients_json(const CoefficientMatrix& b)
{
    ojson cols = ojson::object();
    for (std::size_t k = 0; k < b.ids.size(); ++k) cols[b.ids[k]] = vector_json(b.coef.col(static_cast<Index>(k)));
    return cols;
}

inline CoefficientMatrix coefficients_from(const ojson& j)
{
    CoefficientMatrix b;
    std::vector<VectorXd> cols;
    for (const auto& [id, v] : j.items()) {
        b.ids.push_back(id);
        cols.push_back(vector_from(v));
    }
    require(!cols.empty(), "model has no coefficient columns");
    b.coef.resize(cols.front().size(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        require(cols[k].size() == b.coef.rows(), "coefficient columns differ in length");
        b.coef.col(static_cast<Index>(k)) = cols[k];
    }
    return b;
}

inline ojson weights_json(const EnsembleWeights& w)
{
    ojson ws = ojson::object();
    for (std::size_t k = 0; k < w.ids.size(); ++k) ws[w.ids[k]] = w.weights(static_cast<Index>(k));
    return {{"intercept", w.intercept}, {"weights", ws}};
}

inline EnsembleWeights weights_from(const ojson& j)
{
    EnsembleWeights w;
    w.intercept = j.at("intercept").get<double>();
    std::vector<double> v;
    for (const auto& [id, x] : j.at("weights").items()) {
        w.ids.push_back(id);
        v.push_back(x.get<double>());
    }
    w.weights = Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
    return w;
}

inline ojson variant_json(const Variant& v)
{
    ojson j{{"kind", v.name()}};
    if (v.is_specialist()) j["target"] = v.target;
    return j;
}

inline Variant variant_from(const ojson& j)
{
    Variant v{Variant::parse_kind(j.at("kind").get<std::string>()), j.value("target", std::string{})};
    require(!v.is_specialist() || !v.target.empty(), "specialist model has no target");
    return v;
}

inline ojson lambdas_json(const LambdaMap& l)
{
    ojson j = ojson::object();
    for (const auto& [id, v] : l) j[id] = v;
    return j;
}

inline LambdaMap lambdas_from(const ojson& j)
{
    LambdaMap l;
    for (const auto& [id, v] : j.items()) l[id] = v.get<double>();
    return l;
}

inline void check_header(const ojson& j, const std::string& kind)
{
    require(j.is_object(), "model document is not an object");
    require(j.contains("format_version") && j["format_version"] == model_format_version,
            "unsupported model format_version (expected " + std::to_string(model_format_version) + ")");
    require(j.value("model", std::string{}) == kind, "expected a '" + kind + "' model document");
}

inline ojson parse_document(const std::string& text)
{
    try {
        return ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("model document is not valid JSON: ") + e.what());
    }
}

} // namespace detail

inline std::string to_json(const MssModel& m)
{
    detail::ojson j{{"format_version", model_format_version},
                    {"model", "mss"},
                    {"variant", detail::variant_json(m.variant)},
                    {"mu", m.mu},
                    {"lambdas", detail::lambdas_json(m.lambdas)},
                    {"standardizer", detail::standardizer_json(m.standardizer)},
                    {"coefficients", detail::coefficients_json(m.coefficients)},
                    {"ensemble", detail::weights_json(m.weights)}};
    return j.dump(2) + "\n";
}

inline std::string to_json(const OecModel& m)
{
    detail::ojson j{{"format_version", model_format_version},
                    {"model", "oec"},
                    {"variant", detail::variant_json(m.variant)},
                    {"eta", m.eta},
                    {"mu", m.mu},
                    {"tol", m.tol},
                    {"lambdas", detail::lambdas_json(m.lambdas)},
                    {"iterations", m.iterations},
                    {"converged", m.converged},
                    {"final_objective", m.final_objective()},
                    {"objective_trace", m.objective_trace},
                    {"standardizer", detail::standardizer_json(m.standardizer)},
                    {"coefficients", detail::coefficients_json(m.coefficients)},
                    {"ensemble", detail::weights_json(m.alpha)}};
    return j.dump(2) + "\n";
}

inline std::string to_json(const LinearModel& m, double lambda)
{
    detail::ojson j{{"format_version", model_format_version},
                    {"model", "linear"},
                    {"lambda", lambda},
                    {"standardizer", detail::standardizer_json(m.standardizer)},
                    {"coefficients", detail::vector_json(m.coefficients.beta)}};
    return j.dump(2) + "\n";
}

inline MssModel mss_model_from_json(const std::string& text)
{
    const auto j = detail::parse_document(text);
    detail::check_header(j, "mss");
    MssModel m;
    m.variant = detail::variant_from(j.at("variant"));
    m.mu = j.at("mu").get<double>();
    m.lambdas = detail::lambdas_from(j.at("lambdas"));
    m.standardizer = detail::standardizer_from(j.at("standardizer"));
    m.coefficients = detail::coefficients_from(j.at("coefficients"));
    m.weights = detail::weights_from(j.at("ensemble"));
    return m;
}

inline OecModel oec_model_from_json(const std::string& text)
{
    const auto j = detail::parse_document(text);
    detail::check_header(j, "oec");
    OecModel m;
    m.variant = detail::variant_from(j.at("variant"));
    m.eta = j.at("eta").get<double>();
    m.mu = j.at("mu").get<double>();
    m.tol = j.at("tol").get<double>();
    m.lambdas = detail::lambdas_from(j.at("lambdas"));
    m.iterations = j.at("iterations").get<int>();
    m.converged = j.at("converged").get<bool>();
    m.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    m.standardizer = detail::standardizer_from(j.at("standardizer"));
    m.coefficients = detail::coefficients_from(j.at("coefficients"));
    m.alpha = detail::weights_from(j.at("ensemble"));
    return m;
}

} // namespace oec
