#pragma once

// Weekly mortality pipeline: STMF-style ingest, population interpolation,
// annualized death rates, the seasonal design and leave-one-country-out tasks.

#include <oec/core.hpp>
#include <oec/methods.hpp>
#include <oec/tuning.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oec {

enum class Hemisphere { North, South };

struct WeeklyRecord {
    std::string country;
    int year = 0;
    int iso_week = 1;
    double deaths = 0.0;
    std::optional<double> population_annual;
    std::optional<double> death_rate_reported;
};

/// Number of ISO weeks (52 or 53) in `year`.
inline int iso_weeks_in_year(int year)
{
    using namespace std::chrono;
    auto monday_of_week1 = [](int y) {
        const sys_days jan4{std::chrono::year{y} / January / 4};
        return jan4 - days{weekday{jan4}.iso_encoding() - 1};
    };
    return static_cast<int>((monday_of_week1(year + 1) - monday_of_week1(year)).count() / 7);
}

/// Weeks since ISO week 1 of 2000.
inline long global_week_index(int year, int iso_week)
{
    using namespace std::chrono;
    const sys_days jan4{std::chrono::year{year} / January / 4};
    const sys_days week1 = jan4 - days{weekday{jan4}.iso_encoding() - 1};
    const sys_days origin = sys_days{std::chrono::year{2000} / January / 3}; // Monday of 2000-W01
    return static_cast<long>((week1 - origin).count() / 7) + iso_week - 1;
}

/// Calendar-aligned time used inside the design: 52 weeks per year, ISO week
/// 53 shares week 52's value, so seasonal phase is the same every year.
inline double model_time(int year, int iso_week)
{
    return 52.0 * (year - 2000) + std::min(iso_week, 52) - 1;
}

/// Model time of the mid-year population (ISO week 26).
inline double mid_year_time(int year) { return model_time(year, 26); }

inline void validate(const WeeklyRecord& r)
{
    const std::string where = r.country + " " + std::to_string(r.year) + "-W" + std::to_string(r.iso_week);
    detail::require(!r.country.empty(), "record with empty country");
    detail::require(r.iso_week >= 1 && r.iso_week <= iso_weeks_in_year(r.year), "invalid ISO week in " + where);
    detail::require(std::isfinite(r.deaths) && r.deaths >= 0.0, "negative or non-finite deaths in " + where);
    detail::require(r.population_annual || r.death_rate_reported,
                    "neither population nor death rate given in " + where);
    if (r.population_annual) detail::require(*r.population_annual > 0.0, "nonpositive population in " + where);
    if (r.death_rate_reported) detail::require(*r.death_rate_reported > 0.0, "nonpositive death rate in " + where);
}

struct CountrySeries {
    std::string country;
    Hemisphere hemisphere = Hemisphere::North;
    /// Ordered by week; `t` holds the matching global week indices.
    std::vector<WeeklyRecord> records;
    std::vector<long> t;

    std::size_t size() const { return records.size(); }
};

namespace detail {

inline std::string trim(std::string s)
{
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& what)
{
    T value{};
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    detail::require(ec == std::errc{} && ptr == end, "cannot parse " + what + " '" + s + "'");
    return value;
}

} // namespace detail

/// Reads `country,year,week,deaths,population` rows; a `death_rate` column
/// may replace or accompany `population`. Empty cells count as missing.
inline std::vector<WeeklyRecord> read_stmf_csv(std::istream& in)
{
    std::string line;
    detail::require(static_cast<bool>(std::getline(in, line)), "STMF input is empty");
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* need : {"country", "year", "week", "deaths"})
        detail::require(col.count(need), std::string("STMF header lacks column '") + need + "'");
    detail::require(col.count("population") || col.count("death_rate"),
                    "STMF header needs a 'population' or 'death_rate' column");

    std::vector<WeeklyRecord> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        const std::string where = "line " + std::to_string(line_no);
        detail::require(cells.size() == header.size(), where + ": expected " + std::to_string(header.size()) +
                                                           " fields, got " + std::to_string(cells.size()));
        WeeklyRecord r;
        r.country = cells[col["country"]];
        r.year = detail::parse_number<int>(cells[col["year"]], where + " year");
        r.iso_week = detail::parse_number<int>(cells[col["week"]], where + " week");
        r.deaths = detail::parse_number<double>(cells[col["deaths"]], where + " deaths");
        if (col.count("population") && !cells[col["population"]].empty())
            r.population_annual = detail::parse_number<double>(cells[col["population"]], where + " population");
        if (col.count("death_rate") && !cells[col["death_rate"]].empty())
            r.death_rate_reported = detail::parse_number<double>(cells[col["death_rate"]], where + " death_rate");
        try {
            validate(r);
        } catch (const Error& e) {
            detail::fail(where + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

using HemisphereMap = std::map<std::string, Hemisphere>;

/// JSON object mapping country id to "north" or "south".
inline HemisphereMap parse_hemispheres(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        detail::fail(std::string("hemisphere map: ") + e.what());
    }
    detail::require(j.is_object(), "hemisphere map must be a JSON object");
    HemisphereMap out;
    for (const auto& [country, v] : j.items()) {
        detail::require(v.is_string(), "hemisphere for '" + country + "' must be a string");
        const auto s = v.get<std::string>();
        if (s == "north")
            out[country] = Hemisphere::North;
        else if (s == "south")
            out[country] = Hemisphere::South;
        else
            detail::fail("hemisphere for '" + country + "' must be \"north\" or \"south\", got \"" + s + "\"");
    }
    return out;
}

inline std::string hemispheres_to_json(const HemisphereMap& map)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [c, h] : map) j[c] = h == Hemisphere::North ? "north" : "south";
    return j.dump(2) + "\n";
}

/// Groups records by country in id order and sorts each series by week.
inline std::vector<CountrySeries> build_series(std::span<const WeeklyRecord> records, const HemisphereMap& hemispheres)
{
    std::map<std::string, CountrySeries> by_country;
    for (const auto& r : records) {
        validate(r);
        auto& s = by_country[r.country];
        s.country = r.country;
        s.records.push_back(r);
    }
    std::vector<CountrySeries> out;
    for (auto& [id, s] : by_country) {
        auto it = hemispheres.find(id);
        detail::require(it != hemispheres.end(), "no hemisphere given for country '" + id + "'");
        s.hemisphere = it->second;
        std::sort(s.records.begin(), s.records.end(), [](const WeeklyRecord& a, const WeeklyRecord& b) {
            return std::pair(a.year, a.iso_week) < std::pair(b.year, b.iso_week);
        });
        for (const auto& r : s.records) {
            const long t = global_week_index(r.year, r.iso_week);
            detail::require(s.t.empty() || t > s.t.back(), "duplicate week " + std::to_string(r.year) + "-W" +
                                                               std::to_string(r.iso_week) + " for '" + id + "'");
            s.t.push_back(t);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// The first `count` records of a series.
inline CountrySeries truncate(const CountrySeries& s, std::size_t count)
{
    CountrySeries out{s.country, s.hemisphere, {}, {}};
    count = std::min(count, s.size());
    out.records.assign(s.records.begin(), s.records.begin() + static_cast<long>(count));
    out.t.assign(s.t.begin(), s.t.begin() + static_cast<long>(count));
    return out;
}

/// Records strictly before global week `t_end`.
inline CountrySeries before(const CountrySeries& s, long t_end)
{
    return truncate(s, static_cast<std::size_t>(std::lower_bound(s.t.begin(), s.t.end(), t_end) - s.t.begin()));
}

/// Mid-year population per year. Given populations are averaged within a
/// year; otherwise the median of the weekly values deaths / reported rate.
inline std::map<int, double> annual_populations(const CountrySeries& s)
{
    std::map<int, std::vector<double>> given, implied;
    for (const auto& r : s.records) {
        if (r.population_annual)
            given[r.year].push_back(*r.population_annual);
        else if (r.death_rate_reported && r.deaths > 0.0)
            implied[r.year].push_back(r.deaths / *r.death_rate_reported);
    }
    std::map<int, double> out;
    for (auto& [year, v] : given) {
        double sum = 0.0;
        for (double x : v) sum += x;
        out[year] = sum / static_cast<double>(v.size());
    }
    for (auto& [year, v] : implied) {
        if (out.count(year)) continue;
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        out[year] = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    }
    return out;
}

struct PopulationFit {
    double intercept = 0.0;
    double slope = 0.0;
    /// Latest year that entered the fit.
    int last_year = 0;

    double at(double time) const { return intercept + slope * time; }
};

/// Least-squares line through the mid-year populations against model time.
inline PopulationFit fit_population(const CountrySeries& s)
{
    const auto annual = annual_populations(s);
    detail::require(annual.size() >= 2, "country '" + s.country + "' needs at least 2 annual population values, has " +
                                            std::to_string(annual.size()));
    double mt = 0.0, mp = 0.0;
    for (const auto& [year, n] : annual) {
        mt += mid_year_time(year);
        mp += n;
    }
    const double k = static_cast<double>(annual.size());
    mt /= k;
    mp /= k;
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [year, n] : annual) {
        const double dt = mid_year_time(year) - mt;
        sxy += dt * (n - mp);
        sxx += dt * dt;
    }
    PopulationFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = mp - fit.slope * mt;
    fit.last_year = annual.rbegin()->first;
    return fit;
}

/// Weekly population estimates for every record of `s`.
inline VectorXd interpolate_population(const CountrySeries& s, const PopulationFit& fit)
{
    VectorXd p(static_cast<Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i)
        p(static_cast<Index>(i)) = fit.at(model_time(s.records[i].year, s.records[i].iso_week));
    return p;
}

inline VectorXd interpolate_population(const CountrySeries& s) { return interpolate_population(s, fit_population(s)); }

/// Annualized deaths per 1000: 1000 * 52 * C / P.
inline double death_rate(double deaths, double population)
{
    detail::require(population > 0.0, "nonpositive population estimate " + std::to_string(population));
    return 1000.0 * 52.0 * deaths / population;
}

inline VectorXd compute_rates(const CountrySeries& s, const VectorXd& population)
{
    detail::require(population.size() == static_cast<Index>(s.size()), "compute_rates: population length mismatch");
    VectorXd y(population.size());
    for (Index i = 0; i < y.size(); ++i) {
        try {
            y(i) = death_rate(s.records[static_cast<std::size_t>(i)].deaths, population(i));
        } catch (const Error& e) {
            detail::fail("country '" + s.country + "': " + e.what());
        }
    }
    return y;
}

inline VectorXd compute_rates(const CountrySeries& s) { return compute_rates(s, interpolate_population(s)); }

/// Columns [t (optional), sin(2 pi t/52), cos(2 pi t/52), sin(4 pi t/52), cos(4 pi t/52)].
inline MatrixXd fourier_design(std::span<const double> t, bool include_linear = true)
{
    detail::require(!t.empty(), "fourier_design: no time values");
    const Index offset = include_linear ? 1 : 0;
    MatrixXd x(static_cast<Index>(t.size()), offset + 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const Index r = static_cast<Index>(i);
        if (include_linear) x(r, 0) = t[i];
        for (int j = 1; j <= 2; ++j) {
            const double arg = 2.0 * std::numbers::pi * j * t[i] / 52.0;
            x(r, offset + 2 * (j - 1)) = std::sin(arg);
            x(r, offset + 2 * (j - 1) + 1) = std::cos(arg);
        }
    }
    return x;
}

inline std::vector<double> model_times(const CountrySeries& s)
{
    std::vector<double> t;
    for (const auto& r : s.records) t.push_back(model_time(r.year, r.iso_week));
    return t;
}

/// The whole series as a study: rates against the seasonal design.
inline Study country_study(const CountrySeries& s, bool include_linear = true)
{
    const auto t = model_times(s);
    return {s.country, compute_rates(s), fourier_design(t, include_linear)};
}

struct LocoOptions {
    bool include_linear = true;
    /// 0: the whole ISO year before the test year; otherwise the last W weeks.
    int target_train_weeks = 0;
    std::size_t min_auxiliary_weeks = 100;
};

struct LocoTask {
    std::string target;
    int test_year = 0;
    long test_start = 0;
    Study target_train;
    Study target_test;
    std::vector<Study> auxiliaries;
    /// Global week index of every training row: target first, then auxiliaries.
    std::vector<std::vector<long>> train_weeks;
    std::vector<long> test_weeks;
    /// Latest population year used for any training input.
    int population_year_max = 0;

    /// Auxiliaries followed by the target's training year.
    std::vector<Study> training_studies() const
    {
        std::vector<Study> out = auxiliaries;
        out.push_back(target_train);
        return out;
    }
};

/// Training rows dated at or after the test start, plus one if any population
/// value from the test year or later fed the training rates.
inline std::size_t leakage_violations(const LocoTask& task)
{
    std::size_t bad = 0;
    for (const auto& weeks : task.train_weeks)
        for (long t : weeks) bad += t >= task.test_start;
    if (task.population_year_max >= task.test_year) ++bad;
    return bad;
}

namespace detail {

inline Study rows_as_study(const std::string& id, const CountrySeries& s, const VectorXd& rates, std::size_t first,
                           std::size_t last, bool include_linear)
{
    std::vector<double> t;
    VectorXd y(static_cast<Index>(last - first));
    for (std::size_t i = first; i < last; ++i) {
        t.push_back(model_time(s.records[i].year, s.records[i].iso_week));
        y(static_cast<Index>(i - first)) = rates(static_cast<Index>(i));
    }
    return {id, y, fourier_design(t, include_linear)};
}

} // namespace detail

/// Leave-one-country-out tasks. For each Northern-hemisphere target and test
/// year the target trains on the preceding year only (every week present) and
/// is tested on all its records in the test year. Auxiliaries are the other
/// countries with at least `min_auxiliary_weeks` records before the test
/// start and contribute all of them. Rates are computed from populations of
/// years before the test year only, so no later record reaches training.
inline std::vector<LocoTask> build_loco_tasks(std::span<const CountrySeries> corpus, int first_year, int last_year,
                                              const LocoOptions& options = {})
{
    detail::require(!corpus.empty(), "build_loco_tasks: empty corpus");
    std::vector<LocoTask> tasks;
    for (int year = first_year; year <= last_year; ++year) {
        const long test_start = global_week_index(year, 1);
        const long test_end = global_week_index(year + 1, 1);
        const long train_start = options.target_train_weeks > 0 ? test_start - options.target_train_weeks
                                                                : global_week_index(year - 1, 1);
        for (const auto& target : corpus) {
            if (target.hemisphere != Hemisphere::North) continue;
            const auto lo = std::lower_bound(target.t.begin(), target.t.end(), train_start) - target.t.begin();
            const auto mid = std::lower_bound(target.t.begin(), target.t.end(), test_start) - target.t.begin();
            const auto hi = std::lower_bound(target.t.begin(), target.t.end(), test_end) - target.t.begin();
            if (mid - lo != test_start - train_start || hi == mid) continue;

            const CountrySeries past = before(target, test_start);
            if (annual_populations(past).size() < 2) continue;
            const PopulationFit pop = fit_population(past);
            const VectorXd rates = compute_rates(target, interpolate_population(target, pop));

            LocoTask task;
            task.target = target.country;
            task.test_year = year;
            task.test_start = test_start;
            task.population_year_max = pop.last_year;
            task.target_train = detail::rows_as_study(target.country, target, rates, static_cast<std::size_t>(lo),
                                                      static_cast<std::size_t>(mid), options.include_linear);
            task.target_test = detail::rows_as_study(target.country, target, rates, static_cast<std::size_t>(mid),
                                                     static_cast<std::size_t>(hi), options.include_linear);
            task.train_weeks.emplace_back(target.t.begin() + lo, target.t.begin() + mid);
            task.test_weeks.assign(target.t.begin() + mid, target.t.begin() + hi);

            for (const auto& aux : corpus) {
                if (aux.country == target.country) continue;
                const CountrySeries a = before(aux, test_start);
                if (a.size() < options.min_auxiliary_weeks) continue;
                if (annual_populations(a).size() < 2) continue;
                const PopulationFit apop = fit_population(a);
                task.population_year_max = std::max(task.population_year_max, apop.last_year);
                task.auxiliaries.push_back(
                    detail::rows_as_study(a.country, a, compute_rates(a, interpolate_population(a, apop)), 0, a.size(),
                                          options.include_linear));
                task.train_weeks.push_back(a.t);
            }
            if (task.auxiliaries.empty()) continue;
            tasks.push_back(std::move(task));
        }
    }
    return tasks;
}

struct LocoRow {
    std::string country;
    int test_year = 0;
    Method method = Method::Ssm;
    double rmse = 0.0;
};

struct TaskFailure {
    std::string label;
    std::string message;
};

struct LocoResult {
    std::vector<LocoRow> rows;
    std::vector<TaskFailure> failures;
    std::vector<CvRecord> cv;
};

struct SummaryCell {
    std::string row;
    int year = 0;
    double value = 0.0;
    std::size_t count = 0;
};

/// Per test year: mean RMSE_method / RMSE_SSM, and mean RMSE_OEC / RMSE_MSS for
/// each OEC method whose counterpart was run.
inline std::vector<SummaryCell> summarize_loco(const LocoResult& result)
{
    std::map<std::pair<std::string, int>, std::map<Method, double>> by_task;
    for (const auto& r : result.rows) by_task[{r.country, r.test_year}][r.method] = r.rmse;
    std::map<std::pair<std::string, int>, std::pair<double, std::size_t>> acc;
    std::vector<std::string> order;
    auto add = [&](const std::string& row, int year, double v) {
        if (std::find(order.begin(), order.end(), row) == order.end()) order.push_back(row);
        auto& a = acc[{row, year}];
        a.first += v;
        ++a.second;
    };
    for (const auto& [key, m] : by_task) {
        const int year = key.second;
        for (const auto& [method, value] : m) {
            if (m.count(Method::Ssm)) add(to_string(method) + "/ssm", year, value / m.at(Method::Ssm));
            if (is_oec(method) && method != Method::OecG && m.count(mss_counterpart(method)))
                add(to_string(method) + "/" + to_string(mss_counterpart(method)), year,
                    value / m.at(mss_counterpart(method)));
        }
    }
    std::vector<SummaryCell> out;
    for (const auto& row : order)
        for (const auto& [key, a] : acc)
            if (key.first == row) out.push_back({row, key.second, a.first / static_cast<double>(a.second), a.second});
    return out;
}

/// Tunes and fits every method on each task and scores the test year.
/// Generalist methods train on the same studies as the specialists.
inline LocoResult evaluate_loco(std::span<const LocoTask> tasks, const std::vector<Method>& methods,
                                TuningConfig tuning)
{
    detail::require(!tasks.empty(), "evaluate_loco: no tasks");
    detail::require(!methods.empty(), "evaluate_loco: no methods");
    LocoResult out;
    tuning.specialist_scheme = FoldScheme::TimeSeriesSplit;
    tuning.tune_tom = std::find(methods.begin(), methods.end(), Method::Tom) != methods.end();
    const std::uint64_t base_seed = tuning.seed;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& task = tasks[i];
        const std::string label = task.target + " " + std::to_string(task.test_year);
        try {
            detail::require(leakage_violations(task) == 0, "training data reaches into the test year");
            const auto studies = task.training_studies();
            tuning.seed = detail::sub_seed(base_seed, i);
            const auto report = tune_protocol(studies, oec_variants(methods, task.target), tuning);
            std::vector<LocoRow> rows;
            for (Method m : methods) {
                const Predictor p = fit_method(m, studies, task.target, report.params);
                rows.push_back({task.target, task.test_year, m, rmse(p(task.target_test.x), task.target_test.y)});
            }
            out.rows.insert(out.rows.end(), rows.begin(), rows.end());
            for (auto r : report.table) {
                r.parameter = label + ":" + r.parameter;
                out.cv.push_back(std::move(r));
            }
        } catch (const std::exception& e) {
            out.failures.push_back({label, e.what()});
        }
    }
    return out;
}

struct SyntheticCorpusConfig {
    int countries = 5;
    int south_countries = 1;
    int first_year = 2013;
    int years = 6;
    /// Shared coefficients on [1, t, sin1, cos1, sin2, cos2] in model time.
    std::vector<double> shared{9.0, 0.002, 0.4, 1.2, 0.15, 0.3};
    /// Sd of each country's deviation from `shared` (same layout).
    std::vector<double> country_sd{0.8, 0.0005, 0.15, 0.3, 0.08, 0.1};
    /// Per-country residual sd is drawn uniformly from this range.
    double noise_sd_min = 0.3;
    double noise_sd_max = 0.9;
    std::uint64_t seed = 0;
};

struct SyntheticCorpus {
    std::vector<WeeklyRecord> records;
    HemisphereMap hemispheres;
    /// Planted coefficients per country.
    std::map<std::string, std::vector<double>> coefficients;
};

/// STMF-format fixture with a planted seasonal rate model per country.
/// Every second country reports death rates instead of populations.
inline SyntheticCorpus synthetic_stmf_corpus(const SyntheticCorpusConfig& cfg)
{
    detail::require(cfg.countries >= 1 && cfg.years >= 1, "synthetic corpus needs countries and years");
    detail::require(cfg.shared.size() == 6 && cfg.country_sd.size() == 6, "synthetic corpus coefficients need 6 values");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    SyntheticCorpus out;
    for (int c = 0; c < cfg.countries; ++c) {
        const std::string country = (c < 10 ? "C0" : "C") + std::to_string(c);
        out.hemispheres[country] = c >= cfg.countries - cfg.south_countries ? Hemisphere::South : Hemisphere::North;
        std::vector<double> coef(6);
        for (int j = 0; j < 6; ++j) coef[static_cast<std::size_t>(j)] =
            cfg.shared[static_cast<std::size_t>(j)] + cfg.country_sd[static_cast<std::size_t>(j)] * normal(rng);
        const double noise = cfg.noise_sd_min + (cfg.noise_sd_max - cfg.noise_sd_min) * unif(rng);
        const double pop0 = 2e6 + 8e6 * unif(rng);
        const double growth = 0.01 * (unif(rng) - 0.3);
        const bool report_rate = c % 2 == 1;
        // Southern seasons are shifted by half a year.
        const double phase = out.hemispheres[country] == Hemisphere::South ? 26.0 : 0.0;
        for (int y = cfg.first_year; y < cfg.first_year + cfg.years; ++y) {
            const double population = std::round(pop0 * (1.0 + growth * (y - cfg.first_year)));
            for (int w = 1; w <= iso_weeks_in_year(y); ++w) {
                const double t = model_time(y, w);
                const double s = 2.0 * std::numbers::pi * (t + phase) / 52.0;
                const double rate = coef[0] + coef[1] * t + coef[2] * std::sin(s) + coef[3] * std::cos(s) +
                                    coef[4] * std::sin(2 * s) + coef[5] * std::cos(2 * s) + noise * normal(rng);
                WeeklyRecord r;
                r.country = country;
                r.year = y;
                r.iso_week = w;
                r.deaths = std::max(1.0, std::round(rate * population / 52000.0));
                if (report_rate)
                    r.death_rate_reported = r.deaths / population;
                else
                    r.population_annual = population;
                out.records.push_back(std::move(r));
            }
        }
        out.coefficients[country] = std::move(coef);
    }
    return out;
}

} // namespace oec
