#pragma once

#include <oec/io.hpp>
#include <oec/methods.hpp>
#include <oec/mortality.hpp>
#include <oec/optimal_ensemble.hpp>
#include <oec/simulation.hpp>
#include <oec/tuning.hpp>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace oec::cli {

inline constexpr const char* version = "1.0.0";

enum class Command { SimulateDataDriven, SimulateGeneral, EvaluateMortality, Fit, Tune };

inline const std::vector<std::pair<Command, std::string>>& command_names()
{
    static const std::vector<std::pair<Command, std::string>> names{{Command::SimulateDataDriven, "simulate-datadriven"},
                                                                    {Command::SimulateGeneral, "simulate-general"},
                                                                    {Command::EvaluateMortality, "evaluate-mortality"},
                                                                    {Command::Fit, "fit"},
                                                                    {Command::Tune, "tune"}};
    return names;
}

inline std::string to_string(Command c)
{
    for (const auto& [k, n] : command_names())
        if (k == c) return n;
    return "?";
}

inline bool is_stochastic(Command c) { return c != Command::Fit; }

/// Every key a config document or flag may set.
inline const std::vector<std::string>& known_keys()
{
    static const std::vector<std::string> keys{
        "command",     "seed",         "jobs",        "output-dir",   "replicates",   "variant",
        "eta",         "mu",           "lambda-grid", "eta-grid",     "C",            "sigma2-delta",
        "sigma2-x",    "sigma2-theta", "K",           "no-linear-term", "target-train-weeks", "studies",
        "target",      "stmf",         "hemispheres", "first-year",   "last-year",    "lambda"};
    return keys;
}

using KeyValues = std::map<std::string, std::string>;

/// Raised with every offending field at once.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems))
    {
    }
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p)
    {
        std::string s;
        for (const auto& x : p) s += (s.empty() ? "" : "; ") + x;
        return s;
    }
    std::vector<std::string> problems_;
};

struct RunConfig {
    Command command = Command::SimulateGeneral;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::filesystem::path output_dir = "oec-out";
    int replicates = 10;
    /// Empty: the command's default method set.
    std::vector<Method> methods;
    std::optional<double> eta;
    std::optional<double> mu;
    std::optional<double> lambda;
    std::vector<double> lambda_grid;
    std::vector<double> eta_grid;
    int C = 3;
    double sigma2_delta = 1.0;
    double sigma2_x = 1.5;
    double sigma2_theta = 0.25;
    int K = 5;
    bool include_linear = true;
    int target_train_weeks = 0;
    std::filesystem::path studies;
    std::string target;
    std::filesystem::path stmf;
    std::filesystem::path hemispheres;
    int first_year = 0;
    int last_year = 0;
    /// Merged key/value view, echoed into the manifest.
    KeyValues values;
};

namespace detail {

inline std::string trim(const std::string& s) { return oec::detail::trim(s); }

template <class T>
std::optional<T> number(const std::string& key, const std::string& text, std::vector<std::string>& problems)
{
    T v{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        problems.push_back(key + ": cannot parse '" + text + "' as a number");
        return std::nullopt;
    }
    return v;
}

inline std::vector<double> number_list(const std::string& key, const std::string& text,
                                       std::vector<std::string>& problems)
{
    std::vector<double> out;
    std::istringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) {
        cell = trim(cell);
        if (auto v = number<double>(key, cell, problems)) out.push_back(*v);
    }
    if (out.empty()) problems.push_back(key + ": expected a comma-separated list of numbers");
    return out;
}

inline std::optional<bool> boolean(const std::string& key, const std::string& text, std::vector<std::string>& problems)
{
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    problems.push_back(key + ": expected true or false, got '" + text + "'");
    return std::nullopt;
}

} // namespace detail

/// `key = value` lines; `#` starts a comment.
inline KeyValues parse_document(const std::string& text)
{
    KeyValues out;
    std::vector<std::string> problems;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            problems.push_back("config line " + std::to_string(n) + ": expected key = value");
            continue;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        if (out.contains(key)) problems.push_back("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
        out[key] = detail::trim(line.substr(eq + 1));
    }
    if (!problems.empty()) throw ConfigError(problems);
    return out;
}

/// Flags override document values. Unknown keys and invalid values are all
/// reported together.
inline RunConfig parse_config(const KeyValues& document, const KeyValues& flags)
{
    KeyValues kv = document;
    for (const auto& [k, v] : flags) kv[k] = v;

    std::vector<std::string> problems;
    const auto& keys = known_keys();
    for (const auto& [k, v] : kv)
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) problems.push_back("unknown key '" + k + "'");

    RunConfig c;
    c.values = kv;
    const auto get = [&](const std::string& k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };

    if (const auto* v = get("command")) {
        bool found = false;
        for (const auto& [cmd, name] : command_names())
            if (name == *v) {
                c.command = cmd;
                found = true;
            }
        if (!found) problems.push_back("command: unknown command '" + *v + "'");
    } else {
        problems.push_back("command: missing");
    }

    if (const auto* v = get("seed")) {
        if (auto s = detail::number<std::uint64_t>("seed", *v, problems)) c.seed = *s;
    }
    if (const auto* v = get("jobs")) {
        if (auto j = detail::number<int>("jobs", *v, problems)) {
            if (*j < 1) problems.push_back("jobs: must be >= 1");
            c.jobs = *j;
        }
    }
    if (const auto* v = get("output-dir")) c.output_dir = *v;
    if (const auto* v = get("replicates")) {
        if (auto r = detail::number<int>("replicates", *v, problems)) {
            if (*r < 1) problems.push_back("replicates: must be >= 1");
            c.replicates = *r;
        }
    }
    if (const auto* v = get("variant")) {
        std::istringstream in(*v);
        std::string cell;
        while (std::getline(in, cell, ',')) {
            cell = detail::trim(cell);
            try {
                c.methods.push_back(parse_method(cell));
            } catch (const Error& e) {
                problems.push_back(std::string("variant: ") + e.what());
            }
        }
    }
    if (const auto* v = get("eta")) {
        if (auto e = detail::number<double>("eta", *v, problems)) {
            if (!(*e > 0.0 && *e < 1.0)) problems.push_back("eta: " + *v + " is outside the open interval (0,1)");
            c.eta = *e;
        }
    }
    if (const auto* v = get("mu")) {
        if (auto m = detail::number<double>("mu", *v, problems)) {
            if (!(*m >= 0.0)) problems.push_back("mu: must be >= 0");
            c.mu = *m;
        }
    }
    if (const auto* v = get("lambda")) {
        if (auto l = detail::number<double>("lambda", *v, problems)) {
            if (!(*l >= 0.0)) problems.push_back("lambda: must be >= 0");
            c.lambda = *l;
        }
    }
    if (const auto* v = get("lambda-grid")) {
        c.lambda_grid = detail::number_list("lambda-grid", *v, problems);
        for (double l : c.lambda_grid)
            if (!(l >= 0.0)) problems.push_back("lambda-grid: values must be >= 0");
    }
    if (const auto* v = get("eta-grid")) {
        c.eta_grid = detail::number_list("eta-grid", *v, problems);
        for (double e : c.eta_grid)
            if (!(e > 0.0 && e < 1.0)) problems.push_back("eta-grid: " + format_double(e) + " is outside (0,1)");
    }
    if (const auto* v = get("C")) {
        if (auto x = detail::number<int>("C", *v, problems)) {
            if (*x != 3 && *x != 6) problems.push_back("C: must be 3 or 6");
            c.C = *x;
        }
    }
    if (const auto* v = get("sigma2-delta")) {
        if (auto x = detail::number<double>("sigma2-delta", *v, problems)) {
            if (!(*x >= 0.0)) problems.push_back("sigma2-delta: must be >= 0");
            c.sigma2_delta = *x;
        }
    }
    if (const auto* v = get("sigma2-x")) {
        if (auto x = detail::number<double>("sigma2-x", *v, problems)) {
            if (!(*x >= 0.0)) problems.push_back("sigma2-x: must be >= 0");
            c.sigma2_x = *x;
        }
    }
    if (const auto* v = get("sigma2-theta")) {
        if (auto x = detail::number<double>("sigma2-theta", *v, problems)) {
            if (!(*x >= 0.0)) problems.push_back("sigma2-theta: must be >= 0");
            c.sigma2_theta = *x;
        }
    }
    if (const auto* v = get("K")) {
        if (auto x = detail::number<int>("K", *v, problems)) {
            if (*x < 2) problems.push_back("K: must be >= 2");
            c.K = *x;
        }
    }
    if (const auto* v = get("no-linear-term")) {
        if (auto b = detail::boolean("no-linear-term", *v, problems)) c.include_linear = !*b;
    }
    if (const auto* v = get("target-train-weeks")) {
        if (auto x = detail::number<int>("target-train-weeks", *v, problems)) {
            if (*x < 0) problems.push_back("target-train-weeks: must be >= 0");
            c.target_train_weeks = *x;
        }
    }
    if (const auto* v = get("target")) c.target = *v;
    if (const auto* v = get("first-year")) {
        if (auto x = detail::number<int>("first-year", *v, problems)) c.first_year = *x;
    }
    if (const auto* v = get("last-year")) {
        if (auto x = detail::number<int>("last-year", *v, problems)) c.last_year = *x;
    }
    const auto path = [&](const std::string& k, std::filesystem::path& dst) {
        if (const auto* v = get(k)) {
            dst = *v;
            if (!std::filesystem::exists(dst)) problems.push_back(k + ": no such file '" + *v + "'");
        }
    };
    path("studies", c.studies);
    path("stmf", c.stmf);
    path("hemispheres", c.hemispheres);

    if (get("command")) {
        if (is_stochastic(c.command) && !c.seed) problems.push_back("seed: required for " + to_string(c.command));
        if ((c.command == Command::Fit || c.command == Command::Tune) && c.studies.empty())
            problems.push_back("studies: required for " + to_string(c.command));
        if (c.command == Command::Fit && c.methods.size() != 1)
            problems.push_back("variant: fit needs exactly one method");
        if (c.stmf.empty() != c.hemispheres.empty())
            problems.push_back("stmf and hemispheres must be given together");
        if (c.first_year != 0 && c.last_year != 0 && c.first_year > c.last_year)
            problems.push_back("first-year: must not exceed last-year");
    }
    if (!problems.empty()) throw ConfigError(problems);
    return c;
}

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    oec::detail::require(static_cast<bool>(in), "cannot open '" + p.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Argument vector to a RunConfig. Returns nullopt after printing help.
namespace detail {

inline std::string option_help(const std::string& key)
{
    static const std::map<std::string, std::string> text{
        {"seed", "random seed (required except for fit)"},
        {"jobs", "worker threads for replicates and tasks"},
        {"output-dir", "directory for results (default oec-out)"},
        {"replicates", "number of simulated data sets"},
        {"variant", "comma list of methods: ssm, tom, mss-g, mss-s, mss-sn, oec-g, oec-s, oec-sn"},
        {"eta", "fix eta in (0,1) instead of tuning it"},
        {"mu", "fix the ensemble penalty instead of tuning it"},
        {"lambda", "fix the per-study ridge penalty instead of tuning it"},
        {"lambda-grid", "comma list of ridge penalties to search"},
        {"eta-grid", "comma list of eta values to search"},
        {"C", "number of clusters, 3 or 6"},
        {"sigma2-delta", "between-cluster coefficient variance"},
        {"sigma2-x", "between-cluster covariate-mean variance"},
        {"sigma2-theta", "scale of the coefficient covariance"},
        {"K", "number of auxiliary studies"},
        {"target-train-weeks", "use only the last W weeks of target training data"},
        {"studies", "CSV with columns study_id,y,x1..xp"},
        {"target", "target study id (default: last study in the file)"},
        {"stmf", "weekly deaths CSV: country,year,week,deaths,population|death_rate"},
        {"hemispheres", "JSON map of country to north or south"},
        {"first-year", "first test year"},
        {"last-year", "last test year"},
    };
    const auto it = text.find(key);
    return it == text.end() ? std::string{} : it->second;
}

inline std::string command_help(Command c)
{
    switch (c) {
    case Command::SimulateDataDriven: return "simulation with coefficients drawn around a mortality corpus";
    case Command::SimulateGeneral: return "clustered simulation with covariate shift";
    case Command::EvaluateMortality: return "leave-one-country-out evaluation on weekly mortality data";
    case Command::Fit: return "fit one method to a studies CSV and write model.json";
    case Command::Tune: return "cross-validate hyperparameters on a studies CSV";
    }
    return {};
}

} // namespace detail

inline std::optional<RunConfig> parse_args(const std::vector<std::string>& args, std::ostream& out)
{
    CLI::App app{"Optimal ensemble construction experiments", "oec"};
    app.set_version_flag("--version", version);
    app.require_subcommand(1);

    KeyValues flags;
    std::string config_path;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value config document");
        for (const auto& k : known_keys()) {
            if (k == "command") continue;
            const std::string name = "--" + k;
            if (k == "no-linear-term") {
                sub->add_flag_callback(name, [&flags] { flags["no-linear-term"] = "true"; }, "drop the linear time term");
            } else {
                sub->add_option_function<std::string>(
                    name, [&flags, k](const std::string& v) { flags[k] = v; }, detail::option_help(k));
            }
        }
    };
    for (const auto& [cmd, name] : command_names()) {
        auto* sub = app.add_subcommand(name, detail::command_help(cmd));
        add_common(sub);
        sub->callback([&flags, n = name] { flags["command"] = n; });
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return std::nullopt;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return std::nullopt;
    } catch (const CLI::CallForVersion&) {
        out << version << '\n';
        return std::nullopt;
    } catch (const CLI::ParseError& e) {
        throw ConfigError({std::string(e.what()) + "\n" + app.help()});
    }
    KeyValues document;
    if (!config_path.empty()) document = parse_document(read_file(config_path));
    return parse_config(document, flags);
}

// ---- running ---------------------------------------------------------------

/// Realistic fixture corpus used when no STMF input is given for the
/// data-driven generator: rates in deaths per 1000 per year, one winter peak.
inline SyntheticCorpusConfig reference_corpus_config()
{
    SyntheticCorpusConfig cc;
    cc.countries = 20;
    cc.south_countries = 0;
    cc.first_year = 2010;
    cc.years = 8;
    cc.shared = {10.0, 0.0, 0.5, 1.5, 0.2, 0.4};
    cc.country_sd = {2.0, 0.001, 0.3, 0.5, 0.15, 0.2};
    cc.noise_sd_min = 0.3;
    cc.noise_sd_max = 1.5;
    cc.seed = 0;
    return cc;
}

/// Small fixture for mortality evaluation without real data.
inline SyntheticCorpusConfig mortality_fixture_config(std::uint64_t seed)
{
    SyntheticCorpusConfig cc;
    cc.seed = seed;
    return cc;
}

struct Artifacts {
    std::map<std::string, std::string> files;
    std::string summary;
};

namespace detail {

inline std::vector<CountrySeries> load_corpus(const RunConfig& c, const SyntheticCorpusConfig& fallback)
{
    if (!c.stmf.empty()) {
        std::ifstream in(c.stmf);
        oec::detail::require(static_cast<bool>(in), "cannot open '" + c.stmf.string() + "'");
        const auto records = read_stmf_csv(in);
        return build_series(records, parse_hemispheres(read_file(c.hemispheres)));
    }
    const auto corpus = synthetic_stmf_corpus(fallback);
    return build_series(corpus.records, corpus.hemispheres);
}

inline TuningConfig tuning_from(const RunConfig& c)
{
    TuningConfig t;
    if (!c.lambda_grid.empty()) {
        t.lambda_grid.values = c.lambda_grid;
        t.tom_lambda_grid.values = c.lambda_grid;
    }
    if (!c.eta_grid.empty()) t.eta_grid.values = c.eta_grid;
    if (c.eta) t.eta_grid.values = {*c.eta};
    if (c.mu) {
        t.stack_mu_grid.values = {*c.mu};
        t.oec_mu_grid.values = {*c.mu};
    }
    if (c.lambda) {
        t.lambda_grid.values = {*c.lambda};
        t.tom_lambda_grid.values = {*c.lambda};
    }
    t.seed = c.seed.value_or(0);
    return t;
}

inline std::string summary_table(const std::vector<RatioSummary>& rows, int replicates, std::size_t failures)
{
    std::ostringstream s;
    s << "replicates " << replicates << ", failed " << failures << '\n';
    for (const auto& r : rows) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-16s %8.4f  (se %.4f, n=%zu)\n",
                      (to_string(r.numerator) + "/" + to_string(r.denominator)).c_str(), r.mean_ratio, r.std_error,
                      r.count);
        s << buf;
    }
    return s.str();
}

inline std::vector<std::string> failure_lines(const ExperimentResult& r)
{
    std::vector<std::string> out;
    for (const auto& f : r.failures) out.push_back("replicate " + std::to_string(f.replicate) + ": " + f.message);
    return out;
}

inline Artifacts simulation_artifacts(const ExperimentResult& result, const std::vector<Method>& methods,
                                      const std::vector<std::pair<std::string, std::string>>& setting)
{
    Artifacts a;
    std::ostringstream rows, summary;
    write_replicate_csv(rows, result);
    const auto ratios = summarize(result, methods);
    write_ratio_summary_csv(summary, ratios, setting);
    a.files["results.csv"] = rows.str();
    a.files["summary.csv"] = summary.str();
    a.summary = summary_table(ratios, result.replicates, result.failures.size());
    for (const auto& f : failure_lines(result)) a.summary += f + '\n';
    return a;
}

inline std::vector<Method> methods_or(const RunConfig& c, std::vector<Method> fallback)
{
    return c.methods.empty() ? fallback : c.methods;
}

inline Artifacts simulate_data_driven_cmd(const RunConfig& c)
{
    const auto corpus = load_corpus(c, reference_corpus_config());
    const auto hp = hyperparameters_from_corpus(corpus, c.include_linear);
    const auto gen = data_driven_config(hp, c.sigma2_theta, c.K, c.include_linear);
    const auto methods = methods_or(c, {Method::Ssm, Method::MssS, Method::OecS, Method::MssSn, Method::OecSn});
    ExperimentOptions opt{tuning_from(c), c.jobs};
    spdlog::info("data-driven simulation: K={} sigma2_theta={} replicates={}", c.K, c.sigma2_theta, c.replicates);
    const auto result = run_experiment(gen, methods, c.replicates, *c.seed, opt);
    return simulation_artifacts(result, methods,
                                {{"K", std::to_string(c.K)}, {"sigma2_theta", format_double(c.sigma2_theta)}});
}

inline Artifacts simulate_general_cmd(const RunConfig& c)
{
    GeneralSimConfig g;
    g.C = c.C;
    g.sigma2_delta = c.sigma2_delta;
    g.sigma2_x = c.sigma2_x;
    const auto methods = methods_or(c, all_methods());
    ExperimentOptions opt{tuning_from(c), c.jobs};
    spdlog::info("general simulation: C={} sigma2_x={} sigma2_delta={} replicates={}", c.C, c.sigma2_x,
                 c.sigma2_delta, c.replicates);
    const auto result = run_experiment(g, methods, c.replicates, *c.seed, opt);
    return simulation_artifacts(result, methods,
                                {{"C", std::to_string(c.C)},
                                 {"sigma2_x", format_double(c.sigma2_x)},
                                 {"sigma2_delta", format_double(c.sigma2_delta)}});
}

inline Artifacts evaluate_mortality_cmd(const RunConfig& c)
{
    const auto corpus = load_corpus(c, mortality_fixture_config(*c.seed));
    int first = c.first_year, last = c.last_year;
    if (first == 0 || last == 0) {
        int lo = 1 << 30, hi = -(1 << 30);
        for (const auto& s : corpus)
            for (const auto& r : s.records) {
                lo = std::min(lo, r.year);
                hi = std::max(hi, r.year);
            }
        if (first == 0) first = lo + 2;
        if (last == 0) last = hi;
    }
    LocoOptions lo;
    lo.include_linear = c.include_linear;
    lo.target_train_weeks = c.target_train_weeks;
    const auto tasks = build_loco_tasks(corpus, first, last, lo);
    oec::detail::require(!tasks.empty(), "no evaluable (country, year) tasks in " + std::to_string(first) + "-" +
                                             std::to_string(last));
    const auto methods = methods_or(c, all_methods());
    spdlog::info("mortality evaluation: {} tasks, years {}-{}", tasks.size(), first, last);
    const auto result = evaluate_loco(tasks, methods, tuning_from(c));

    Artifacts a;
    std::ostringstream rows, summary, cv;
    write_loco_csv(rows, result);
    const auto cells = summarize_loco(result);
    write_loco_summary_csv(summary, cells);
    write_cv_csv(cv, result.cv);
    a.files["results.csv"] = rows.str();
    a.files["summary.csv"] = summary.str();
    a.files["cv.csv"] = cv.str();
    std::ostringstream s;
    s << "tasks " << tasks.size() << ", failed " << result.failures.size() << '\n';
    std::map<std::string, std::pair<double, std::size_t>> overall;
    for (const auto& cell : cells) {
        overall[cell.row].first += cell.value * static_cast<double>(cell.count);
        overall[cell.row].second += cell.count;
    }
    for (const auto& [row, acc] : overall) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-16s %8.4f  (tasks=%zu)\n", row.c_str(), acc.first / static_cast<double>(acc.second),
                      acc.second);
        s << buf;
    }
    for (const auto& f : result.failures) s << f.label << ": " << f.message << '\n';
    a.summary = s.str();
    return a;
}

inline std::vector<Study> load_studies(const RunConfig& c)
{
    std::ifstream in(c.studies);
    oec::detail::require(static_cast<bool>(in), "cannot open '" + c.studies.string() + "'");
    return read_studies_csv(in);
}

inline std::string target_of(const RunConfig& c, const std::vector<Study>& studies)
{
    return c.target.empty() ? studies.back().id : c.target;
}

inline Artifacts fit_cmd(const RunConfig& c)
{
    const auto studies = load_studies(c);
    const Method m = c.methods.front();
    const std::string target = target_of(c, studies);
    const double lambda = c.lambda.value_or(0.0);
    LambdaMap lambdas;
    for (const auto& s : studies) lambdas[s.id] = lambda;
    Artifacts a;
    std::ostringstream s;
    s << "method " << to_string(m) << ", " << studies.size() << " studies\n";
    if (is_oec(m)) {
        OecConfig cfg;
        cfg.variant = variant_for(m, target);
        cfg.eta = c.eta.value_or(0.5);
        cfg.mu = c.mu.value_or(0.0);
        cfg.lambdas = lambdas;
        const auto model = oec_fit(cfg, studies);
        a.files["model.json"] = to_json(model);
        s << "eta " << format_double(model.eta) << ", iterations " << model.iterations << ", converged "
          << (model.converged ? "yes" : "no") << ", objective " << format_double(model.final_objective()) << '\n';
    } else if (is_mss(m)) {
        const auto model = mss_fit(studies, variant_for(m, target), lambdas, c.mu.value_or(0.0));
        a.files["model.json"] = to_json(model);
    } else if (m == Method::Tom) {
        a.files["model.json"] = to_json(tom_fit(studies, lambda), lambda);
    } else {
        a.files["model.json"] = to_json(ssm_fit(find_study(studies, target), lambda), lambda);
    }
    a.summary = s.str();
    return a;
}

inline Artifacts tune_cmd(const RunConfig& c)
{
    const auto studies = load_studies(c);
    const std::string target = target_of(c, studies);
    const auto methods = methods_or(c, all_methods());
    TuningConfig t = tuning_from(c);
    t.tune_tom = std::find(methods.begin(), methods.end(), Method::Tom) != methods.end();
    const auto report = tune_protocol(studies, oec_variants(methods, target), t);
    Artifacts a;
    std::ostringstream cv;
    write_cv_csv(cv, report.table);
    a.files["cv.csv"] = cv.str();
    nlohmann::ordered_json j;
    j["target"] = target;
    j["lambdas"] = report.params.lambdas;
    j["stack_mu"] = report.params.stack_mu;
    j["oec_mu"] = report.params.oec_mu;
    j["eta"] = report.params.eta;
    j["tom_lambda"] = report.params.tom_lambda;
    a.files["hyperparameters.json"] = j.dump(2) + "\n";
    a.summary = "tuned on " + std::to_string(studies.size()) + " studies, target " + target + "\n" + j.dump(2) + "\n";
    return a;
}

inline std::string manifest(const RunConfig& c, const std::vector<std::string>& files)
{
    nlohmann::ordered_json j;
    j["command"] = to_string(c.command);
    j["seed"] = c.seed ? nlohmann::ordered_json(*c.seed) : nlohmann::ordered_json(nullptr);
    j["config"] = c.values;
    j["versions"] = {{"oec", version},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    j["artifacts"] = files;
    return j.dump(2) + "\n";
}

inline void write_file(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    oec::detail::require(static_cast<bool>(out), "cannot write '" + p.string() + "'");
    out << text;
}

} // namespace detail

inline std::string error_record(const std::vector<std::string>& problems)
{
    nlohmann::ordered_json j{{"status", "error"}, {"errors", problems}};
    return j.dump() + "\n";
}

/// Runs one command and writes its artifacts, manifest.json and
/// summary.txt into the output directory. Returns the process exit code.
inline int run(const RunConfig& c, std::ostream& out, std::ostream& err)
{
    try {
        Artifacts a;
        switch (c.command) {
        case Command::SimulateDataDriven: a = detail::simulate_data_driven_cmd(c); break;
        case Command::SimulateGeneral: a = detail::simulate_general_cmd(c); break;
        case Command::EvaluateMortality: a = detail::evaluate_mortality_cmd(c); break;
        case Command::Fit: a = detail::fit_cmd(c); break;
        case Command::Tune: a = detail::tune_cmd(c); break;
        }
        std::filesystem::create_directories(c.output_dir);
        std::vector<std::string> names;
        for (const auto& [name, text] : a.files) {
            detail::write_file(c.output_dir / name, text);
            names.push_back(name);
        }
        names.push_back("summary.txt");
        detail::write_file(c.output_dir / "summary.txt", a.summary);
        detail::write_file(c.output_dir / "manifest.json", detail::manifest(c, names));
        out << a.summary;
        return 0;
    } catch (const std::exception& e) {
        const std::string rec = error_record({e.what()});
        err << rec;
        std::error_code ec;
        std::filesystem::create_directories(c.output_dir, ec);
        if (!ec) {
            std::ofstream f(c.output_dir / "error.json");
            f << rec;
        }
        return 1;
    }
}

/// Full entry point: parse, run, report.
inline int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    if (args.empty()) {
        std::ostringstream help;
        try {
            parse_args({"--help"}, help);
        } catch (...) {
        }
        err << help.str();
        return 2;
    }
    std::optional<RunConfig> config;
    try {
        config = parse_args(args, out);
    } catch (const ConfigError& e) {
        err << error_record(e.problems());
        return 2;
    } catch (const std::exception& e) {
        err << error_record({e.what()});
        return 2;
    }
    if (!config) return 0;
    return run(*config, out, err);
}

} // namespace oec::cli
