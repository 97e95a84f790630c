#pragma once

#include <oec/core.hpp>
#include <oec/methods.hpp>
#include <oec/mortality.hpp>
#include <oec/tuning.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

namespace oec {

struct EmpiricalHyperparameters {
    VectorXd mu_theta;
    MatrixXd sigma_theta;
    std::vector<double> residual_variances;
};

/// Per-study OLS on the raw design. mu is the mean coefficient vector, Sigma
/// the sample covariance (divisor K - 1) of the coefficient vectors, and the
/// pool holds each fit's residual variance (divisor n - p - 1).
inline EmpiricalHyperparameters estimate_empirical_hyperparameters(std::span<const Study> studies)
{
    detail::require(studies.size() >= 2, "need at least 2 studies to estimate hyperparameters");
    const Index p1 = studies.front().covariates() + 1;
    MatrixXd gamma(p1, static_cast<Index>(studies.size()));
    EmpiricalHyperparameters out;
    for (std::size_t k = 0; k < studies.size(); ++k) {
        const auto& s = studies[k];
        s.validate();
        detail::require(s.covariates() + 1 == p1, "study '" + s.id + "' has a different covariate count");
        const MatrixXd d = build_design(s).values;
        Eigen::ColPivHouseholderQR<MatrixXd> qr(d);
        detail::require(qr.rank() == p1 && s.rows() > p1, "study '" + s.id + "' has a rank-deficient design");
        const VectorXd g = qr.solve(s.y);
        gamma.col(static_cast<Index>(k)) = g;
        out.residual_variances.push_back((s.y - d * g).squaredNorm() / static_cast<double>(s.rows() - p1));
    }
    const double kk = static_cast<double>(studies.size());
    out.mu_theta = gamma.rowwise().mean();
    const MatrixXd centered = gamma.colwise() - out.mu_theta;
    out.sigma_theta = centered * centered.transpose() / (kk - 1.0);
    return out;
}

struct DataDrivenSimConfig {
    VectorXd mu_theta;
    MatrixXd sigma_theta;
    double sigma2_theta = 1.0;
    std::vector<double> residual_variance_pool;
    /// Training studies besides the target.
    int K = 5;
    int n_target = 52;
    int n_test = 52;
    int n_min = 104;
    int n_max = 517;
    bool include_linear = true;
    std::uint64_t seed = 0;

    void validate() const
    {
        const Index p1 = include_linear ? 6 : 5;
        detail::require(mu_theta.size() == p1, "mu_theta must have " + std::to_string(p1) + " entries");
        detail::require(sigma_theta.rows() == p1 && sigma_theta.cols() == p1, "Sigma_theta has the wrong shape");
        detail::require(sigma_theta.isApprox(sigma_theta.transpose(), 1e-10), "Sigma_theta must be symmetric");
        detail::require(sigma2_theta >= 0.0, "sigma2_theta must be >= 0");
        detail::require(!residual_variance_pool.empty(), "residual variance pool is empty");
        for (double v : residual_variance_pool) detail::require(v > 0.0, "residual variances must be positive");
        detail::require(K >= 1, "K must be >= 1");
        detail::require(n_target >= 2 && n_test >= 1 && n_min >= 2 && n_max >= n_min, "invalid sample sizes");
    }
};

struct GeneralSimConfig {
    int C = 3;
    int K = 5;
    int p = 20;
    int n_zero_coeffs = 10;
    double sigma2_delta = 1.0;
    double sigma2_x = 1.5;
    int n_min = 150;
    int n_max = 300;
    int n_target = 50;
    int n_test = 100;
    double sigma2_eps_min = 1.0;
    double sigma2_eps_max = 2.0;
    double tau_half_width = 0.05;
    double mu_delta_half_width = 2.0;
    double mu_tilde_mean = 5.0;
    double mu_tilde_var = 10.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        detail::require(C == 3 || C == 6, "C must be 3 or 6");
        detail::require(K == 5, "K must be 5 (six studies in three or six clusters)");
        detail::require(p >= 1 && n_zero_coeffs >= 0 && n_zero_coeffs <= p, "invalid p or zeroed coefficient count");
        detail::require(sigma2_delta >= 0.0 && sigma2_x >= 0.0, "variances must be >= 0");
        detail::require(tau_half_width >= 0.0, "tau range must be >= 0");
        detail::require(sigma2_eps_min > 0.0 && sigma2_eps_max >= sigma2_eps_min, "invalid residual variance range");
        detail::require(n_target >= 2 && n_test >= 1 && n_min >= 2 && n_max >= n_min, "invalid sample sizes");
    }
};

/// One generated data set. `training` holds the auxiliary studies followed by
/// the target's training rows; generalists train on the auxiliaries only.
struct SimulatedData {
    std::vector<Study> training;
    std::string target;
    Study test;
    std::map<std::string, VectorXd> true_coefficients;

    std::vector<Study> auxiliaries() const
    {
        std::vector<Study> out;
        for (const auto& s : training)
            if (s.id != target) out.push_back(s);
        return out;
    }
};

namespace detail {

/// Symmetric square root of a PSD matrix.
inline MatrixXd psd_root(const MatrixXd& m, const std::string& what)
{
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    for (Index i = 0; i < es.eigenvalues().size(); ++i)
        require(es.eigenvalues()(i) >= -1e-10 * scale, what + " is not positive semi-definite");
    const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

inline VectorXd normal_vector(std::mt19937_64& rng, Index n)
{
    std::normal_distribution<double> z(0.0, 1.0);
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = z(rng);
    return v;
}

inline Study linear_study(std::string id, MatrixXd x, const VectorXd& theta, double sigma2, std::mt19937_64& rng)
{
    VectorXd y = build_design(x).values * theta + std::sqrt(sigma2) * normal_vector(rng, x.rows());
    return {std::move(id), std::move(y), std::move(x)};
}

inline std::vector<double> time_range(int from, int to)
{
    std::vector<double> t;
    for (int i = from; i < to; ++i) t.push_back(i);
    return t;
}

} // namespace detail

/// Target trains on weeks [520, 572) and is tested on [572, 624); auxiliary k
/// covers the n_k weeks ending at week 572.
inline SimulatedData simulate_data_driven(const DataDrivenSimConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const MatrixXd root = detail::psd_root(cfg.sigma2_theta * cfg.sigma_theta, "sigma2_theta * Sigma_theta");
    std::uniform_int_distribution<int> n_draw(cfg.n_min, cfg.n_max);
    std::uniform_int_distribution<std::size_t> pool_draw(0, cfg.residual_variance_pool.size() - 1);
    const int split = 572;

    SimulatedData out;
    out.target = "target";
    auto draw_theta = [&] { return VectorXd(cfg.mu_theta + root * detail::normal_vector(rng, cfg.mu_theta.size())); };
    for (int k = 1; k <= cfg.K; ++k) {
        const std::string id = "s" + std::to_string(k);
        const VectorXd theta = draw_theta();
        const double sigma2 = cfg.residual_variance_pool[pool_draw(rng)];
        const int n = n_draw(rng);
        out.training.push_back(detail::linear_study(
            id, fourier_design(detail::time_range(split - n, split), cfg.include_linear), theta, sigma2, rng));
        out.true_coefficients[id] = theta;
    }
    const VectorXd theta = draw_theta();
    const double sigma2 = cfg.residual_variance_pool[pool_draw(rng)];
    out.training.push_back(detail::linear_study(
        out.target, fourier_design(detail::time_range(split - cfg.n_target, split), cfg.include_linear), theta,
        sigma2, rng));
    out.test = detail::linear_study(
        out.target, fourier_design(detail::time_range(split, split + cfg.n_test), cfg.include_linear), theta, sigma2,
        rng);
    out.true_coefficients[out.target] = theta;
    return out;
}

/// Study index -> cluster. Six studies, the last one being the target/test study.
inline std::vector<int> cluster_assignment(int C)
{
    if (C == 6) return {0, 1, 2, 3, 4, 5};
    return {0, 0, 1, 1, 2, 2};
}

/// Five auxiliary studies plus a target study split into training and test
/// rows, drawn from the clustered random-effects model.
inline SimulatedData simulate_general(const GeneralSimConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const Index p = cfg.p;

    VectorXd mu_delta(p + 1);
    for (Index j = 0; j <= p; ++j) mu_delta(j) = uniform(-cfg.mu_delta_half_width, cfg.mu_delta_half_width);
    std::vector<Index> slopes(static_cast<std::size_t>(p));
    std::iota(slopes.begin(), slopes.end(), Index{1});
    std::shuffle(slopes.begin(), slopes.end(), rng);
    for (int i = 0; i < cfg.n_zero_coeffs; ++i) mu_delta(slopes[static_cast<std::size_t>(i)]) = 0.0;

    VectorXd mu_tilde(p);
    for (Index j = 0; j < p; ++j) mu_tilde(j) = cfg.mu_tilde_mean + std::sqrt(cfg.mu_tilde_var) * detail::normal_vector(rng, 1)(0);

    MatrixXd a(p, p);
    for (Index i = 0; i < p; ++i) a.row(i) = detail::normal_vector(rng, p).transpose();
    const MatrixXd sigma_x = a * a.transpose() / static_cast<double>(p);
    const MatrixXd x_root = detail::psd_root(sigma_x, "Sigma_X");

    const auto clusters = cluster_assignment(cfg.C);
    std::vector<VectorXd> delta, zeta;
    for (int c = 0; c < cfg.C; ++c) {
        delta.push_back(mu_delta + std::sqrt(cfg.sigma2_delta) * detail::normal_vector(rng, p + 1));
        zeta.push_back(mu_tilde + std::sqrt(cfg.sigma2_x) * detail::normal_vector(rng, p));
    }

    SimulatedData out;
    out.target = "target";
    std::uniform_int_distribution<int> n_draw(cfg.n_min, cfg.n_max);
    const double half = cfg.sigma2_delta / 20.0;
    for (int k = 0; k <= cfg.K; ++k) {
        const int c = clusters[static_cast<std::size_t>(k)];
        VectorXd theta(p + 1);
        for (Index j = 0; j <= p; ++j) theta(j) = uniform(-half, half);
        VectorXd tau(p);
        for (Index j = 0; j < p; ++j) tau(j) = uniform(-cfg.tau_half_width, cfg.tau_half_width);
        const VectorXd coef = theta + delta[static_cast<std::size_t>(c)];
        const VectorXd mean = zeta[static_cast<std::size_t>(c)] + tau;
        const double sigma2 = uniform(cfg.sigma2_eps_min, cfg.sigma2_eps_max);
        const bool is_target = k == cfg.K;
        const int n = is_target ? cfg.n_target + cfg.n_test : n_draw(rng);
        MatrixXd x(n, p);
        for (int i = 0; i < n; ++i) x.row(i) = (mean + x_root * detail::normal_vector(rng, p)).transpose();
        const std::string id = is_target ? out.target : "s" + std::to_string(k + 1);
        Study s = detail::linear_study(id, std::move(x), coef, sigma2, rng);
        out.true_coefficients[id] = coef;
        if (is_target) {
            std::vector<Index> train(static_cast<std::size_t>(cfg.n_target)), test(static_cast<std::size_t>(cfg.n_test));
            std::iota(train.begin(), train.end(), Index{0});
            std::iota(test.begin(), test.end(), Index{cfg.n_target});
            out.training.push_back(subset(s, train));
            out.test = subset(s, test);
        } else {
            out.training.push_back(std::move(s));
        }
    }
    return out;
}

using GeneratorConfig = std::variant<DataDrivenSimConfig, GeneralSimConfig>;

inline SimulatedData generate(const GeneratorConfig& config, std::uint64_t seed)
{
    return std::visit(
        [seed](auto cfg) {
            cfg.seed = seed;
            if constexpr (std::is_same_v<decltype(cfg), DataDrivenSimConfig>)
                return simulate_data_driven(cfg);
            else
                return simulate_general(cfg);
        },
        config);
}

struct ReplicateRow {
    int replicate = 0;
    Method method = Method::Ssm;
    double rmse = 0.0;
};

struct ReplicateFailure {
    int replicate = 0;
    std::string message;
};

struct ExperimentResult {
    std::vector<ReplicateRow> rows;
    std::vector<ReplicateFailure> failures;
    int replicates = 0;

    /// RMSE of `m` in each successful replicate, in replicate order.
    std::vector<double> rmse_of(Method m) const
    {
        std::vector<double> out;
        for (const auto& r : rows)
            if (r.method == m) out.push_back(r.rmse);
        return out;
    }
};

struct RatioSummary {
    Method numerator = Method::Ssm;
    Method denominator = Method::Ssm;
    double mean_ratio = 0.0;
    /// Standard error of the mean ratio.
    double std_error = 0.0;
    std::size_t count = 0;
};

/// Mean over replicates of RMSE_num / RMSE_den.
inline RatioSummary mean_ratio(const ExperimentResult& result, Method num, Method den)
{
    std::map<int, std::map<Method, double>> by_rep;
    for (const auto& r : result.rows) by_rep[r.replicate][r.method] = r.rmse;
    std::vector<double> ratios;
    for (const auto& [rep, m] : by_rep)
        if (m.count(num) && m.count(den)) ratios.push_back(m.at(num) / m.at(den));
    RatioSummary s{num, den, 0.0, 0.0, ratios.size()};
    if (ratios.empty()) return s;
    for (double r : ratios) s.mean_ratio += r;
    s.mean_ratio /= static_cast<double>(ratios.size());
    if (ratios.size() > 1) {
        double ss = 0.0;
        for (double r : ratios) ss += (r - s.mean_ratio) * (r - s.mean_ratio);
        s.std_error = std::sqrt(ss / static_cast<double>(ratios.size() - 1) / static_cast<double>(ratios.size()));
    }
    return s;
}

/// Ratios reported for each method present: OEC against its stacking
/// counterpart, generalists against ToM, specialists against SSM.
inline std::vector<RatioSummary> summarize(const ExperimentResult& result, const std::vector<Method>& methods)
{
    auto has = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    std::vector<RatioSummary> out;
    for (Method m : methods) {
        if (is_oec(m) && has(mss_counterpart(m))) out.push_back(mean_ratio(result, m, mss_counterpart(m)));
        if (is_generalist(m) && has(Method::Tom)) out.push_back(mean_ratio(result, m, Method::Tom));
        if (!is_generalist(m) && has(Method::Ssm)) out.push_back(mean_ratio(result, m, Method::Ssm));
    }
    return out;
}

struct ExperimentOptions {
    TuningConfig tuning;
    int jobs = 1;
};

/// Tunes and scores `methods` on one generated data set.
inline std::vector<ReplicateRow> run_replicate(const SimulatedData& data, const std::vector<Method>& methods,
                                               TuningConfig tuning, int replicate)
{
    std::vector<Method> special, general;
    for (Method m : methods) (is_generalist(m) ? general : special).push_back(m);
    std::vector<ReplicateRow> rows;
    auto score = [&](const std::vector<Method>& group, const std::vector<Study>& studies, bool tune_tom,
                     std::uint64_t stream) {
        if (group.empty()) return;
        TuningConfig t = tuning;
        t.tune_tom = tune_tom;
        t.seed = detail::sub_seed(tuning.seed, stream);
        const auto report = tune_protocol(studies, oec_variants(group, data.target), t);
        for (Method m : group) {
            const Predictor p = fit_method(m, studies, data.target, report.params);
            rows.push_back({replicate, m, rmse(p(data.test.x), data.test.y)});
        }
    };
    score(special, data.training, false, 0);
    score(general, data.auxiliaries(), true, 1);
    std::stable_sort(rows.begin(), rows.end(), [&](const ReplicateRow& a, const ReplicateRow& b) {
        return std::find(methods.begin(), methods.end(), a.method) < std::find(methods.begin(), methods.end(), b.method);
    });
    return rows;
}

/// Replicate r draws its data from sub_seed(seed, r) and tunes with
/// sub_seed(seed + 1, r), so results do not depend on `jobs`.
inline ExperimentResult run_experiment(const GeneratorConfig& generator, const std::vector<Method>& methods,
                                       int replicates, std::uint64_t seed, const ExperimentOptions& options = {})
{
    detail::require(replicates >= 1, "replicates must be >= 1");
    detail::require(!methods.empty(), "no methods requested");
    std::vector<std::vector<ReplicateRow>> rows(static_cast<std::size_t>(replicates));
    std::vector<std::string> errors(static_cast<std::size_t>(replicates));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < replicates; r = next++) {
            try {
                const SimulatedData data = generate(generator, detail::sub_seed(seed, static_cast<std::uint64_t>(r)));
                TuningConfig t = options.tuning;
                t.seed = detail::sub_seed(seed + 1, static_cast<std::uint64_t>(r));
                rows[static_cast<std::size_t>(r)] = run_replicate(data, methods, t, r);
            } catch (const std::exception& e) {
                errors[static_cast<std::size_t>(r)] = e.what();
                if (errors[static_cast<std::size_t>(r)].empty()) errors[static_cast<std::size_t>(r)] = "unknown error";
            }
        }
    };
    const int jobs = std::clamp(options.jobs, 1, replicates);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }

    ExperimentResult out;
    out.replicates = replicates;
    for (int r = 0; r < replicates; ++r) {
        const auto& e = errors[static_cast<std::size_t>(r)];
        if (!e.empty())
            out.failures.push_back({r, e});
        else
            out.rows.insert(out.rows.end(), rows[static_cast<std::size_t>(r)].begin(),
                            rows[static_cast<std::size_t>(r)].end());
    }
    return out;
}

/// Hyperparameters for the data-driven generator estimated from a mortality
/// corpus, one study per country over its whole series.
inline EmpiricalHyperparameters hyperparameters_from_corpus(std::span<const CountrySeries> corpus,
                                                            bool include_linear = true)
{
    std::vector<Study> studies;
    for (const auto& s : corpus) studies.push_back(country_study(s, include_linear));
    return estimate_empirical_hyperparameters(studies);
}

inline DataDrivenSimConfig data_driven_config(const EmpiricalHyperparameters& hp, double sigma2_theta, int K,
                                              bool include_linear = true)
{
    DataDrivenSimConfig c;
    c.mu_theta = hp.mu_theta;
    c.sigma_theta = hp.sigma_theta;
    c.residual_variance_pool = hp.residual_variances;
    c.sigma2_theta = sigma2_theta;
    c.K = K;
    c.include_linear = include_linear;
    return c;
}

} // namespace oec
