#pragma once

#include <oec/core.hpp>
#include <oec/optimal_ensemble.hpp>
#include <oec/stacking.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace oec {

enum class FoldScheme { WithinStudy, StudyBalanced, HoldOneStudyOut, TimeSeriesSplit };

inline std::string to_string(FoldScheme s)
{
    switch (s) {
    case FoldScheme::WithinStudy: return "within-study";
    case FoldScheme::StudyBalanced: return "study-balanced";
    case FoldScheme::HoldOneStudyOut: return "hold-one-study-out";
    case FoldScheme::TimeSeriesSplit: return "time-series-split";
    }
    return "?";
}

/// Row indices per study, positions matching FoldPlan::ids.
struct Fold {
    std::vector<std::vector<Index>> train;
    std::vector<std::vector<Index>> validation;
};

struct FoldPlan {
    FoldScheme scheme = FoldScheme::StudyBalanced;
    std::vector<std::string> ids;
    std::vector<Fold> folds;

    std::size_t size() const { return folds.size(); }
};

namespace detail {

inline std::vector<Index> iota_rows(Index n)
{
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    return rows;
}

inline std::vector<Index> shuffled_rows(Index n, std::mt19937_64& rng)
{
    auto rows = iota_rows(n);
    std::shuffle(rows.begin(), rows.end(), rng);
    return rows;
}

/// Assign shuffled positions round-robin to folds, then sort each part.
inline std::vector<std::vector<Index>> random_parts(Index n, std::size_t n_folds, std::mt19937_64& rng)
{
    std::vector<std::vector<Index>> parts(n_folds);
    const auto rows = shuffled_rows(n, rng);
    for (std::size_t i = 0; i < rows.size(); ++i) parts[i % n_folds].push_back(rows[i]);
    for (auto& p : parts) std::sort(p.begin(), p.end());
    return parts;
}

} // namespace detail

/// Builds cross-validation folds over (study, row) addresses.
///
/// WithinStudy and TimeSeriesSplit split only `target`; every other study is
/// kept whole in each training portion. TimeSeriesSplit assumes the target's
/// rows are in time order and forward-chains n_folds + 1 contiguous blocks.
inline FoldPlan make_folds(std::span<const Study> studies, FoldScheme scheme, std::size_t n_folds,
                           std::uint64_t seed, const std::string& target = {})
{
    detail::require(!studies.empty(), "make_folds: no studies");
    const std::size_t k = studies.size();
    if (scheme == FoldScheme::HoldOneStudyOut) {
        detail::require(k >= 2, "make_folds: hold-one-study-out needs at least 2 studies");
        n_folds = k;
    }
    detail::require(n_folds >= 2, "make_folds: need at least 2 folds");

    FoldPlan plan;
    plan.scheme = scheme;
    for (const auto& s : studies) plan.ids.push_back(s.id);
    plan.folds.assign(n_folds, Fold{std::vector<std::vector<Index>>(k), std::vector<std::vector<Index>>(k)});
    std::mt19937_64 rng(seed);

    auto whole_in_train = [&](std::size_t s) {
        const auto all = detail::iota_rows(studies[s].rows());
        for (auto& f : plan.folds) f.train[s] = all;
    };

    switch (scheme) {
    case FoldScheme::HoldOneStudyOut:
        for (std::size_t f = 0; f < k; ++f)
            for (std::size_t s = 0; s < k; ++s) {
                auto rows = detail::iota_rows(studies[s].rows());
                (s == f ? plan.folds[f].validation[s] : plan.folds[f].train[s]) = std::move(rows);
            }
        break;
    case FoldScheme::StudyBalanced:
        for (std::size_t s = 0; s < k; ++s) {
            detail::require(static_cast<std::size_t>(studies[s].rows()) >= n_folds,
                            "make_folds: study '" + studies[s].id + "' has fewer rows than folds");
            const auto parts = detail::random_parts(studies[s].rows(), n_folds, rng);
            for (std::size_t f = 0; f < n_folds; ++f)
                for (std::size_t g = 0; g < n_folds; ++g) {
                    auto& dst = g == f ? plan.folds[f].validation[s] : plan.folds[f].train[s];
                    dst.insert(dst.end(), parts[g].begin(), parts[g].end());
                }
            for (auto& fold : plan.folds) std::sort(fold.train[s].begin(), fold.train[s].end());
        }
        break;
    case FoldScheme::WithinStudy:
    case FoldScheme::TimeSeriesSplit: {
        const std::string id = target.empty() && k == 1 ? studies.front().id : target;
        std::size_t t = k;
        for (std::size_t s = 0; s < k; ++s)
            if (studies[s].id == id) t = s;
        detail::require(t < k, "make_folds: target study '" + id + "' not found");
        for (std::size_t s = 0; s < k; ++s)
            if (s != t) whole_in_train(s);
        const Index n = studies[t].rows();
        if (scheme == FoldScheme::WithinStudy) {
            detail::require(static_cast<std::size_t>(n) >= n_folds,
                            "make_folds: study '" + id + "' has fewer rows than folds");
            const auto parts = detail::random_parts(n, n_folds, rng);
            for (std::size_t f = 0; f < n_folds; ++f) {
                plan.folds[f].validation[t] = parts[f];
                for (std::size_t g = 0; g < n_folds; ++g)
                    if (g != f) plan.folds[f].train[t].insert(plan.folds[f].train[t].end(), parts[g].begin(),
                                                              parts[g].end());
                std::sort(plan.folds[f].train[t].begin(), plan.folds[f].train[t].end());
            }
        } else {
            const std::size_t blocks = n_folds + 1;
            detail::require(static_cast<std::size_t>(n) >= blocks,
                            "make_folds: study '" + id + "' has fewer rows than time blocks");
            auto edge = [&](std::size_t b) { return static_cast<Index>(b * static_cast<std::size_t>(n) / blocks); };
            for (std::size_t f = 0; f < n_folds; ++f) {
                for (Index i = 0; i < edge(f + 1); ++i) plan.folds[f].train[t].push_back(i);
                for (Index i = edge(f + 1); i < edge(f + 2); ++i) plan.folds[f].validation[t].push_back(i);
            }
        }
        break;
    }
    }
    return plan;
}

/// Training and validation studies for one fold. Studies with no rows in a
/// portion are left out of it.
struct FoldData {
    std::vector<Study> train;
    std::vector<Study> validation;
};

inline FoldData split_fold(std::span<const Study> studies, const FoldPlan& plan, std::size_t fold)
{
    detail::require(fold < plan.size(), "split_fold: fold index out of range");
    detail::require(plan.ids.size() == studies.size(), "split_fold: plan does not match studies");
    FoldData out;
    const auto& f = plan.folds[fold];
    for (std::size_t s = 0; s < studies.size(); ++s) {
        detail::require(plan.ids[s] == studies[s].id, "split_fold: plan does not match studies");
        if (!f.train[s].empty()) out.train.push_back(subset(studies[s], f.train[s]));
        if (!f.validation[s].empty()) out.validation.push_back(subset(studies[s], f.validation[s]));
    }
    return out;
}

enum class Parameter { Eta, Mu, LambdaK, StackMu, TomLambda };

inline std::string to_string(Parameter p)
{
    switch (p) {
    case Parameter::Eta: return "eta";
    case Parameter::Mu: return "oec_mu";
    case Parameter::LambdaK: return "lambda";
    case Parameter::StackMu: return "stack_mu";
    case Parameter::TomLambda: return "tom_lambda";
    }
    return "?";
}

struct Grid {
    std::vector<double> values;
    Parameter parameter = Parameter::Eta;

    void validate() const
    {
        detail::require(!values.empty(), to_string(parameter) + " grid is empty");
        for (std::size_t i = 1; i < values.size(); ++i)
            detail::require(values[i] > values[i - 1], to_string(parameter) + " grid is not strictly increasing");
        for (double v : values) {
            detail::require(std::isfinite(v) && v >= 0.0, to_string(parameter) + " grid has a negative value");
            if (parameter == Parameter::Eta)
                detail::require(v > 0.0 && v < 1.0, "eta grid values must lie in (0,1)");
        }
    }
};

/// {0.01, 0.05, 0.10, ..., 0.95, 0.99}
inline Grid default_eta_grid()
{
    Grid g{{0.01}, Parameter::Eta};
    for (int i = 1; i <= 19; ++i) g.values.push_back(0.05 * i);
    g.values.push_back(0.99);
    return g;
}

/// 8 log-spaced values from 1e-4 to 1e2.
inline Grid default_penalty_grid(Parameter p)
{
    Grid g{{}, p};
    for (int i = 0; i < 8; ++i) g.values.push_back(std::pow(10.0, -4.0 + 6.0 * i / 7.0));
    return g;
}

struct CvRecord {
    std::string parameter;
    double value = 0.0;
    std::size_t fold = 0;
    double rmse = 0.0;
};

struct TuneResult {
    double best = 0.0;
    /// Mean validation RMSE per grid value, in grid order.
    std::vector<double> mean_rmse;
    std::vector<CvRecord> table;
};

using Predictor = std::function<VectorXd(const MatrixXd&)>;
/// Fits on a fold's training studies at one grid value. The fold index lets a
/// factory keep per-fold state across grid values.
using MethodFactory = std::function<Predictor(std::span<const Study> train, double value, std::size_t fold)>;

/// Grid search by cross-validation. Each fold is scored by RMSE over all of
/// its validation rows; the grid value with the lowest mean wins, ties going
/// to the smaller value.
inline TuneResult tune_parameter(std::span<const Study> studies, const MethodFactory& factory, const Grid& grid,
                                 const FoldPlan& plan, const std::string& label = {})
{
    grid.validate();
    detail::require(plan.size() >= 1, "tune_parameter: empty fold plan");
    const std::string name = label.empty() ? to_string(grid.parameter) : label;
    std::vector<FoldData> data;
    for (std::size_t f = 0; f < plan.size(); ++f) data.push_back(split_fold(studies, plan, f));

    TuneResult out;
    for (double value : grid.values) {
        double total = 0.0;
        for (std::size_t f = 0; f < plan.size(); ++f) {
            const auto& d = data[f];
            double sse = 0.0;
            Index count = 0;
            try {
                detail::require(!d.train.empty() && !d.validation.empty(), "fold has an empty portion");
                const Predictor predict_fn = factory(d.train, value, f);
                for (const auto& v : d.validation) {
                    const VectorXd pred = predict_fn(v.x);
                    sse += (pred - v.y).squaredNorm();
                    count += v.rows();
                }
            } catch (const std::exception& e) {
                detail::fail("tuning " + name + " = " + std::to_string(value) + ", fold " + std::to_string(f) +
                             ": " + e.what());
            }
            const double rmse = std::sqrt(sse / static_cast<double>(count));
            out.table.push_back({name, value, f, rmse});
            total += rmse;
        }
        out.mean_rmse.push_back(total / static_cast<double>(plan.size()));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.mean_rmse.size(); ++i)
        if (out.mean_rmse[i] < out.mean_rmse[best]) best = i;
    out.best = grid.values[best];
    return out;
}

struct TuningConfig {
    /// Tune per-study and pooled-model ridge penalties; otherwise they are 0.
    bool study_ridge = true;
    /// Tune the stacking and OEC ensemble-weight penalties; otherwise they are 0.
    bool ensemble_ridge = true;
    /// 0 means one fold per study.
    std::size_t n_folds = 0;
    /// Scheme for splitting the target study when tuning specialists.
    FoldScheme specialist_scheme = FoldScheme::WithinStudy;
    Grid lambda_grid = default_penalty_grid(Parameter::LambdaK);
    Grid stack_mu_grid = default_penalty_grid(Parameter::StackMu);
    Grid oec_mu_grid = default_penalty_grid(Parameter::Mu);
    Grid eta_grid = default_eta_grid();
    Grid tom_lambda_grid = default_penalty_grid(Parameter::TomLambda);
    /// Fixed eta while the OEC mu is tuned.
    double mu_tuning_eta = 0.5;
    bool tune_tom = true;
    std::uint64_t seed = 0;
};

struct Hyperparameters {
    LambdaMap lambdas;
    double stack_mu = 0.0;
    double oec_mu = 0.0;
    /// Keyed by Variant::name().
    std::map<std::string, double> eta;
    double tom_lambda = 0.0;

    double eta_for(const Variant& v) const
    {
        auto it = eta.find(v.name());
        detail::require(it != eta.end(), "no tuned eta for " + v.name());
        return it->second;
    }
};

struct TuningReport {
    Hyperparameters params;
    std::vector<CvRecord> table;
};

namespace detail {

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline void append(std::vector<CvRecord>& dst, const TuneResult& r)
{
    dst.insert(dst.end(), r.table.begin(), r.table.end());
}

} // namespace detail

/// Runs the tuning protocol in order: per-study ridge penalties on
/// within-study folds, the stacking mu with the generalist stacker on
/// study-balanced folds, the OEC mu with the generalist OEC on the same folds,
/// eta for each requested OEC variant, then the pooled-model lambda on
/// hold-one-study-out folds.
///
/// Specialist eta folds split the target only (scheme from the config);
/// generalist eta folds are study-balanced.
inline TuningReport tune_protocol(std::span<const Study> studies, std::span<const Variant> oec_variants,
                                  const TuningConfig& config)
{
    detail::require(!studies.empty(), "tune_protocol: no studies");
    for (const auto& v : oec_variants) v.validate(studies);
    const std::size_t n_folds = config.n_folds == 0 ? std::max<std::size_t>(2, studies.size()) : config.n_folds;
    TuningReport report;
    auto& hp = report.params;

    // Penalties are tuned on pooled-standardized covariates so that they mean
    // the same thing as inside the stacked fits.
    const auto z = standardize(studies, fit_standardizer(studies));
    std::uint64_t stream = 0;

    if (config.study_ridge) {
        for (const auto& s : z) {
            const bool is_target = std::any_of(oec_variants.begin(), oec_variants.end(), [&](const Variant& v) {
                return v.is_specialist() && v.target == s.id;
            });
            const FoldScheme scheme = is_target ? config.specialist_scheme : FoldScheme::WithinStudy;
            const std::vector<Study> one{s};
            const auto plan = make_folds(one, scheme, n_folds, detail::sub_seed(config.seed, stream++), s.id);
            MethodFactory ridge = [](std::span<const Study> train, double lambda, std::size_t) -> Predictor {
                const Study& t = train.front();
                const auto d = build_design(t);
                CoefficientVector b = ridge_fit(d, t.y, lambda, PenaltyMask(d.cols()), static_cast<double>(t.rows()));
                return [b](const MatrixXd& x) { return predict(build_design(x), b); };
            };
            const auto r = tune_parameter(one, ridge, config.lambda_grid, plan, "lambda:" + s.id);
            hp.lambdas[s.id] = r.best;
            detail::append(report.table, r);
        }
    } else {
        for (const auto& s : studies) hp.lambdas[s.id] = 0.0;
    }

    const bool multi = studies.size() >= 2;
    if (config.ensemble_ridge && multi) {
        const auto balanced = make_folds(studies, FoldScheme::StudyBalanced, n_folds,
                                         detail::sub_seed(config.seed, stream++));
        MethodFactory stack = [&](std::span<const Study> train, double mu, std::size_t) -> Predictor {
            auto m = std::make_shared<MssModel>(mss_fit(train, Variant::generalist(), hp.lambdas, mu));
            return [m](const MatrixXd& x) { return mss_predict(*m, x); };
        };
        auto r = tune_parameter(studies, stack, config.stack_mu_grid, balanced);
        hp.stack_mu = r.best;
        detail::append(report.table, r);

        MethodFactory joint = [&](std::span<const Study> train, double mu, std::size_t) -> Predictor {
            OecConfig c;
            c.variant = Variant::generalist();
            c.eta = config.mu_tuning_eta;
            c.mu = mu;
            c.lambdas = hp.lambdas;
            auto m = std::make_shared<OecModel>(oec_fit(c, train));
            return [m](const MatrixXd& x) { return oec_predict(*m, x); };
        };
        r = tune_parameter(studies, joint, config.oec_mu_grid, balanced);
        hp.oec_mu = r.best;
        detail::append(report.table, r);
    }

    for (const auto& v : oec_variants) {
        const auto plan =
            v.is_specialist()
                ? make_folds(studies, config.specialist_scheme, n_folds, detail::sub_seed(config.seed, stream++),
                             v.target)
                : make_folds(studies, FoldScheme::StudyBalanced, n_folds, detail::sub_seed(config.seed, stream++));
        // Ascending eta on a fold starts from the fold's previous solution.
        std::vector<std::shared_ptr<const OecModel>> previous(plan.size());
        MethodFactory fit = [&](std::span<const Study> train, double eta, std::size_t fold) -> Predictor {
            OecConfig c;
            c.variant = v;
            c.eta = eta;
            c.mu = hp.oec_mu;
            c.lambdas = hp.lambdas;
            if (const auto& prev = previous[fold]; prev && prev->eta < eta) c.init = warm_start(*prev);
            auto m = std::make_shared<const OecModel>(oec_fit(c, train));
            previous[fold] = m;
            return [m](const MatrixXd& x) { return oec_predict(*m, x); };
        };
        const auto r = tune_parameter(studies, fit, config.eta_grid, plan, "eta:" + v.name());
        hp.eta[v.name()] = r.best;
        detail::append(report.table, r);
    }

    if (config.study_ridge && config.tune_tom && multi) {
        const auto plan = make_folds(studies, FoldScheme::HoldOneStudyOut, studies.size(), 0);
        MethodFactory tom = [](std::span<const Study> train, double lambda, std::size_t) -> Predictor {
            auto m = std::make_shared<LinearModel>(tom_fit(train, lambda));
            return [m](const MatrixXd& x) { return predict(*m, x); };
        };
        const auto r = tune_parameter(studies, tom, config.tom_lambda_grid, plan);
        hp.tom_lambda = r.best;
        detail::append(report.table, r);
    }
    return report;
}

} // namespace oec
