#include "oracles.hpp"

#include <oec/tuning.hpp>

#include <gtest/gtest.h>

#include <set>

using namespace oec;
using namespace oec::testing;

namespace {

using Address = std::pair<std::size_t, Index>;

std::set<Address> addresses(const std::vector<std::vector<Index>>& rows)
{
    std::set<Address> out;
    for (std::size_t s = 0; s < rows.size(); ++s)
        for (Index r : rows[s]) out.insert({s, r});
    return out;
}

void expect_no_leakage(const FoldPlan& plan)
{
    for (const auto& f : plan.folds) {
        const auto train = addresses(f.train);
        for (const auto& a : addresses(f.validation)) EXPECT_EQ(train.count(a), 0u);
    }
}

/// Every addressed row of the split studies is validated exactly once.
void expect_partition(const FoldPlan& plan, std::span<const Study> studies, const std::set<std::size_t>& split)
{
    std::map<Address, int> seen;
    for (const auto& f : plan.folds)
        for (const auto& a : addresses(f.validation)) ++seen[a];
    for (std::size_t s = 0; s < studies.size(); ++s)
        for (Index r = 0; r < studies[s].rows(); ++r) {
            auto it = seen.find({s, r});
            const int count = it == seen.end() ? 0 : it->second;
            EXPECT_EQ(count, split.count(s) ? 1 : 0) << s << "," << r;
        }
}

MethodFactory ridge_factory()
{
    return [](std::span<const Study> train, double lambda, std::size_t) -> Predictor {
        auto m = std::make_shared<LinearModel>(tom_fit(train, lambda));
        return [m](const MatrixXd& x) { return predict(*m, x); };
    };
}

} // namespace

TEST(MakeFolds, HoldOneStudyOutValidatesEachStudy)
{
    std::mt19937_64 rng(1);
    const auto studies = random_studies(rng, 3, 8, 2);
    const auto plan = make_folds(studies, FoldScheme::HoldOneStudyOut, 99, 0);
    ASSERT_EQ(plan.size(), 3u);
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t s = 0; s < 3; ++s) {
            EXPECT_EQ(plan.folds[f].validation[s].size(), f == s ? 8u : 0u);
            EXPECT_EQ(plan.folds[f].train[s].size(), f == s ? 0u : 8u);
        }
    expect_no_leakage(plan);
}

TEST(MakeFolds, StudyBalancedSplitsEveryStudyEvenly)
{
    std::mt19937_64 rng(2);
    const auto studies = random_studies(rng, 2, 10, 1);
    const auto plan = make_folds(studies, FoldScheme::StudyBalanced, 5, 42);
    ASSERT_EQ(plan.size(), 5u);
    for (const auto& f : plan.folds)
        for (std::size_t s = 0; s < 2; ++s) {
            EXPECT_EQ(f.validation[s].size(), 2u);
            EXPECT_EQ(f.train[s].size(), 8u);
        }
    expect_partition(plan, studies, {0, 1});
    expect_no_leakage(plan);
}

TEST(MakeFolds, WithinStudyPartitionsTargetOnly)
{
    std::mt19937_64 rng(3);
    const auto studies = random_studies(rng, 3, 17, 1);
    const auto plan = make_folds(studies, FoldScheme::WithinStudy, 4, 5, "s1");
    expect_partition(plan, studies, {1});
    expect_no_leakage(plan);
    for (const auto& f : plan.folds) {
        EXPECT_EQ(f.train[0].size(), 17u);
        EXPECT_EQ(f.train[2].size(), 17u);
        EXPECT_EQ(f.train[1].size() + f.validation[1].size(), 17u);
    }
}

TEST(MakeFolds, TimeSeriesValidationFollowsTraining)
{
    std::mt19937_64 rng(4);
    const auto studies = random_studies(rng, 2, 52, 1);
    const auto plan = make_folds(studies, FoldScheme::TimeSeriesSplit, 4, 0, "s0");
    ASSERT_EQ(plan.size(), 4u);
    expect_no_leakage(plan);
    for (const auto& f : plan.folds) {
        ASSERT_FALSE(f.train[0].empty());
        ASSERT_FALSE(f.validation[0].empty());
        EXPECT_LT(*std::max_element(f.train[0].begin(), f.train[0].end()),
                  *std::min_element(f.validation[0].begin(), f.validation[0].end()));
        EXPECT_EQ(f.train[1].size(), 52u);
    }
    EXPECT_EQ(plan.folds.back().validation[0].back(), 51);
}

TEST(MakeFolds, Errors)
{
    std::mt19937_64 rng(5);
    const auto studies = random_studies(rng, 2, 3, 1);
    EXPECT_THROW(make_folds(studies, FoldScheme::StudyBalanced, 4, 0), Error);
    EXPECT_THROW(make_folds(studies, FoldScheme::WithinStudy, 1, 0, "s0"), Error);
    EXPECT_THROW(make_folds(studies, FoldScheme::WithinStudy, 2, 0, "zz"), Error);
}

TEST(MakeFolds, SameSeedSamePlan)
{
    std::mt19937_64 rng(6);
    const auto studies = random_studies(rng, 3, 20, 1);
    const auto a = make_folds(studies, FoldScheme::StudyBalanced, 3, 9);
    const auto b = make_folds(studies, FoldScheme::StudyBalanced, 3, 9);
    for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(a.folds[f].validation, b.folds[f].validation);
}

TEST(Grid, DefaultsAndValidation)
{
    const Grid eta = default_eta_grid();
    ASSERT_EQ(eta.values.size(), 21u);
    EXPECT_DOUBLE_EQ(eta.values.front(), 0.01);
    EXPECT_DOUBLE_EQ(eta.values.back(), 0.99);
    EXPECT_NO_THROW(eta.validate());
    const Grid pen = default_penalty_grid(Parameter::Mu);
    ASSERT_EQ(pen.values.size(), 8u);
    EXPECT_NEAR(pen.values.front(), 1e-4, 1e-18);
    EXPECT_NEAR(pen.values.back(), 1e2, 1e-12);
    EXPECT_THROW((Grid{{}, Parameter::Mu}.validate()), Error);
    EXPECT_THROW((Grid{{1.0, 1.0}, Parameter::Mu}.validate()), Error);
    EXPECT_THROW((Grid{{0.5, 1.0}, Parameter::Eta}.validate()), Error);
}

TEST(TuneParameter, SingleValueIsReturned)
{
    std::mt19937_64 rng(7);
    const auto studies = random_studies(rng, 3, 10, 2);
    const auto plan = make_folds(studies, FoldScheme::HoldOneStudyOut, 3, 0);
    EXPECT_EQ(tune_parameter(studies, ridge_factory(), {{0.7}, Parameter::TomLambda}, plan).best, 0.7);
}

TEST(TuneParameter, NoiselessDataPrefersNoPenalty)
{
    std::mt19937_64 rng(8);
    const VectorXd beta = (VectorXd(4) << 1.0, -2.0, 0.5, 3.0).finished();
    std::vector<Study> studies{random_study(rng, "a", 20, 3, beta, 0.0), random_study(rng, "b", 20, 3, beta, 0.0)};
    const auto plan = make_folds(studies, FoldScheme::StudyBalanced, 4, 1);
    const auto r = tune_parameter(studies, ridge_factory(), {{0.0, 1.0, 10.0}, Parameter::TomLambda}, plan);
    EXPECT_EQ(r.best, 0.0);
    EXPECT_LT(r.mean_rmse[0], 1e-10);
}

TEST(TuneParameter, TableMatchesNaiveLoop)
{
    std::mt19937_64 rng(9);
    const auto studies = random_studies(rng, 2, 9, 2);
    const auto plan = make_folds(studies, FoldScheme::StudyBalanced, 3, 4);
    const Grid grid{{0.0, 0.5}, Parameter::TomLambda};
    const auto r = tune_parameter(studies, ridge_factory(), grid, plan);
    ASSERT_EQ(r.table.size(), 6u);
    std::size_t at = 0;
    for (double lambda : grid.values)
        for (std::size_t f = 0; f < 3; ++f, ++at) {
            std::vector<Study> train, valid;
            for (std::size_t s = 0; s < 2; ++s) {
                train.push_back(subset(studies[s], plan.folds[f].train[s]));
                valid.push_back(subset(studies[s], plan.folds[f].validation[s]));
            }
            const LinearModel m = tom_fit(train, lambda);
            double sse = 0.0;
            int n = 0;
            for (const auto& v : valid) {
                const VectorXd p = predict(m, v.x);
                for (Index i = 0; i < v.rows(); ++i, ++n) sse += (p(i) - v.y(i)) * (p(i) - v.y(i));
            }
            EXPECT_EQ(r.table[at].value, lambda);
            EXPECT_EQ(r.table[at].fold, f);
            EXPECT_NEAR(r.table[at].rmse, std::sqrt(sse / n), 1e-12);
        }
}

TEST(TuneParameter, TiesGoToSmallestValue)
{
    std::mt19937_64 rng(10);
    const auto studies = random_studies(rng, 2, 10, 1);
    const auto plan = make_folds(studies, FoldScheme::HoldOneStudyOut, 2, 0);
    MethodFactory constant = [](std::span<const Study>, double, std::size_t) -> Predictor {
        return [](const MatrixXd& x) { return VectorXd::Zero(x.rows()).eval(); };
    };
    EXPECT_EQ(tune_parameter(studies, constant, {{0.1, 0.2, 0.3}, Parameter::Mu}, plan).best, 0.1);
}

TEST(TuneParameter, HoldOneStudyOutIgnoresOrder)
{
    std::mt19937_64 rng(11);
    const auto studies = random_studies(rng, 3, 12, 2, 1.0);
    const std::vector<Study> reversed{studies[2], studies[1], studies[0]};
    const Grid grid{{0.0, 0.1, 1.0}, Parameter::TomLambda};
    const auto a = tune_parameter(studies, ridge_factory(), grid, make_folds(studies, FoldScheme::HoldOneStudyOut, 3, 0));
    const auto b =
        tune_parameter(reversed, ridge_factory(), grid, make_folds(reversed, FoldScheme::HoldOneStudyOut, 3, 0));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.mean_rmse[i], b.mean_rmse[i], 1e-10);
}

TEST(TuneParameter, FoldErrorsCarryContext)
{
    std::mt19937_64 rng(12);
    const auto studies = random_studies(rng, 2, 10, 1);
    const auto plan = make_folds(studies, FoldScheme::HoldOneStudyOut, 2, 0);
    MethodFactory broken = [](std::span<const Study>, double, std::size_t) -> Predictor {
        throw Error("boom");
    };
    try {
        tune_parameter(studies, broken, {{0.5}, Parameter::Mu}, plan);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("fold 0"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
    }
}

TEST(TuneProtocol, PicksFromGridsAndIsDeterministic)
{
    std::mt19937_64 rng(13);
    const auto studies = random_studies(rng, 3, 24, 2, 0.5);
    const std::vector<Variant> variants{Variant::generalist(), Variant::specialist("s0"),
                                        Variant::specialist_no_reuse("s0")};
    TuningConfig cfg;
    cfg.seed = 5;
    cfg.eta_grid = {{0.1, 0.5, 0.9}, Parameter::Eta};
    cfg.lambda_grid = {{1e-3, 1e-1, 10.0}, Parameter::LambdaK};
    cfg.stack_mu_grid = {{1e-3, 1.0}, Parameter::StackMu};
    cfg.oec_mu_grid = {{1e-3, 1.0}, Parameter::Mu};
    cfg.tom_lambda_grid = {{1e-3, 1.0}, Parameter::TomLambda};
    const auto a = tune_protocol(studies, variants, cfg);
    const auto b = tune_protocol(studies, variants, cfg);
    auto in = [](double v, const Grid& g) { return std::find(g.values.begin(), g.values.end(), v) != g.values.end(); };
    for (const auto& s : studies) EXPECT_TRUE(in(a.params.lambdas.at(s.id), cfg.lambda_grid));
    EXPECT_TRUE(in(a.params.stack_mu, cfg.stack_mu_grid));
    EXPECT_TRUE(in(a.params.oec_mu, cfg.oec_mu_grid));
    EXPECT_TRUE(in(a.params.tom_lambda, cfg.tom_lambda_grid));
    for (const auto& v : variants) EXPECT_TRUE(in(a.params.eta_for(v), cfg.eta_grid));
    ASSERT_EQ(a.table.size(), b.table.size());
    for (std::size_t i = 0; i < a.table.size(); ++i) EXPECT_EQ(a.table[i].rmse, b.table[i].rmse);

    cfg.study_ridge = false;
    cfg.ensemble_ridge = false;
    const auto plain = tune_protocol(studies, variants, cfg);
    for (const auto& s : studies) EXPECT_EQ(plain.params.lambdas.at(s.id), 0.0);
    EXPECT_EQ(plain.params.stack_mu, 0.0);
    EXPECT_EQ(plain.params.oec_mu, 0.0);
    EXPECT_EQ(plain.params.tom_lambda, 0.0);
}
