#include "oracles.hpp"

#include <oec/stacking.hpp>

#include <gtest/gtest.h>

#include <algorithm>

using namespace oec;
using namespace oec::testing;

TEST(FitSsls, IdenticalStudiesGiveIdenticalColumns)
{
    std::mt19937_64 rng(1);
    auto studies = random_studies(rng, 1, 20, 3);
    Study copy = studies[0];
    copy.id = "copy";
    studies.push_back(copy);
    const auto b = fit_ssls(studies, {{"s0", 0.3}, {"copy", 0.3}});
    EXPECT_EQ(b.coef.col(0), b.coef.col(1));
}

TEST(FitSsls, MatchesPerStudyOracle)
{
    std::mt19937_64 rng(2);
    const auto studies = random_studies(rng, 3, 25, 4);
    const LambdaMap lambdas{{"s0", 0.0}, {"s2", 1.5}};
    const auto b = fit_ssls(studies, lambdas);
    ASSERT_EQ(b.ids, (std::vector<std::string>{"s0", "s1", "s2"}));
    for (const auto& s : studies) {
        const VectorXd ref = ridge_qr_oracle(build_design(s).values, s.y, lambda_for(lambdas, s.id), 25.0);
        EXPECT_LT((b.column(s.id) - ref).cwiseAbs().maxCoeff(), 1e-9) << s.id;
    }
}

TEST(FitSsls, MismatchedCovariatesThrow)
{
    std::mt19937_64 rng(3);
    auto studies = random_studies(rng, 2, 10, 2);
    studies[1].x = random_matrix(rng, 10, 3);
    EXPECT_THROW(fit_ssls(studies, {}), Error);
}

TEST(BuildStackedMatrix, SingleStudyIsLearnerFit)
{
    std::mt19937_64 rng(4);
    const auto studies = random_studies(rng, 1, 15, 2);
    const auto b = fit_ssls(studies, {});
    const MatrixXd z = build_stacked_matrix(b, studies, Variant::generalist());
    ASSERT_EQ(z.cols(), 1);
    EXPECT_LT((z.col(0) - naive_matvec(build_design(studies[0]).values, b.coef.col(0))).cwiseAbs().maxCoeff(),
              1e-12);
}

TEST(BuildStackedMatrix, ElementwiseOracle)
{
    std::mt19937_64 rng(5);
    const auto studies = random_studies(rng, 3, 7, 2);
    const CoefficientMatrix b{{"s0", "s1", "s2"}, random_matrix(rng, 3, 3)};
    const MatrixXd z = build_stacked_matrix(b, studies, Variant::generalist());
    ASSERT_EQ(z.rows(), 21);
    Index row = 0;
    for (const auto& s : studies)
        for (Index i = 0; i < s.rows(); ++i, ++row)
            for (Index k = 0; k < 3; ++k) {
                const double expect = b.coef(0, k) + s.x(i, 0) * b.coef(1, k) + s.x(i, 1) * b.coef(2, k);
                EXPECT_NEAR(z(row, k), expect, 1e-12);
            }
}

TEST(BuildStackedMatrix, SpecialistShapes)
{
    std::mt19937_64 rng(6);
    const auto studies = random_studies(rng, 4, 9, 2);
    const CoefficientMatrix b{{"s0", "s1", "s2", "s3"}, random_matrix(rng, 3, 4)};
    const MatrixXd s = build_stacked_matrix(b, studies, Variant::specialist("s2"));
    EXPECT_EQ(s.rows(), 9);
    EXPECT_EQ(s.cols(), 4);
    const MatrixXd sn = build_stacked_matrix(b, studies, Variant::specialist_no_reuse("s2"));
    EXPECT_EQ(sn.cols(), 3);
    EXPECT_EQ(sn.col(2), s.col(3));
    EXPECT_THROW(build_stacked_matrix(b, studies, Variant::specialist("nope")), Error);
}

TEST(MssFit, SingleStudyTakesFullWeight)
{
    std::mt19937_64 rng(7);
    const auto studies = random_studies(rng, 1, 30, 3);
    const MssModel m = mss_fit(studies, Variant::generalist(), {}, 0.0);
    EXPECT_NEAR(m.weights.intercept, 0.0, 1e-10);
    EXPECT_NEAR(m.weights.weights(0), 1.0, 1e-10);
}

TEST(MssFit, SpecialistFavoursMatchingStudy)
{
    std::mt19937_64 rng(8);
    const VectorXd shared = (VectorXd(3) << 1.0, 2.0, -1.0).finished();
    const VectorXd other = (VectorXd(3) << -1.0, -2.0, 3.0).finished();
    std::vector<Study> studies{random_study(rng, "a", 60, 2, shared, 0.1),
                               random_study(rng, "b", 60, 2, shared, 0.1),
                               random_study(rng, "c", 60, 2, other, 0.1)};
    const MssModel m = mss_fit(studies, Variant::specialist_no_reuse("a"), {}, 0.0);
    EXPECT_GT(m.weights.weight("b"), 0.9);
    EXPECT_LT(m.weights.weight("c"), 0.05);
}

TEST(MssFit, WeightsSatisfyKkt)
{
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto studies = random_studies(rng, 4, 20, 3, 1.0);
        for (const auto& v : {Variant::generalist(), Variant::specialist("s1"), Variant::specialist_no_reuse("s1")}) {
            const MssModel m = mss_fit(studies, v, {{"s0", 0.1}}, 0.05);
            const auto z = standardize(studies, m.standardizer);
            const MatrixXd stacked = build_stacked_matrix(m.coefficients, z, v);
            const VectorXd g =
                stacking_gradient(stacked, ensemble_outcome(z, v), 0.05, m.weights.intercept, m.weights.weights);
            EXPECT_LE(std::abs(g(0)), 1e-9);
            for (Index j = 0; j < m.weights.weights.size(); ++j) {
                EXPECT_GE(m.weights.weights(j), 0.0);
                if (m.weights.weights(j) > 0)
                    EXPECT_LE(std::abs(g(j + 1)), 1e-9);
                else
                    EXPECT_GE(g(j + 1), -1e-9);
            }
        }
    }
}

TEST(MssFit, RelabelingStudiesPermutesOutput)
{
    std::mt19937_64 rng(10);
    const auto studies = random_studies(rng, 3, 20, 2, 1.0);
    const MssModel m = mss_fit(studies, Variant::specialist("s1"), {{"s0", 0.2}}, 0.01);
    std::vector<Study> renamed{studies[2], studies[0], studies[1]};
    renamed[0].id = "z";
    renamed[1].id = "x";
    renamed[2].id = "y";
    const MssModel r = mss_fit(renamed, Variant::specialist("y"), {{"x", 0.2}}, 0.01);
    EXPECT_NEAR(r.weights.weight("x"), m.weights.weight("s0"), 1e-9);
    EXPECT_NEAR(r.weights.weight("y"), m.weights.weight("s1"), 1e-9);
    EXPECT_NEAR(r.weights.weight("z"), m.weights.weight("s2"), 1e-9);
    const MatrixXd x = random_matrix(rng, 5, 2);
    EXPECT_LT((mss_predict(r, x) - mss_predict(m, x)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MssFit, NoReuseLearnersIgnoreTargetOutcome)
{
    std::mt19937_64 rng(11);
    const auto studies = random_studies(rng, 3, 20, 2);
    auto moved = studies;
    moved[0].y = random_vector(rng, 20);
    const auto v = Variant::specialist_no_reuse("s0");
    const MssModel a = mss_fit(studies, v, {}, 0.0);
    const MssModel b = mss_fit(moved, v, {}, 0.0);
    EXPECT_EQ(a.coefficients.coef, b.coefficients.coef);
    EXPECT_EQ(a.coefficients.ids, (std::vector<std::string>{"s1", "s2"}));
}

TEST(TomFit, MatchesMergedOls)
{
    std::mt19937_64 rng(12);
    const auto studies = random_studies(rng, 3, 15, 3);
    const LinearModel m = tom_fit(studies, 0.0);
    const MatrixXd x = ensemble_covariates(studies, Variant::generalist());
    const VectorXd y = ensemble_outcome(studies, Variant::generalist());
    const VectorXd ref = ridge_qr_oracle(build_design(x).values, y, 0.0, 45.0);
    const MatrixXd probe = random_matrix(rng, 10, 3);
    EXPECT_LT((predict(m, probe) - naive_matvec(build_design(probe).values, ref)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TomFit, DuplicatingEveryStudyChangesNothing)
{
    std::mt19937_64 rng(13);
    const auto studies = random_studies(rng, 2, 15, 2);
    auto doubled = studies;
    for (const auto& s : studies) {
        Study c = s;
        c.id += "_dup";
        doubled.push_back(c);
    }
    // Only the unpenalized fit: the pooled sample sd shifts with the row count.
    const MatrixXd probe = random_matrix(rng, 10, 2);
    const VectorXd a = predict(tom_fit(studies, 0.0), probe);
    const VectorXd b = predict(tom_fit(doubled, 0.0), probe);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MssPredict, ConstantPassthroughWeightedSum)
{
    std::mt19937_64 rng(14);
    const auto studies = random_studies(rng, 3, 20, 2);
    const MssModel m = mss_fit(studies, Variant::generalist(), {}, 0.0);
    const MatrixXd x = random_matrix(rng, 6, 2);

    MssModel c = m;
    c.weights.weights.setZero();
    c.weights.intercept = -1.5;
    EXPECT_TRUE((mss_predict(c, x).array() == -1.5).all());

    MssModel one = m;
    one.weights.weights.setZero();
    one.weights.weights(2) = 1.0;
    one.weights.intercept = 0.0;
    const MatrixXd d = build_design(m.standardizer.apply(x)).values;
    EXPECT_LT((mss_predict(one, x) - naive_matvec(d, m.coefficients.coef.col(2))).cwiseAbs().maxCoeff(), 1e-12);

    VectorXd expect = VectorXd::Constant(6, m.weights.intercept);
    for (Index k = 0; k < 3; ++k) expect += m.weights.weights(k) * naive_matvec(d, m.coefficients.coef.col(k));
    EXPECT_LT((mss_predict(m, x) - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(mss_predict(m, random_matrix(rng, 2, 3)), Error);
}

TEST(MssPredict, AffineInWeights)
{
    std::mt19937_64 rng(15);
    const auto studies = random_studies(rng, 3, 20, 2);
    const MssModel m = mss_fit(studies, Variant::generalist(), {}, 0.0);
    const MatrixXd x = random_matrix(rng, 6, 2);
    MssModel a = m, b = m, mid = m;
    a.weights.weights = (VectorXd(3) << 1.0, 0.0, 2.0).finished();
    b.weights.weights = (VectorXd(3) << 0.0, 3.0, 1.0).finished();
    a.weights.intercept = 0.5;
    b.weights.intercept = -0.5;
    mid.weights.weights = 0.25 * a.weights.weights + 0.75 * b.weights.weights;
    mid.weights.intercept = 0.25 * 0.5 + 0.75 * -0.5;
    const VectorXd expect = 0.25 * mss_predict(a, x) + 0.75 * mss_predict(b, x);
    EXPECT_LT((mss_predict(mid, x) - expect).cwiseAbs().maxCoeff(), 1e-12);
}
