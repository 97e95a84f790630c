#pragma once

// Test-only reference computations. Each one takes a deliberately different
// route from the library code it checks (plain loops, QR on an augmented
// system, projected gradient, direct summation).

#include <oec/core.hpp>
#include <oec/stacking.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace oec::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(std::mt19937_64& rng, Index rows, Index cols, double sd = 1.0)
{
    std::normal_distribution<double> n(0.0, sd);
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

inline VectorXd random_vector(std::mt19937_64& rng, Index n, double sd = 1.0)
{
    return random_matrix(rng, n, 1, sd).col(0);
}

/// y = X beta + noise with X ~ N(0,1) covariates.
inline Study random_study(std::mt19937_64& rng, const std::string& id, Index n, Index p, const VectorXd& beta,
                          double noise_sd)
{
    Study s{id, VectorXd(n), random_matrix(rng, n, p)};
    s.y = (s.x * beta.tail(p)).array() + beta(0);
    s.y += random_vector(rng, n, noise_sd);
    return s;
}

/// Row-by-row dot products.
inline VectorXd naive_matvec(const MatrixXd& x, const VectorXd& b)
{
    VectorXd out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
        double acc = 0.0;
        for (Index j = 0; j < x.cols(); ++j) acc += x(i, j) * b(j);
        out(i) = acc;
    }
    return out;
}

/// Ridge solution by Householder QR on the augmented least-squares system
/// [X / sqrt(scale); sqrt(lambda) D] beta ~ [y / sqrt(scale); 0].
inline VectorXd ridge_qr_oracle(const MatrixXd& x, const VectorXd& y, double lambda, double scale)
{
    const Index n = x.rows();
    const Index p1 = x.cols();
    MatrixXd a = MatrixXd::Zero(n + p1, p1);
    VectorXd rhs = VectorXd::Zero(n + p1);
    a.topRows(n) = x / std::sqrt(scale);
    rhs.head(n) = y / std::sqrt(scale);
    for (Index j = 1; j < p1; ++j) a(n + j, j) = std::sqrt(lambda);
    return a.colPivHouseholderQr().solve(rhs);
}

struct NnlsReference {
    double intercept = 0.0;
    VectorXd weights;
};

/// Projected gradient on (1/(2n))||y - a0 - Z a||^2 + (mu/2)||a||^2, a >= 0,
/// with a free intercept, fixed step 1/L.
inline NnlsReference projected_gradient_nnls(const MatrixXd& z, const VectorXd& y, double mu, long iterations)
{
    const Index n = z.rows();
    const Index m = z.cols();
    MatrixXd full(n, m + 1);
    full.col(0).setOnes();
    full.rightCols(m) = z;
    MatrixXd h = full.transpose() * full / static_cast<double>(n);
    for (Index j = 1; j <= m; ++j) h(j, j) += mu;
    const VectorXd c = full.transpose() * y / static_cast<double>(n);
    const double lipschitz = Eigen::SelfAdjointEigenSolver<MatrixXd>(h).eigenvalues().maxCoeff();
    const double step = 1.0 / lipschitz;
    VectorXd x = VectorXd::Zero(m + 1);
    for (long it = 0; it < iterations; ++it) {
        x -= step * (h * x - c);
        for (Index j = 1; j <= m; ++j) x(j) = std::max(0.0, x(j));
    }
    return {x(0), x.tail(m)};
}

/// Gradient of the penalized stacking loss with respect to (a0, a).
inline VectorXd stacking_gradient(const MatrixXd& z, const VectorXd& y, double mu, double a0, const VectorXd& a)
{
    const Index n = z.rows();
    VectorXd r(n);
    for (Index i = 0; i < n; ++i) {
        double fit = a0;
        for (Index j = 0; j < z.cols(); ++j) fit += z(i, j) * a(j);
        r(i) = fit - y(i);
    }
    VectorXd g(a.size() + 1);
    g(0) = r.sum() / static_cast<double>(n);
    for (Index j = 0; j < z.cols(); ++j) g(j + 1) = z.col(j).dot(r) / static_cast<double>(n) + mu * a(j);
    return g;
}

inline double rmse_oracle(const VectorXd& a, const VectorXd& b)
{
    double acc = 0.0;
    for (Index i = 0; i < a.size(); ++i) acc += (a(i) - b(i)) * (a(i) - b(i));
    return std::sqrt(acc / static_cast<double>(a.size()));
}

/// K studies with coefficients scattered around a shared mean.
inline std::vector<Study> random_studies(std::mt19937_64& rng, int k, Index n, Index p, double spread = 0.5,
                                         double noise_sd = 0.5)
{
    const VectorXd base = random_vector(rng, p + 1);
    std::vector<Study> out;
    for (int i = 0; i < k; ++i) {
        const VectorXd beta = base + random_vector(rng, p + 1, spread);
        out.push_back(random_study(rng, "s" + std::to_string(i), n, p, beta, noise_sd));
    }
    return out;
}

/// Term-by-term evaluation of the joint objective with explicit loops.
inline double objective_oracle(const Variant& variant, double eta, double mu, const LambdaMap& lambdas,
                               const std::vector<Study>& studies, const CoefficientMatrix& b,
                               const EnsembleWeights& alpha)
{
    // Ensemble term.
    double ens = 0.0;
    long rows = 0;
    for (const auto& s : studies) {
        if (variant.is_specialist() && s.id != variant.target) continue;
        for (Index i = 0; i < s.rows(); ++i) {
            double fit = alpha.intercept;
            for (std::size_t k = 0; k < alpha.ids.size(); ++k) {
                const auto beta = b.column(alpha.ids[k]);
                double learner = beta(0);
                for (Index j = 0; j < s.covariates(); ++j) learner += s.x(i, j) * beta(j + 1);
                fit += alpha.weights(static_cast<Index>(k)) * learner;
            }
            ens += (s.y(i) - fit) * (s.y(i) - fit);
            ++rows;
        }
    }
    double penalty = 0.0;
    for (Index k = 0; k < alpha.weights.size(); ++k) penalty += alpha.weights(k) * alpha.weights(k);
    const double stacking = ens / (2.0 * static_cast<double>(rows)) + 0.5 * mu * penalty;

    double learners = 0.0;
    for (const auto& s : studies) {
        if (variant.excludes_target() && s.id == variant.target) continue;
        const auto beta = b.column(s.id);
        double sse = 0.0;
        for (Index i = 0; i < s.rows(); ++i) {
            double fit = beta(0);
            for (Index j = 0; j < s.covariates(); ++j) fit += s.x(i, j) * beta(j + 1);
            sse += (s.y(i) - fit) * (s.y(i) - fit);
        }
        double ridge = 0.0;
        for (Index j = 1; j < beta.size(); ++j) ridge += beta(j) * beta(j);
        auto it = lambdas.find(s.id);
        const double lambda = it == lambdas.end() ? 0.0 : it->second;
        learners += sse / (2.0 * static_cast<double>(s.rows())) + 0.5 * lambda * ridge;
    }
    return eta * stacking + (1.0 - eta) * learners;
}

} // namespace oec::testing
