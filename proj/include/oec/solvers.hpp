#pragma once

#include <oec/core.hpp>

#include <limits>
#include <vector>

namespace oec {

namespace detail {

/// Solves M x = rhs for symmetric positive semi-definite M. Falls back to the
/// minimum-norm solution when M is numerically singular and sets `singular`.
inline VectorXd psd_solve(const MatrixXd& m, const VectorXd& rhs, bool& singular)
{
    Eigen::LLT<MatrixXd> llt(m);
    // Squared pivot ratio as a cheap conditioning check; the full estimate
    // dominated the cost of small repeated solves.
    const auto pivots = llt.matrixLLT().diagonal();
    const double ratio = pivots.size() == 0 ? 1.0 : pivots.minCoeff() / pivots.maxCoeff();
    if (llt.info() == Eigen::Success && std::isfinite(ratio) && ratio * ratio > 1e-13) {
        singular = false;
        VectorXd x = llt.solve(rhs);
        x += llt.solve(rhs - m * x);
        return x;
    }
    singular = true;
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(m);
    return cod.solve(rhs);
}

} // namespace detail

/// Minimizes (1/(2*scale))||y - X beta||^2 + (lambda/2)||D beta||^2 through the
/// regularized normal equations. With lambda == 0 and a singular Gram matrix the
/// minimum-norm least-squares solution is returned and flagged.
inline CoefficientVector ridge_fit(const DesignMatrix& design, const VectorXd& y, double lambda,
                                   const PenaltyMask& mask, double scale)
{
    detail::require(design.rows() == y.size(), "ridge_fit: design has " +
                                                   std::to_string(design.rows()) + " rows, outcome has " +
                                                   std::to_string(y.size()));
    detail::require(mask.size() == design.cols(), "ridge_fit: penalty mask size mismatch");
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "ridge_fit: lambda must be finite and >= 0");
    detail::require(scale > 0.0, "ridge_fit: scale must be positive");

    const MatrixXd& x = design.values;
    MatrixXd gram = x.transpose() * x / scale;
    gram.diagonal() += lambda * mask.diag();
    const VectorXd rhs = x.transpose() * y / scale;

    CoefficientVector out;
    bool singular = false;
    out.beta = detail::psd_solve(gram, rhs, singular);
    if (singular && lambda == 0.0) {
        Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(x);
        out.beta = cod.solve(y);
    }
    out.rank_deficient = singular;
    return out;
}

/// Solution of the bound-constrained quadratic program
///   min 1/2 x'Qx - b'x  s.t. x >= 0.
struct QpSolution {
    VectorXd x;
    int iterations = 0;
    bool used_fallback = false;
};

namespace detail {

inline double kkt_violation(const MatrixXd& q, const VectorXd& b, const VectorXd& x)
{
    const VectorXd g = q * x - b;
    double worst = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
        if (x(i) > 0.0)
            worst = std::max(worst, std::abs(g(i)));
        else
            worst = std::max(worst, -g(i));
    }
    return worst;
}

/// Cyclic coordinate descent with clamping at zero.
inline int nnqp_coordinate_descent(const MatrixXd& q, const VectorXd& b, VectorXd& x,
                                   int max_sweeps = 10000, double tol = 1e-10)
{
    VectorXd g = q * x - b;
    int sweep = 0;
    while (sweep < max_sweeps) {
        ++sweep;
        double max_change = 0.0;
        for (Index i = 0; i < x.size(); ++i) {
            const double qii = q(i, i);
            if (qii <= 0.0) continue;
            const double xi = std::max(0.0, x(i) - g(i) / qii);
            const double del = xi - x(i);
            if (del != 0.0) {
                x(i) = xi;
                g += del * q.col(i);
                max_change = std::max(max_change, std::abs(del));
            }
        }
        if (max_change < tol) break;
    }
    return sweep;
}

/// Lawson-Hanson style active set on the Gram form.
inline QpSolution nnqp_active_set(const MatrixXd& q, const VectorXd& b)
{
    const Index m = b.size();
    QpSolution out{VectorXd::Zero(m)};
    if (m == 0) return out;

    const double scale = std::max({1.0, b.lpNorm<Eigen::Infinity>(), q.diagonal().maxCoeff()});
    const double tol = 1e-13 * scale;
    std::vector<char> passive(static_cast<std::size_t>(m), 0);
    std::vector<char> blocked(static_cast<std::size_t>(m), 0);
    VectorXd& x = out.x;

    const int max_outer = static_cast<int>(5 * m + 20);
    for (int outer = 0; outer < max_outer; ++outer) {
        ++out.iterations;
        const VectorXd g = q * x - b;
        Index pick = -1;
        double best = tol;
        for (Index i = 0; i < m; ++i) {
            const auto iu = static_cast<std::size_t>(i);
            if (passive[iu] || blocked[iu] || q(i, i) <= 0.0) continue;
            if (-g(i) > best) {
                best = -g(i);
                pick = i;
            }
        }
        if (pick < 0) break;
        passive[static_cast<std::size_t>(pick)] = 1;

        for (Index inner = 0; inner <= m; ++inner) {
            std::vector<Index> set;
            for (Index i = 0; i < m; ++i)
                if (passive[static_cast<std::size_t>(i)]) set.push_back(i);
            const auto ns = static_cast<Index>(set.size());
            MatrixXd qs(ns, ns);
            VectorXd bs(ns);
            for (Index r = 0; r < ns; ++r) {
                bs(r) = b(set[static_cast<std::size_t>(r)]);
                for (Index c = 0; c < ns; ++c)
                    qs(r, c) = q(set[static_cast<std::size_t>(r)], set[static_cast<std::size_t>(c)]);
            }
            bool singular = false;
            const VectorXd z = psd_solve(qs, bs, singular);

            bool feasible = true;
            for (Index r = 0; r < ns; ++r)
                if (!(z(r) > 0.0)) feasible = false;
            if (feasible) {
                for (Index r = 0; r < ns; ++r) x(set[static_cast<std::size_t>(r)]) = z(r);
                break;
            }
            double step = 1.0;
            for (Index r = 0; r < ns; ++r) {
                const double xr = x(set[static_cast<std::size_t>(r)]);
                if (z(r) <= 0.0) step = std::min(step, xr / (xr - z(r)));
            }
            for (Index r = 0; r < ns; ++r) {
                const Index i = set[static_cast<std::size_t>(r)];
                x(i) += step * (z(r) - x(i));
                if (x(i) <= 1e-15 * scale) {
                    x(i) = 0.0;
                    passive[static_cast<std::size_t>(i)] = 0;
                }
            }
            // Rounding can make the entering index infeasible right away.
            if (!passive[static_cast<std::size_t>(pick)] && x(pick) == 0.0) {
                blocked[static_cast<std::size_t>(pick)] = 1;
                break;
            }
        }
    }
    return out;
}

} // namespace detail

/// Non-negative quadratic program: active set first, coordinate descent
/// when the active-set answer misses the KKT tolerance.
inline QpSolution solve_nonnegative_qp(const MatrixXd& q, const VectorXd& b, double kkt_tol = 1e-10)
{
    QpSolution sol = detail::nnqp_active_set(q, b);
    if (detail::kkt_violation(q, b, sol.x) > kkt_tol) {
        sol.used_fallback = true;
        sol.iterations += detail::nnqp_coordinate_descent(q, b, sol.x);
    }
    return sol;
}

/// Minimizes (1/(2n))||y - Z alpha||^2 + (mu/2)||D alpha||^2 subject to
/// alpha_1.. >= 0 with a free, unpenalized intercept alpha_0. `design` carries
/// the leading ones column. The intercept is profiled out by centering.
inline EnsembleWeights nnls_fit(const MatrixXd& design, const VectorXd& y, double mu,
                                const PenaltyMask& mask, std::vector<std::string> ids = {})
{
    detail::require(design.rows() == y.size(), "nnls_fit: design has " + std::to_string(design.rows()) +
                                                   " rows, outcome has " + std::to_string(y.size()));
    detail::require(design.cols() >= 1 && design.rows() >= 1, "nnls_fit: empty design");
    detail::require(mask.size() == design.cols(), "nnls_fit: penalty mask size mismatch");
    detail::require(mu >= 0.0 && std::isfinite(mu), "nnls_fit: mu must be finite and >= 0");
    detail::require((design.col(0).array() == 1.0).all(), "nnls_fit: first design column must be ones");
    const Index m = design.cols() - 1;
    detail::require(ids.empty() || static_cast<Index>(ids.size()) == m, "nnls_fit: id count mismatch");

    const auto n = static_cast<double>(design.rows());
    const double ybar = y.mean();
    EnsembleWeights out{ybar, std::move(ids), VectorXd::Zero(m)};
    if (m == 0) return out;

    const auto z = design.rightCols(m);
    const Eigen::RowVectorXd zbar = z.colwise().mean();
    const MatrixXd zc = z.rowwise() - zbar;
    const VectorXd yc = y.array() - ybar;
    MatrixXd q = zc.transpose() * zc / n;
    q.diagonal() += mu * mask.diag().tail(m);
    const VectorXd b = zc.transpose() * yc / n;

    out.weights = solve_nonnegative_qp(q, b).x;
    out.intercept = ybar - zbar.dot(out.weights);
    return out;
}

} // namespace oec
