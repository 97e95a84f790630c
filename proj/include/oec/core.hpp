#pragma once

#include <oec/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oec {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using LambdaMap = std::map<std::string, double>;

/// One dataset: outcome, raw covariates (no intercept column) and an id.
struct Study {
    std::string id;
    VectorXd y;
    MatrixXd x;

    Index rows() const { return y.size(); }
    Index covariates() const { return x.cols(); }

    void validate() const
    {
        detail::require(rows() >= 1, "study '" + id + "' has no rows");
        detail::require(x.rows() == y.size(),
                        "study '" + id + "': covariate rows (" + std::to_string(x.rows()) +
                            ") differ from outcome length (" + std::to_string(y.size()) + ")");
        detail::require(y.allFinite() && x.allFinite(), "study '" + id + "' has non-finite entries");
    }
};

/// Copy of `study` restricted to the given row indices, in that order.
inline Study subset(const Study& study, std::span<const Index> rows)
{
    Study out{study.id, VectorXd(static_cast<Index>(rows.size())),
              MatrixXd(static_cast<Index>(rows.size()), study.x.cols())};
    for (Index i = 0; i < static_cast<Index>(rows.size()); ++i) {
        out.y(i) = study.y(rows[static_cast<std::size_t>(i)]);
        out.x.row(i) = study.x.row(rows[static_cast<std::size_t>(i)]);
    }
    return out;
}

inline const Study& find_study(std::span<const Study> studies, const std::string& id)
{
    for (const auto& s : studies)
        if (s.id == id) return s;
    detail::fail("no study with id '" + id + "'");
}

inline Index total_rows(std::span<const Study> studies)
{
    Index n = 0;
    for (const auto& s : studies) n += s.rows();
    return n;
}

/// Per-covariate z-scoring.
struct Standardizer {
    VectorXd means;
    VectorXd sds;

    Index size() const { return means.size(); }

    MatrixXd apply(const MatrixXd& x) const
    {
        detail::require(x.cols() == size(), "standardizer expects " + std::to_string(size()) +
                                                " covariates, got " + std::to_string(x.cols()));
        return (x.rowwise() - means.transpose()).array().rowwise() / sds.transpose().array();
    }

    MatrixXd unapply(const MatrixXd& z) const
    {
        detail::require(z.cols() == size(), "standardizer size mismatch");
        return (z.array().rowwise() * sds.transpose().array()).matrix().rowwise() +
               means.transpose();
    }

    /// Identity transform for `p` covariates.
    static Standardizer identity(Index p) { return {VectorXd::Zero(p), VectorXd::Ones(p)}; }
};

/// Pooled mean and sample standard deviation of every covariate over all rows
/// of all listed studies.
inline Standardizer fit_standardizer(std::span<const Study> studies)
{
    detail::require(!studies.empty(), "fit_standardizer: no studies");
    const Index p = studies.front().covariates();
    Index n = 0;
    VectorXd sum = VectorXd::Zero(p);
    for (const auto& s : studies) {
        detail::require(s.covariates() == p, "fit_standardizer: study '" + s.id +
                                                 "' has a different covariate count");
        n += s.rows();
        sum += s.x.colwise().sum().transpose();
    }
    detail::require(n >= 2, "fit_standardizer: need at least 2 pooled rows");
    const VectorXd mean = sum / static_cast<double>(n);
    VectorXd ss = VectorXd::Zero(p);
    for (const auto& s : studies)
        ss += (s.x.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
    VectorXd sd = (ss / static_cast<double>(n - 1)).cwiseSqrt();
    for (Index j = 0; j < p; ++j) {
        const double scale = std::max(1.0, std::abs(mean(j)));
        if (!(sd(j) > 1e-12 * scale))
            detail::fail("fit_standardizer: covariate column " + std::to_string(j) +
                         " has zero pooled variance");
    }
    return {mean, sd};
}

/// Copies of `studies` with covariates z-scored by `standardizer`.
inline std::vector<Study> standardize(std::span<const Study> studies, const Standardizer& standardizer)
{
    std::vector<Study> out;
    out.reserve(studies.size());
    for (const auto& s : studies) out.push_back({s.id, s.y, standardizer.apply(s.x)});
    return out;
}

/// n x (p+1) design whose first column is all ones.
struct DesignMatrix {
    MatrixXd values;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
};

inline DesignMatrix build_design(const MatrixXd& x_raw, const Standardizer* standardizer = nullptr)
{
    DesignMatrix d{MatrixXd(x_raw.rows(), x_raw.cols() + 1)};
    d.values.col(0).setOnes();
    if (standardizer)
        d.values.rightCols(x_raw.cols()) = standardizer->apply(x_raw);
    else
        d.values.rightCols(x_raw.cols()) = x_raw;
    return d;
}

inline DesignMatrix build_design(const Study& study, const std::optional<Standardizer>& standardizer = {})
{
    return build_design(study.x, standardizer ? &*standardizer : nullptr);
}

/// Diagonal penalty selector: every coefficient is penalized except the
/// intercept in position 0.
class PenaltyMask {
public:
    explicit PenaltyMask(Index size) : diag_(VectorXd::Ones(size))
    {
        detail::require(size >= 1, "penalty mask needs at least one entry");
        diag_(0) = 0.0;
    }

    const VectorXd& diag() const { return diag_; }
    Index size() const { return diag_.size(); }

private:
    VectorXd diag_;
};

/// Linear-model coefficients, intercept first.
struct CoefficientVector {
    VectorXd beta;
    /// Set when the solve hit a singular system and returned the
    /// minimum-norm solution.
    bool rank_deficient = false;
};

/// Per-study coefficient columns, column k belongs to ids[k].
struct CoefficientMatrix {
    std::vector<std::string> ids;
    MatrixXd coef;

    Index index_of(const std::string& id) const
    {
        auto it = std::find(ids.begin(), ids.end(), id);
        detail::require(it != ids.end(), "coefficient matrix has no column for '" + id + "'");
        return static_cast<Index>(it - ids.begin());
    }

    bool contains(const std::string& id) const
    {
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    }

    auto column(const std::string& id) const { return coef.col(index_of(id)); }
};

/// Free intercept plus non-negative per-study weights.
struct EnsembleWeights {
    double intercept = 0.0;
    std::vector<std::string> ids;
    VectorXd weights;

    double weight(const std::string& id) const
    {
        auto it = std::find(ids.begin(), ids.end(), id);
        detail::require(it != ids.end(), "ensemble has no weight for '" + id + "'");
        return weights(it - ids.begin());
    }
};

inline VectorXd predict(const DesignMatrix& design, const CoefficientVector& beta)
{
    detail::require(design.cols() == beta.beta.size(),
                    "predict: design has " + std::to_string(design.cols()) +
                        " columns but coefficient vector has " + std::to_string(beta.beta.size()));
    return design.values * beta.beta;
}

} // namespace oec
