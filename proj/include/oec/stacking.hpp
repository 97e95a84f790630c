#pragma once

#include <oec/core.hpp>
#include <oec/solvers.hpp>

#include <string>
#include <vector>

namespace oec {

enum class VariantKind { Generalist, Specialist, SpecialistNoReuse };

/// Generalist ensembles target an unseen study; specialists target the study
/// named by `target`. The no-reuse specialist keeps the target out of every
/// single-study learner.
struct Variant {
    VariantKind kind = VariantKind::Generalist;
    std::string target;

    static Variant generalist() { return {}; }
    static Variant specialist(std::string target) { return {VariantKind::Specialist, std::move(target)}; }
    static Variant specialist_no_reuse(std::string target)
    {
        return {VariantKind::SpecialistNoReuse, std::move(target)};
    }

    bool is_specialist() const { return kind != VariantKind::Generalist; }
    bool excludes_target() const { return kind == VariantKind::SpecialistNoReuse; }

    std::string name() const
    {
        switch (kind) {
        case VariantKind::Generalist: return "generalist";
        case VariantKind::Specialist: return "specialist";
        case VariantKind::SpecialistNoReuse: return "specialist-no-reuse";
        }
        return "?";
    }

    static VariantKind parse_kind(const std::string& s)
    {
        if (s == "generalist") return VariantKind::Generalist;
        if (s == "specialist") return VariantKind::Specialist;
        if (s == "specialist-no-reuse") return VariantKind::SpecialistNoReuse;
        detail::fail("unknown variant '" + s + "'");
    }

    void validate(std::span<const Study> studies) const
    {
        detail::require(!studies.empty(), "no studies supplied");
        if (!is_specialist()) return;
        bool found = false;
        for (const auto& s : studies) found = found || s.id == target;
        detail::require(found, name() + " target '" + target + "' is not among the studies");
        if (excludes_target())
            detail::require(studies.size() >= 2, "no-reuse specialist needs at least 2 studies");
    }

    bool operator==(const Variant&) const = default;
};

inline double lambda_for(const LambdaMap& lambdas, const std::string& id)
{
    auto it = lambdas.find(id);
    return it == lambdas.end() ? 0.0 : it->second;
}

/// Ids of the studies that contribute a single-study learner under `variant`.
inline std::vector<std::string> contributing_ids(std::span<const Study> studies, const Variant& variant)
{
    std::vector<std::string> ids;
    for (const auto& s : studies)
        if (!(variant.excludes_target() && s.id == variant.target)) ids.push_back(s.id);
    return ids;
}

/// Outcome the ensemble is fit against: every row for generalists, the
/// target rows for specialists.
inline VectorXd ensemble_outcome(std::span<const Study> studies, const Variant& variant)
{
    if (variant.is_specialist()) return find_study(studies, variant.target).y;
    VectorXd y(total_rows(studies));
    Index at = 0;
    for (const auto& s : studies) {
        y.segment(at, s.rows()) = s.y;
        at += s.rows();
    }
    return y;
}

/// Raw covariate rows matching `ensemble_outcome`.
inline MatrixXd ensemble_covariates(std::span<const Study> studies, const Variant& variant)
{
    if (variant.is_specialist()) return find_study(studies, variant.target).x;
    MatrixXd x(total_rows(studies), studies.front().covariates());
    Index at = 0;
    for (const auto& s : studies) {
        x.middleRows(at, s.rows()) = s.x;
        at += s.rows();
    }
    return x;
}

/// Ridge learner per study, column order follows `studies`. Studies missing
/// from `lambdas` are fit with lambda = 0. Covariates are used as given.
inline CoefficientMatrix fit_ssls(std::span<const Study> studies, const LambdaMap& lambdas)
{
    detail::require(!studies.empty(), "fit_ssls: no studies");
    const Index p1 = studies.front().covariates() + 1;
    CoefficientMatrix b{{}, MatrixXd(p1, static_cast<Index>(studies.size()))};
    const PenaltyMask mask(p1);
    for (std::size_t k = 0; k < studies.size(); ++k) {
        const auto& s = studies[k];
        s.validate();
        detail::require(s.covariates() + 1 == p1, "fit_ssls: study '" + s.id + "' covariate count differs");
        b.ids.push_back(s.id);
        b.coef.col(static_cast<Index>(k)) =
            ridge_fit(build_design(s), s.y, lambda_for(lambdas, s.id), mask, static_cast<double>(s.rows())).beta;
    }
    return b;
}

/// Matrix whose (row, k) entry is learner k's prediction at that row.
/// Generalist: all rows of all studies, specialist: target rows only, no-reuse
/// specialist additionally drops the target's column.
inline MatrixXd build_stacked_matrix(const CoefficientMatrix& b, std::span<const Study> studies,
                                     const Variant& variant)
{
    variant.validate(studies);
    const MatrixXd x = build_design(ensemble_covariates(studies, variant)).values;
    detail::require(x.cols() == b.coef.rows(), "build_stacked_matrix: coefficient rows do not match design");
    if (!variant.excludes_target()) {
        for (const auto& id : contributing_ids(studies, variant))
            detail::require(b.contains(id), "build_stacked_matrix: missing learner for '" + id + "'");
        return x * b.coef;
    }
    std::vector<Index> cols;
    for (Index k = 0; k < static_cast<Index>(b.ids.size()); ++k)
        if (b.ids[static_cast<std::size_t>(k)] != variant.target) cols.push_back(k);
    MatrixXd out(x.rows(), static_cast<Index>(cols.size()));
    for (Index j = 0; j < static_cast<Index>(cols.size()); ++j)
        out.col(j) = x * b.coef.col(cols[static_cast<std::size_t>(j)]);
    return out;
}

/// Ensemble prediction w0 + sum_k w_k X beta_k on already standardized covariates.
inline VectorXd ensemble_predict(const CoefficientMatrix& b, const EnsembleWeights& w, const MatrixXd& x)
{
    const MatrixXd d = build_design(x).values;
    detail::require(d.cols() == b.coef.rows(), "ensemble predict: covariate count mismatch");
    VectorXd combined = VectorXd::Zero(b.coef.rows());
    for (std::size_t k = 0; k < w.ids.size(); ++k)
        combined += w.weights(static_cast<Index>(k)) * b.column(w.ids[k]);
    return (d * combined).array() + w.intercept;
}

/// Two-stage multi-study stacking model.
struct MssModel {
    CoefficientMatrix coefficients;
    EnsembleWeights weights;
    Variant variant;
    Standardizer standardizer;
    LambdaMap lambdas;
    double mu = 0.0;
};

namespace detail {

struct StackingStages {
    CoefficientMatrix coefficients;
    EnsembleWeights weights;
};

/// Both stacking stages on studies whose covariates are already prepared.
inline StackingStages stacking_stages(std::span<const Study> studies, const Variant& variant,
                                      const LambdaMap& lambdas, double mu)
{
    std::vector<Study> learners;
    for (const auto& s : studies)
        if (!(variant.excludes_target() && s.id == variant.target)) learners.push_back(s);
    StackingStages out;
    out.coefficients = fit_ssls(learners, lambdas);

    const MatrixXd stacked = build_stacked_matrix(out.coefficients, studies, variant);
    MatrixXd design(stacked.rows(), stacked.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(stacked.cols()) = stacked;
    out.weights = nnls_fit(design, ensemble_outcome(studies, variant), mu, PenaltyMask(design.cols()),
                           out.coefficients.ids);
    return out;
}

} // namespace detail

/// Stage A: one ridge learner per contributing study. Stage B: non-negative
/// stacking regression with a free intercept. Covariates are z-scored on the
/// pooled rows of `studies` first.
inline MssModel mss_fit(std::span<const Study> studies, const Variant& variant, const LambdaMap& lambdas,
                        double mu)
{
    variant.validate(studies);
    for (const auto& s : studies) s.validate();
    MssModel model;
    model.variant = variant;
    model.lambdas = lambdas;
    model.mu = mu;
    model.standardizer = fit_standardizer(studies);
    auto stages = detail::stacking_stages(standardize(studies, model.standardizer), variant, lambdas, mu);
    model.coefficients = std::move(stages.coefficients);
    model.weights = std::move(stages.weights);
    return model;
}

inline VectorXd mss_predict(const MssModel& model, const MatrixXd& x_new)
{
    detail::require(x_new.cols() == model.standardizer.size(), "mss_predict: expected " +
                                                                   std::to_string(model.standardizer.size()) +
                                                                   " covariates, got " + std::to_string(x_new.cols()));
    return ensemble_predict(model.coefficients, model.weights, model.standardizer.apply(x_new));
}

/// A single linear model together with the covariate scaling it was fit on.
struct LinearModel {
    CoefficientVector coefficients;
    Standardizer standardizer;
};

inline VectorXd predict(const LinearModel& model, const MatrixXd& x_new)
{
    return predict(build_design(x_new, &model.standardizer), model.coefficients);
}

/// Trained-on-merged: one ridge fit to all studies stacked, loss scaled by N.
inline LinearModel tom_fit(std::span<const Study> studies, double lambda)
{
    detail::require(!studies.empty(), "tom_fit: no studies");
    for (const auto& s : studies) s.validate();
    LinearModel model;
    model.standardizer = fit_standardizer(studies);
    const Variant merged = Variant::generalist();
    const MatrixXd x = ensemble_covariates(studies, merged);
    const VectorXd y = ensemble_outcome(studies, merged);
    const DesignMatrix d = build_design(x, &model.standardizer);
    model.coefficients = ridge_fit(d, y, lambda, PenaltyMask(d.cols()), static_cast<double>(y.size()));
    return model;
}

/// Study-specific model: ridge fit to one study alone.
inline LinearModel ssm_fit(const Study& study, double lambda)
{
    return tom_fit(std::span<const Study>(&study, 1), lambda);
}

} // namespace oec
