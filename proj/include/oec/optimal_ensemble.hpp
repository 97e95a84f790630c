#pragma once

// Joint estimation of single-study coefficients and non-negative ensemble
// weights. The objective is a convex combination, weighted by eta, of the
// stacking loss and the summed single-study ridge losses:
//
//   eta * [ 1/(2s) ||y_e - a0 - sum_k a_k X_e b_k||^2 + mu/2 ||a||^2 ]
//     + (1 - eta) * sum_k [ 1/(2 n_k) ||y_k - X_k b_k||^2 + lambda_k/2 ||D b_k||^2 ]
//
// (X_e, y_e, s) are all rows for the generalist and the target study's rows for
// both specialists. The no-reuse specialist has no block for the target.
// The objective is minimized by block coordinate descent with exact block
// updates: a linear solve for each b_k and a non-negative QP for (a0, a).

#include <oec/core.hpp>
#include <oec/solvers.hpp>
#include <oec/stacking.hpp>

#include <optional>
#include <string>
#include <vector>

namespace oec {

/// Starting point for block coordinate descent, in standardized coordinates.
struct OecInit {
    CoefficientMatrix coefficients;
    EnsembleWeights alpha;
};

struct OecConfig {
    Variant variant;
    double eta = 0.5;
    double mu = 0.0;
    LambdaMap lambdas;
    double tol = 1e-8;
    int max_iter = 1000;
    /// Empty: start from the matching stacking estimates.
    std::optional<OecInit> init;
    /// Empty: canonical order (studies in input order, ensemble weights last).
    std::vector<std::string> block_order;

    void validate() const
    {
        detail::require(eta >= 0.0 && eta <= 1.0, "eta must lie in (0,1), got " + std::to_string(eta));
        detail::require(mu >= 0.0 && std::isfinite(mu), "mu must be finite and >= 0");
        detail::require(tol > 0.0, "tol must be positive");
        detail::require(max_iter >= 1, "max_iter must be >= 1");
        for (const auto& [id, l] : lambdas)
            detail::require(l >= 0.0 && std::isfinite(l), "lambda for '" + id + "' must be finite and >= 0");
    }
};

struct OecModel {
    CoefficientMatrix coefficients;
    EnsembleWeights alpha;
    /// Objective at the starting point followed by one entry per full cycle.
    std::vector<double> objective_trace;
    bool converged = false;
    int iterations = 0;
    Standardizer standardizer;
    Variant variant;
    double eta = 0.5;
    double mu = 0.0;
    LambdaMap lambdas;
    double tol = 1e-8;

    double final_objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

namespace detail {

/// Precomputed Gram matrices for one (config, studies) pair. Studies are used
/// with their covariates as given.
class OecProblem {
public:
    OecProblem(const OecConfig& config, std::span<const Study> studies)
        : eta_(config.eta), mu_(config.mu), variant_(config.variant)
    {
        config.validate();
        variant_.validate(studies);
        const Index p1 = studies.front().covariates() + 1;
        mask_ = PenaltyMask(p1).diag();

        std::vector<std::string> canonical = contributing_ids(studies, variant_);
        if (!config.block_order.empty()) {
            require(config.block_order.size() == canonical.size(), "block_order must list every learner once");
            for (const auto& id : canonical)
                require(std::find(config.block_order.begin(), config.block_order.end(), id) !=
                            config.block_order.end(),
                        "block_order is missing '" + id + "'");
            block_ids_ = config.block_order;
        } else {
            block_ids_ = canonical;
        }

        for (const auto& id : block_ids_) {
            const Study& s = find_study(studies, id);
            s.validate();
            require(s.covariates() + 1 == p1, "study '" + id + "' covariate count differs");
            Block b;
            b.x = build_design(s).values;
            b.y = s.y;
            b.n = static_cast<double>(s.rows());
            b.gram = b.x.transpose() * b.x;
            b.xty = b.x.transpose() * b.y;
            b.lambda = lambda_for(config.lambdas, id);
            blocks_.push_back(std::move(b));
        }

        xe_ = build_design(ensemble_covariates(studies, variant_)).values;
        ye_ = ensemble_outcome(studies, variant_);
        s_ = static_cast<double>(ye_.size());
        ge_ = xe_.transpose() * xe_;
        xe_ty_ = xe_.transpose() * ye_;
        xe_sum_ = xe_.colwise().sum().transpose();
        ybar_ = ye_.mean();
    }

    const std::vector<std::string>& block_ids() const { return block_ids_; }
    Index blocks() const { return static_cast<Index>(blocks_.size()); }

    /// Coefficients reordered to block order.
    MatrixXd coefficients_in_order(const CoefficientMatrix& b) const
    {
        MatrixXd out(ge_.rows(), blocks());
        require(b.coef.rows() == ge_.rows(), "coefficient rows do not match the design width");
        for (Index k = 0; k < blocks(); ++k) out.col(k) = b.column(block_ids_[static_cast<std::size_t>(k)]);
        return out;
    }

    VectorXd weights_in_order(const EnsembleWeights& w) const
    {
        VectorXd out(blocks());
        require(w.weights.size() == blocks(), "ensemble weight count does not match the variant");
        for (Index k = 0; k < blocks(); ++k) out(k) = w.weight(block_ids_[static_cast<std::size_t>(k)]);
        return out;
    }

    double stacking_loss(const MatrixXd& b, double a0, const VectorXd& a) const
    {
        const VectorXd combined = b * a;
        const VectorXd r = (ye_ - xe_ * combined).array() - a0;
        return r.squaredNorm() / (2.0 * s_) + 0.5 * mu_ * a.squaredNorm();
    }

    double learner_loss(const MatrixXd& b) const
    {
        double total = 0.0;
        for (Index k = 0; k < blocks(); ++k) {
            const Block& blk = blocks_[static_cast<std::size_t>(k)];
            const auto beta = b.col(k);
            total += (blk.y - blk.x * beta).squaredNorm() / (2.0 * blk.n) +
                     0.5 * blk.lambda * beta.cwiseProduct(mask_).squaredNorm();
        }
        return total;
    }

    double objective(const MatrixXd& b, double a0, const VectorXd& a) const
    {
        return eta_ * stacking_loss(b, a0, a) + (1.0 - eta_) * learner_loss(b);
    }

    /// Exact minimizer over column k with everything else fixed.
    VectorXd update_beta(const MatrixXd& b, double a0, const VectorXd& a, Index k, bool& singular) const
    {
        const Block& blk = blocks_[static_cast<std::size_t>(k)];
        const double ak = a(k);
        MatrixXd m = (eta_ * ak * ak / s_) * ge_ + ((1.0 - eta_) / blk.n) * blk.gram;
        m.diagonal() += (1.0 - eta_) * blk.lambda * mask_;
        VectorXd partial = b * a - ak * b.col(k);
        const VectorXd rhs = (eta_ * ak / s_) * (xe_ty_ - a0 * xe_sum_ - ge_ * partial) +
                             ((1.0 - eta_) / blk.n) * blk.xty;
        return psd_solve(m, rhs, singular);
    }

    /// Exact minimizer over (a0, a >= 0) with the coefficients fixed. The eta
    /// factor scales the whole subproblem and drops out. Same problem as
    /// nnls_fit on [1, X_e B], assembled from the precomputed Gram matrix.
    EnsembleWeights update_alpha(const MatrixXd& b) const
    {
        const VectorXd zbar = b.transpose() * xe_sum_ / s_;
        MatrixXd q = (b.transpose() * ge_ * b) / s_ - zbar * zbar.transpose();
        q = 0.5 * (q + q.transpose());
        q.diagonal().array() += mu_;
        const VectorXd rhs = b.transpose() * xe_ty_ / s_ - ybar_ * zbar;
        EnsembleWeights w{0.0, block_ids_, solve_nonnegative_qp(q, rhs).x};
        w.intercept = ybar_ - zbar.dot(w.weights);
        return w;
    }

private:
    struct Block {
        MatrixXd x;
        VectorXd y;
        double n = 1.0;
        MatrixXd gram;
        VectorXd xty;
        double lambda = 0.0;
    };

    double eta_;
    double mu_;
    Variant variant_;
    VectorXd mask_;
    std::vector<std::string> block_ids_;
    std::vector<Block> blocks_;
    MatrixXd xe_;
    VectorXd ye_;
    double s_ = 1.0;
    MatrixXd ge_;
    VectorXd xe_ty_;
    VectorXd xe_sum_;
    double ybar_ = 0.0;
};

} // namespace detail

/// Value of the objective for `variant` at (B, alpha). Covariates are used as given.
inline double oec_objective(const OecConfig& config, std::span<const Study> studies, const CoefficientMatrix& b,
                            const EnsembleWeights& alpha)
{
    const detail::OecProblem problem(config, studies);
    return problem.objective(problem.coefficients_in_order(b), alpha.intercept, problem.weights_in_order(alpha));
}

/// Exact minimization over the coefficients of study `id` alone.
inline CoefficientVector update_beta_block(const OecConfig& config, std::span<const Study> studies,
                                           const CoefficientMatrix& b, const EnsembleWeights& alpha,
                                           const std::string& id)
{
    const detail::OecProblem problem(config, studies);
    const auto& ids = problem.block_ids();
    auto it = std::find(ids.begin(), ids.end(), id);
    detail::require(it != ids.end(), "'" + id + "' has no coefficient block under the " +
                                         config.variant.name() + " variant");
    CoefficientVector out;
    out.beta = problem.update_beta(problem.coefficients_in_order(b), alpha.intercept,
                                   problem.weights_in_order(alpha), it - ids.begin(), out.rank_deficient);
    return out;
}

/// Exact minimization over the ensemble intercept and weights alone.
inline EnsembleWeights update_alpha_block(const OecConfig& config, std::span<const Study> studies,
                                          const CoefficientMatrix& b)
{
    const detail::OecProblem problem(config, studies);
    return problem.update_alpha(problem.coefficients_in_order(b));
}

namespace detail {

inline OecModel model_from_limit(const OecConfig& config, std::span<const Study> studies)
{
    OecModel model;
    model.variant = config.variant;
    model.eta = config.eta;
    model.mu = config.mu;
    model.lambdas = config.lambdas;
    model.tol = config.tol;
    model.converged = true;
    if (config.eta == 0.0) {
        MssModel mss = mss_fit(studies, config.variant, config.lambdas, config.mu);
        model.coefficients = std::move(mss.coefficients);
        model.alpha = std::move(mss.weights);
        model.standardizer = std::move(mss.standardizer);
        return model;
    }
    // eta == 1: the unregularized pooled fit (generalist) or the target-only fit.
    const bool generalist = !config.variant.is_specialist();
    const std::string id = generalist ? std::string("merged") : config.variant.target;
    LinearModel lm = generalist ? tom_fit(studies, 0.0) : ssm_fit(find_study(studies, id), 0.0);
    model.coefficients = {{id}, lm.coefficients.beta};
    model.alpha = {0.0, {id}, VectorXd::Ones(1)};
    model.standardizer = std::move(lm.standardizer);
    return model;
}

} // namespace detail

/// Block coordinate descent: cycle the coefficient blocks, then the ensemble
/// weights, until the relative objective change drops below `tol` or
/// `max_iter` cycles have run. eta = 0 and eta = 1 dispatch to the stacking
/// and pooled/target-only limits directly.
inline OecModel oec_fit(const OecConfig& config, std::span<const Study> studies)
{
    config.validate();
    config.variant.validate(studies);
    for (const auto& s : studies) s.validate();
    if (config.eta == 0.0 || config.eta == 1.0) return detail::model_from_limit(config, studies);

    OecModel model;
    model.variant = config.variant;
    model.eta = config.eta;
    model.mu = config.mu;
    model.lambdas = config.lambdas;
    model.tol = config.tol;
    model.standardizer = fit_standardizer(studies);
    const auto z = standardize(studies, model.standardizer);
    const detail::OecProblem problem(config, z);

    MatrixXd b;
    EnsembleWeights alpha;
    if (config.init) {
        b = problem.coefficients_in_order(config.init->coefficients);
        alpha = config.init->alpha;
    } else {
        auto stages = detail::stacking_stages(z, config.variant, config.lambdas, config.mu);
        b = problem.coefficients_in_order(stages.coefficients);
        alpha = std::move(stages.weights);
    }
    VectorXd a = problem.weights_in_order(alpha);
    double a0 = alpha.intercept;

    double previous = problem.objective(b, a0, a);
    detail::require(std::isfinite(previous), "oec_fit: non-finite objective at the starting point");
    model.objective_trace.push_back(previous);

    for (int iter = 1; iter <= config.max_iter; ++iter) {
        for (Index k = 0; k < problem.blocks(); ++k) {
            bool singular = false;
            b.col(k) = problem.update_beta(b, a0, a, k, singular);
        }
        const EnsembleWeights w = problem.update_alpha(b);
        a = w.weights;
        a0 = w.intercept;

        const double current = problem.objective(b, a0, a);
        if (!std::isfinite(current))
            detail::fail("oec_fit: non-finite objective at iteration " + std::to_string(iter));
        model.objective_trace.push_back(current);
        model.iterations = iter;
        if (std::abs(current - previous) / std::max(1.0, std::abs(previous)) < config.tol) {
            model.converged = true;
            break;
        }
        previous = current;
    }

    model.coefficients = {problem.block_ids(), b};
    model.alpha = {a0, problem.block_ids(), a};
    return model;
}

inline VectorXd oec_predict(const OecModel& model, const MatrixXd& x_new)
{
    detail::require(x_new.cols() == model.standardizer.size(), "oec_predict: expected " +
                                                                   std::to_string(model.standardizer.size()) +
                                                                   " covariates, got " + std::to_string(x_new.cols()));
    return ensemble_predict(model.coefficients, model.alpha, model.standardizer.apply(x_new));
}

/// Starting point for a warm-started refit on the same studies.
inline OecInit warm_start(const OecModel& model) { return {model.coefficients, model.alpha}; }

/// Fits along increasing eta values, each fit started from the previous one.
/// The first fit starts from `config.init` (stacking estimates when empty).
inline std::vector<OecModel> oec_eta_path(OecConfig config, std::span<const Study> studies,
                                          std::span<const double> etas)
{
    for (std::size_t i = 1; i < etas.size(); ++i)
        detail::require(etas[i] > etas[i - 1], "oec_eta_path: eta values must increase");
    std::vector<OecModel> path;
    for (double eta : etas) {
        detail::require(eta > 0.0 && eta < 1.0, "oec_eta_path: eta values must lie in (0,1)");
        config.eta = eta;
        if (!path.empty()) config.init = warm_start(path.back());
        path.push_back(oec_fit(config, studies));
    }
    return path;
}

} // namespace oec
