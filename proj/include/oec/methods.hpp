#pragma once

#include <oec/optimal_ensemble.hpp>
#include <oec/stacking.hpp>
#include <oec/tuning.hpp>

#include <memory>
#include <string>
#include <vector>

namespace oec {

enum class Method { MssG, MssS, MssSn, OecG, OecS, OecSn, Tom, Ssm };

inline const std::vector<Method>& all_methods()
{
    static const std::vector<Method> m{Method::MssG, Method::MssS, Method::MssSn, Method::OecG,
                                       Method::OecS, Method::OecSn, Method::Tom,  Method::Ssm};
    return m;
}

inline std::string to_string(Method m)
{
    switch (m) {
    case Method::MssG: return "mss-g";
    case Method::MssS: return "mss-s";
    case Method::MssSn: return "mss-sn";
    case Method::OecG: return "oec-g";
    case Method::OecS: return "oec-s";
    case Method::OecSn: return "oec-sn";
    case Method::Tom: return "tom";
    case Method::Ssm: return "ssm";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    for (Method m : all_methods())
        if (to_string(m) == s) return m;
    detail::fail("unknown method '" + s + "' (expected mss-g|mss-s|mss-sn|oec-g|oec-s|oec-sn|tom|ssm)");
}

inline bool is_oec(Method m) { return m == Method::OecG || m == Method::OecS || m == Method::OecSn; }
inline bool is_mss(Method m) { return m == Method::MssG || m == Method::MssS || m == Method::MssSn; }

/// Methods that never see the target study during training.
inline bool is_generalist(Method m) { return m == Method::MssG || m == Method::OecG || m == Method::Tom; }

inline Variant variant_for(Method m, const std::string& target)
{
    switch (m) {
    case Method::MssS:
    case Method::OecS: return Variant::specialist(target);
    case Method::MssSn:
    case Method::OecSn: return Variant::specialist_no_reuse(target);
    default: return Variant::generalist();
    }
}

/// The stacking counterpart of an OEC method.
inline Method mss_counterpart(Method m)
{
    switch (m) {
    case Method::OecG: return Method::MssG;
    case Method::OecS: return Method::MssS;
    case Method::OecSn: return Method::MssSn;
    default: detail::fail(to_string(m) + " has no stacking counterpart");
    }
}

/// OEC variants that need a tuned eta for `methods`.
inline std::vector<Variant> oec_variants(const std::vector<Method>& methods, const std::string& target)
{
    std::vector<Variant> out;
    for (Method m : methods) {
        if (!is_oec(m)) continue;
        const Variant v = variant_for(m, target);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

/// Fits `m` on `studies` with tuned hyperparameters. `target` names the study
/// that specialists and the study-specific model are fit for.
inline Predictor fit_method(Method m, std::span<const Study> studies, const std::string& target,
                            const Hyperparameters& hp)
{
    switch (m) {
    case Method::Ssm: {
        auto model = std::make_shared<LinearModel>(ssm_fit(find_study(studies, target), lambda_for(hp.lambdas, target)));
        return [model](const MatrixXd& x) { return predict(*model, x); };
    }
    case Method::Tom: {
        auto model = std::make_shared<LinearModel>(tom_fit(studies, hp.tom_lambda));
        return [model](const MatrixXd& x) { return predict(*model, x); };
    }
    case Method::MssG:
    case Method::MssS:
    case Method::MssSn: {
        auto model = std::make_shared<MssModel>(mss_fit(studies, variant_for(m, target), hp.lambdas, hp.stack_mu));
        return [model](const MatrixXd& x) { return mss_predict(*model, x); };
    }
    case Method::OecG:
    case Method::OecS:
    case Method::OecSn: {
        OecConfig c;
        c.variant = variant_for(m, target);
        c.eta = hp.eta_for(c.variant);
        c.mu = hp.oec_mu;
        c.lambdas = hp.lambdas;
        auto model = std::make_shared<OecModel>(oec_fit(c, studies));
        return [model](const MatrixXd& x) { return oec_predict(*model, x); };
    }
    }
    detail::fail("unhandled method");
}

inline double rmse(const VectorXd& pred, const VectorXd& truth)
{
    detail::require(pred.size() == truth.size(), "rmse: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                                     std::to_string(truth.size()) + ")");
    detail::require(pred.size() >= 1, "rmse: empty input");
    return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

} // namespace oec
