#include "stackelberg/market_model.hpp"

#include <cmath>

namespace stackelberg {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DomainError("invalid model parameters: " + what);
}

void require_probability(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError("probability outside [0,1]: " + std::to_string(p));
    }
}

}  // namespace

void validate(const ModelParams& m) {
    const double fields[] = {m.mu1, m.mu2, m.sigma, m.r, m.T, m.gamma1,
                             m.gamma2, m.lambda1, m.lambda2, m.lambda0};
    for (double v : fields) require(std::isfinite(v), "all fields must be finite");
    require(m.mu1 > m.mu2, "mu1 > mu2");
    require(m.sigma > 0.0, "sigma > 0");
    require(m.T > 0.0, "T > 0");
    require(m.r > 0.0, "r > 0");
    require(m.gamma1 > 0.0, "gamma1 > 0");
    require(m.gamma2 > 0.0, "gamma2 > 0");
    require(m.lambda1 >= 0.0 && m.lambda1 < 1.0, "lambda1 in [0,1)");
    require(m.lambda2 >= 0.0 && m.lambda2 < 1.0, "lambda2 in [0,1)");
    require(m.lambda0 >= 0.0, "lambda0 >= 0");
}

DerivedConstants derive_constants(const ModelParams& m) {
    DerivedConstants c;
    c.kappa = m.lambda2 / (2.0 - m.lambda2);
    c.chi = (2.0 - m.lambda2 - m.lambda1) / (2.0 - m.lambda2);
    // Equal to (2 gamma2 - lambda2 gamma2 + lambda1 gamma1) / ((2 - lambda2 - lambda1) gamma1 gamma2);
    // this form reduces to 1/gamma1 exactly when both lambdas vanish.
    c.l = (1.0 / m.gamma1 + (1.0 - c.chi) / m.gamma2) / c.chi;
    return c;
}

Market::Market(const ModelParams& params) : Market(params, SkipValidation{}) {
    validate(params);
}

Market::Market(const ModelParams& params, SkipValidation)
    : params_(params),
      constants_(derive_constants(params)),
      spread_(params.mu1 - params.mu2),
      filter_scale_((params.mu1 - params.mu2) / params.sigma) {}

double Market::theta(double p) const {
    require_probability(p);
    return theta_unchecked(p);
}

double Market::beta(double p) const {
    require_probability(p);
    return beta_unchecked(p);
}

double Market::gamma_term(double p, double da2) const {
    require_probability(p);
    return gamma_term_unchecked(p, da2);
}

double Market::gamma_term_unchecked(double p, double da2) const noexcept {
    const double s = params_.sigma;
    const double shrink = 1.0 - 0.5 * params_.lambda2;
    return (theta_unchecked(p) - params_.r) / (s * s * params_.gamma2 * shrink) -
           beta_unchecked(p) * da2 / (s * shrink);
}

}  // namespace stackelberg
