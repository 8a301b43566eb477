#pragma once

/**
 * @file market_model.hpp
 * @brief Market and preference constants of the two-investor game.
 *
 * All wealth and strategy quantities are discounted. The filter coefficients
 * theta(p) and beta(p) describe the observable drift estimate and the
 * volatility of the posterior probability P(t) that the drift equals mu1.
 */

#include <stdexcept>
#include <string>

namespace stackelberg {

/// Thrown for parameter or argument values outside the model domain.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelParams {
    double mu1 = 0.10;     ///< drift hypothesis 1 (1/time)
    double mu2 = 0.02;     ///< drift hypothesis 2 (1/time), mu2 < mu1
    double sigma = 0.2;    ///< stock volatility (1/sqrt(time))
    double r = 0.03;       ///< risk-free rate
    double T = 1.0;        ///< horizon
    double gamma1 = 2.0;   ///< leader risk aversion
    double gamma2 = 2.0;   ///< follower risk aversion
    double lambda1 = 0.5;  ///< leader relative-concern weight
    double lambda2 = 0.5;  ///< follower relative-concern weight
    double lambda0 = 0.1;  ///< entropy weight

    bool operator==(const ModelParams&) const = default;
};

/// Throws DomainError naming the first violated constraint.
void validate(const ModelParams& params);

struct DerivedConstants {
    double kappa = 0.0;  ///< follower slope on the leader's action, lambda2/(2-lambda2)
    double chi = 1.0;    ///< (2-lambda2-lambda1)/(2-lambda2)
    double l = 0.0;      ///< effective risk tolerance of the leader's mean
};

DerivedConstants derive_constants(const ModelParams& params);

/**
 * Validated, immutable model. Every solver and simulator takes a Market so
 * the numerical kernels never re-check parameters.
 */
class Market {
public:
    struct SkipValidation {};

    explicit Market(const ModelParams& params);

    /// Test-harness constructor: accepts e.g. mu1 == mu2 (beta identically zero).
    Market(const ModelParams& params, SkipValidation);

    const ModelParams& params() const noexcept { return params_; }
    const DerivedConstants& constants() const noexcept { return constants_; }

    /// (mu1 - mu2) p + mu2. Throws DomainError unless p is in [0, 1].
    double theta(double p) const;
    /// ((mu1 - mu2) / sigma) p (1 - p). Throws DomainError unless p is in [0, 1].
    double beta(double p) const;

    // Unchecked variants for inner loops whose callers guarantee p in [0, 1].
    double theta_unchecked(double p) const noexcept { return spread_ * p + params_.mu2; }
    double beta_unchecked(double p) const noexcept { return filter_scale_ * p * (1.0 - p); }

    /// max over [0,1] of beta, attained at p = 1/2.
    double beta_max() const noexcept { return 0.25 * filter_scale_; }

    /**
     * u1-independent part of the follower's response,
     *   Gamma(t,p) = (theta(p)-r) / (sigma^2 gamma2 (1-lambda2/2))
     *              - beta(p) da2 / (sigma (1-lambda2/2)),
     * where da2 is the p-derivative of a2 at (t,p).
     */
    double gamma_term(double p, double da2) const;
    double gamma_term_unchecked(double p, double da2) const noexcept;

private:
    ModelParams params_;
    DerivedConstants constants_;
    double spread_ = 0.0;
    double filter_scale_ = 0.0;
};

}  // namespace stackelberg
