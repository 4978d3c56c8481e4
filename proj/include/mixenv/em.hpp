#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixenv/model.hpp"

namespace mixenv {

/// E-step output: b_i | Y_i ~ N(mu[i], cov[i]) on vec(b_i).
struct PosteriorMoments {
    std::vector<Vector> mu;
    std::vector<Matrix> cov;
};

struct EmOptions {
    int max_iter = 2000;
    double delta_tol = 1e-8;
    bool loglik_check = true;  ///< record obs_loglik after every iteration
    /// After each M-step, re-solve (alpha, beta) by generalized least squares
    /// under the current covariances (an ECME step). Pure EM when false.
    bool gls_mean_step = true;

    void validate() const;
};

struct FitResult {
    NaturalParams theta_hat;
    std::optional<EnvelopeParams> phi_hat;
    int u = -1;  ///< envelope dimension, -1 for the unconstrained fit
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;
    double delta_final = 0.0;
    double loglik = 0.0;
    double bic = 0.0;
    int rejected_basis_updates = 0;  ///< 1D proposals discarded because they lowered the objective
    std::string message;
};

PosteriorMoments e_step(const NaturalParams& theta, const LongitudinalDataset& data);

/// Centered complete-data summaries used by both M-steps.
struct PosteriorStats {
    Eigen::Index j_total = 0;
    Vector ybar, xbar, mubar;
    Matrix syy;  ///< U_c U_c^T
    Matrix syx;  ///< U_c X_c^T
    Matrix sxx;  ///< X_c X_c^T
    Matrix psi;  ///< sum_ij A_ij Sigma_post,i A_ij^T
    Matrix sigma_b;  ///< (sum Sigma_post,i + sum mu_i mu_i^T) / n

    /// Unconstrained regression coefficient U_c X_c^T (X_c X_c^T)^{-1}.
    Matrix beta_ols() const;
    /// (U_c Q_X U_c^T + Psi) / J.
    Matrix residual_cov() const;
    /// (U_c U_c^T + Psi) / J.
    Matrix marginal_cov() const;
};

/// Throws DesignError when X_c X_c^T is singular.
PosteriorStats posterior_stats(const PosteriorMoments& post, const LongitudinalDataset& data);

NaturalParams m_step(const NaturalParams& theta_t, const PosteriorMoments& post, const LongitudinalDataset& data);

/// Maximizes obs_loglik over (alpha, eta) with beta = gamma * eta, holding
/// gamma and both covariances fixed. Updates theta in place.
void gls_mean_update(NaturalParams& theta, const LongitudinalDataset& data, const Matrix& gamma);

/// Starting point: alpha = 0, beta = 0, Sigma_eps = I, Sigma_b = I.
NaturalParams initial_params(const LongitudinalDataset& data);

/// Relative L1 change of beta; falls back to absolute change, and to the
/// covariance change when beta is identically zero.
double convergence_delta(const NaturalParams& prev, const NaturalParams& next);

FitResult fit_standard_em(const LongitudinalDataset& data, const EmOptions& opts = {},
                          const std::optional<NaturalParams>& start = std::nullopt);

}  // namespace mixenv
