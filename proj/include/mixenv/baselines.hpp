#pragma once

#include <string>
#include <vector>

#include "mixenv/model.hpp"

namespace mixenv {

/// Cross-sectional regression data, one observation per column.
struct VectorizedRegressionData {
    Matrix y;  ///< d x N responses
    Matrix x;  ///< p x N predictors

    Eigen::Index n() const { return y.cols(); }
};

/// Stacks vec(Y_i) per subject. Requires a balanced design whose predictors
/// are constant over time within each subject.
VectorizedRegressionData vectorize_balanced(const LongitudinalDataset& data);

/// Every (subject, time) pair as one observation of model (1).
VectorizedRegressionData pool_observations(const LongitudinalDataset& data);

/// Copy of data with b_i Z_i removed from each response block.
LongitudinalDataset remove_random_effects(const LongitudinalDataset& data, const std::vector<Matrix>& b);

struct OlsFit {
    Vector alpha;
    Matrix beta;      ///< d x p
    Matrix sigma;     ///< residual covariance (maximum likelihood scaling)
    Matrix sigma_y;   ///< marginal response covariance
    Matrix sigma_x;   ///< predictor covariance
    Eigen::Index n = 0;
};

OlsFit fit_ols(const VectorizedRegressionData& vdata);

struct ReducedFit {
    Vector alpha;
    Matrix beta;
    Matrix gamma;  ///< d x u basis of the reducing subspace
    int u = 0;
    double loglik = 0.0;
    double bic = 0.0;
    std::string warning;
};

/// Classic response envelope at dimension u; the 1D basis uses
/// M = residual covariance and U = beta~ S_X beta~^T.
ReducedFit fit_response_envelope(const VectorizedRegressionData& vdata, int u, int restarts = 3);

struct ResponseEnvelopeSelection {
    int u_hat = 0;
    ReducedFit best;
    std::vector<double> bic;  ///< indexed by u
};

/// BIC over u = 0..d with penalty log(N) p u.
ResponseEnvelopeSelection select_response_envelope(const VectorizedRegressionData& vdata, int restarts = 3);

/// Response-side SIMPLS: directions maximize covariance with the predictors,
/// each new one orthogonal to M v_1..v_k with M the residual covariance.
/// The estimate projects OLS onto the extracted span.
ReducedFit fit_response_pls(const VectorizedRegressionData& vdata, int u);

}  // namespace mixenv
