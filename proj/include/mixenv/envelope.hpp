#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixenv/em.hpp"

namespace mixenv {

/// Inputs of the greedy 1D basis construction.
struct OneDProblem {
    Matrix M;  ///< r x r positive definite
    Matrix U;  ///< r x r positive semidefinite
    int u = 1;
};

struct OneDOptions {
    int restarts = 3;          ///< random unit-vector starts per column
    double inner_tol = 1e-10;  ///< Riemannian gradient norm at which a local search stops
    int max_inner_iter = 200;
};

enum class BicPenalty { log_jtotal, log_n };

std::string to_string(BicPenalty b);

struct EnvelopeFitOptions {
    EmOptions em;
    int restarts = 3;
    double inner_tol = 1e-10;
    BicPenalty bic_penalty = BicPenalty::log_jtotal;

    OneDOptions oned() const { return {restarts, inner_tol, 200}; }
    void validate() const;
};

/// D_k(w) = log(w^T A w) + log(w^T B w).
double oned_objective(const Vector& w, const Matrix& a, const Matrix& b);

/// Greedy column-by-column basis: g_{k+1} = G0k argmin D_k(w) over the unit sphere.
/// Column k of `warm`, projected on the current complement, is an extra start for step k.
Matrix oneD_basis(const OneDProblem& prob, const OneDOptions& opts = {}, const Matrix* warm = nullptr);

/// F = log det{P (U_c Q_X U_c^T + Psi) P + Q (U_c U_c^T + Psi) Q}.
double envelope_objective_F(const Matrix& gamma, const Matrix& uc, const Matrix& xc, const Matrix& psi);

/// Same objective from the two material and marginal matrices
/// a = U_c Q_X U_c^T + Psi and b = U_c U_c^T + Psi (any common scaling).
double envelope_objective_F_cov(const Matrix& gamma, const Matrix& a, const Matrix& b);

struct EnvelopeMStep {
    EnvelopeParams phi;
    NaturalParams theta;
    bool basis_rejected = false;  ///< the proposal raised F, previous basis kept
};

/// Envelope-constrained M-step. The basis comes from the 1D construction on
/// M = (U_c Q_X U_c^T + Psi)/J and U = U_c P_X U_c^T / J; when `gamma_prev` is
/// given, a proposal with larger F is discarded in favour of gamma_prev.
EnvelopeMStep envelope_m_step(const NaturalParams& theta_t, const PosteriorMoments& post,
                              const LongitudinalDataset& data, int u, const EnvelopeFitOptions& opts = {},
                              const Matrix* gamma_prev = nullptr);

FitResult fit_mixed_envelope(const LongitudinalDataset& data, int u, const EnvelopeFitOptions& opts = {},
                             const std::optional<EnvelopeParams>& start = std::nullopt);

double bic_penalty_coefficient(const LongitudinalDataset& data, BicPenalty b);

struct BicEntry {
    int u = 0;
    double loglik = 0.0;
    double bic = 0.0;
    int iterations = 0;
    bool converged = false;
    bool failed = false;
    std::string message;
};

struct BicSelection {
    int u_hat = -1;
    FitResult best_fit;
    std::vector<BicEntry> table;
    bool had_failures = false;
};

/// Fits u = 0..r and returns the BIC minimizer; ties go to the smaller u.
BicSelection select_u_bic(const LongitudinalDataset& data, const EnvelopeFitOptions& opts = {});

}  // namespace mixenv
