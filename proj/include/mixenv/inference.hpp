#pragma once
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>
#include "mixenv/envelope.hpp"

namespace mixenv {

class Rng;

struct FisherOptions {
    /// Replace the beta block by its Schur complement after eliminating the
    /// intercept, and use efficient scores for beta.
    bool profile_intercept = false;
};

/// Total (summed over subjects) information for theta = (vec beta, vech Sigma_eps, vech Sigma_b).
struct FisherBlocks {
    int n = 0;
    Matrix I11;  ///< pr x pr
    Matrix I22;  ///< d_eps x d_eps
    Matrix I23;  ///< d_eps x d_b
    Matrix I33;  ///< d_b x d_b
    Matrix I32() const { return I23.transpose(); }
    Eigen::Index dim() const { return I11.rows() + I22.rows() + I33.rows(); }
    /// Full symmetric matrix with the beta/covariance cross blocks set to zero.
    Matrix assembled() const;
    /// assembled() / n.
    Matrix per_subject() const;
};

FisherBlocks fisher_info(const NaturalParams& theta, const LongitudinalDataset& data, const FisherOptions& opts = {});

/// Row i holds the score of subject i's log-likelihood at theta, ordered as in FisherBlocks.
Matrix subject_scores(const NaturalParams& theta, const LongitudinalDataset& data, const FisherOptions& opts = {});

/// d vech(Sigma_i) / d vech(Sigma_eps)^T in the closed Kronecker form.
Matrix m_i1(int r, int J);
/// d vech(Sigma_i) / d vech(Sigma_b)^T = C_{Jr} (A_i kron A_i) E_{qr}.
Matrix m_i2(const Subject& s, int r);
/// Subject information from the M_i1 / M_i2 route (dense Kronecker products, small problems only).
Matrix fisher_info_kronecker(const NaturalParams& theta, const Subject& s);

/// Jacobian of h(phi) = (vec beta, vech Sigma_eps, vech Sigma_b) with respect to
/// (vec eta, vec Gamma, vech Omega, vech Omega0, vech Sigma_b).
Matrix gradient_G(const EnvelopeParams& phi);

struct AvarPair {
    Matrix avar_em;   ///< J^{-1}
    Matrix avar_env;  ///< G (G^T J G)^+ G^T
};

/// info is the per-subject information. Throws InformationSingularError when
/// it is not positive definite.
AvarPair avar_envelope(const Matrix& info, const Matrix& G);

/// Both asymptotic covariances at a fitted envelope, intercept profiled out.
AvarPair envelope_avar_at(const EnvelopeParams& phi, const LongitudinalDataset& data);

struct ClosedFormAvar {
    Matrix avar_em;   ///< 2 x 2
    Matrix avar_env;  ///< 2 x 2
    double ratio22 = 1.0;
};

/// Closed-form avar for r = 2, J = 2, p = 1, Z = 1, diagonal Sigma_eps = diag(s1, s0),
/// Sigma_b = sb I, Gamma = e1, eta = 1.
ClosedFormAvar closed_form_avar_special(double sigma1sq, double sigma0sq, double sigma_bsq, double sigma_x1sq,
                                        double sigma_x2sq);

struct SpecialCase {
    LongitudinalDataset data;  ///< responses are zero; only the design matters
    NaturalParams theta;
    EnvelopeParams phi;
};

/// Deterministic design matching the closed-form configuration. Requires n even
/// and 2 sigma_x2sq >= sigma_x1sq.
SpecialCase special_case_setup(double sigma1sq, double sigma0sq, double sigma_bsq, double sigma_x1sq,
                               double sigma_x2sq, int n);

/// G (G^T J G)^+ G^T J V J G (G^T J G)^+ G^T with V = J^{-1} S J^{-1}, S the mean
/// outer product of subject scores. Per-subject scale.
Matrix sandwich_avar(const EnvelopeParams& phi_hat, const LongitudinalDataset& data);

/// Leading pr x pr block.
Matrix beta_block(const Matrix& avar, int r, int p);
/// sqrt(diag(avar_beta) / n) reshaped to r x p.
Matrix standard_errors(const Matrix& avar_beta, int r, int p, int n);

enum class FitterKind { standard_em, mixed_envelope };

struct BootstrapSpec {
    FitterKind kind = FitterKind::mixed_envelope;
    int u = 1;
    EnvelopeFitOptions options;
    std::optional<NaturalParams> warm_theta;  ///< standard_em start
    std::optional<EnvelopeParams> warm_phi;   ///< mixed_envelope start
};

/// Returns n subject indices drawn from {0..n-1}.
using Resampler = std::function<std::vector<int>(int n, Rng& rng)>;

struct BootstrapResult {
    Matrix se;                 ///< r x p
    std::vector<Matrix> draws; ///< successful beta estimates in replicate order
    int replicates = 0;
    int failed = 0;
};

/// Subject-level nonparametric bootstrap of beta. Replicate b uses
/// derive_seed(seed, b). Throws UnstableBootstrapError when more than 20% of
/// refits fail.
BootstrapResult bootstrap_se(const LongitudinalDataset& data, const BootstrapSpec& spec, int B, std::uint64_t seed,
                             const Resampler& resampler = {});

}  // namespace mixenv
