#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixenv/matkit.hpp"

namespace mixenv {

class Rng;

/// One subject's trajectory: columns are time points.
struct Subject {
    Matrix y;  ///< r x J_i
    Matrix x;  ///< p x J_i
    Matrix z;  ///< q x J_i

    Eigen::Index times() const { return y.cols(); }
};

struct LongitudinalDataset {
    int r = 0;
    int p = 0;
    int q = 0;
    std::vector<Subject> subjects;

    int n() const { return static_cast<int>(subjects.size()); }
    Eigen::Index j_total() const;
    bool balanced() const;
    /// Throws DataError if dimensions disagree, J_i < 1 or entries are not finite.
    void validate() const;
};

/// theta = (alpha, beta, Sigma_eps, Sigma_b).
struct NaturalParams {
    Vector alpha;
    Matrix beta;       ///< r x p
    Matrix sigma_eps;  ///< r x r
    Matrix sigma_b;    ///< qr x qr, acting on vec(b_i)
};

/// phi = (alpha, Gamma, eta, Omega, Omega0, Sigma_b).
///
/// gamma0 fixes the basis that omega0 is expressed in. When it is left empty
/// an orthonormal complement of gamma is computed.
struct EnvelopeParams {
    Vector alpha;
    Matrix gamma;   ///< r x u, orthonormal columns
    Matrix gamma0;  ///< r x (r-u), optional
    Matrix eta;     ///< u x p
    Matrix omega;   ///< u x u
    Matrix omega0;  ///< (r-u) x (r-u)
    Matrix sigma_b;

    int u() const { return static_cast<int>(gamma.cols()); }
    int r() const { return static_cast<int>(gamma.rows()); }
    /// gamma0 if set, else a computed orthonormal complement.
    Matrix complement() const;
};

NaturalParams natural_of_envelope(const EnvelopeParams& phi);

/// Envelope coordinates of theta for a given basis: eta = G^T beta,
/// Omega = G^T Sigma_eps G, Omega0 = G0^T Sigma_eps G0.
EnvelopeParams envelope_of_natural(const NaturalParams& theta, const Matrix& gamma);

/// A_i = Z_i^T kron I_r  (rJ_i x qr).
Matrix design_a(const Subject& s, int r);

/// Sigma_i = I_J kron Sigma_eps + A_i Sigma_b A_i^T.
Matrix subject_covariance(const NaturalParams& theta, const Subject& s);

/// D_i = vec(Y_i - alpha 1^T - beta X_i).
Vector subject_residual(const NaturalParams& theta, const Subject& s);

/// Exact Gaussian observed-data log-likelihood with all constants.
double obs_loglik(const NaturalParams& theta, const LongitudinalDataset& data);

/// Throws DataError if theta does not conform to data.
void check_dimensions(const NaturalParams& theta, const LongitudinalDataset& data);

struct StrictConditionReport {
    double beta_violation = 0.0;        ///< max |G0^T beta|
    double z_violation = 0.0;           ///< max |Z_i kron G0| over subjects
    double covariance_violation = 0.0;  ///< max |I kron (G^T S G0) + (Z_i^T kron G^T) Sb (Z_i kron G0)|
    bool satisfied = false;
};

StrictConditionReport check_strict_conditions(const EnvelopeParams& phi, const NaturalParams& theta,
                                              const LongitudinalDataset& data, double tol = 1e-8);

enum class Scenario { demo2d, balanced_main, unbalanced_main, custom };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct SimulationConfig {
    Scenario scenario = Scenario::custom;
    int n = 50;
    int r = 10;
    int p = 6;
    int q = 2;
    int u = 1;
    int j_min = 5;  ///< J_i drawn uniformly on [j_min, j_max]; equal values give a balanced design
    int j_max = 5;
    double gamma_lo = 0.0, gamma_hi = 1.0;
    double beta0_lo = -10.0, beta0_hi = 10.0;
    double b_lo = -10.0, b_hi = 10.0;
    double omega_scale = 0.01;
    double omega0_scale = 100.0;
    double x_lo = -10.0, x_hi = 10.0;
    double z_lo = -10.0, z_hi = 10.0;
    int time_varying_x = 3;  ///< leading rows of X that change over time; the rest are per-subject constants
    bool z_intercept = true; ///< first row of Z fixed at 1
    std::uint64_t seed = 1;
    /// When set, parameters come from this seed and stay fixed across data seeds.
    std::optional<std::uint64_t> parameter_seed;

    /// Defaults for a named scenario.
    static SimulationConfig preset(Scenario s, std::uint64_t seed);
    void validate() const;
};

struct Simulation {
    LongitudinalDataset data;
    NaturalParams theta;
    EnvelopeParams phi;
    std::vector<Matrix> random_effects;  ///< b_i, r x q
};

Simulation simulate(const SimulationConfig& config);

/// Draws responses from model (2) given designs. Per subject the order is
/// vec(b_i) then epsilon column by column.
LongitudinalDataset simulate_responses(const NaturalParams& theta, const std::vector<Matrix>& x,
                                       const std::vector<Matrix>& z, Rng& rng,
                                       std::vector<Matrix>* random_effects = nullptr);

/// Smallest subspace reducing m that contains span(b), as an orthonormal basis.
Matrix envelope_basis(const Matrix& m, const Matrix& b, double tol = 1e-8);

/// (1_J kron Phi) / sqrt(J) where Phi spans the (Sigma_eps / J + Sigma_b)-envelope
/// of span(beta) for a random-intercept model with time-invariant predictors.
Matrix prop1_basis(const EnvelopeParams& phi_small, int J);

}  // namespace mixenv
