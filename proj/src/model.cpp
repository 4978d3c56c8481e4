#include "mixenv/model.hpp"

#include <cmath>
#include <numbers>

#include "mixenv/errors.hpp"
#include "mixenv/rng.hpp"

namespace mixenv {

Eigen::Index LongitudinalDataset::j_total() const {
    Eigen::Index t = 0;
    for (const auto& s : subjects) t += s.times();
    return t;
}

bool LongitudinalDataset::balanced() const {
    for (const auto& s : subjects)
        if (s.times() != subjects.front().times()) return false;
    return true;
}

void LongitudinalDataset::validate() const {
    if (r < 1 || p < 0 || q < 0) throw DataError("dataset: invalid dimensions");
    if (subjects.empty()) throw DataError("dataset: no subjects");
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& s = subjects[i];
        const auto J = s.y.cols();
        if (J < 1) throw DataError("dataset: subject " + std::to_string(i) + " has no time points");
        if (s.y.rows() != r || s.x.rows() != p || s.z.rows() != q || s.x.cols() != J || s.z.cols() != J)
            throw DataError("dataset: subject " + std::to_string(i) + " has inconsistent block shapes");
        if (!s.y.allFinite() || !s.x.allFinite() || !s.z.allFinite())
            throw DataError("dataset: subject " + std::to_string(i) + " has non-finite entries");
    }
}

Matrix EnvelopeParams::complement() const {
    const int rr = r();
    if (gamma0.rows() == rr && gamma0.cols() == rr - u()) return gamma0;
    return orth_complement(gamma, rr);
}

NaturalParams natural_of_envelope(const EnvelopeParams& phi) {
    const int r = phi.r();
    const int u = phi.u();
    const Matrix g0 = phi.complement();
    NaturalParams theta;
    theta.alpha = phi.alpha;
    const Eigen::Index p = phi.eta.cols();
    if (u == 0) {
        theta.beta = Matrix::Zero(r, p);
        theta.sigma_eps = g0 * phi.omega0 * g0.transpose();
    } else {
        theta.beta = phi.gamma * phi.eta;
        theta.sigma_eps = phi.gamma * phi.omega * phi.gamma.transpose();
        if (u < r) theta.sigma_eps += g0 * phi.omega0 * g0.transpose();
    }
    theta.sigma_eps = symmetrize(theta.sigma_eps);
    theta.sigma_b = phi.sigma_b;
    return theta;
}

EnvelopeParams envelope_of_natural(const NaturalParams& theta, const Matrix& gamma) {
    EnvelopeParams phi;
    const auto r = theta.beta.rows();
    phi.alpha = theta.alpha;
    phi.gamma = gamma;
    phi.gamma0 = orth_complement(gamma, static_cast<int>(r));
    phi.eta = gamma.transpose() * theta.beta;
    phi.omega = symmetrize(gamma.transpose() * theta.sigma_eps * gamma);
    phi.omega0 = symmetrize(phi.gamma0.transpose() * theta.sigma_eps * phi.gamma0);
    phi.sigma_b = theta.sigma_b;
    return phi;
}

Matrix design_a(const Subject& s, int r) {
    return kron(s.z.transpose(), Matrix::Identity(r, r));
}

Matrix subject_covariance(const NaturalParams& theta, const Subject& s) {
    const auto r = theta.sigma_eps.rows();
    const auto J = s.times();
    Matrix cov = Matrix::Zero(r * J, r * J);
    for (Eigen::Index j = 0; j < J; ++j) cov.block(j * r, j * r, r, r) = theta.sigma_eps;
    if (s.z.rows() > 0) {
        const Matrix a = design_a(s, static_cast<int>(r));
        cov += a * theta.sigma_b * a.transpose();
    }
    return symmetrize(cov);
}

Vector subject_residual(const NaturalParams& theta, const Subject& s) {
    Matrix res = s.y - theta.beta * s.x;
    res.colwise() -= theta.alpha;
    return vec(res);
}

void check_dimensions(const NaturalParams& theta, const LongitudinalDataset& data) {
    const int r = data.r, p = data.p, q = data.q;
    if (theta.alpha.size() != r || theta.beta.rows() != r || theta.beta.cols() != p ||
        theta.sigma_eps.rows() != r || theta.sigma_eps.cols() != r || theta.sigma_b.rows() != q * r ||
        theta.sigma_b.cols() != q * r)
        throw DataError("parameters do not conform to the dataset dimensions");
}

double obs_loglik(const NaturalParams& theta, const LongitudinalDataset& data) {
    check_dimensions(theta, data);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double ll = 0.0;
    for (const auto& s : data.subjects) {
        const Matrix cov = subject_covariance(theta, s);
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() != Eigen::Success)
            throw SingularCovarianceError("obs_loglik: subject covariance is not positive definite");
        const Vector d = subject_residual(theta, s);
        const Matrix l = llt.matrixL();
        double logdet = 0.0;
        for (Eigen::Index k = 0; k < l.rows(); ++k) {
            if (!(l(k, k) > 0)) throw SingularCovarianceError("obs_loglik: subject covariance is singular");
            logdet += 2.0 * std::log(l(k, k));
        }
        const Vector w = llt.matrixL().solve(d);
        ll += -0.5 * static_cast<double>(d.size()) * log2pi - 0.5 * logdet - 0.5 * w.squaredNorm();
    }
    return ll;
}

StrictConditionReport check_strict_conditions(const EnvelopeParams& phi, const NaturalParams& theta,
                                              const LongitudinalDataset& data, double tol) {
    StrictConditionReport rep;
    const int r = data.r;
    const Matrix g = phi.gamma;
    const Matrix g0 = phi.complement();
    if (g0.cols() > 0) rep.beta_violation = (g0.transpose() * theta.beta).cwiseAbs().maxCoeff();
    if (g0.cols() > 0 && g.cols() > 0) {
        const Matrix cross = g.transpose() * theta.sigma_eps * g0;
        for (const auto& s : data.subjects) {
            if (s.z.rows() > 0) {
                rep.z_violation = std::max(rep.z_violation, kron(s.z, g0).cwiseAbs().maxCoeff());
            }
            const auto J = s.times();
            Matrix c = kron(Matrix::Identity(J, J), cross);
            if (s.z.rows() > 0) c += kron(s.z.transpose(), g.transpose()) * theta.sigma_b * kron(s.z, g0);
            rep.covariance_violation = std::max(rep.covariance_violation, c.cwiseAbs().maxCoeff());
        }
    } else if (g0.cols() > 0) {
        for (const auto& s : data.subjects)
            if (s.z.rows() > 0) rep.z_violation = std::max(rep.z_violation, kron(s.z, g0).cwiseAbs().maxCoeff());
    }
    (void)r;
    rep.satisfied = rep.beta_violation <= tol && rep.z_violation <= tol && rep.covariance_violation <= tol;
    return rep;
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::demo2d: return "demo2d";
        case Scenario::balanced_main: return "balanced_main";
        case Scenario::unbalanced_main: return "unbalanced_main";
        case Scenario::custom: return "custom";
    }
    return "custom";
}

Scenario scenario_from_string(const std::string& s) {
    if (s == "demo2d") return Scenario::demo2d;
    if (s == "balanced_main") return Scenario::balanced_main;
    if (s == "unbalanced_main") return Scenario::unbalanced_main;
    if (s == "custom") return Scenario::custom;
    throw ConfigError("unknown scenario: " + s);
}

SimulationConfig SimulationConfig::preset(Scenario s, std::uint64_t seed) {
    SimulationConfig c;
    c.scenario = s;
    c.seed = seed;
    switch (s) {
        case Scenario::demo2d:
            c.n = 2000; c.r = 2; c.p = 1; c.q = 1; c.u = 1; c.j_min = c.j_max = 5;
            c.time_varying_x = 0;
            break;
        case Scenario::unbalanced_main:
            c.j_min = 5; c.j_max = 9;
            break;
        case Scenario::balanced_main:
        case Scenario::custom:
            break;
    }
    return c;
}

void SimulationConfig::validate() const {
    if (n < 1 || r < 1 || p < 1 || q < 0) throw ConfigError("simulation: dimensions must be positive");
    if (u < 0 || u > r) throw ConfigError("simulation: u must lie in [0, r]");
    if (j_min < 1 || j_max < j_min) throw ConfigError("simulation: invalid J range");
    if (time_varying_x < 0 || time_varying_x > p) throw ConfigError("simulation: invalid time-varying count");
    if (!(omega_scale > 0) || !(omega0_scale > 0)) throw ConfigError("simulation: Omega scales must be positive");
    if (scenario == Scenario::demo2d && (r != 2 || p != 1 || q != 1 || u != 1))
        throw ConfigError("simulation: demo2d has fixed dimensions r=2, p=1, q=1, u=1");
}

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
    return m;
}

EnvelopeParams demo2d_parameters() {
    EnvelopeParams phi;
    phi.alpha = Vector::Zero(2);
    phi.gamma = Matrix(2, 1);
    phi.gamma << -1.0, 1.0;
    phi.gamma /= std::sqrt(2.0);
    phi.gamma0 = Matrix(2, 1);
    phi.gamma0 << 1.0, 1.0;
    phi.gamma0 /= std::sqrt(2.0);
    Vector beta(2);
    beta << -7.07, 7.07;
    phi.eta = phi.gamma.transpose() * beta;
    phi.omega = Matrix::Constant(1, 1, 1e-5);
    phi.omega0 = Matrix::Constant(1, 1, 1.0);
    phi.sigma_b = Matrix(2, 2);
    phi.sigma_b << 0.2, 0.0, 0.0, 600.0;
    return phi;
}

EnvelopeParams random_parameters(const SimulationConfig& c, Rng& rng) {
    EnvelopeParams phi;
    phi.alpha = Vector::Zero(c.r);
    const Matrix graw = uniform_matrix(rng, c.r, c.u, c.gamma_lo, c.gamma_hi);
    const Matrix beta0 = uniform_matrix(rng, c.r, c.p, c.beta0_lo, c.beta0_hi);
    const Matrix b = uniform_matrix(rng, c.q * c.r, c.q * c.r, c.b_lo, c.b_hi);
    if (c.u > 0) {
        Eigen::HouseholderQR<Matrix> qr(graw);
        phi.gamma = qr.householderQ() * Matrix::Identity(c.r, c.u);
    } else {
        phi.gamma = Matrix(c.r, 0);
    }
    phi.gamma0 = orth_complement(phi.gamma, c.r);
    phi.eta = phi.gamma.transpose() * beta0;  // beta = P_Gamma beta0
    phi.omega = c.omega_scale * Matrix::Identity(c.u, c.u);
    phi.omega0 = c.omega0_scale * Matrix::Identity(c.r - c.u, c.r - c.u);
    phi.sigma_b = symmetrize(b * b.transpose());
    return phi;
}

}  // namespace

LongitudinalDataset simulate_responses(const NaturalParams& theta, const std::vector<Matrix>& x,
                                       const std::vector<Matrix>& z, Rng& rng,
                                       std::vector<Matrix>* random_effects) {
    if (x.size() != z.size()) throw ConfigError("simulate_responses: design lists differ in length");
    const auto r = theta.sigma_eps.rows();
    LongitudinalDataset data;
    data.r = static_cast<int>(r);
    data.p = static_cast<int>(theta.beta.cols());
    data.q = x.empty() ? 0 : static_cast<int>(z.front().rows());
    Eigen::LLT<Matrix> le(theta.sigma_eps);
    if (le.info() != Eigen::Success) throw SingularCovarianceError("simulate: Sigma_eps is not positive definite");
    const Matrix leps = le.matrixL();
    Matrix lb(0, 0);
    if (data.q > 0) {
        Eigen::LLT<Matrix> lbb(theta.sigma_b);
        if (lbb.info() != Eigen::Success) throw SingularCovarianceError("simulate: Sigma_b is not positive definite");
        lb = lbb.matrixL();
    }
    if (random_effects) random_effects->clear();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto J = x[i].cols();
        Vector zb(data.q * r);
        for (Eigen::Index k = 0; k < zb.size(); ++k) zb(k) = rng.normal();
        const Matrix b = data.q > 0 ? unvec(lb * zb, r, data.q) : Matrix(r, 0);
        Subject s;
        s.x = x[i];
        s.z = z[i];
        s.y = theta.beta * x[i] + b * z[i];
        s.y.colwise() += theta.alpha;
        for (Eigen::Index j = 0; j < J; ++j) {
            Vector e(r);
            for (Eigen::Index k = 0; k < r; ++k) e(k) = rng.normal();
            s.y.col(j) += leps * e;
        }
        data.subjects.push_back(std::move(s));
        if (random_effects) random_effects->push_back(b);
    }
    return data;
}

Simulation simulate(const SimulationConfig& config) {
    config.validate();
    Rng rng(config.seed);
    Simulation sim;
    if (config.scenario == Scenario::demo2d) {
        sim.phi = demo2d_parameters();
    } else if (config.parameter_seed) {
        Rng prng(*config.parameter_seed);
        sim.phi = random_parameters(config, prng);
    } else {
        sim.phi = random_parameters(config, rng);
    }
    sim.theta = natural_of_envelope(sim.phi);

    std::vector<Matrix> xs, zs;
    xs.reserve(config.n);
    zs.reserve(config.n);
    for (int i = 0; i < config.n; ++i) {
        const int J = config.j_min == config.j_max ? config.j_min : rng.uniform_int(config.j_min, config.j_max);
        Matrix x(config.p, J), z(config.q, J);
        if (config.scenario == Scenario::demo2d) {
            x.setConstant(i < config.n / 2 ? 0.0 : 1.0);
            z.setOnes();
        } else {
            for (int k = config.time_varying_x; k < config.p; ++k) x.row(k).setConstant(rng.uniform(config.x_lo, config.x_hi));
            for (int j = 0; j < J; ++j)
                for (int k = 0; k < config.time_varying_x; ++k) x(k, j) = rng.uniform(config.x_lo, config.x_hi);
            const int zfirst = config.z_intercept ? 1 : 0;
            if (config.z_intercept && config.q > 0) z.row(0).setOnes();
            for (int j = 0; j < J; ++j)
                for (int k = zfirst; k < config.q; ++k) z(k, j) = rng.uniform(config.z_lo, config.z_hi);
        }
        xs.push_back(std::move(x));
        zs.push_back(std::move(z));
    }
    sim.data = simulate_responses(sim.theta, xs, zs, rng, &sim.random_effects);
    sim.data.q = config.q;
    return sim;
}

Matrix envelope_basis(const Matrix& m, const Matrix& b, double tol) {
    const auto r = m.rows();
    if (b.cols() == 0 || b.norm() == 0.0) return Matrix(r, 0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    const Vector& ev = es.eigenvalues();
    const Matrix& V = es.eigenvectors();
    const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    Matrix out(r, 0);
    Eigen::Index start = 0;
    while (start < r) {
        Eigen::Index end = start + 1;
        while (end < r && ev(end) - ev(end - 1) <= tol * scale) ++end;
        const Matrix vc = V.middleCols(start, end - start);
        const Matrix coef = vc.transpose() * b;
        if (coef.norm() > tol * b.norm()) {
            const Matrix w = vc * orth(coef, tol);
            Matrix grown(r, out.cols() + w.cols());
            grown << out, w;
            out = grown;
        }
        start = end;
    }
    return out;
}

Matrix prop1_basis(const EnvelopeParams& phi_small, int J) {
    if (J < 1) throw ConfigError("prop1_basis: J must be >= 1");
    const NaturalParams theta = natural_of_envelope(phi_small);
    const auto r = theta.sigma_eps.rows();
    if (theta.sigma_b.rows() != r) throw ConfigError("prop1_basis: requires a random intercept (q = 1)");
    const Matrix m = theta.sigma_eps / static_cast<double>(J) + theta.sigma_b;
    const Matrix phi = envelope_basis(m, theta.beta);
    return kron(Matrix::Ones(J, 1), phi) / std::sqrt(static_cast<double>(J));
}

}  // namespace mixenv
