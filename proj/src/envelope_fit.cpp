#include "mixenv/envelope.hpp"

#include <cmath>
#include <limits>

#include "mixenv/errors.hpp"
#include "mixenv/rng.hpp"

namespace mixenv {

std::string to_string(BicPenalty b) { return b == BicPenalty::log_n ? "n" : "jtotal"; }

void EnvelopeFitOptions::validate() const {
    em.validate();
    if (restarts < 1) throw ConfigError("restarts must be >= 1");
    if (!(inner_tol > 0)) throw ConfigError("inner_tol must be positive");
}

double oned_objective(const Vector& w, const Matrix& a, const Matrix& b) {
    return std::log(w.dot(a * w)) + std::log(w.dot(b * w));
}

namespace {

struct LocalResult {
    Vector w;
    double value;
};

// Orthonormal basis of the tangent space at unit w, from the Householder
// reflector mapping w to a coordinate axis.
Matrix tangent_basis(const Vector& w) {
    const auto d = w.size();
    Vector v = w;
    v(0) += w(0) >= 0 ? 1.0 : -1.0;
    const Matrix h = Matrix::Identity(d, d) - (2.0 / v.squaredNorm()) * v * v.transpose();
    return h.rightCols(d - 1);
}

// Damped Riemannian Newton on the unit sphere.
LocalResult sphere_newton(Vector w, const Matrix& a, const Matrix& b, const OneDOptions& opts) {
    w.normalize();
    double f = oned_objective(w, a, b);
    for (int it = 0; it < opts.max_inner_iter; ++it) {
        const Vector aw = a * w, bw = b * w;
        const double wa = w.dot(aw), wb = w.dot(bw);
        const Vector grad = 2.0 * aw / wa + 2.0 * bw / wb;
        const Matrix tb = tangent_basis(w);
        const Vector g = tb.transpose() * grad;
        if (g.norm() <= opts.inner_tol) break;
        const Matrix he = 2.0 * a / wa + 2.0 * b / wb - 4.0 * aw * aw.transpose() / (wa * wa) -
                          4.0 * bw * bw.transpose() / (wb * wb);
        Matrix h = symmetrize(tb.transpose() * he * tb);
        h.diagonal().array() -= w.dot(grad);
        Eigen::SelfAdjointEigenSolver<Matrix> es(h);
        const Vector& ev = es.eigenvalues();
        const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1.0);
        const double floor = 1e-8 * scale;
        Vector inv(ev.size());
        for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = 1.0 / std::max(std::abs(ev(i)), floor);
        Vector step = -(es.eigenvectors() * (inv.asDiagonal() * (es.eigenvectors().transpose() * g)));
        const double slope = g.dot(step);
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            Vector cand = w + tb * (t * step);
            cand.normalize();
            const double fc = oned_objective(cand, a, b);
            if (fc <= f + 1e-4 * t * slope) {
                moved = fc < f;
                w = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;
    }
    return {w, f};
}

Matrix top_eigvecs(const Matrix& m, int count, bool largest) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    const auto d = m.rows();
    count = std::min<int>(count, static_cast<int>(d));
    Matrix out(d, count);
    for (int i = 0; i < count; ++i) out.col(i) = es.eigenvectors().col(largest ? d - 1 - i : i);
    return out;
}

}  // namespace

Matrix oneD_basis(const OneDProblem& prob, const OneDOptions& opts, const Matrix* warm) {
    const auto r = prob.M.rows();
    if (prob.M.cols() != r || prob.U.rows() != r || prob.U.cols() != r)
        throw std::invalid_argument("oneD_basis: M and U must be square and conformable");
    if (prob.u < 0 || prob.u > r) throw std::invalid_argument("oneD_basis: u out of range");
    if (opts.restarts < 1) throw ConfigError("oneD_basis: restarts must be >= 1");
    Matrix gamma(r, 0);
    if (prob.u == 0) return gamma;
    const Matrix mu_sum = symmetrize(prob.M + prob.U);
    Rng rng(0x1d0a5eedULL);
    for (int k = 0; k < prob.u; ++k) {
        const Matrix g0 = orth_complement(gamma, static_cast<int>(r));
        const auto d = g0.cols();
        Vector best;
        if (d == 1) {
            best = Vector::Ones(1);
        } else {
            const Matrix mk = symmetrize(g0.transpose() * prob.M * g0);
            const Matrix nk = inverse_spd(symmetrize(g0.transpose() * mu_sum * g0));
            std::vector<Vector> starts;
            const Matrix top = top_eigvecs(g0.transpose() * mu_sum * g0, 2, true);
            const Matrix bottom = top_eigvecs(mk, 2, false);
            for (Eigen::Index i = 0; i < top.cols(); ++i) starts.push_back(top.col(i));
            for (Eigen::Index i = 0; i < bottom.cols(); ++i) starts.push_back(bottom.col(i));
            if (warm && k < warm->cols()) {
                const Vector c = g0.transpose() * warm->col(k);
                if (c.norm() > 1e-6) starts.push_back(c.normalized());
            }
            for (int s = 0; s < opts.restarts; ++s) {
                Vector v(d);
                for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
                if (v.norm() == 0) v(0) = 1.0;
                starts.push_back(v.normalized());
            }
            double fbest = std::numeric_limits<double>::infinity();
            for (const auto& s0 : starts) {
                const LocalResult lr = sphere_newton(s0, mk, nk, opts);
                if (lr.value < fbest - 1e-12) {
                    fbest = lr.value;
                    best = lr.w;
                }
            }
        }
        Vector g = g0 * best;
        g -= gamma * (gamma.transpose() * g);
        g.normalize();
        Matrix grown(r, k + 1);
        grown << gamma, g;
        gamma = grown;
    }
    return gamma;
}

double envelope_objective_F_cov(const Matrix& gamma, const Matrix& a, const Matrix& b) {
    const auto r = a.rows();
    const Matrix p = gamma.cols() > 0 ? Matrix(gamma * gamma.transpose()) : Matrix::Zero(r, r);
    const Matrix q = Matrix::Identity(r, r) - p;
    const Matrix m = symmetrize(p * a * p + q * b * q);
    return logdet_spd(m);
}

double envelope_objective_F(const Matrix& gamma, const Matrix& uc, const Matrix& xc, const Matrix& psi) {
    Matrix a = uc * uc.transpose() + psi;
    const Matrix b = a;
    if (xc.rows() > 0) {
        const Matrix sxx = xc * xc.transpose();
        const Matrix sux = uc * xc.transpose();
        a -= sux * sxx.llt().solve(sux.transpose());
    }
    return envelope_objective_F_cov(gamma, symmetrize(a), symmetrize(b));
}

EnvelopeMStep envelope_m_step(const NaturalParams& theta_t, const PosteriorMoments& post,
                              const LongitudinalDataset& data, int u, const EnvelopeFitOptions& opts,
                              const Matrix* gamma_prev) {
    check_dimensions(theta_t, data);
    const int r = data.r;
    if (u < 0 || u > r) throw ConfigError("envelope dimension must lie in [0, r]");
    const PosteriorStats st = posterior_stats(post, data);
    const Matrix sres = st.residual_cov();
    const Matrix smarg = st.marginal_cov();
    const Matrix beta_full = st.beta_ols();

    EnvelopeMStep out;
    Matrix gamma;
    if (u == 0) {
        gamma = Matrix(r, 0);
    } else if (u == r) {
        gamma = Matrix::Identity(r, r);
    } else {
        OneDProblem prob{sres, symmetrize(smarg - sres), u};
        gamma = oneD_basis(prob, opts.oned(), gamma_prev);
        if (gamma_prev && gamma_prev->cols() == u) {
            const double f_new = envelope_objective_F_cov(gamma, sres, smarg);
            const double f_old = envelope_objective_F_cov(*gamma_prev, sres, smarg);
            if (f_new > f_old) {
                gamma = *gamma_prev;
                out.basis_rejected = true;
            }
        }
    }
    const Matrix p = u > 0 ? Matrix(gamma * gamma.transpose()) : Matrix::Zero(r, r);
    const Matrix q = Matrix::Identity(r, r) - p;
    out.theta.beta = p * beta_full;
    out.theta.sigma_eps = symmetrize(p * sres * p + q * smarg * q);
    out.theta.alpha = st.ybar - out.theta.beta * st.xbar - st.mubar;
    out.theta.sigma_b = st.sigma_b;
    out.phi = envelope_of_natural(out.theta, gamma);
    return out;
}

double bic_penalty_coefficient(const LongitudinalDataset& data, BicPenalty b) {
    return b == BicPenalty::log_n ? std::log(static_cast<double>(data.n()))
                                  : std::log(static_cast<double>(data.j_total()));
}

FitResult fit_mixed_envelope(const LongitudinalDataset& data, int u, const EnvelopeFitOptions& opts,
                             const std::optional<EnvelopeParams>& start) {
    opts.validate();
    data.validate();
    if (u < 0 || u > data.r) throw ConfigError("envelope dimension must lie in [0, r]");
    if (data.n() < 2) throw DataError("fit requires at least two subjects");
    FitResult fit;
    fit.u = u;
    NaturalParams theta = start ? natural_of_envelope(*start) : initial_params(data);
    Matrix gamma_prev;
    bool have_prev = false;
    if (start && start->u() == u) {
        gamma_prev = start->gamma;
        have_prev = true;
    }
    EnvelopeParams phi;
    for (int it = 0; it < opts.em.max_iter; ++it) {
        const PosteriorMoments post = e_step(theta, data);
        EnvelopeMStep step = envelope_m_step(theta, post, data, u, opts, have_prev ? &gamma_prev : nullptr);
        if (step.basis_rejected) ++fit.rejected_basis_updates;
        if (opts.em.gls_mean_step) {
            gls_mean_update(step.theta, data, step.phi.gamma);
            step.phi = envelope_of_natural(step.theta, step.phi.gamma);
        }
        fit.delta_final = convergence_delta(theta, step.theta);
        theta = std::move(step.theta);
        phi = std::move(step.phi);
        gamma_prev = phi.gamma;
        have_prev = true;
        fit.iterations = it + 1;
        if (opts.em.loglik_check) fit.loglik_trace.push_back(obs_loglik(theta, data));
        if (fit.delta_final < opts.em.delta_tol) {
            fit.converged = true;
            break;
        }
    }
    fit.theta_hat = theta;
    fit.phi_hat = phi;
    fit.loglik = opts.em.loglik_check ? fit.loglik_trace.back() : obs_loglik(theta, data);
    fit.bic = -2.0 * fit.loglik + bic_penalty_coefficient(data, opts.bic_penalty) * data.p * u;
    if (!fit.converged) fit.message = "maximum number of iterations reached";
    return fit;
}

BicSelection select_u_bic(const LongitudinalDataset& data, const EnvelopeFitOptions& opts) {
    BicSelection sel;
    double best = std::numeric_limits<double>::infinity();
    for (int u = 0; u <= data.r; ++u) {
        BicEntry e;
        e.u = u;
        try {
            FitResult f = fit_mixed_envelope(data, u, opts);
            e.loglik = f.loglik;
            e.bic = f.bic;
            e.iterations = f.iterations;
            e.converged = f.converged;
            e.message = f.message;
            if (f.bic < best) {
                best = f.bic;
                sel.u_hat = u;
                sel.best_fit = std::move(f);
            }
        } catch (const std::exception& ex) {
            e.failed = true;
            e.message = ex.what();
            e.bic = std::numeric_limits<double>::quiet_NaN();
            e.loglik = std::numeric_limits<double>::quiet_NaN();
            sel.had_failures = true;
        }
        sel.table.push_back(e);
    }
    if (sel.u_hat < 0) throw std::runtime_error("select_u_bic: every candidate dimension failed");
    return sel;
}

}  // namespace mixenv
