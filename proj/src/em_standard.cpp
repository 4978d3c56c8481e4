#include "mixenv/em.hpp"

#include <cmath>

#include "mixenv/errors.hpp"

namespace mixenv {

void EmOptions::validate() const {
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
    if (!(delta_tol > 0)) throw ConfigError("delta_tol must be positive");
}

PosteriorMoments e_step(const NaturalParams& theta, const LongitudinalDataset& data) {
    check_dimensions(theta, data);
    const int r = data.r, q = data.q;
    PosteriorMoments post;
    post.mu.reserve(data.subjects.size());
    post.cov.reserve(data.subjects.size());
    const Matrix eps_inv = inverse_spd(theta.sigma_eps);
    const Matrix b_inv = q > 0 ? inverse_spd(theta.sigma_b) : Matrix(0, 0);
    for (const auto& s : data.subjects) {
        if (q == 0) {
            post.mu.emplace_back(0);
            post.cov.emplace_back(0, 0);
            continue;
        }
        Matrix res = s.y - theta.beta * s.x;
        res.colwise() -= theta.alpha;
        const Matrix prec = b_inv + kron(s.z * s.z.transpose(), eps_inv);
        const Matrix cov = inverse_spd(prec);
        const Vector rhs = vec(eps_inv * res * s.z.transpose());
        post.mu.push_back(cov * rhs);
        post.cov.push_back(cov);
        (void)r;
    }
    return post;
}

PosteriorStats posterior_stats(const PosteriorMoments& post, const LongitudinalDataset& data) {
    const int r = data.r, p = data.p, q = data.q;
    const auto n = data.subjects.size();
    if (post.mu.size() != n || post.cov.size() != n) throw DataError("posterior moments do not match dataset");
    PosteriorStats st;
    st.j_total = data.j_total();
    const double jt = static_cast<double>(st.j_total);

    // b_i Z_i for every subject, the fitted random-effect contribution
    std::vector<Matrix> bz(n);
    st.ybar = Vector::Zero(r);
    st.xbar = Vector::Zero(p);
    st.mubar = Vector::Zero(r);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data.subjects[i];
        bz[i] = q > 0 ? Matrix(unvec(post.mu[i], r, q) * s.z) : Matrix::Zero(r, s.times());
        st.ybar += s.y.rowwise().sum();
        st.xbar += s.x.rowwise().sum();
        st.mubar += bz[i].rowwise().sum();
    }
    st.ybar /= jt;
    st.xbar /= jt;
    st.mubar /= jt;
    const Vector ushift = st.ybar - st.mubar;

    st.syy = Matrix::Zero(r, r);
    st.syx = Matrix::Zero(r, p);
    st.sxx = Matrix::Zero(p, p);
    st.psi = Matrix::Zero(r, r);
    st.sigma_b = Matrix::Zero(q * r, q * r);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data.subjects[i];
        Matrix uc = s.y - bz[i];
        uc.colwise() -= ushift;
        Matrix xc = s.x;
        xc.colwise() -= st.xbar;
        st.syy.noalias() += uc * uc.transpose();
        st.syx.noalias() += uc * xc.transpose();
        st.sxx.noalias() += xc * xc.transpose();
        if (q > 0) {
            const Matrix zz = s.z * s.z.transpose();
            const Matrix& c = post.cov[i];
            for (int a = 0; a < q; ++a)
                for (int b = 0; b < q; ++b) st.psi += zz(a, b) * c.block(a * r, b * r, r, r);
            st.sigma_b += c + post.mu[i] * post.mu[i].transpose();
        }
    }
    st.syy = symmetrize(st.syy);
    st.sxx = symmetrize(st.sxx);
    st.psi = symmetrize(st.psi);
    if (q > 0) st.sigma_b = symmetrize(st.sigma_b / static_cast<double>(n));

    if (p > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(st.sxx, Eigen::EigenvaluesOnly);
        const double lmax = es.eigenvalues().maxCoeff();
        if (!(lmax > 0) || es.eigenvalues().minCoeff() <= 1e-12 * lmax)
            throw DesignError("centered design X_c X_c^T is singular");
    }
    return st;
}

Matrix PosteriorStats::beta_ols() const {
    if (sxx.size() == 0) return Matrix(syx.rows(), 0);
    return sxx.llt().solve(syx.transpose()).transpose();
}

Matrix PosteriorStats::residual_cov() const {
    Matrix sres = syy + psi;
    if (sxx.size() > 0) sres -= syx * sxx.llt().solve(syx.transpose());
    return symmetrize(sres / static_cast<double>(j_total));
}

Matrix PosteriorStats::marginal_cov() const {
    return symmetrize((syy + psi) / static_cast<double>(j_total));
}

NaturalParams m_step(const NaturalParams& theta_t, const PosteriorMoments& post, const LongitudinalDataset& data) {
    check_dimensions(theta_t, data);
    const PosteriorStats st = posterior_stats(post, data);
    NaturalParams next;
    next.beta = st.beta_ols();
    next.sigma_eps = st.residual_cov();
    next.alpha = st.ybar - next.beta * st.xbar - st.mubar;
    next.sigma_b = st.sigma_b;
    return next;
}

void gls_mean_update(NaturalParams& theta, const LongitudinalDataset& data, const Matrix& gamma) {
    check_dimensions(theta, data);
    const int r = data.r, p = data.p, q = data.q;
    const auto u = gamma.cols();
    // Sigma_i^{-1} expanded by Woodbury around I kron Sigma_eps^{-1}.
    const Matrix e = inverse_spd(theta.sigma_eps);
    const Matrix b_inv = q > 0 ? inverse_spd(theta.sigma_b) : Matrix(0, 0);
    // Normal equations in the reduced coordinates (alpha, vec eta), using
    // (C kron E) blkdiag(I, I_p kron Gamma) = [c_0 kron E, C_x kron (E Gamma)].
    const Matrix eg = e * gamma;
    const Eigen::Index nc = r + p * u;
    Matrix sxx = Matrix::Zero(p + 1, p + 1);
    Matrix tnt = Matrix::Zero(nc, nc);
    Matrix corr = Matrix::Zero(nc, nc);
    Vector h = Vector::Zero(nc);
    for (const auto& s : data.subjects) {
        const auto J = s.times();
        Matrix xt(p + 1, J);
        xt.row(0).setOnes();
        xt.bottomRows(p) = s.x;
        sxx.noalias() += xt * xt.transpose();
        const Matrix ey = e * s.y;
        h.head(r) += ey.rowwise().sum();
        if (p * u > 0) h.tail(p * u) += vec(gamma.transpose() * ey * s.x.transpose());
        if (q > 0) {
            // Woodbury correction (C kron E)^T P^{-1} (C kron E) with C = Z X~^T
            const Matrix c = s.z * xt.transpose();
            Matrix rhs(q * r, nc + 1);
            rhs.leftCols(r) = kron(c.col(0), e);
            if (p * u > 0) rhs.middleCols(r, p * u) = kron(c.rightCols(p), eg);
            rhs.col(nc) = vec(ey * s.z.transpose());
            Eigen::LLT<Matrix> llt(b_inv + kron(s.z * s.z.transpose(), e));
            if (llt.info() != Eigen::Success) throw SingularCovarianceError("gls step: subject precision is not positive definite");
            const Matrix w = llt.matrixL().solve(rhs);
            corr.selfadjointView<Eigen::Lower>().rankUpdate(w.leftCols(nc).transpose());
            h.noalias() -= w.leftCols(nc).transpose() * w.col(nc);
        }
    }
    tnt -= Matrix(corr.selfadjointView<Eigen::Lower>());
    tnt.topLeftCorner(r, r) += sxx(0, 0) * e;
    if (p * u > 0) {
        const Matrix geg = gamma.transpose() * eg;
        const Matrix cross = kron(sxx.block(0, 1, 1, p), eg);
        tnt.block(0, r, r, p * u) += cross;
        tnt.block(r, 0, p * u, r) += cross.transpose();
        tnt.bottomRightCorner(p * u, p * u) += kron(sxx.bottomRightCorner(p, p), geg);
    }
    Eigen::LDLT<Matrix> ldlt(symmetrize(tnt));
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) throw DesignError("gls step: mean design is singular");
    const Vector c = ldlt.solve(h);
    theta.alpha = c.head(r);
    theta.beta = u > 0 ? Matrix(gamma * unvec(c.tail(p * u), u, p)) : Matrix::Zero(r, p);
}

NaturalParams initial_params(const LongitudinalDataset& data) {
    NaturalParams t;
    t.alpha = Vector::Zero(data.r);
    t.beta = Matrix::Zero(data.r, data.p);
    t.sigma_eps = Matrix::Identity(data.r, data.r);
    t.sigma_b = Matrix::Identity(data.q * data.r, data.q * data.r);
    return t;
}

double convergence_delta(const NaturalParams& prev, const NaturalParams& next) {
    const double num = (next.beta - prev.beta).cwiseAbs().sum();
    const double den = next.beta.cwiseAbs().sum();
    if (den >= 1e-12) return num / den;
    const double cov_num = (next.sigma_eps - prev.sigma_eps).cwiseAbs().sum() +
                           (next.sigma_b - prev.sigma_b).cwiseAbs().sum();
    const double cov_den = next.sigma_eps.cwiseAbs().sum() + next.sigma_b.cwiseAbs().sum();
    return std::max(num, cov_den > 0 ? cov_num / cov_den : cov_num);
}

FitResult fit_standard_em(const LongitudinalDataset& data, const EmOptions& opts,
                          const std::optional<NaturalParams>& start) {
    opts.validate();
    data.validate();
    if (data.n() < 2) throw DataError("fit requires at least two subjects");
    FitResult fit;
    NaturalParams theta = start ? *start : initial_params(data);
    for (int it = 0; it < opts.max_iter; ++it) {
        const PosteriorMoments post = e_step(theta, data);
        NaturalParams next = m_step(theta, post, data);
        if (opts.gls_mean_step) gls_mean_update(next, data, Matrix::Identity(data.r, data.r));
        fit.delta_final = convergence_delta(theta, next);
        theta = std::move(next);
        fit.iterations = it + 1;
        if (opts.loglik_check) fit.loglik_trace.push_back(obs_loglik(theta, data));
        if (fit.delta_final < opts.delta_tol) {
            fit.converged = true;
            break;
        }
    }
    fit.theta_hat = theta;
    fit.loglik = opts.loglik_check ? fit.loglik_trace.back() : obs_loglik(theta, data);
    fit.bic = -2.0 * fit.loglik;
    if (!fit.converged) fit.message = "maximum number of iterations reached";
    return fit;
}

}  // namespace mixenv
