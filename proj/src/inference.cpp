#include "mixenv/inference.hpp"

#include <cmath>
#include <string>

#include "mixenv/errors.hpp"
#include "mixenv/rng.hpp"

namespace mixenv {

namespace {

int tri(int k) { return k * (k + 1) / 2; }

// dSigma_i / d(theta_k) for every covariance coordinate, Sigma_eps first.
std::vector<Matrix> covariance_derivatives(const Subject& s, int r, int q) {
    const int J = static_cast<int>(s.times());
    const Matrix a = design_a(s, r);
    const Matrix eye_j = Matrix::Identity(J, J);
    std::vector<Matrix> out;
    out.reserve(tri(r) + tri(q * r));
    for (int k = 0; k < tri(r); ++k) out.push_back(kron(eye_j, unvech(Vector::Unit(tri(r), k))));
    const int qr = q * r;
    for (int j = 0; j < qr; ++j)
        for (int i = j; i < qr; ++i) {
            Matrix d = a.col(i) * a.col(j).transpose();
            if (i != j) d += a.col(j) * a.col(i).transpose();
            out.push_back(std::move(d));
        }
    return out;
}

Matrix subject_precision(const NaturalParams& theta, const Subject& s) {
    Eigen::LLT<Matrix> llt(subject_covariance(theta, s));
    if (llt.info() != Eigen::Success) throw SingularCovarianceError("subject covariance is not positive definite");
    return llt.solve(Matrix::Identity(llt.rows(), llt.rows()));
}

void require_pd(const Matrix& info) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(info), Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();
    if (ev.size() == 0) return;
    if (!(ev(0) > 1e-12 * std::max(1.0, ev(ev.size() - 1))))
        throw InformationSingularError("Fisher information is singular (min eigenvalue " + std::to_string(ev(0)) + ")");
}

Matrix expansion_or_empty(int k) { return k == 0 ? Matrix(0, 0) : expansion_matrix(k); }

}  // namespace

Matrix FisherBlocks::assembled() const {
    const Eigen::Index a = I11.rows(), b = I22.rows(), c = I33.rows();
    Matrix out = Matrix::Zero(a + b + c, a + b + c);
    out.topLeftCorner(a, a) = I11;
    out.block(a, a, b, b) = I22;
    out.block(a, a + b, b, c) = I23;
    out.block(a + b, a, c, b) = I23.transpose();
    out.bottomRightCorner(c, c) = I33;
    return out;
}

Matrix FisherBlocks::per_subject() const { return assembled() / static_cast<double>(n); }

FisherBlocks fisher_info(const NaturalParams& theta, const LongitudinalDataset& data, const FisherOptions& opts) {
    check_dimensions(theta, data);
    const int r = data.r, p = data.p, q = data.q;
    const int de = tri(r), db = tri(q * r), dc = de + db;
    Matrix i11 = Matrix::Zero(p * r, p * r);
    Matrix icov = Matrix::Zero(dc, dc);
    Matrix iaa = Matrix::Zero(r, r);
    Matrix iab = Matrix::Zero(r, p * r);
    const Matrix eye_r = Matrix::Identity(r, r);

    for (const Subject& s : data.subjects) {
        const Eigen::Index m = r * s.times();
        const Matrix prec = subject_precision(theta, s);
        const Matrix xk = kron(s.x.transpose(), eye_r);
        i11.noalias() += xk.transpose() * prec * xk;
        if (opts.profile_intercept) {
            const Matrix l = kron(Matrix::Ones(s.times(), 1), eye_r);
            iaa.noalias() += l.transpose() * prec * l;
            iab.noalias() += l.transpose() * prec * xk;
        }
        const auto ds = covariance_derivatives(s, r, q);
        // tr(W_a W_b) = vec(W_a^T)^T vec(W_b)
        Matrix v1(m * m, dc), v2(m * m, dc);
        for (int k = 0; k < dc; ++k) {
            const Matrix w = prec * ds[k];
            v2.col(k) = Eigen::Map<const Vector>(w.data(), m * m);
            const Matrix wt = w.transpose();
            v1.col(k) = Eigen::Map<const Vector>(wt.data(), m * m);
        }
        icov.noalias() += 0.5 * v1.transpose() * v2;
    }
    if (opts.profile_intercept) i11 -= iab.transpose() * inverse_spd(iaa) * iab;

    icov = symmetrize(icov);
    FisherBlocks out;
    out.n = data.n();
    out.I11 = symmetrize(i11);
    out.I22 = icov.topLeftCorner(de, de);
    out.I23 = icov.topRightCorner(de, db);
    out.I33 = icov.bottomRightCorner(db, db);
    return out;
}

Matrix subject_scores(const NaturalParams& theta, const LongitudinalDataset& data, const FisherOptions& opts) {
    check_dimensions(theta, data);
    const int r = data.r, p = data.p, q = data.q;
    const int pr = p * r, dc = tri(r) + tri(q * r);
    Matrix out(data.n(), pr + dc);
    Matrix score_alpha(data.n(), r);
    Matrix iaa = Matrix::Zero(r, r);
    Matrix iab = Matrix::Zero(r, pr);
    const Matrix eye_r = Matrix::Identity(r, r);

    for (int i = 0; i < data.n(); ++i) {
        const Subject& s = data.subjects[i];
        const Matrix prec = subject_precision(theta, s);
        const Vector w = prec * subject_residual(theta, s);
        const Matrix xk = kron(s.x.transpose(), eye_r);
        out.row(i).head(pr) = (xk.transpose() * w).transpose();
        const auto ds = covariance_derivatives(s, r, q);
        for (int k = 0; k < dc; ++k)
            out(i, pr + k) = 0.5 * (w.dot(ds[k] * w) - prec.cwiseProduct(ds[k]).sum());
        if (opts.profile_intercept) {
            const Matrix l = kron(Matrix::Ones(s.times(), 1), eye_r);
            score_alpha.row(i) = (l.transpose() * w).transpose();
            iaa.noalias() += l.transpose() * prec * l;
            iab.noalias() += l.transpose() * prec * xk;
        }
    }
    if (opts.profile_intercept) {
        const Matrix coef = iab.transpose() * inverse_spd(iaa);  // pr x r
        out.leftCols(pr) -= score_alpha * coef.transpose();
    }
    return out;
}

Matrix m_i1(int r, int J) {
    const Matrix inner = commutation_matrix(r, J);
    const Matrix left = kron(Matrix::Identity(J, J), inner);
    const Matrix vec_i = vec(Matrix::Identity(J, J));
    const Matrix mid = left * kron(vec_i, Matrix::Identity(r, r));
    return contraction_matrix(J * r) * kron(mid, Matrix::Identity(r, r)) * expansion_matrix(r);
}

Matrix m_i2(const Subject& s, int r) {
    const Matrix a = design_a(s, r);
    const int J = static_cast<int>(s.times());
    const int qr = static_cast<int>(a.cols());
    return contraction_matrix(J * r) * kron(a, a) * expansion_matrix(qr);
}

Matrix fisher_info_kronecker(const NaturalParams& theta, const Subject& s) {
    const int r = static_cast<int>(theta.sigma_eps.rows());
    const int J = static_cast<int>(s.times());
    const Matrix prec = subject_precision(theta, s);
    const Matrix e = expansion_matrix(J * r);
    const Matrix ss = kron(prec, prec);
    const Matrix m1 = m_i1(r, J), m2 = m_i2(s, r);
    Matrix mm(m1.rows(), m1.cols() + m2.cols());
    mm << m1, m2;
    const Matrix em = e * mm;
    const Matrix icov = 0.5 * em.transpose() * ss * em;
    const Matrix xk = kron(s.x.transpose(), Matrix::Identity(r, r));
    const Matrix i11 = xk.transpose() * prec * xk;
    const Eigen::Index a = i11.rows(), c = icov.rows();
    Matrix out = Matrix::Zero(a + c, a + c);
    out.topLeftCorner(a, a) = i11;
    out.bottomRightCorner(c, c) = icov;
    return out;
}

Matrix gradient_G(const EnvelopeParams& phi) {
    const int r = phi.r(), u = phi.u();
    const int p = static_cast<int>(phi.eta.cols());
    const int db = static_cast<int>(phi.sigma_b.rows());
    const int dbh = tri(db);
    const Matrix g = phi.gamma;
    const Matrix g0 = phi.complement();
    const int pr = p * r, de = tri(r);
    const int c_eta = p * u, c_gam = r * u, c_om = tri(u), c_om0 = tri(r - u);
    Matrix out = Matrix::Zero(pr + de + dbh, c_eta + c_gam + c_om + c_om0 + dbh);
    const Matrix eye_r = Matrix::Identity(r, r);
    const Matrix cr = contraction_matrix(r);

    if (u > 0) {
        out.block(0, 0, pr, c_eta) = kron(Matrix::Identity(p, p), g);
        out.block(0, c_eta, pr, c_gam) = kron(phi.eta.transpose(), eye_r);
        Matrix rot = kron(g * phi.omega, eye_r);
        if (r > u) rot -= kron(g, g0 * phi.omega0 * g0.transpose());
        out.block(pr, c_eta, de, c_gam) = 2.0 * cr * rot;
        out.block(pr, c_eta + c_gam, de, c_om) = cr * kron(g, g) * expansion_or_empty(u);
    }
    if (r > u) out.block(pr, c_eta + c_gam + c_om, de, c_om0) = cr * kron(g0, g0) * expansion_or_empty(r - u);
    out.bottomRightCorner(dbh, dbh) = Matrix::Identity(dbh, dbh);
    return out;
}

AvarPair avar_envelope(const Matrix& info, const Matrix& G) {
    if (info.rows() != info.cols() || info.rows() != G.rows())
        throw DataError("avar_envelope: information and G are not conformable");
    require_pd(info);
    AvarPair out;
    out.avar_em = inverse_spd(symmetrize(info));
    const Matrix b = orth(G);
    if (b.cols() == 0) {
        out.avar_env = Matrix::Zero(info.rows(), info.cols());
    } else {
        const Matrix inner = inverse_spd(symmetrize(b.transpose() * info * b));
        out.avar_env = symmetrize(b * inner * b.transpose());
    }
    return out;
}

AvarPair envelope_avar_at(const EnvelopeParams& phi, const LongitudinalDataset& data) {
    const FisherBlocks f = fisher_info(natural_of_envelope(phi), data, {.profile_intercept = true});
    return avar_envelope(f.per_subject(), gradient_G(phi));
}

ClosedFormAvar closed_form_avar_special(double s1, double s0, double sb, double sx1, double sx2) {
    if (!(s1 > 0 && s0 > 0 && sb > 0 && sx1 > 0 && sx2 > 0))
        throw ConfigError("closed_form_avar_special: all variances must be positive");
    ClosedFormAvar out;
    const double em11 = s1 * (s1 + 2 * sb) / (sb * sx1 + s1 * sx2);
    const double em22 = s0 * (s0 + 2 * sb) / (sb * sx1 + s0 * sx2);
    const double d2 = (s1 - s0) * (s1 - s0);
    const double inv_beta2 = (sb * sx1 + s0 * sx2) / (s0 * (s0 + 2 * sb)) +
                             4 * d2 * (s1 * s0 + 2 * s1 * sb + 2 * s0 * sb + 2 * sb * sb) /
                                 (s1 * s0 * (s1 + 2 * sb) * (s0 + 2 * sb));
    out.avar_em = Matrix::Zero(2, 2);
    out.avar_em(0, 0) = em11;
    out.avar_em(1, 1) = em22;
    out.avar_env = Matrix::Zero(2, 2);
    out.avar_env(0, 0) = em11;
    out.avar_env(1, 1) = 1.0 / inv_beta2;
    out.ratio22 = 1.0 + 4 * d2 * (s1 * s0 + 2 * s1 * sb + s0 * sb + 2 * sb * sb) /
                            (s1 * (s1 + 2 * sb) * (sb * sx1 + s0 * sx2));
    return out;
}

SpecialCase special_case_setup(double s1, double s0, double sb, double sx1, double sx2, int n) {
    if (n < 2 || n % 2 != 0) throw ConfigError("special_case_setup: n must be even and >= 2");
    if (!(sx1 > 0 && 2 * sx2 >= sx1)) throw ConfigError("special_case_setup: need 2 sigma_x2sq >= sigma_x1sq > 0");
    const double sum = std::sqrt(2 * sx2 - sx1), diff = std::sqrt(sx1);
    const double a = 0.5 * (sum + diff), c = 0.5 * (sum - diff);

    SpecialCase out;
    out.data.r = 2;
    out.data.p = 1;
    out.data.q = 1;
    for (int i = 0; i < n; ++i) {
        Subject s;
        s.y = Matrix::Zero(2, 2);
        s.x.resize(1, 2);
        if (i % 2 == 0) s.x << a, c;
        else s.x << c, a;
        s.z = Matrix::Ones(1, 2);
        out.data.subjects.push_back(std::move(s));
    }
    out.phi.alpha = Vector::Zero(2);
    out.phi.gamma = Matrix::Identity(2, 1);
    out.phi.gamma0 = Matrix::Identity(2, 2).rightCols(1);
    out.phi.eta = Matrix::Ones(1, 1);
    out.phi.omega = Matrix::Constant(1, 1, s1);
    out.phi.omega0 = Matrix::Constant(1, 1, s0);
    out.phi.sigma_b = sb * Matrix::Identity(2, 2);
    out.theta = natural_of_envelope(out.phi);
    return out;
}

Matrix sandwich_avar(const EnvelopeParams& phi_hat, const LongitudinalDataset& data) {
    if (data.n() < 10) throw DataError("sandwich_avar: need at least 10 subjects");
    const NaturalParams theta = natural_of_envelope(phi_hat);
    const FisherOptions fo{.profile_intercept = true};
    const Matrix info = fisher_info(theta, data, fo).per_subject();
    require_pd(info);
    const Matrix scores = subject_scores(theta, data, fo);
    const Matrix s_hat = scores.transpose() * scores / static_cast<double>(data.n());
    const Matrix b = orth(gradient_G(phi_hat));
    if (b.cols() == 0) return Matrix::Zero(info.rows(), info.cols());
    const Matrix inner = inverse_spd(symmetrize(b.transpose() * info * b));
    const Matrix proj = b * inner * b.transpose();
    return symmetrize(proj * s_hat * proj);
}

Matrix beta_block(const Matrix& avar, int r, int p) { return avar.topLeftCorner(p * r, p * r); }

Matrix standard_errors(const Matrix& avar_beta, int r, int p, int n) {
    const Vector d = avar_beta.diagonal().cwiseMax(0.0) / static_cast<double>(n);
    return unvec(d.cwiseSqrt(), r, p);
}

BootstrapResult bootstrap_se(const LongitudinalDataset& data, const BootstrapSpec& spec, int B, std::uint64_t seed,
                             const Resampler& resampler) {
    if (B < 2) throw ConfigError("bootstrap_se: B must be >= 2");
    data.validate();
    const int n = data.n();
    BootstrapResult out;
    out.replicates = B;
    for (int b = 0; b < B; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        std::vector<int> idx;
        if (resampler) {
            idx = resampler(n, rng);
        } else {
            idx.resize(n);
            for (int& k : idx) k = rng.uniform_int(0, n - 1);
        }
        LongitudinalDataset boot;
        boot.r = data.r;
        boot.p = data.p;
        boot.q = data.q;
        boot.subjects.reserve(idx.size());
        for (int k : idx) boot.subjects.push_back(data.subjects.at(k));
        try {
            FitResult fit = spec.kind == FitterKind::standard_em
                                ? fit_standard_em(boot, spec.options.em, spec.warm_theta)
                                : fit_mixed_envelope(boot, spec.u, spec.options, spec.warm_phi);
            if (!fit.theta_hat.beta.allFinite()) throw SingularCovarianceError("non-finite estimate");
            out.draws.push_back(fit.theta_hat.beta);
        } catch (const std::exception&) {
            ++out.failed;
        }
    }
    if (out.failed * 5 > B || out.draws.size() < 2)
        throw UnstableBootstrapError("bootstrap: " + std::to_string(out.failed) + " of " + std::to_string(B) +
                                     " refits failed");
    const Eigen::Index rows = data.r, cols = data.p;
    Matrix mean = Matrix::Zero(rows, cols);
    for (const Matrix& d : out.draws) mean += d;
    mean /= static_cast<double>(out.draws.size());
    Matrix ss = Matrix::Zero(rows, cols);
    for (const Matrix& d : out.draws) ss += (d - mean).cwiseAbs2();
    out.se = (ss / static_cast<double>(out.draws.size() - 1)).cwiseSqrt();
    return out;
}

}  // namespace mixenv
