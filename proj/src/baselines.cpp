#include "mixenv/baselines.hpp"

#include <cmath>
#include <numbers>

#include "mixenv/envelope.hpp"
#include "mixenv/errors.hpp"

namespace mixenv {

VectorizedRegressionData vectorize_balanced(const LongitudinalDataset& data) {
    data.validate();
    if (!data.balanced()) throw DataError("vectorize_balanced: design is unbalanced");
    const auto J = data.subjects.front().times();
    VectorizedRegressionData v;
    v.y.resize(data.r * J, data.n());
    v.x.resize(data.p, data.n());
    for (int i = 0; i < data.n(); ++i) {
        const auto& s = data.subjects[i];
        for (Eigen::Index j = 1; j < J; ++j)
            if (s.x.col(j) != s.x.col(0)) throw DataError("vectorize_balanced: predictors vary over time");
        v.y.col(i) = vec(s.y);
        v.x.col(i) = s.x.col(0);
    }
    return v;
}

VectorizedRegressionData pool_observations(const LongitudinalDataset& data) {
    data.validate();
    VectorizedRegressionData v;
    v.y.resize(data.r, data.j_total());
    v.x.resize(data.p, data.j_total());
    Eigen::Index c = 0;
    for (const auto& s : data.subjects) {
        v.y.middleCols(c, s.times()) = s.y;
        v.x.middleCols(c, s.times()) = s.x;
        c += s.times();
    }
    return v;
}

LongitudinalDataset remove_random_effects(const LongitudinalDataset& data, const std::vector<Matrix>& b) {
    if (b.size() != data.subjects.size()) throw DataError("remove_random_effects: one b_i per subject required");
    LongitudinalDataset out = data;
    for (std::size_t i = 0; i < b.size(); ++i) out.subjects[i].y -= b[i] * data.subjects[i].z;
    return out;
}

OlsFit fit_ols(const VectorizedRegressionData& vdata) {
    const auto n = vdata.n();
    if (n < 2 || vdata.x.cols() != n) throw DataError("fit_ols: need at least two conforming observations");
    OlsFit f;
    f.n = n;
    const Vector ybar = vdata.y.rowwise().mean();
    const Vector xbar = vdata.x.rowwise().mean();
    const Matrix yc = vdata.y.colwise() - ybar;
    const Matrix xc = vdata.x.colwise() - xbar;
    const Matrix sxx = symmetrize(xc * xc.transpose());
    Eigen::LDLT<Matrix> ldlt(sxx);
    if (vdata.x.rows() > 0 && (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12))
        throw DesignError("fit_ols: centered design is singular");
    const Matrix syx = yc * xc.transpose();
    f.beta = vdata.x.rows() > 0 ? Matrix(ldlt.solve(syx.transpose()).transpose()) : Matrix(vdata.y.rows(), 0);
    f.alpha = ybar - f.beta * xbar;
    const Matrix res = yc - f.beta * xc;
    const double dn = static_cast<double>(n);
    f.sigma = symmetrize(res * res.transpose() / dn);
    f.sigma_y = symmetrize(yc * yc.transpose() / dn);
    f.sigma_x = sxx / dn;
    return f;
}

namespace {

ReducedFit reduce_with_basis(const OlsFit& ols, const Matrix& gamma, const VectorizedRegressionData& vdata) {
    const auto d = ols.sigma.rows();
    ReducedFit out;
    out.gamma = gamma;
    out.u = static_cast<int>(gamma.cols());
    const Matrix p = gamma.cols() > 0 ? Matrix(gamma * gamma.transpose()) : Matrix::Zero(d, d);
    const Matrix q = Matrix::Identity(d, d) - p;
    out.beta = p * ols.beta;
    const Vector xbar = vdata.x.rowwise().mean();
    out.alpha = vdata.y.rowwise().mean() - out.beta * xbar;
    const Matrix sig = symmetrize(p * ols.sigma * p + q * ols.sigma_y * q);
    const double dn = static_cast<double>(ols.n);
    out.loglik = -0.5 * dn * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + logdet_spd(sig) + static_cast<double>(d));
    out.bic = -2.0 * out.loglik + std::log(dn) * static_cast<double>(ols.beta.cols() * out.u);
    return out;
}

}  // namespace

ReducedFit fit_response_envelope(const VectorizedRegressionData& vdata, int u, int restarts) {
    const auto d = vdata.y.rows();
    if (u < 0 || u > d) throw ConfigError("fit_response_envelope: u must lie in [0, d]");
    const OlsFit ols = fit_ols(vdata);
    Matrix gamma;
    if (u == d) {
        gamma = Matrix::Identity(d, d);
    } else {
        const Matrix uu = symmetrize(ols.beta * ols.sigma_x * ols.beta.transpose());
        gamma = oneD_basis({ols.sigma, uu, u}, {restarts, 1e-10, 200});
    }
    return reduce_with_basis(ols, gamma, vdata);
}

ResponseEnvelopeSelection select_response_envelope(const VectorizedRegressionData& vdata, int restarts) {
    ResponseEnvelopeSelection sel;
    const auto d = vdata.y.rows();
    for (int u = 0; u <= d; ++u) {
        ReducedFit f = fit_response_envelope(vdata, u, restarts);
        sel.bic.push_back(f.bic);
        if (u == 0 || f.bic < sel.best.bic) {
            sel.best = std::move(f);
            sel.u_hat = u;
        }
    }
    return sel;
}

ReducedFit fit_response_pls(const VectorizedRegressionData& vdata, int u) {
    const auto d = vdata.y.rows();
    if (u < 0 || u > d) throw ConfigError("fit_response_pls: u must lie in [0, d]");
    const OlsFit ols = fit_ols(vdata);
    if (u == d) return reduce_with_basis(ols, Matrix::Identity(d, d), vdata);
    const Matrix syx = ols.beta * ols.sigma_x;  // response-predictor cross covariance
    const Matrix s = symmetrize(syx * syx.transpose());
    Matrix v(d, 0);
    std::string warning;
    double first = 0.0;
    for (int k = 0; k < u; ++k) {
        Matrix defl = Matrix::Identity(d, d);
        if (k > 0) defl -= projector(ols.sigma * v);
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(defl * s * defl));
        const double top = es.eigenvalues()(d - 1);
        if (k == 0) first = top;
        if (!(top > 1e-12 * std::max(first, 1e-300))) {
            warning = "cross-covariance rank exhausted after " + std::to_string(k) + " directions";
            break;
        }
        Matrix grown(d, k + 1);
        grown << v, es.eigenvectors().col(d - 1);
        v = grown;
    }
    ReducedFit out = reduce_with_basis(ols, orth(v), vdata);
    out.warning = warning;
    return out;
}

}  // namespace mixenv
