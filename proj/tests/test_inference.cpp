#include <doctest.h>

#include <cmath>

#include "mixenv/errors.hpp"
#include "mixenv/inference.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mixenv;
using namespace mixenv::testing;

TEST_CASE("Fisher information matches the curvature of the expected log-likelihood") {
    Rng rng(61);
    for (int rep = 0; rep < 3; ++rep) {
        const int r = 2, p = 1 + rep % 2, q = 1 + rep % 2;
        const NaturalParams t = random_theta(rng, r, p, q);
        const LongitudinalDataset d = random_dataset(rng, t, 3, 2, 3);
        const Matrix want = fd_expected_information(t, d);
        CHECK(rel_diff(fisher_info(t, d).assembled(), want) <= 1e-4);
    }
}

TEST_CASE("Fisher information without random effects") {
    Rng rng(62);
    NaturalParams t = random_theta(rng, 2, 2, 0);
    const LongitudinalDataset d = random_dataset(rng, t, 6, 1, 1);
    const FisherBlocks fb = fisher_info(t, d);
    Matrix want = Matrix::Zero(4, 4);
    const Matrix e = inverse_spd(t.sigma_eps);
    for (const auto& s : d.subjects) want += kron(s.x.col(0) * s.x.col(0).transpose(), e);
    CHECK((fb.I11 - want).norm() <= 1e-10 * want.norm());
    CHECK(fb.I33.size() == 0);
}

TEST_CASE("Kronecker route agrees with the trace route") {
    Rng rng(63);
    for (int rep = 0; rep < 3; ++rep) {
        const int q = 1 + rep % 2;
        const NaturalParams t = random_theta(rng, 2, 1, q);
        const LongitudinalDataset d = random_dataset(rng, t, 1, 2, 3);
        CHECK(rel_diff(fisher_info_kronecker(t, d.subjects[0]), fisher_info(t, d).assembled()) <= 1e-10);
    }
    const Matrix m1 = m_i1(2, 3);
    CHECK(m1.rows() == 21);
    CHECK(m1.cols() == 3);
}

TEST_CASE("scores have mean zero and outer product near the information") {
    Rng rng(64);
    const NaturalParams t = random_theta(rng, 2, 1, 1);
    const LongitudinalDataset d = random_dataset(rng, t, 4000, 3, 3);
    const Matrix s = subject_scores(t, d);
    const Matrix info = fisher_info(t, d).per_subject();
    const Vector mean = s.colwise().mean();
    for (Eigen::Index k = 0; k < mean.size(); ++k) CHECK(std::abs(mean(k)) <= 5.0 * std::sqrt(info(k, k) / 4000.0));
    CHECK(rel_diff(Matrix(s.transpose() * s / 4000.0), info) <= 0.1);
}

TEST_CASE("gradient G matches a numerical Jacobian") {
    Rng rng(65);
    for (int rep = 0; rep < 3; ++rep) {
        const int r = 3, u = 1 + rep % 2, p = 1 + rep % 2, q = 1;
        const EnvelopeParams phi = random_phi(rng, r, u, p, q);
        const Matrix g = gradient_G(phi);
        const Matrix want = fd_jacobian_h(phi);
        CHECK(g.rows() == want.rows());
        CHECK(g.cols() == want.cols());
        CHECK((g - want).cwiseAbs().maxCoeff() <= 1e-5);
    }
}

TEST_CASE("gradient G structure") {
    Rng rng(66);
    EnvelopeParams full = random_phi(rng, 3, 3, 2, 1);
    full.gamma = Matrix::Identity(3, 3);
    full.gamma0 = Matrix(3, 0);
    full.omega0 = Matrix(0, 0);
    const Matrix g = gradient_G(full);
    Eigen::JacobiSVD<Matrix> svd(g);
    CHECK(svd.rank() == g.rows());

    const SpecialCase sc = special_case_setup(1.0, 4.0, 1.0, 1.0, 1.0, 10);
    const Matrix g2 = gradient_G(sc.phi);
    CHECK((g2.block(0, 0, 2, 1) - sc.phi.gamma).norm() <= 1e-14);
}

TEST_CASE("avar ordering and degeneracy") {
    Rng rng(67);
    for (int rep = 0; rep < 3; ++rep) {
        const EnvelopeParams phi = random_phi(rng, 3, 1, 1, 1);
        const LongitudinalDataset d = random_dataset(rng, natural_of_envelope(phi), 20, 2, 4);
        const Matrix info = fisher_info(natural_of_envelope(phi), d).per_subject();
        const AvarPair a = avar_envelope(info, gradient_G(phi));
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a.avar_em - a.avar_env));
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * a.avar_em.norm());
    }
    EnvelopeParams full = random_phi(rng, 2, 2, 1, 1);
    full.gamma = Matrix::Identity(2, 2);
    full.gamma0 = Matrix(2, 0);
    full.omega0 = Matrix(0, 0);
    const LongitudinalDataset d = random_dataset(rng, natural_of_envelope(full), 20, 2, 4);
    const Matrix info = fisher_info(natural_of_envelope(full), d).per_subject();
    const AvarPair a = avar_envelope(info, gradient_G(full));
    CHECK(rel_diff(a.avar_env, a.avar_em) <= 1e-8);
    CHECK_THROWS_AS(avar_envelope(Matrix::Zero(info.rows(), info.cols()), gradient_G(full)), InformationSingularError);
}

TEST_CASE("closed form special case") {
    const ClosedFormAvar eq = closed_form_avar_special(2.0, 2.0, 1.0, 1.0, 1.0);
    CHECK(eq.ratio22 == doctest::Approx(1.0).epsilon(1e-12));
    double prev = 0.0;
    for (double s0 : {1.0, 10.0, 100.0, 1000.0}) {
        const double ratio = closed_form_avar_special(0.5, s0, 1.0, 1.0, 1.0).ratio22;
        CHECK(ratio > prev);
        prev = ratio;
    }
    CHECK_THROWS_AS(closed_form_avar_special(0.0, 1.0, 1.0, 1.0, 1.0), ConfigError);

    // the standard-EM block agrees with the generic information at the matching design
    const ClosedFormAvar cf = closed_form_avar_special(1.0, 100.0, 1.0, 1.0, 1.0);
    const SpecialCase sc = special_case_setup(1.0, 100.0, 1.0, 1.0, 1.0, 2000);
    const Matrix info = fisher_info(sc.theta, sc.data).per_subject();
    const AvarPair a = avar_envelope(info, gradient_G(sc.phi));
    CHECK(rel_diff(beta_block(a.avar_em, 2, 1), cf.avar_em) <= 1e-8);
    CHECK_THROWS_AS(special_case_setup(1.0, 1.0, 1.0, 1.0, 1.0, 3), ConfigError);
}

TEST_CASE("sandwich agrees with the model-based avar under normality") {
    Rng rng(68);
    EnvelopeParams phi = random_phi(rng, 3, 1, 1, 1);
    const LongitudinalDataset d = random_dataset(rng, natural_of_envelope(phi), 2000, 3, 3);
    const Matrix sw = beta_block(sandwich_avar(phi, d), 3, 1);
    const Matrix model = beta_block(envelope_avar_at(phi, d).avar_env, 3, 1);
    CHECK(rel_diff(sw, model) <= 0.15);

    EnvelopeParams full = random_phi(rng, 2, 2, 1, 1);
    full.gamma = Matrix::Identity(2, 2);
    full.gamma0 = Matrix(2, 0);
    full.omega0 = Matrix(0, 0);
    const NaturalParams tf = natural_of_envelope(full);
    const LongitudinalDataset df = random_dataset(rng, tf, 50, 2, 3);
    const FisherOptions fo{.profile_intercept = true};
    const Matrix info = fisher_info(tf, df, fo).per_subject();
    const Matrix sc = subject_scores(tf, df, fo);
    const Matrix jinv = inverse_spd(info);
    const Matrix plain = jinv * (sc.transpose() * sc / 50.0) * jinv;
    CHECK(rel_diff(sandwich_avar(full, df), plain) <= 1e-8);
    CHECK_THROWS_AS(sandwich_avar(full, random_dataset(rng, tf, 5, 2, 3)), DataError);
}

TEST_CASE("standard errors") {
    Matrix avar = Matrix::Zero(4, 4);
    avar.diagonal() << 4.0, 9.0, 16.0, 25.0;
    const Matrix se = standard_errors(avar, 2, 2, 4);
    CHECK(se(0, 0) == doctest::Approx(1.0));
    CHECK(se(1, 0) == doctest::Approx(1.5));
    CHECK(se(0, 1) == doctest::Approx(2.0));
    CHECK(se(1, 1) == doctest::Approx(2.5));
}

TEST_CASE("bootstrap") {
    Rng rng(69);
    const EnvelopeParams phi = random_phi(rng, 2, 1, 1, 1);
    const LongitudinalDataset d = random_dataset(rng, natural_of_envelope(phi), 12, 3, 3);
    BootstrapSpec spec;
    spec.kind = FitterKind::standard_em;
    const Resampler identity = [](int n, Rng&) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        return idx;
    };
    const BootstrapResult same = bootstrap_se(d, spec, 2, 5, identity);
    CHECK(same.se.norm() == 0.0);
    CHECK(same.draws.size() == 2);

    spec.kind = FitterKind::mixed_envelope;
    spec.u = 1;
    const BootstrapResult a = bootstrap_se(d, spec, 4, 11);
    const BootstrapResult b = bootstrap_se(d, spec, 4, 11);
    CHECK(a.se == b.se);
    CHECK(a.se.minCoeff() > 0.0);

    const Resampler single = [](int, Rng&) { return std::vector<int>{0}; };
    CHECK_THROWS_AS(bootstrap_se(d, spec, 3, 1, single), UnstableBootstrapError);
    CHECK_THROWS_AS(bootstrap_se(d, spec, 1, 1), ConfigError);
}
