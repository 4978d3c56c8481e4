// Acceptance checks. Usage: mixenv_acceptance [k ...]; runs every criterion when
// no argument is given and prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "mixenv/baselines.hpp"
#include "mixenv/bench.hpp"
#include "mixenv/em.hpp"
#include "mixenv/envelope.hpp"
#include "mixenv/inference.hpp"
#include "mixenv/io.hpp"
#include "mixenv/matkit.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mixenv;
using namespace mixenv::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

Outcome structured_identities() {
    Rng rng(1001);
    double worst = 0.0;
    for (int r = 1; r <= 8; ++r) {
        const Matrix e = expansion_matrix(r), c = contraction_matrix(r);
        worst = std::max(worst, max_abs(c * e - Matrix::Identity(c.rows(), c.rows())));
    }
    for (int k = 0; k < 200; ++k) {
        const int r = 1 + k % 8;
        const Matrix s = random_symmetric(rng, r);
        worst = std::max(worst, max_abs(expansion_matrix(r) * vech(s) - vec(s)));
        worst = std::max(worst, max_abs(contraction_matrix(r) * vec(s) - vech(s)));
        worst = std::max(worst, max_abs(unvech(vech(s)) - s));
        const int m = 1 + (k / 8) % 8;
        const Matrix a = normal_matrix(rng, r, m);
        const Matrix kk = commutation_matrix(r, m);
        worst = std::max(worst, max_abs(kk * vec(a) - vec(a.transpose())));
        worst = std::max(worst, max_abs(unvec(commutation_matrix(m, r) * kk * vec(a), r, m) - a));
    }
    return {worst <= 1e-12, fmt("max abs error %.3g over 200 matrices", worst)};
}

Outcome likelihood_oracle() {
    Rng rng(1002);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const int r = 1 + k % 3, p = 1 + k % 3, q = k % 3;
        const int jmax = std::min(30 / r, 6);
        const NaturalParams t = random_theta(rng, r, p, q);
        const LongitudinalDataset d = random_dataset(rng, t, 4, 1, jmax);
        worst = std::max(worst, rel_diff(obs_loglik(t, d), dense_loglik(t, d)));
    }
    return {worst <= 1e-8, fmt("max relative error %.3g over 50 instances", worst)};
}

Outcome em_monotone() {
    Rng rng(1003);
    double worst_em = 0.0, worst_env = 0.0;
    for (int k = 0; k < 20; ++k) {
        const int q = 1 + k % 2;
        const NaturalParams t = random_theta(rng, 3, 2, q);
        const LongitudinalDataset d = random_dataset(rng, t, 25, 3, 6);
        EmOptions o;
        o.max_iter = 300;
        const FitResult em = fit_standard_em(d, o);
        for (std::size_t i = 1; i < em.loglik_trace.size(); ++i)
            worst_em = std::max(worst_em, em.loglik_trace[i - 1] - em.loglik_trace[i]);

        const EnvelopeParams phi = random_phi(rng, 3, 1, 2, q);
        const LongitudinalDataset de = random_dataset(rng, natural_of_envelope(phi), 25, 3, 6);
        EnvelopeFitOptions eo;
        eo.em.max_iter = 300;
        const FitResult env = fit_mixed_envelope(de, 1, eo);
        for (std::size_t i = 1; i < env.loglik_trace.size(); ++i)
            worst_env = std::max(worst_env, env.loglik_trace[i - 1] - env.loglik_trace[i]);
    }
    return {worst_em <= 1e-8 && worst_env <= 1e-6,
            fmt("largest decrease: standard %.3g, envelope %.3g", worst_em, worst_env)};
}

Outcome degeneracy() {
    Rng rng(1004);
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
        const int r = 2 + k % 2;
        const EnvelopeParams phi = random_phi(rng, r, 1, 1 + k % 2, 1);
        const LongitudinalDataset d = random_dataset(rng, natural_of_envelope(phi), 30, 3, 5);
        EnvelopeFitOptions o;
        o.em.delta_tol = 1e-10;
        const FitResult env = fit_mixed_envelope(d, r, o);
        const FitResult em = fit_standard_em(d, o.em);
        worst = std::max({worst, rel_diff(env.theta_hat.beta, em.theta_hat.beta),
                          rel_diff(env.theta_hat.sigma_eps, em.theta_hat.sigma_eps),
                          rel_diff(env.theta_hat.sigma_b, em.theta_hat.sigma_b)});
    }
    return {worst <= 1e-4, fmt("max relative difference %.3g over 5 datasets", worst)};
}

Outcome estep_exact() {
    Rng rng(1005);
    const std::pair<int, int> shapes[] = {{1, 1}, {2, 1}, {1, 2}, {2, 2}, {4, 1}, {1, 4}, {3, 1}, {1, 3}};
    double worst = 0.0;
    for (int k = 0; k < 32; ++k) {
        const auto [r, q] = shapes[k % 8];
        const NaturalParams t = random_theta(rng, r, 2, q);
        const LongitudinalDataset d = random_dataset(rng, t, 3, 1, 5);
        const PosteriorMoments post = e_step(t, d);
        for (int i = 0; i < d.n(); ++i) {
            const DensePosterior want = dense_posterior(t, d.subjects[i]);
            worst = std::max({worst, rel_diff(Matrix(post.mu[i]), Matrix(want.mu)), rel_diff(post.cov[i], want.cov)});
        }
    }
    return {worst <= 1e-8, fmt("max relative error %.3g", worst)};
}

Outcome fisher_oracles() {
    Rng rng(1006);
    double worst_fisher = 0.0, worst_g = 0.0;
    for (int k = 0; k < 10; ++k) {
        const int r = 2 + k % 2, p = 1 + k % 2, q = 1 + (k / 2) % 2;
        const NaturalParams t = random_theta(rng, r, p, q);
        const LongitudinalDataset d = random_dataset(rng, t, 3, 2, 3);
        worst_fisher = std::max(worst_fisher, rel_diff(fisher_info(t, d).assembled(), fd_expected_information(t, d)));

        const int rg = 2 + k % 3, u = 1 + k % (rg - 1);
        const EnvelopeParams phi = random_phi(rng, rg, u, p, 1);
        worst_g = std::max(worst_g, max_abs(gradient_G(phi) - fd_jacobian_h(phi)));
    }
    return {worst_fisher < 1e-4 && worst_g < 1e-5,
            fmt("information relative error %.3g, G max abs error %.3g", worst_fisher, worst_g)};
}

Outcome avar_ordering() {
    Rng rng(1007);
    double worst = 1e300;
    for (int k = 0; k < 10; ++k) {
        const int r = 2 + k % 3, u = 1 + k % (r - 1), p = 1 + k % 2;
        const EnvelopeParams phi = random_phi(rng, r, u, p, 1);
        const NaturalParams t = natural_of_envelope(phi);
        const LongitudinalDataset d = random_dataset(rng, t, 20, 2, 4);
        const AvarPair a = avar_envelope(fisher_info(t, d).per_subject(), gradient_G(phi));
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a.avar_em - a.avar_env));
        worst = std::min(worst, es.eigenvalues().minCoeff());
    }
    return {worst >= -1e-8, fmt("smallest eigenvalue %.3g", worst)};
}

Outcome closed_form() {
    struct Cfg {
        double s1, s0, sb, sx1, sx2;
    };
    const Cfg cfgs[] = {{1.0, 100.0, 1.0, 1.0, 1.0}, {2.0, 5.0, 0.5, 1.0, 2.0}, {0.5, 10.0, 3.0, 2.0, 1.5}};
    double worst_em = 0.0, worst_env = 0.0;
    for (const Cfg& c : cfgs) {
        const ClosedFormAvar cf = closed_form_avar_special(c.s1, c.s0, c.sb, c.sx1, c.sx2);
        const SpecialCase sc = special_case_setup(c.s1, c.s0, c.sb, c.sx1, c.sx2, 2);
        const AvarPair a = avar_envelope(fisher_info(sc.theta, sc.data).per_subject(), gradient_G(sc.phi));
        worst_em = std::max(worst_em, rel_diff(beta_block(a.avar_em, 2, 1), cf.avar_em));
        worst_env = std::max(worst_env, rel_diff(beta_block(a.avar_env, 2, 1), cf.avar_env));
    }
    bool increasing = true;
    double prev = 0.0;
    std::string ratios;
    for (double s0 : {1.0, 10.0, 100.0, 1000.0}) {
        const double ratio = closed_form_avar_special(0.5, s0, 1.0, 1.0, 1.0).ratio22;
        increasing = increasing && ratio > prev;
        prev = ratio;
        ratios += fmt(" %.6g", ratio);
    }
    const double equal = closed_form_avar_special(2.0, 2.0, 1.0, 1.0, 1.0).ratio22;
    const bool pass = worst_em <= 1e-8 && worst_env <= 1e-8 && increasing && std::abs(equal - 1.0) <= 1e-12;
    return {pass, fmt("closed vs generic relative error: em block %.3g, envelope block %.3g; ratio22 over "
                      "sigma0^2 in {1,10,100,1000}:%s; ratio22 at equal variances %.17g",
                      worst_em, worst_env, ratios.c_str(), equal)};
}

Outcome demo_study() {
    int mixed_good = 0, u_good = 0;
    double classic_sum = 0.0, em_sum = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Demo2dReport rep = run_demo2d(seed);
        mixed_good += rep.ratio_mixed_em < 0.7;
        u_good += rep.estimate("mixed_envelope").u == 1;
        classic_sum += rep.estimate("classic_envelope_vectorized").mse;
        em_sum += rep.estimate("standard_em").mse;
        per_seed += fmt(" %.3f/%.3f", rep.ratio_mixed_em, rep.ratio_classic_em);
    }
    const double classic_ratio = classic_sum / em_sum;
    const bool pass = mixed_good >= 9 && u_good >= 9 && classic_ratio >= 0.7 && classic_ratio <= 1.3;
    return {pass, fmt("mixed/EM < 0.7 in %d/10 seeds; u_hat = 1 in %d/10; classic/EM ratio of mean MSE %.3f; "
                      "per-seed mixed/classic ratios:%s",
                      mixed_good, u_good, classic_ratio, per_seed.c_str())};
}

std::string study_summary(const BenchReport& rep, int u_good) {
    std::string s;
    for (const MethodSeries& m : rep.methods) s += fmt("%s %.4g; ", m.method.c_str(), m.mean());
    return s + fmt("u_hat = 1 in %d/%d; failures %zu", u_good, rep.replicates, rep.failures.size());
}

Outcome balanced_study() {
    const SimulationConfig cfg = SimulationConfig::preset(Scenario::balanced_main, 1);
    const BenchReport rep = run_simulation_study(cfg, 100, 2024);
    const double mixed = rep.method("mixed_envelope").mean();
    const double others = std::min({rep.method("standard_em").mean(), rep.method("response_envelope").mean(),
                                    rep.method("response_pls").mean()});
    const int u_good = static_cast<int>(std::count(rep.u_hat.begin(), rep.u_hat.end(), 1));
    const bool pass = mixed < rep.method("standard_em").mean() / 3.0 && mixed < others && u_good >= 95;
    return {pass, "mean squared error: " + study_summary(rep, u_good)};
}

Outcome unbalanced_study() {
    const SimulationConfig cfg = SimulationConfig::preset(Scenario::unbalanced_main, 1);
    const BenchReport rep = run_simulation_study(cfg, 100, 2025);
    const double mixed = rep.method("mixed_envelope").mean();
    const int u_good = static_cast<int>(std::count(rep.u_hat.begin(), rep.u_hat.end(), 1));
    const bool pass = mixed < rep.method("standard_em").mean() / 3.0 && u_good >= 95;
    return {pass, "mean squared error: " + study_summary(rep, u_good)};
}

Outcome response_envelope_span() {
    Rng rng(1012);
    const int r = 3, p = 2, J = 4, n = 2000;
    const Matrix basis = random_orthonormal(rng, r, r);
    EnvelopeParams phi;
    phi.alpha = normal_matrix(rng, r, 1);
    phi.gamma = basis.col(0);
    phi.gamma0 = basis.rightCols(2);
    phi.eta = (Matrix(1, p) << 3.0, -2.0).finished();
    phi.omega = Matrix::Constant(1, 1, 0.1);
    phi.omega0 = Vector((Vector(2) << 0.5, 20.0).finished()).asDiagonal();
    // Sigma_b couples Gamma with the second Phi direction strongly
    const Matrix big_phi = basis.leftCols(2);
    const Matrix a = (Matrix(2, 2) << 4.0, 3.5, 3.5, 4.0).finished();
    phi.sigma_b = big_phi * a * big_phi.transpose() + 10.0 * basis.col(2) * basis.col(2).transpose();

    std::vector<Matrix> xs, zs;
    for (int i = 0; i < n; ++i) {
        xs.push_back(normal_matrix(rng, p, 1).replicate(1, J));
        zs.push_back(Matrix::Ones(1, J));
    }
    const LongitudinalDataset d = simulate_responses(natural_of_envelope(phi), xs, zs, rng);
    const Matrix target = prop1_basis(phi, J);
    const int u = static_cast<int>(target.cols());
    const ReducedFit fit = fit_response_envelope(vectorize_balanced(d), u);
    const double dist = subspace_distance(fit.gamma, target);
    return {u == 2 && dist < 0.1, fmt("envelope dimension %d, projector distance %.4g", u, dist)};
}

Outcome bootstrap_sanity() {
    Rng rng(1013);
    const int r = 3, p = 2, n = 500;
    EnvelopeParams phi;
    const Matrix basis = random_orthonormal(rng, r, r);
    phi.alpha = normal_matrix(rng, r, 1);
    phi.gamma = basis.col(0);
    phi.gamma0 = basis.rightCols(2);
    phi.eta = (Matrix(1, p) << 1.0, -0.5).finished();
    phi.omega = Matrix::Constant(1, 1, 0.5);
    phi.omega0 = Vector((Vector(2) << 10.0, 20.0).finished()).asDiagonal();
    phi.sigma_b = random_spd(rng, r);
    const LongitudinalDataset d = random_dataset(rng, natural_of_envelope(phi), n, 4, 4);

    EnvelopeFitOptions o = bench_fit_options();
    o.restarts = 3;
    const FitResult fit = fit_mixed_envelope(d, 1, o);
    const Matrix avar = beta_block(envelope_avar_at(*fit.phi_hat, d).avar_env, r, p);
    const Matrix se_avar = standard_errors(avar, r, p, n);

    BootstrapSpec spec;
    spec.kind = FitterKind::mixed_envelope;
    spec.u = 1;
    spec.options = bench_fit_options();
    spec.warm_phi = fit.phi_hat;
    const BootstrapResult boot = bootstrap_se(d, spec, 500, 1313);
    int close = 0;
    std::string ratios;
    for (Eigen::Index k = 0; k < se_avar.size(); ++k) {
        const double ratio = boot.se(k) / se_avar(k);
        close += std::abs(ratio - 1.0) <= 0.2;
        ratios += fmt(" %.3f", ratio);
    }
    const auto total = static_cast<int>(se_avar.size());
    return {close >= 0.8 * total, fmt("%d/%d coordinates within 20%%; bootstrap/avar ratios:%s; failed refits %d",
                                      close, total, ratios.c_str(), boot.failed)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + MIXENV_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
    const fs::path root = fs::temp_directory_path() / "mixenv_acceptance_cli";
    fs::remove_all(root);
    std::vector<std::string> problems;
    struct Run {
        std::string args;
        std::vector<std::string> files;
    };
    const std::string data = (root / "sim" / "data.csv").string();
    const Run runs[] = {
        {"simulate --scenario balanced_main --seed 11", {"data.csv", "truth.json"}},
        {"fit --input " + data + " --u 1 --bootstrap 3 --seed 5", {"result.json", "estimates.csv", "loglik_trace.csv"}},
        {"demo --seed 7", {"report.json", "estimates.csv", "scatter.csv", "density.csv"}},
    };
    const char* names[] = {"sim", "fit", "demo"};
    for (int k = 0; k < 3; ++k) {
        // identical config includes the output directory, which the provenance block echoes
        const fs::path out = root / names[k];
        std::map<std::string, std::string> first;
        for (int rep = 1; rep <= 2; ++rep) {
            const int code = run_cli(runs[k].args + " --output " + out.string());
            if (code != 0) problems.push_back(fmt("%s run %d exited %d", names[k], rep, code));
            for (const std::string& f : runs[k].files) {
                const std::string bytes = slurp(out / f);
                if (rep == 1) first[f] = bytes;
                else if (bytes.empty() || bytes != first[f])
                    problems.push_back(std::string(names[k]) + "/" + f + " differs or is empty");
            }
        }
    }
    if (run_cli("fit --input " + data + " --bic nonsense --output " + (root / "bad").string()) != 2)
        problems.push_back("invalid option did not exit 2");

    double worst = 0.0;
    try {
        const IngestResult in = ingest_csv(data);
        const Simulation sim = simulate(SimulationConfig::preset(Scenario::balanced_main, 11));
        for (int i = 0; i < sim.data.n(); ++i) {
            worst = std::max({worst, max_abs(in.data.subjects[i].y - sim.data.subjects[i].y),
                              max_abs(in.data.subjects[i].x - sim.data.subjects[i].x),
                              max_abs(in.data.subjects[i].z - sim.data.subjects[i].z)});
        }
        if (export_csv_text(in.data, in.subject_ids, in.times) != slurp(data))
            problems.push_back("re-exported CSV differs from the file");
    } catch (const std::exception& e) {
        problems.push_back(std::string("round trip failed: ") + e.what());
    }
    if (worst > 1e-12) problems.push_back(fmt("round trip error %.3g", worst));
    fs::remove_all(root);
    std::string detail = fmt("round trip max abs error %.3g", worst);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

const std::map<int, std::pair<const char*, std::function<Outcome()>>>& criteria() {
    static const std::map<int, std::pair<const char*, std::function<Outcome()>>> table = {
        {1, {"structured matrix identities", structured_identities}},
        {2, {"likelihood oracle", likelihood_oracle}},
        {3, {"EM monotonicity", em_monotone}},
        {4, {"envelope at u = r equals standard EM", degeneracy}},
        {5, {"E-step exactness", estep_exact}},
        {6, {"information and Jacobian oracles", fisher_oracles}},
        {7, {"envelope avar ordering", avar_ordering}},
        {8, {"closed-form special case", closed_form}},
        {9, {"two-group demo", demo_study}},
        {10, {"balanced simulation study", balanced_study}},
        {11, {"unbalanced simulation study", unbalanced_study}},
        {12, {"response envelope span on vectorized data", response_envelope_span}},
        {13, {"bootstrap standard errors", bootstrap_sanity}},
        {14, {"CLI determinism and CSV round trip", cli_determinism}},
    };
    return table;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> which;
    for (int k = 1; k < argc; ++k) which.push_back(std::atoi(argv[k]));
    if (which.empty())
        for (const auto& [k, _] : criteria()) which.push_back(k);
    bool all = true;
    for (int k : which) {
        const auto it = criteria().find(k);
        if (it == criteria().end()) {
            std::printf("criterion %d: FAIL (unknown criterion)\n", k);
            all = false;
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = it->second.second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d: %s %s (%s; %.1f s)\n", k, o.pass ? "PASS" : "FAIL", it->second.first,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
