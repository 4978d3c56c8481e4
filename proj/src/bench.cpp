#include "mixenv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "mixenv/baselines.hpp"
#include "mixenv/errors.hpp"
#include "mixenv/rng.hpp"

namespace mixenv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::vector<double> available_errors(const MethodSeries& m) {
    std::vector<double> out;
    for (std::size_t i = 0; i < m.error.size(); ++i)
        if (m.available[i]) out.push_back(m.error[i]);
    return out;
}

void record(MethodSeries& m, double err, double secs) {
    m.error.push_back(err);
    m.available.push_back(std::isfinite(err) ? 1 : 0);
    m.seconds.push_back(secs);
}

DensityCurve density_curve(const std::string& method, int group, const Vector& dir, double mean, double sd,
                           double lo, double hi) {
    DensityCurve c;
    c.method = method;
    c.group = group;
    c.direction = dir;
    c.mean = mean;
    c.sd = sd;
    constexpr int kPoints = 101;
    for (int k = 0; k < kPoints; ++k) {
        const double t = lo + (hi - lo) * k / (kPoints - 1);
        const double zz = (t - mean) / sd;
        c.grid.push_back(t);
        c.density.push_back(std::exp(-0.5 * zz * zz) / (sd * std::sqrt(2.0 * std::numbers::pi)));
    }
    return c;
}

// Two fitted normals (one per group) along dir, on a shared grid.
void add_group_densities(std::vector<DensityCurve>& out, const std::string& method, const Vector& dir,
                         const Vector& alpha, const Vector& beta, const Matrix& sigma) {
    Vector v = dir.normalized();
    const double m0 = v.dot(alpha), m1 = v.dot(alpha + beta);
    const double sd = std::sqrt(std::max(v.dot(sigma * v), 1e-300));
    const double lo = std::min(m0, m1) - 4.0 * sd, hi = std::max(m0, m1) + 4.0 * sd;
    out.push_back(density_curve(method, 0, v, m0, sd, lo, hi));
    out.push_back(density_curve(method, 1, v, m1, sd, lo, hi));
}

}  // namespace

EnvelopeFitOptions bench_fit_options() {
    EnvelopeFitOptions o;
    o.em.delta_tol = 1e-6;
    o.em.loglik_check = false;
    o.restarts = 1;
    return o;
}

int MethodSeries::n_available() const {
    return static_cast<int>(std::count(available.begin(), available.end(), 1));
}

double MethodSeries::mean() const {
    const auto v = available_errors(*this);
    if (v.empty()) return kNaN;
    double s = 0.0;
    for (double e : v) s += e;
    return s / static_cast<double>(v.size());
}

double MethodSeries::median() const {
    auto v = available_errors(*this);
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

const MethodSeries& BenchReport::method(const std::string& name) const {
    for (const auto& m : methods)
        if (m.method == name) return m;
    throw ConfigError("bench report has no method " + name);
}

BenchReport run_simulation_study(const SimulationConfig& config, int replicates, std::uint64_t seed,
                                 const BenchOptions& opts) {
    if (replicates < 1) throw ConfigError("run_simulation_study: replicates must be >= 1");
    config.validate();
    opts.fit.validate();

    BenchReport rep;
    rep.scenario = to_string(config.scenario);
    rep.seed = seed;
    rep.replicates = replicates;
    rep.fixed_parameters = opts.fixed_parameters;
    rep.methods = {{"mixed_envelope", {}, {}, {}},
                   {"standard_em", {}, {}, {}},
                   {"response_envelope", {}, {}, {}},
                   {"response_pls", {}, {}, {}}};
    rep.u_histogram.assign(config.r + 1, 0);
    auto& m_env = rep.methods[0];
    auto& m_em = rep.methods[1];
    auto& m_renv = rep.methods[2];
    auto& m_pls = rep.methods[3];

    for (int k = 0; k < replicates; ++k) {
        SimulationConfig cfg = config;
        cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(k));
        if (opts.fixed_parameters) cfg.parameter_seed = seed;
        const Simulation sim = simulate(cfg);
        const Matrix& beta = sim.theta.beta;
        const std::string tag = "replicate " + std::to_string(k) + ": ";

        int u_hat = -1;
        {
            Stopwatch sw;
            try {
                const BicSelection sel = select_u_bic(sim.data, opts.fit);
                u_hat = sel.u_hat;
                record(m_env, (sel.best_fit.theta_hat.beta - beta).squaredNorm(), sw.seconds());
                if (sel.had_failures) rep.failures.push_back(tag + "mixed_envelope: some dimensions failed");
            } catch (const std::exception& e) {
                record(m_env, kNaN, sw.seconds());
                rep.failures.push_back(tag + "mixed_envelope: " + e.what());
            }
        }
        rep.u_hat.push_back(u_hat);
        if (u_hat >= 0) ++rep.u_histogram[u_hat];

        {
            Stopwatch sw;
            try {
                const FitResult em = fit_standard_em(sim.data, opts.fit.em);
                record(m_em, (em.theta_hat.beta - beta).squaredNorm(), sw.seconds());
            } catch (const std::exception& e) {
                record(m_em, kNaN, sw.seconds());
                rep.failures.push_back(tag + "standard_em: " + e.what());
            }
        }

        const VectorizedRegressionData pooled = pool_observations(sim.data);
        int u_resp = -1;
        {
            Stopwatch sw;
            try {
                const ResponseEnvelopeSelection sel = select_response_envelope(pooled, opts.response_restarts);
                u_resp = sel.u_hat;
                record(m_renv, (sel.best.beta - beta).squaredNorm(), sw.seconds());
            } catch (const std::exception& e) {
                record(m_renv, kNaN, sw.seconds());
                rep.failures.push_back(tag + "response_envelope: " + e.what());
            }
        }
        rep.u_hat_response.push_back(u_resp);

        {
            Stopwatch sw;
            try {
                if (u_hat < 0) throw ConfigError("no selected dimension to use");
                const ReducedFit pls = fit_response_pls(pooled, u_hat);
                record(m_pls, (pls.beta - beta).squaredNorm(), sw.seconds());
            } catch (const std::exception& e) {
                record(m_pls, kNaN, sw.seconds());
                rep.failures.push_back(tag + "response_pls: " + e.what());
            }
        }
    }
    return rep;
}

const DemoEstimate& Demo2dReport::estimate(const std::string& name) const {
    for (const auto& e : estimates)
        if (e.method == name) return e;
    throw ConfigError("demo report has no method " + name);
}

Demo2dReport run_demo2d(std::uint64_t seed, const EnvelopeFitOptions& fit) {
    const Simulation sim = simulate(SimulationConfig::preset(Scenario::demo2d, seed));
    const LongitudinalDataset& data = sim.data;
    const Vector beta = sim.theta.beta.col(0);
    const int J = static_cast<int>(data.subjects.front().times());
    const Vector beta_vec = vec(beta.replicate(1, J));

    Demo2dReport rep;
    rep.seed = seed;
    rep.beta_true = beta;
    auto add = [&](const std::string& name, const Matrix& b, int u) {
        const Vector target = b.rows() == beta.size() ? beta : beta_vec;
        const double mse = (b.col(0) - target).squaredNorm() / static_cast<double>(target.size());
        rep.estimates.push_back({name, b, mse, u});
    };

    const VectorizedRegressionData vdata = vectorize_balanced(data);
    const OlsFit ols_vec = fit_ols(vdata);
    add("ols_vectorized", ols_vec.beta, -1);
    const ResponseEnvelopeSelection classic = select_response_envelope(vdata, fit.restarts);
    add("classic_envelope_vectorized", classic.best.beta, classic.u_hat);

    const FitResult em = fit_standard_em(data, fit.em);
    add("standard_em", em.theta_hat.beta, -1);
    const BicSelection sel = select_u_bic(data, fit);
    add("mixed_envelope", sel.best_fit.theta_hat.beta, sel.u_hat);

    const LongitudinalDataset known = remove_random_effects(data, sim.random_effects);
    const VectorizedRegressionData pooled = pool_observations(known);
    const OlsFit ols_known = fit_ols(pooled);
    add("known_b_ols", ols_known.beta, -1);
    const ResponseEnvelopeSelection env_known = select_response_envelope(pooled, fit.restarts);
    add("known_b_envelope", env_known.best.beta, env_known.u_hat);

    const double mse_em = rep.estimate("standard_em").mse;
    rep.ratio_mixed_em = rep.estimate("mixed_envelope").mse / mse_em;
    rep.ratio_classic_em = rep.estimate("classic_envelope_vectorized").mse / mse_em;
    rep.ratio_known_b = rep.estimate("known_b_envelope").mse / rep.estimate("known_b_ols").mse;

    rep.scatter.resize(data.j_total(), 7);
    Eigen::Index row = 0;
    for (int i = 0; i < data.n(); ++i) {
        const Subject& s = data.subjects[i];
        for (Eigen::Index j = 0; j < s.times(); ++j, ++row) {
            const Vector yb = s.y.col(j) - sim.random_effects[i] * s.z.col(j);
            rep.scatter(row, 0) = i;
            rep.scatter(row, 1) = s.x(0, j);
            rep.scatter(row, 2) = static_cast<double>(j);
            rep.scatter(row, 3) = s.y(0, j);
            rep.scatter(row, 4) = s.y(1, j);
            rep.scatter(row, 5) = yb(0);
            rep.scatter(row, 6) = yb(1);
        }
    }

    const Vector e1 = Vector::Unit(2, 0);
    add_group_densities(rep.densities, "standard_em", e1, em.theta_hat.alpha, em.theta_hat.beta.col(0),
                        em.theta_hat.sigma_eps);
    const NaturalParams& th = sel.best_fit.theta_hat;
    const Vector env_dir = sel.best_fit.phi_hat && sel.best_fit.phi_hat->u() > 0 ? Vector(sel.best_fit.phi_hat->gamma.col(0))
                                                                                 : e1;
    add_group_densities(rep.densities, "mixed_envelope", env_dir, th.alpha, th.beta.col(0), th.sigma_eps);
    add_group_densities(rep.densities, "known_b_ols", e1, ols_known.alpha, ols_known.beta.col(0), ols_known.sigma);
    {
        const Matrix& g = env_known.best.gamma;
        const Matrix p = g.cols() > 0 ? Matrix(g * g.transpose()) : Matrix::Zero(2, 2);
        const Matrix q = Matrix::Identity(2, 2) - p;
        const Matrix sig = p * ols_known.sigma * p + q * ols_known.sigma_y * q;
        const Vector dir = g.cols() > 0 ? Vector(g.col(0)) : e1;
        add_group_densities(rep.densities, "known_b_envelope", dir, env_known.best.alpha, env_known.best.beta.col(0),
                            sig);
    }
    return rep;
}

}  // namespace mixenv
