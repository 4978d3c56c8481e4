#pragma once
#include <cstdint>
#include <string>
#include <vector>
#include "mixenv/envelope.hpp"

namespace mixenv {

/// Looser EM tolerance, no per-iteration likelihood and one random 1D restart.
EnvelopeFitOptions bench_fit_options();

struct BenchOptions {
    EnvelopeFitOptions fit = bench_fit_options();
    int response_restarts = 1;
    /// Keep (Gamma, beta0, B) fixed across replicates and redraw data only.
    bool fixed_parameters = false;
};

struct MethodSeries {
    std::string method;
    std::vector<double> error;    ///< ||beta_hat - beta||^2, NaN when unavailable
    std::vector<char> available;
    std::vector<double> seconds;  ///< wall clock per fit
    int n_available() const;
    double mean() const;
    double median() const;
};

struct BenchReport {
    std::string scenario;
    std::uint64_t seed = 0;
    int replicates = 0;
    bool fixed_parameters = false;
    /// mixed_envelope, standard_em, response_envelope, response_pls
    std::vector<MethodSeries> methods;
    std::vector<int> u_hat;           ///< mixed envelope, -1 on failure
    std::vector<int> u_hat_response;  ///< response envelope, -1 on failure
    std::vector<int> u_histogram;     ///< counts of u_hat indexed by u
    std::vector<std::string> failures;
    const MethodSeries& method(const std::string& name) const;
};

BenchReport run_simulation_study(const SimulationConfig& config, int replicates, std::uint64_t seed,
                                 const BenchOptions& opts = {});

struct DemoEstimate {
    std::string method;
    Matrix beta;  ///< 2 x 1, or 10 x 1 for the vectorized fits
    double mse = 0.0;
    int u = -1;   ///< selected dimension, -1 when not applicable
};

struct DensityCurve {
    std::string method;
    int group = 0;
    Vector direction;  ///< unit projection direction
    double mean = 0.0;
    double sd = 0.0;
    std::vector<double> grid;
    std::vector<double> density;
};

struct Demo2dReport {
    std::uint64_t seed = 0;
    Vector beta_true;
    /// ols_vectorized, classic_envelope_vectorized, standard_em, mixed_envelope,
    /// known_b_ols, known_b_envelope
    std::vector<DemoEstimate> estimates;
    double ratio_mixed_em = 0.0;
    double ratio_classic_em = 0.0;
    double ratio_known_b = 0.0;
    Matrix scatter;  ///< columns: subject, group, time, y1, y2, y1 - b1, y2 - b2
    std::vector<DensityCurve> densities;
    const DemoEstimate& estimate(const std::string& name) const;
};

Demo2dReport run_demo2d(std::uint64_t seed, const EnvelopeFitOptions& fit = bench_fit_options());

}  // namespace mixenv
