#pragma once

#include "dam/model.hpp"
#include "dam/panel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace dam {

enum class PropensityLink { logit, probit };

struct Convergence {
    bool converged = false;
    int iterations = 0;
    double final_grad_norm = 0.0;
};

// Point estimates plus an M-estimation sandwich covariance. For model fits
// the names follow ParamLayout; fit_ipw uses (delta, beta0, beta1).
struct FreqFit {
    std::vector<std::string> names;
    std::vector<double> estimates;
    Eigen::MatrixXd vcov;
    Convergence convergence;
    bool has_spec = false;
    ModelSpec spec;

    double estimate(const std::string& name) const;
    double se(const std::string& name) const;
    DamParams params() const; // model fits only
};

struct SamplerConfig {
    int n_iter = 20000;
    int burn_in = 10000;
    int thin = 2;
    std::uint64_t seed = 1;
    double initial_scale = 0.1; // relative random-walk scale, adapted in burn-in
};

struct BlockDiagnostics {
    std::string block;
    double acceptance_rate = 0.0; // post burn-in
    double adapted_scale = 0.0;
};

struct PosteriorFit {
    ModelSpec spec;
    std::vector<std::string> names;
    // retained draws, one row per draw, columns in ParamLayout order
    std::vector<std::vector<double>> draws;
    SamplerConfig config;
    std::vector<BlockDiagnostics> block_diagnostics;
    std::vector<double> ess; // per parameter

    std::vector<double> posterior_mean() const;
    DamParams draw_params(std::size_t j) const;
};

struct FitOptions {
    // When false the lagged outcomes enter untransformed (no effect
    // subtraction); the model is then linear in every parameter and is
    // solved by a single least-squares / GLM fit.
    bool debias = true;
    int max_evals_per_dim = 600;
};

// Joint root of the psi_1 moment and the propensity score equations for a
// single binary policy with k = 1, l = 0, solved by damped Newton from
// (Delta, beta0, beta1) = 0. Operates on outcome/population rates.
FreqFit fit_ipw(const PanelDataset& data, PropensityLink link);

// Profiled M-estimator: exact inner solve for (alpha, gamma) given
// (delta, theta), Nelder-Mead over (delta, theta) from delta = 0.5, theta = 0.
FreqFit fit_mle(const PanelDataset& data, const ModelSpec& spec, const FitOptions& opts = {});

// Adaptive random-walk Metropolis-within-Gibbs under the paper-style priors:
// delta_b ~ U(0,1), regression coefficients ~ N(0, 100), sigma2 ~ IG(1e-3, 1e-3).
PosteriorFit fit_bayes(const PanelDataset& data, const ModelSpec& spec,
                       const SamplerConfig& config);

} // namespace dam
