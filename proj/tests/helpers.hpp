#pragma once

// Shared test fixtures: model-exact data generators and small independent
// oracles (plain OLS, sample moments). These deliberately avoid the library's
// fitting code paths so they can serve as oracles for it.

#include "dam/model.hpp"
#include "dam/panel.hpp"
#include "dam/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <vector>

namespace testutil {

// ---------------------------------------------------------------------------
// independent OLS oracle (normal equations via QR on the raw design)
// ---------------------------------------------------------------------------

inline Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    return X.colPivHouseholderQr().solve(y);
}

inline double ols_se_for(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int col) {
    const Eigen::VectorXd beta = ols(X, y);
    const double rss = (y - X * beta).squaredNorm();
    const double s2 = rss / static_cast<double>(y.size() - X.cols());
    const Eigen::MatrixXd xtx_inv =
        (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    return std::sqrt(s2 * xtx_inv(col, col));
}

// ---------------------------------------------------------------------------
// model-exact panel generator
// ---------------------------------------------------------------------------

struct GenConfig {
    dam::ModelSpec spec;   // linear or log_link
    dam::DamParams truth;  // sigma2 = innovation variance (linear)
    int n = 51;
    int n_times = 16; // times 0..n_times-1
    double init_mean = 0.5;
    double init_sd = 0.05;
    // per-policy Bernoulli propensity on the prior control counterfactual:
    // link(b0 + b1 * Y_{t-1}(0)); this makes the ignorability assumption hold
    // exactly and keeps the IPW propensity model correctly specified.
    double prop_b0 = -1.0;
    double prop_b1 = 0.0;
    bool prop_probit = false;
    bool absorbing = false;
    double population = 1.0;
    std::uint64_t seed = 1;
};

struct GenPanel {
    dam::PanelDataset panel;
    // counterfactual outcome absent all policies, per cell (same scale as the
    // panel outcome)
    std::vector<double> y_null;
    // exposure effect at each cell under the realized exposures
    std::vector<double> effect;
};

inline GenPanel generate_panel(const GenConfig& cfg) {
    const dam::ModelSpec& spec = cfg.spec;
    const int T = cfg.n_times - 1;
    const std::size_t n_pol = spec.policies.size();
    dam::Rng rng(cfg.seed);
    const std::size_t cells = static_cast<std::size_t>(cfg.n) * cfg.n_times;

    std::vector<double> outcome(cells, 0.0), population(cells, cfg.population);
    std::map<std::string, std::vector<double>> policies, covariates;
    for (const auto& p : spec.policies) policies[p].assign(cells, 0.0);
    for (const auto& c : spec.covariates) covariates[c].assign(cells, 0.0);
    std::vector<double> y_null(cells, 0.0), effect_grid(cells, 0.0);

    std::vector<std::string> units(cfg.n);
    for (int i = 0; i < cfg.n; ++i) units[i] = "u" + std::to_string(i);

    const auto pairs = spec.interaction_pairs();
    for (int i = 0; i < cfg.n; ++i) {
        auto cell = [&](int t) { return static_cast<std::size_t>(i) * cfg.n_times + t; };
        for (const auto& c : spec.covariates) covariates[c][cell(0)] = rng.normal();

        // exposure window effect at time t from stored exposures (z <= t)
        auto effect_at = [&](int t) {
            double eff = 0.0;
            for (std::size_t p = 0; p < n_pol; ++p)
                for (int z = 0; z <= spec.l; ++z)
                    if (t - z >= 0) eff += cfg.truth.theta[p][z] *
                                           policies[spec.policies[p]][cell(t - z)];
            for (std::size_t ip = 0; ip < pairs.size(); ++ip)
                eff += cfg.truth.zeta[ip] * policies[spec.policies[pairs[ip].first]][cell(t)] *
                       policies[spec.policies[pairs[ip].second]][cell(t)];
            return eff;
        };

        for (int t = 0; t <= T; ++t) {
            // covariates: fresh draw each period (exogenous)
            if (t > 0)
                for (const auto& c : spec.covariates) covariates[c][cell(t)] = rng.normal();
            // treatment depends on the prior control counterfactual
            for (std::size_t p = 0; p < n_pol; ++p) {
                double a = 0.0;
                if (t >= 1) {
                    const double prev = y_null[cell(t - 1)] / cfg.population;
                    const double eta = cfg.prop_b0 + cfg.prop_b1 * prev;
                    const double e = cfg.prop_probit
                                         ? 0.5 * std::erfc(-eta / std::sqrt(2.0))
                                         : 1.0 / (1.0 + std::exp(-eta));
                    a = rng.bernoulli(e) ? 1.0 : 0.0;
                    if (cfg.absorbing && policies[spec.policies[p]][cell(t - 1)] > 0.0)
                        a = 1.0;
                }
                policies[spec.policies[p]][cell(t)] = a;
            }
            const double eff = effect_at(t);
            effect_grid[cell(t)] = eff;

            if (spec.family == dam::Family::linear) {
                double mean = cfg.truth.alpha + eff;
                for (int b = 1; b <= spec.k; ++b) {
                    double lag_debiased;
                    if (t - b >= 0)
                        lag_debiased = outcome[cell(t - b)] / cfg.population - effect_at(t - b);
                    else
                        lag_debiased = cfg.init_mean; // pre-sample level
                    mean += cfg.truth.delta[b - 1] * lag_debiased;
                }
                for (std::size_t c = 0; c < spec.covariates.size(); ++c)
                    mean += cfg.truth.gamma[c] * covariates[spec.covariates[c]][cell(t)];
                double y;
                if (t < spec.k) // burn-in periods: draw around the initial level
                    y = cfg.init_mean + cfg.init_sd * rng.normal() + eff;
                else
                    y = mean + std::sqrt(cfg.truth.sigma2) * rng.normal();
                outcome[cell(t)] = y * cfg.population;
                y_null[cell(t)] = (y - eff) * cfg.population;
            } else {
                double eta = cfg.truth.alpha + eff + std::log(cfg.population);
                for (int b = 1; b <= spec.k; ++b) {
                    double lag_debiased;
                    if (t - b >= 0)
                        lag_debiased =
                            std::log(outcome[cell(t - b)] + spec.log_shift) - effect_at(t - b);
                    else
                        lag_debiased = std::log(cfg.init_mean * cfg.population + spec.log_shift);
                    eta += cfg.truth.delta[b - 1] * lag_debiased;
                }
                for (std::size_t c = 0; c < spec.covariates.size(); ++c)
                    eta += cfg.truth.gamma[c] * covariates[spec.covariates[c]][cell(t)];
                double y;
                if (t < spec.k) {
                    const double mu0 = cfg.init_mean * cfg.population * std::exp(eff);
                    y = static_cast<double>(
                        rng.negative_binomial(std::max(mu0, 1e-9), cfg.truth.dispersion));
                } else {
                    const double mu = std::exp(std::min(eta, 50.0));
                    y = static_cast<double>(
                        rng.negative_binomial(std::max(mu, 1e-9), cfg.truth.dispersion));
                }
                outcome[cell(t)] = y;
                y_null[cell(t)] = y / std::exp(eff);
            }
        }
    }
    return GenPanel{dam::PanelDataset(units, cfg.n_times, std::move(outcome),
                                      std::move(population), std::move(policies),
                                      std::move(covariates)),
                    std::move(y_null), std::move(effect_grid)};
}

// small handcrafted rectangular panel
inline dam::PanelDataset tiny_panel(int n, int n_times,
                                    const std::vector<double>& outcome,
                                    const std::vector<double>& exposure,
                                    double population = 1.0) {
    std::vector<std::string> units(n);
    for (int i = 0; i < n; ++i) units[i] = "u" + std::to_string(i);
    const std::size_t cells = static_cast<std::size_t>(n) * n_times;
    std::map<std::string, std::vector<double>> policies;
    policies["a"] = exposure;
    return dam::PanelDataset(units, n_times, outcome,
                             std::vector<double>(cells, population), std::move(policies), {});
}

} // namespace testutil
