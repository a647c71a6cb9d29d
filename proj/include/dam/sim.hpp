#pragma once

#include "dam/estimands.hpp"
#include "dam/model.hpp"
#include "dam/panel.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dam {

enum class EffectScale { additive, multiplicative };

// Synthetic AR(1) baseline: rates r_it = mu_i + ar * (r_{i,t-1} - mu_i) + noise
// with unit means, populations, and unit-level covariates drawn once per seed.
struct BaselineConfig {
    int n_units = 51;
    int n_times = 16;
    double mu_mean = 0.85;
    double mu_sd = 0.04;
    double ar_coef = 0.8;
    double noise_sd = 0.025;
    double pop_min = 2e5;
    double pop_max = 8e6;
    int n_het_covariates = 3;
};

struct SimScenario {
    BaselineConfig baseline;
    std::optional<PanelDataset> base_panel; // user-supplied Y(0) panel instead
    std::string policy = "policy";
    int n_treated = 20;
    int start_lo = 8, start_hi = 14;
    int reference_period = 7;
    double confounding_c = 0.0;
    double tau = -0.02;
    EffectScale effect_scale = EffectScale::additive;
    double exceedance_target = 0.0; // P(|tau_i| > |tau|); 0 = homogeneous
    double k_scale = 0.0;           // direct heterogeneity scale, alternative input
    std::uint64_t seed = 1;
};

struct TreatmentAssignment {
    std::vector<std::optional<int>> start; // adoption time per unit
    std::vector<std::vector<double>> exposure; // [unit][time], 0/1, absorbing
};

struct SimDraw {
    PanelDataset observed;
    std::vector<double> y1, y0; // per-cell potential-outcome counts
    std::vector<double> tau_i;  // per unit
    std::vector<std::optional<int>> start;
    int clamped_cells = 0;
};

// Appendix-D-style assignment: reference-period outcomes are max-min scaled,
// n_treated candidate start times are drawn uniformly from the window,
// sorted, and assigned (earliest first) to units sampled without replacement
// with probability proportional to the scaled outcome to the power c.
TreatmentAssignment assign_treatment(const PanelDataset& base_panel, int n_treated,
                                     int start_lo, int start_hi, double confounding_c,
                                     int reference_period, std::uint64_t seed);

PanelDataset make_ar1_baseline(const BaselineConfig& cfg, std::uint64_t seed,
                               const std::string& policy_name);

SimDraw apply_effects(const PanelDataset& base_panel, const TreatmentAssignment& assignment,
                      const SimScenario& scenario, std::uint64_t seed);

// Heterogeneity scale solving P(|k Z| > |tau|) = p for standard normal Z.
double exceedance_k(double tau, double p);

// Rate-scale per-unit-period SATT truth over event times 0..horizon-1, from
// the recorded potential outcomes.
double true_satt(const SimDraw& draw, int horizon);

struct SimEstimatorConfig {
    std::vector<std::string> names; // dam | twfe | did_gt | synth
    int dam_k = 2;
    int dam_l = 0;
    Family dam_family = Family::linear;
    Imputation dam_imputation = Imputation::model_mean;
    int dam_draws = 2000;
    int n_bootstrap = 999;
    int horizon = 3;
};

struct EstimatorMetrics {
    std::string name;
    double mse = 0.0;
    double std_mse = 1.0;
    double coverage = 0.0;
    double power = 0.0;
    double mean_interval_width = 0.0;
    double mean_point = 0.0;
    int failures = 0;
    bool flagged = false; // > 5% failures
};

struct ScenarioMetrics {
    std::string confounding_label;
    std::string heterogeneity_label;
    double confounding_c = 0.0;
    double exceedance = 0.0;
    int n_replications = 0;
    double mean_true_satt = 0.0;
    double mean_clamped_cells = 0.0;
    std::vector<EstimatorMetrics> estimators;
};

struct MetricsReport {
    std::vector<ScenarioMetrics> scenarios;
    std::uint64_t seed = 0;
};

struct SimGrid {
    SimScenario base;                  // tau, windows, baseline config
    std::vector<double> confounding;   // e.g. {0, 1, 3}
    std::vector<double> heterogeneity; // exceedance targets, e.g. {0, 0.1, 0.33}
    int n_replications = 200;
    int threads = 0; // 0 = hardware
};

MetricsReport run_grid(const SimGrid& grid, const SimEstimatorConfig& estimators,
                       std::uint64_t seed);

std::string confounding_label(double c);
std::string heterogeneity_label(double exceedance);

} // namespace dam
