#pragma once

#include "dam/estimation.hpp"
#include "dam/model.hpp"
#include "dam/panel.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dam {

enum class EstimandKind { satt_avg, satt_by_period, sapo, multiplicative_ratio };

// How unobserved potential outcomes are imputed per draw:
//  - observed_plus_model keeps Y*(A_obs) = Y_obs and draws the counterfactual
//    from the fitted outcome distribution,
//  - double_draw draws both potential outcomes from the fitted distribution,
//  - model_mean uses the model means directly (parameter uncertainty only).
enum class Imputation { observed_plus_model, double_draw, model_mean };

struct EstimandRequest {
    EstimandKind kind = EstimandKind::satt_avg;
    std::string policy;     // adoption/contrast policy for satt and the ratio
    int horizon = 3;        // post-adoption periods m = 0..horizon-1
    Imputation imputation = Imputation::double_draw;
    double interval_level = 0.95;
    int n_draws = 4000;          // parametric draws for FreqFit inputs
    std::uint64_t seed = 1;
    bool rate_scale = false;     // divide count-family cells by population
    int eval_time = -1;          // sapo / ratio evaluation time; -1 = last period
    // sapo: one map per grid level, policy name -> forced level
    std::vector<std::map<std::string, double>> sapo_levels;
    // multiplicative_ratio: forced levels defining the "a-bar" window
    std::map<std::string, double> ratio_levels;
};

struct PeriodResult {
    int m = 0;
    double point = 0.0, lo = 0.0, hi = 0.0;
    int n_units = 0;
};

struct EstimandResult {
    EstimandKind kind = EstimandKind::satt_avg;
    double point = 0.0, lo = 0.0, hi = 0.0;
    double interval_level = 0.95;
    std::vector<PeriodResult> per_period;
    int n_contributing_units = 0;
    int truncated_units = 0;
    std::vector<std::string> notes;
    // per-draw values behind the summaries (satt: combined; sapo: one row
    // per level). Exposed for exact algebraic checks and reuse.
    std::vector<double> draw_values;
    std::vector<std::vector<double>> per_period_draws;
    std::vector<std::vector<double>> per_level_draws;
};

// Parameter draws feeding the estimand layer: posterior draws as-is, or
// parametric N(estimates, vcov) draws from a frequentist fit.
struct FitDraws {
    ModelSpec spec;
    std::vector<DamParams> params;
};

FitDraws draws_from_fit(const PosteriorFit& fit);
FitDraws draws_from_fit(const FreqFit& fit, int n_draws, std::uint64_t seed);

EstimandResult satt(const FitDraws& fit, const PanelDataset& data, const EstimandRequest& req);
EstimandResult satt_by_period(const FitDraws& fit, const PanelDataset& data,
                              const EstimandRequest& req);
std::vector<EstimandResult> sapo_grid(const FitDraws& fit, const PanelDataset& data,
                                      const EstimandRequest& req);
EstimandResult multiplicative_ratio(const FitDraws& fit, const PanelDataset& data,
                                    const EstimandRequest& req);

// First period with positive exposure; nullopt for never-treated units.
std::optional<int> adoption_time(const PanelDataset& data, const std::string& policy,
                                 std::size_t unit);

} // namespace dam
