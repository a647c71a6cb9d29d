#pragma once

#include "dam/panel.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dam {

struct ComparatorOptions {
    int n_bootstrap = 999;
    double interval_level = 0.95;
    std::uint64_t seed = 1;
    int horizon = 3; // event times 0..horizon-1
};

struct ComparatorResult {
    std::string estimator; // twfe | did_gt | synth
    double point = 0.0;
    double lo = 0.0, hi = 0.0;
    double interval_level = 0.95;
    // did_gt: "g<g>_t<t>" -> ATT(g,t); synth: unit id -> unit effect
    std::map<std::string, double> per_group_detail;
    int n_bootstrap_used = 0;
    std::vector<std::string> notes;
};

// OLS of the rate outcome on the policy plus unit and time fixed effects,
// with a unit-block bootstrap interval.
ComparatorResult twfe(const PanelDataset& data, const std::string& policy,
                      const ComparatorOptions& opts = {});

// Group-time average treatment effects with not-yet-treated controls,
// aggregated over event times 0..horizon-1 with group-size weights.
ComparatorResult did_gt(const PanelDataset& data, const std::string& policy,
                        const ComparatorOptions& opts = {});

// Separate synthetic control per treated unit: simplex-constrained donor
// weights minimizing pre-period discrepancy (projected gradient descent,
// tolerance 1e-10), averaged post-period gaps over event times 0..horizon-1.
ComparatorResult synth(const PanelDataset& data, const std::string& policy,
                       const ComparatorOptions& opts = {});

// Nonnegative weights summing to one minimizing ||y - D w||^2.
std::vector<double> simplex_weights(const std::vector<std::vector<double>>& donor_cols,
                                    const std::vector<double>& target, double tol = 1e-10,
                                    int max_iter = 50000);

} // namespace dam
