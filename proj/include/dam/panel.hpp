#pragma once

#include <map>
#include <string>
#include <vector>

namespace dam {

// Rectangular unit x time panel. Values are stored row-major as
// grid[unit_index * n_times + time_index]. Immutable after load; all
// accessors are const so instances can be shared across threads.
class PanelDataset {
public:
    PanelDataset(std::vector<std::string> units,
                 int n_times,
                 std::vector<double> outcome,
                 std::vector<double> population,
                 std::map<std::string, std::vector<double>> policies,
                 std::map<std::string, std::vector<double>> covariates);

    std::size_t n_units() const { return units_.size(); }
    int n_times() const { return n_times_; }
    // Largest time index; times run 0..T.
    int max_time() const { return n_times_ - 1; }

    const std::vector<std::string>& units() const { return units_; }
    const std::vector<std::string>& policy_names() const { return policy_names_; }
    const std::vector<std::string>& covariate_names() const { return covariate_names_; }

    double outcome(std::size_t i, int t) const { return outcome_[idx(i, t)]; }
    double population(std::size_t i, int t) const { return population_[idx(i, t)]; }
    double policy(const std::string& name, std::size_t i, int t) const;
    double covariate(const std::string& name, std::size_t i, int t) const;

    const std::vector<double>& outcome_grid() const { return outcome_; }
    const std::vector<double>& policy_grid(const std::string& name) const;

    bool has_policy(const std::string& name) const;

    // outcome / population for cell (i, t)
    double rate(std::size_t i, int t) const { return outcome_[idx(i, t)] / population_[idx(i, t)]; }

    // Exposure > 0 mapped to 1, everything else to 0; other columns unchanged.
    PanelDataset dichotomize(const std::string& policy) const;

    // Copy with a replaced outcome grid (used by the simulation engine).
    PanelDataset with_outcome(std::vector<double> outcome) const;

    std::size_t idx(std::size_t i, int t) const {
        return i * static_cast<std::size_t>(n_times_) + static_cast<std::size_t>(t);
    }

private:
    std::vector<std::string> units_;
    int n_times_ = 0;
    std::vector<double> outcome_;
    std::vector<double> population_;
    std::map<std::string, std::vector<double>> policies_;
    std::map<std::string, std::vector<double>> covariates_;
    std::vector<std::string> policy_names_;    // declaration order
    std::vector<std::string> covariate_names_; // declaration order
};

// One fitting row: everything the model needs to evaluate the conditional
// mean of unit `unit` at time `target_time`. Lag z of a policy means the
// exposure at target_time - z; outcome lag b means the outcome at
// target_time - b. Only defined for target_time >= k + l.
struct LagView {
    std::size_t unit = 0;
    int target_time = 0;
    double outcome = 0.0;    // Y_{i,t}
    double population = 1.0; // P_{i,t}
    std::vector<double> outcome_lags;      // Y_{i,t-1} .. Y_{i,t-k}
    std::vector<double> outcome_lag_pops;  // P_{i,t-1} .. P_{i,t-k}
    // policy_lags[p][z] = exposure of policy p at target_time - z, z = 0..k+l
    std::vector<std::vector<double>> policy_lags;
    std::vector<double> covariate_row; // X_{i,t}
};

// All fitable rows for lag depth k and carryover l, ordered by unit then
// time. Throws data_error when T < k + l.
std::vector<LagView> lag_views(const PanelDataset& data, int k, int l,
                               const std::vector<std::string>& policies,
                               const std::vector<std::string>& covariates);

// Column-role schema for CSV ingestion: maps a CSV header name to one of
// the reserved roles `unit`, `time`, `outcome`, `population`,
// `policy:<name>`, `covariate:<name>`.
using CsvSchema = std::map<std::string, std::string>;

PanelDataset load_csv(const std::string& path, const CsvSchema& schema);
void write_csv(const PanelDataset& data, const std::string& path);

} // namespace dam
