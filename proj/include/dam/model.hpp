#pragma once

#include "dam/panel.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dam {

enum class Family { linear, log_link };
enum class CountLikelihood { negbin, poisson };

// Model description: k outcome lags, l carryover lags, the policy set,
// optional pairwise lag-0 policy interactions, contemporaneous covariates,
// and the outcome family. The linear family models outcome/population
// (rates); the log_link family models counts with a fixed log-population
// offset in the linear predictor.
struct ModelSpec {
    int k = 1;
    int l = 0;
    std::vector<std::string> policies;
    bool include_interactions = false;
    std::vector<std::string> covariates;
    Family family = Family::linear;
    double log_shift = 1.0; // c in log(y + c), log_link only
    CountLikelihood count_likelihood = CountLikelihood::negbin;

    void validate() const;
    std::vector<std::pair<std::size_t, std::size_t>> interaction_pairs() const;
    std::size_t n_effect_params() const; // theta block + interaction block
    std::size_t n_params() const;        // everything incl. noise parameter
};

// Parameter values for a ModelSpec. theta[p][z] is the effect of policy p at
// lag z; zeta holds lag-0 interaction coefficients in interaction_pairs()
// order. sigma2 is the residual variance (linear family); dispersion the
// negative binomial size (log_link family).
struct DamParams {
    double alpha = 0.0;
    std::vector<double> delta;
    std::vector<std::vector<double>> theta;
    std::vector<double> zeta;
    std::vector<double> gamma;
    double sigma2 = 1.0;
    double dispersion = 10.0;

    static DamParams zeros(const ModelSpec& spec);
};

// Fixed, documented flat ordering of the parameter vector:
//   alpha, delta_1..delta_k,
//   theta_<z> (single policy) or theta_<policy>_<z> (z = 0..l, policies in
//   spec order), zeta_<p>_x_<q> (pairs in spec order), gamma_<covariate>,
//   sigma2 (linear) or dispersion (log_link).
struct ParamLayout {
    std::vector<std::string> names;

    static ParamLayout for_spec(const ModelSpec& spec);
    std::vector<double> flatten(const DamParams& p, const ModelSpec& spec) const;
    DamParams unflatten(const std::vector<double>& v, const ModelSpec& spec) const;
    std::size_t size() const { return names.size(); }
    std::size_t index_of(const std::string& name) const;
};

// Forced exposure series, one full-length series per policy. Policies not
// named keep their observed exposures.
struct TreatmentPath {
    std::map<std::string, std::vector<double>> series;
};

// Treatment-effect function evaluated on an exposure window expo[p][z]
// (z = 0..l per policy in spec order): sum of theta[p][z]*expo[p][z] plus
// lag-0 interaction terms.
double effect_term(const ModelSpec& spec, const DamParams& params,
                   const std::vector<std::vector<double>>& expo);

// Debiased lag regressor: transform(y_lag) minus the effect of the exposure
// window that produced y_lag. transform is identity for the linear family
// and log(y + log_shift) for log_link.
double debiased_lag(double y_lag, const std::vector<std::vector<double>>& expo,
                    const ModelSpec& spec, const DamParams& params);

// E[Y_it | history] for a fitting row. Linear family: mean rate. log_link:
// mean count (includes the population offset).
double conditional_mean(const LagView& view, const DamParams& params, const ModelSpec& spec);

// Same conditional mean with the effect at the target time taken from a
// forced exposure window (lag debiasing still uses the observed exposures,
// which is what makes the lag terms proxies of the untreated outcome).
double counterfactual_mean(const LagView& view, const DamParams& params, const ModelSpec& spec,
                           const std::vector<std::vector<double>>& forced_window);

// Forward imputation of E[Y_it(path)] for t in [t0, t1].
std::vector<double> impute_counterfactual_path(const PanelDataset& data, std::size_t unit,
                                               const DamParams& params, const ModelSpec& spec,
                                               const TreatmentPath& path, int t0, int t1);

// Fitting row for one (unit, time) cell under this spec.
LagView make_lag_view(const PanelDataset& data, const ModelSpec& spec, std::size_t unit, int t);
std::vector<LagView> model_views(const PanelDataset& data, const ModelSpec& spec);

// Exposure window (z = 0..l per policy) of a view at lag b (b = 0 is the
// target time), optionally overriding single policies with forced series.
std::vector<std::vector<double>> exposure_window(const LagView& view, const ModelSpec& spec,
                                                 int b);

} // namespace dam
