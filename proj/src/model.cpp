#include "dam/model.hpp"

#include "dam/error.hpp"

#include <cmath>

namespace dam {

void ModelSpec::validate() const {
    if (k < 1) throw data_error("model: k must be >= 1");
    if (l < 0) throw data_error("model: l must be >= 0");
    if (policies.empty()) throw data_error("model: policy list is empty");
    if (include_interactions && policies.size() < 2)
        throw data_error("model: interactions require >= 2 policies");
    if (family == Family::log_link && log_shift < 0.0)
        throw data_error("model: log_shift must be nonnegative");
}

std::vector<std::pair<std::size_t, std::size_t>> ModelSpec::interaction_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (!include_interactions) return pairs;
    for (std::size_t a = 0; a < policies.size(); ++a)
        for (std::size_t b = a + 1; b < policies.size(); ++b) pairs.emplace_back(a, b);
    return pairs;
}

std::size_t ModelSpec::n_effect_params() const {
    return policies.size() * static_cast<std::size_t>(l + 1) + interaction_pairs().size();
}

std::size_t ModelSpec::n_params() const {
    return 1 + static_cast<std::size_t>(k) + n_effect_params() + covariates.size() + 1;
}

DamParams DamParams::zeros(const ModelSpec& spec) {
    DamParams p;
    p.alpha = 0.0;
    p.delta.assign(spec.k, 0.0);
    p.theta.assign(spec.policies.size(), std::vector<double>(spec.l + 1, 0.0));
    p.zeta.assign(spec.interaction_pairs().size(), 0.0);
    p.gamma.assign(spec.covariates.size(), 0.0);
    p.sigma2 = 1.0;
    p.dispersion = 10.0;
    return p;
}

ParamLayout ParamLayout::for_spec(const ModelSpec& spec) {
    ParamLayout layout;
    layout.names.push_back("alpha");
    for (int b = 1; b <= spec.k; ++b) layout.names.push_back("delta_" + std::to_string(b));
    for (std::size_t p = 0; p < spec.policies.size(); ++p) {
        for (int z = 0; z <= spec.l; ++z) {
            if (spec.policies.size() == 1)
                layout.names.push_back("theta_" + std::to_string(z));
            else
                layout.names.push_back("theta_" + spec.policies[p] + "_" + std::to_string(z));
        }
    }
    for (const auto& [a, b] : spec.interaction_pairs())
        layout.names.push_back("zeta_" + spec.policies[a] + "_x_" + spec.policies[b]);
    for (const auto& c : spec.covariates) layout.names.push_back("gamma_" + c);
    layout.names.push_back(spec.family == Family::linear ? "sigma2" : "dispersion");
    return layout;
}

std::vector<double> ParamLayout::flatten(const DamParams& p, const ModelSpec& spec) const {
    std::vector<double> v;
    v.reserve(size());
    v.push_back(p.alpha);
    for (int b = 0; b < spec.k; ++b) v.push_back(p.delta[b]);
    for (std::size_t pi = 0; pi < spec.policies.size(); ++pi)
        for (int z = 0; z <= spec.l; ++z) v.push_back(p.theta[pi][z]);
    for (double z : p.zeta) v.push_back(z);
    for (double g : p.gamma) v.push_back(g);
    v.push_back(spec.family == Family::linear ? p.sigma2 : p.dispersion);
    if (v.size() != size()) throw numeric_error("parameter layout size mismatch");
    return v;
}

DamParams ParamLayout::unflatten(const std::vector<double>& v, const ModelSpec& spec) const {
    if (v.size() != size()) throw numeric_error("parameter vector size mismatch");
    DamParams p = DamParams::zeros(spec);
    std::size_t j = 0;
    p.alpha = v[j++];
    for (int b = 0; b < spec.k; ++b) p.delta[b] = v[j++];
    for (std::size_t pi = 0; pi < spec.policies.size(); ++pi)
        for (int z = 0; z <= spec.l; ++z) p.theta[pi][z] = v[j++];
    for (std::size_t i = 0; i < p.zeta.size(); ++i) p.zeta[i] = v[j++];
    for (std::size_t i = 0; i < p.gamma.size(); ++i) p.gamma[i] = v[j++];
    if (spec.family == Family::linear)
        p.sigma2 = v[j++];
    else
        p.dispersion = v[j++];
    return p;
}

std::size_t ParamLayout::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw data_error("unknown parameter name: " + name);
}

double effect_term(const ModelSpec& spec, const DamParams& params,
                   const std::vector<std::vector<double>>& expo) {
    double eff = 0.0;
    for (std::size_t p = 0; p < spec.policies.size(); ++p)
        for (int z = 0; z <= spec.l; ++z) eff += params.theta[p][z] * expo[p][z];
    const auto pairs = spec.interaction_pairs();
    for (std::size_t i = 0; i < pairs.size(); ++i)
        eff += params.zeta[i] * expo[pairs[i].first][0] * expo[pairs[i].second][0];
    return eff;
}

double debiased_lag(double y_lag, const std::vector<std::vector<double>>& expo,
                    const ModelSpec& spec, const DamParams& params) {
    const double eff = effect_term(spec, params, expo);
    if (spec.family == Family::linear) return y_lag - eff;
    const double shifted = y_lag + spec.log_shift;
    if (!(shifted > 0.0))
        throw data_error("log_link: outcome + shift is nonpositive (" + std::to_string(y_lag) +
                         " + " + std::to_string(spec.log_shift) + ")");
    return std::log(shifted) - eff;
}

std::vector<std::vector<double>> exposure_window(const LagView& view, const ModelSpec& spec,
                                                 int b) {
    std::vector<std::vector<double>> expo(spec.policies.size(),
                                          std::vector<double>(spec.l + 1, 0.0));
    for (std::size_t p = 0; p < spec.policies.size(); ++p)
        for (int z = 0; z <= spec.l; ++z) expo[p][z] = view.policy_lags[p][b + z];
    return expo;
}

namespace {

// linear predictor shared by the two mean functions; the effect at the
// target time is supplied by the caller.
double predictor_with_effect(const LagView& view, const DamParams& params,
                             const ModelSpec& spec, double target_effect) {
    double acc = params.alpha + target_effect;
    for (int b = 1; b <= spec.k; ++b) {
        const auto expo = exposure_window(view, spec, b);
        double lag_value;
        if (spec.family == Family::linear) {
            lag_value = debiased_lag(view.outcome_lags[b - 1] / view.outcome_lag_pops[b - 1],
                                     expo, spec, params);
        } else {
            lag_value = debiased_lag(view.outcome_lags[b - 1], expo, spec, params);
        }
        acc += params.delta[b - 1] * lag_value;
    }
    for (std::size_t c = 0; c < params.gamma.size(); ++c)
        acc += params.gamma[c] * view.covariate_row[c];
    return acc;
}

} // namespace

double conditional_mean(const LagView& view, const DamParams& params, const ModelSpec& spec) {
    return counterfactual_mean(view, params, spec, exposure_window(view, spec, 0));
}

double counterfactual_mean(const LagView& view, const DamParams& params, const ModelSpec& spec,
                           const std::vector<std::vector<double>>& forced_window) {
    if (params.delta.size() != static_cast<std::size_t>(spec.k) ||
        params.theta.size() != spec.policies.size() ||
        params.gamma.size() != view.covariate_row.size())
        throw data_error("conditional_mean: parameter dimensions do not match spec");
    const double eff = effect_term(spec, params, forced_window);
    const double eta = predictor_with_effect(view, params, spec, eff);
    if (spec.family == Family::linear) return eta;
    return std::exp(eta + std::log(view.population));
}

LagView make_lag_view(const PanelDataset& data, const ModelSpec& spec, std::size_t unit, int t) {
    if (t < spec.k + spec.l || t > data.max_time())
        throw data_error("lag view out of range at time " + std::to_string(t));
    LagView v;
    v.unit = unit;
    v.target_time = t;
    v.outcome = data.outcome(unit, t);
    v.population = data.population(unit, t);
    v.outcome_lags.resize(spec.k);
    v.outcome_lag_pops.resize(spec.k);
    for (int b = 1; b <= spec.k; ++b) {
        v.outcome_lags[b - 1] = data.outcome(unit, t - b);
        v.outcome_lag_pops[b - 1] = data.population(unit, t - b);
    }
    v.policy_lags.resize(spec.policies.size());
    for (std::size_t p = 0; p < spec.policies.size(); ++p) {
        v.policy_lags[p].resize(spec.k + spec.l + 1);
        for (int z = 0; z <= spec.k + spec.l; ++z)
            v.policy_lags[p][z] = data.policy(spec.policies[p], unit, t - z);
    }
    v.covariate_row.resize(spec.covariates.size());
    for (std::size_t c = 0; c < spec.covariates.size(); ++c)
        v.covariate_row[c] = data.covariate(spec.covariates[c], unit, t);
    return v;
}

std::vector<LagView> model_views(const PanelDataset& data, const ModelSpec& spec) {
    return lag_views(data, spec.k, spec.l, spec.policies, spec.covariates);
}

std::vector<double> impute_counterfactual_path(const PanelDataset& data, std::size_t unit,
                                               const DamParams& params, const ModelSpec& spec,
                                               const TreatmentPath& path, int t0, int t1) {
    if (t0 < spec.k + spec.l)
        throw data_error("impute: horizon start " + std::to_string(t0) +
                         " precedes first fitable time " + std::to_string(spec.k + spec.l));
    if (t1 > data.max_time() || t0 > t1)
        throw data_error("impute: horizon out of range");
    for (const auto& [name, series] : path.series) {
        if (!data.has_policy(name)) throw data_error("impute: unknown policy " + name);
        if (series.size() != static_cast<std::size_t>(data.n_times()))
            throw data_error("impute: forced series for " + name + " has wrong length");
    }
    std::vector<double> out;
    out.reserve(t1 - t0 + 1);
    for (int t = t0; t <= t1; ++t) {
        const LagView view = make_lag_view(data, spec, unit, t);
        auto window = exposure_window(view, spec, 0);
        for (std::size_t p = 0; p < spec.policies.size(); ++p) {
            auto it = path.series.find(spec.policies[p]);
            if (it == path.series.end()) continue;
            for (int z = 0; z <= spec.l; ++z) window[p][z] = it->second[t - z];
        }
        out.push_back(counterfactual_mean(view, params, spec, window));
    }
    return out;
}

} // namespace dam
