#include "dam/estimands.hpp"

#include "dam/error.hpp"
#include "dam/rng.hpp"
#include "dam/stats.hpp"

#include <algorithm>
#include <cmath>

namespace dam {

namespace {

void summarize(const std::vector<double>& draws, double level, double& point, double& lo,
               double& hi) {
    point = quantile(draws, 0.5);
    lo = quantile(draws, 0.5 * (1.0 - level));
    hi = quantile(draws, 0.5 * (1.0 + level));
}

// predictive draw from the fitted outcome distribution around mean `mu`
double predictive_draw(double mu, const DamParams& p, const ModelSpec& spec, Rng& rng) {
    if (spec.family == Family::linear) return mu + std::sqrt(std::max(p.sigma2, 0.0)) * rng.normal();
    if (spec.count_likelihood == CountLikelihood::poisson)
        return static_cast<double>(rng.poisson(mu));
    return static_cast<double>(rng.negative_binomial(std::max(mu, 1e-12), p.dispersion));
}

std::size_t policy_index(const ModelSpec& spec, const std::string& policy) {
    for (std::size_t p = 0; p < spec.policies.size(); ++p)
        if (spec.policies[p] == policy) return p;
    throw data_error("estimand names policy absent from the model spec: " + policy);
}

} // namespace

std::optional<int> adoption_time(const PanelDataset& data, const std::string& policy,
                                 std::size_t unit) {
    for (int t = 0; t <= data.max_time(); ++t)
        if (data.policy(policy, unit, t) > 0.0) return t;
    return std::nullopt;
}

FitDraws draws_from_fit(const PosteriorFit& fit) {
    FitDraws out;
    out.spec = fit.spec;
    out.params.reserve(fit.draws.size());
    for (std::size_t j = 0; j < fit.draws.size(); ++j) out.params.push_back(fit.draw_params(j));
    return out;
}

FitDraws draws_from_fit(const FreqFit& fit, int n_draws, std::uint64_t seed) {
    if (!fit.has_spec) throw data_error("frequentist fit carries no model spec");
    if (n_draws < 2) throw data_error("n_draws must be >= 2");
    const ParamLayout layout = ParamLayout::for_spec(fit.spec);
    const std::size_t p = layout.size();
    Eigen::MatrixXd v = fit.vcov;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (v + v.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
    FitDraws out;
    out.spec = fit.spec;
    out.params.reserve(n_draws);
    Rng rng(seed);
    for (int j = 0; j < n_draws; ++j) {
        Eigen::VectorXd z(p);
        for (std::size_t i = 0; i < p; ++i) z[i] = rng.normal();
        Eigen::VectorXd draw = Eigen::Map<const Eigen::VectorXd>(fit.estimates.data(), p) +
                               root * z;
        std::vector<double> flat(draw.data(), draw.data() + p);
        // keep the noise parameter in its support
        flat[p - 1] = std::max(flat[p - 1], 1e-12);
        out.params.push_back(layout.unflatten(flat, fit.spec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// SATT (averaged and by period)
// ---------------------------------------------------------------------------

namespace {

struct SattCell {
    std::size_t unit;
    int m;
    int t;
};

EstimandResult satt_impl(const FitDraws& fit, const PanelDataset& data,
                         const EstimandRequest& req) {
    const ModelSpec& spec = fit.spec;
    if (req.horizon < 1) throw data_error("satt: horizon must be >= 1");
    if (req.interval_level <= 0.0 || req.interval_level >= 1.0)
        throw data_error("satt: interval_level must lie in (0,1)");
    const std::size_t pol = policy_index(spec, req.policy);

    std::vector<SattCell> cells;
    std::vector<int> n_per_period(req.horizon, 0);
    std::vector<bool> contributes(data.n_units(), false);
    int truncated = 0, too_early = 0, n_treated = 0;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        const auto ti = adoption_time(data, req.policy, i);
        if (!ti) continue;
        ++n_treated;
        bool any_dropped_late = false;
        for (int m = 0; m < req.horizon; ++m) {
            const int t = *ti + m;
            if (t > data.max_time()) {
                any_dropped_late = true;
                continue;
            }
            if (t < spec.k + spec.l) {
                ++too_early;
                continue;
            }
            cells.push_back({i, m, t});
            ++n_per_period[m];
            contributes[i] = true;
        }
        if (any_dropped_late) ++truncated;
    }
    if (n_treated == 0) throw data_error("satt: no treated units for policy " + req.policy);
    if (cells.empty()) throw data_error("satt: no imputable treated unit-periods");

    // precompute views and the exposure windows for Y(obs) and Y(0)
    struct CellCtx {
        LagView view;
        std::vector<std::vector<double>> w1, w0;
        double observed;
        double pop;
    };
    std::vector<CellCtx> ctx;
    ctx.reserve(cells.size());
    for (const auto& c : cells) {
        CellCtx cc{make_lag_view(data, spec, c.unit, c.t), {}, {}, 0.0, 1.0};
        cc.w1 = exposure_window(cc.view, spec, 0);
        cc.w0 = cc.w1;
        for (int z = 0; z <= spec.l; ++z) cc.w0[pol][z] = 0.0;
        cc.pop = cc.view.population;
        cc.observed = (spec.family == Family::linear) ? cc.view.outcome / cc.view.population
                                                      : cc.view.outcome;
        ctx.push_back(std::move(cc));
    }

    const std::size_t n_draws = fit.params.size();
    std::vector<double> combined(n_draws, 0.0);
    std::vector<std::vector<double>> per_period(req.horizon,
                                                std::vector<double>(n_draws, 0.0));
    int total_cells = 0;
    for (int m = 0; m < req.horizon; ++m) total_cells += n_per_period[m];

    for (std::size_t j = 0; j < n_draws; ++j) {
        Rng rng(Rng::mix(req.seed, j));
        const DamParams& p = fit.params[j];
        std::vector<double> m_sum(req.horizon, 0.0);
        for (std::size_t ci = 0; ci < ctx.size(); ++ci) {
            const CellCtx& cc = ctx[ci];
            const double mean1 = counterfactual_mean(cc.view, p, spec, cc.w1);
            const double mean0 = counterfactual_mean(cc.view, p, spec, cc.w0);
            double y1, y0;
            switch (req.imputation) {
                case Imputation::model_mean:
                    y1 = mean1;
                    y0 = mean0;
                    break;
                case Imputation::double_draw:
                    y1 = predictive_draw(mean1, p, spec, rng);
                    y0 = predictive_draw(mean0, p, spec, rng);
                    break;
                case Imputation::observed_plus_model:
                default:
                    y1 = cc.observed;
                    y0 = predictive_draw(mean0, p, spec, rng);
                    break;
            }
            double diff = y1 - y0;
            if (req.rate_scale && spec.family == Family::log_link) diff /= cc.pop;
            m_sum[cells[ci].m] += diff;
        }
        double acc = 0.0;
        for (int m = 0; m < req.horizon; ++m) {
            acc += m_sum[m];
            per_period[m][j] = (n_per_period[m] > 0)
                                   ? m_sum[m] / static_cast<double>(n_per_period[m])
                                   : 0.0;
        }
        combined[j] = acc / static_cast<double>(total_cells);
    }

    EstimandResult res;
    res.kind = req.kind;
    res.interval_level = req.interval_level;
    summarize(combined, req.interval_level, res.point, res.lo, res.hi);
    for (int m = 0; m < req.horizon; ++m) {
        PeriodResult pr;
        pr.m = m;
        pr.n_units = n_per_period[m];
        if (n_per_period[m] > 0)
            summarize(per_period[m], req.interval_level, pr.point, pr.lo, pr.hi);
        res.per_period.push_back(pr);
    }
    res.n_contributing_units =
        static_cast<int>(std::count(contributes.begin(), contributes.end(), true));
    res.truncated_units = truncated;
    if (truncated > 0)
        res.notes.push_back(std::to_string(truncated) +
                            " treated unit(s) truncated at the end of the panel");
    if (too_early > 0)
        res.notes.push_back(std::to_string(too_early) +
                            " unit-period(s) dropped: adoption precedes the first fitable time");
    res.draw_values = std::move(combined);
    res.per_period_draws = std::move(per_period);
    return res;
}

} // namespace

EstimandResult satt(const FitDraws& fit, const PanelDataset& data, const EstimandRequest& req) {
    EstimandRequest r = req;
    r.kind = EstimandKind::satt_avg;
    return satt_impl(fit, data, r);
}

EstimandResult satt_by_period(const FitDraws& fit, const PanelDataset& data,
                              const EstimandRequest& req) {
    EstimandRequest r = req;
    r.kind = EstimandKind::satt_by_period;
    return satt_impl(fit, data, r);
}

// ---------------------------------------------------------------------------
// SAPO grid
// ---------------------------------------------------------------------------

std::vector<EstimandResult> sapo_grid(const FitDraws& fit, const PanelDataset& data,
                                      const EstimandRequest& req) {
    const ModelSpec& spec = fit.spec;
    if (req.sapo_levels.empty()) throw data_error("sapo: no grid levels requested");
    for (const auto& level : req.sapo_levels) {
        for (const auto& [name, value] : level) {
            policy_index(spec, name);
            if (value < 0.0 || value > 1.0)
                throw data_error("sapo: level for " + name + " outside [0,1]");
        }
    }
    const int t_eval = (req.eval_time >= 0) ? req.eval_time : data.max_time();
    if (t_eval < spec.k + spec.l || t_eval > data.max_time())
        throw data_error("sapo: evaluation time out of range");

    std::vector<LagView> views;
    views.reserve(data.n_units());
    for (std::size_t i = 0; i < data.n_units(); ++i)
        views.push_back(make_lag_view(data, spec, i, t_eval));

    const std::size_t n_draws = fit.params.size();
    std::vector<EstimandResult> results;
    std::vector<std::vector<double>> level_draws(req.sapo_levels.size(),
                                                 std::vector<double>(n_draws, 0.0));
    for (std::size_t j = 0; j < n_draws; ++j) {
        const DamParams& p = fit.params[j];
        for (std::size_t li = 0; li < req.sapo_levels.size(); ++li) {
            double acc = 0.0;
            for (const auto& v : views) {
                auto window = exposure_window(v, spec, 0);
                for (const auto& [name, value] : req.sapo_levels[li]) {
                    const std::size_t pi = policy_index(spec, name);
                    for (int z = 0; z <= spec.l; ++z) window[pi][z] = value;
                }
                double mu = counterfactual_mean(v, p, spec, window);
                if (req.rate_scale && spec.family == Family::log_link) mu /= v.population;
                acc += mu;
            }
            level_draws[li][j] = acc / static_cast<double>(views.size());
        }
    }
    for (std::size_t li = 0; li < req.sapo_levels.size(); ++li) {
        EstimandResult res;
        res.kind = EstimandKind::sapo;
        res.interval_level = req.interval_level;
        summarize(level_draws[li], req.interval_level, res.point, res.lo, res.hi);
        res.n_contributing_units = static_cast<int>(data.n_units());
        res.notes.push_back("evaluation time " + std::to_string(t_eval) +
                            (req.eval_time < 0 ? " (default: final period for all units)" : ""));
        res.draw_values = level_draws[li];
        results.push_back(std::move(res));
    }
    return results;
}

// ---------------------------------------------------------------------------
// multiplicative ratio
// ---------------------------------------------------------------------------

EstimandResult multiplicative_ratio(const FitDraws& fit, const PanelDataset& data,
                                    const EstimandRequest& req) {
    const ModelSpec& spec = fit.spec;
    if (spec.family != Family::log_link)
        throw data_error("multiplicative_ratio requires the log_link family");
    std::map<std::string, double> levels = req.ratio_levels;
    if (levels.empty()) levels[req.policy] = 1.0;
    for (const auto& [name, value] : levels) {
        policy_index(spec, name);
        if (value < 0.0 || value > 1.0)
            throw data_error("ratio: level for " + name + " outside [0,1]");
    }
    const int t_eval = (req.eval_time >= 0) ? req.eval_time : data.max_time();
    if (t_eval < spec.k + spec.l || t_eval > data.max_time())
        throw data_error("ratio: evaluation time out of range");

    std::vector<LagView> views;
    for (std::size_t i = 0; i < data.n_units(); ++i)
        views.push_back(make_lag_view(data, spec, i, t_eval));

    const std::size_t n_draws = fit.params.size();
    std::vector<double> draws(n_draws, 0.0);
    for (std::size_t j = 0; j < n_draws; ++j) {
        const DamParams& p = fit.params[j];
        double num = 0.0, den = 0.0;
        for (const auto& v : views) {
            auto w1 = exposure_window(v, spec, 0);
            auto w0 = w1;
            for (const auto& [name, value] : levels) {
                const std::size_t pi = policy_index(spec, name);
                for (int z = 0; z <= spec.l; ++z) {
                    w1[pi][z] = value;
                    w0[pi][z] = 0.0;
                }
            }
            num += counterfactual_mean(v, p, spec, w1);
            den += counterfactual_mean(v, p, spec, w0);
        }
        if (!(den > 0.0)) throw numeric_error("ratio: nonpositive denominator draw");
        draws[j] = num / den;
    }
    EstimandResult res;
    res.kind = EstimandKind::multiplicative_ratio;
    res.interval_level = req.interval_level;
    summarize(draws, req.interval_level, res.point, res.lo, res.hi);
    res.n_contributing_units = static_cast<int>(data.n_units());
    res.draw_values = std::move(draws);
    return res;
}

} // namespace dam
