#include "dam/sim.hpp"

#include "dam/comparators.hpp"
#include "dam/error.hpp"
#include "dam/estimation.hpp"
#include "dam/rng.hpp"
#include "dam/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>

namespace dam {

PanelDataset make_ar1_baseline(const BaselineConfig& cfg, std::uint64_t seed,
                               const std::string& policy_name) {
    if (cfg.n_units < 2 || cfg.n_times < 3) throw data_error("baseline: panel too small");
    Rng rng(Rng::mix(seed, 0xba5e));
    const std::size_t n = cfg.n_units;
    const int T = cfg.n_times - 1;
    std::vector<std::string> units(n);
    for (std::size_t i = 0; i < n; ++i) units[i] = "u" + std::to_string(i);
    std::vector<double> mu(n), pop(n);
    for (std::size_t i = 0; i < n; ++i) {
        mu[i] = rng.normal(cfg.mu_mean, cfg.mu_sd);
        pop[i] = std::exp(rng.uniform(std::log(cfg.pop_min), std::log(cfg.pop_max)));
        pop[i] = std::round(pop[i]);
    }
    std::map<std::string, std::vector<double>> covariates;
    std::vector<std::vector<double>> xcols(cfg.n_het_covariates, std::vector<double>(n));
    for (int c = 0; c < cfg.n_het_covariates; ++c)
        for (std::size_t i = 0; i < n; ++i) xcols[c][i] = rng.normal();

    const std::size_t cells = n * static_cast<std::size_t>(cfg.n_times);
    std::vector<double> outcome(cells), population(cells);
    std::map<std::string, std::vector<double>> policies;
    policies[policy_name].assign(cells, 0.0);
    for (int c = 0; c < cfg.n_het_covariates; ++c)
        covariates["x" + std::to_string(c + 1)].assign(cells, 0.0);

    const double stat_sd = cfg.noise_sd / std::sqrt(1.0 - cfg.ar_coef * cfg.ar_coef);
    for (std::size_t i = 0; i < n; ++i) {
        double r = mu[i] + stat_sd * rng.normal();
        for (int t = 0; t <= T; ++t) {
            if (t > 0) r = mu[i] + cfg.ar_coef * (r - mu[i]) + cfg.noise_sd * rng.normal();
            const double rate = std::max(r, 1e-9);
            const std::size_t c = i * cfg.n_times + t;
            outcome[c] = std::round(rate * pop[i]);
            population[c] = pop[i];
            for (int x = 0; x < cfg.n_het_covariates; ++x)
                covariates["x" + std::to_string(x + 1)][c] = xcols[x][i];
        }
    }
    return PanelDataset(std::move(units), cfg.n_times, std::move(outcome),
                        std::move(population), std::move(policies), std::move(covariates));
}

TreatmentAssignment assign_treatment(const PanelDataset& base_panel, int n_treated,
                                     int start_lo, int start_hi, double confounding_c,
                                     int reference_period, std::uint64_t seed) {
    const std::size_t n = base_panel.n_units();
    const int T = base_panel.max_time();
    if (n_treated > static_cast<int>(n))
        throw data_error("assign_treatment: n_treated exceeds number of units");
    if (reference_period < 0 || reference_period > T)
        throw data_error("assign_treatment: reference period outside the panel");
    if (start_lo < 1 || start_hi > T || start_lo > start_hi)
        throw data_error("assign_treatment: invalid start window");
    if (confounding_c < 0.0) throw data_error("assign_treatment: confounding must be >= 0");
    Rng rng(seed);

    // max-min scaled reference-period outcomes
    std::vector<double> yref(n);
    for (std::size_t i = 0; i < n; ++i) yref[i] = base_panel.outcome(i, reference_period);
    const double lo = *std::min_element(yref.begin(), yref.end());
    const double hi = *std::max_element(yref.begin(), yref.end());
    std::vector<double> weight(n, 1.0);
    if (confounding_c > 0.0 && hi > lo) {
        for (std::size_t i = 0; i < n; ++i)
            weight[i] = std::pow((yref[i] - lo) / (hi - lo), confounding_c);
    }

    // candidate start times, sorted ascending
    std::vector<int> starts(n_treated);
    for (int j = 0; j < n_treated; ++j)
        starts[j] = start_lo + static_cast<int>(rng.uniform_index(start_hi - start_lo + 1));
    std::sort(starts.begin(), starts.end());

    std::vector<bool> taken(n, false);
    TreatmentAssignment out;
    out.start.assign(n, std::nullopt);
    out.exposure.assign(n, std::vector<double>(T + 1, 0.0));
    for (int j = 0; j < n_treated; ++j) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (!taken[i]) total += weight[i];
        std::size_t chosen = n;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                u -= weight[i];
                if (u <= 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        if (chosen == n) {
            // all remaining weights zero: fall back to uniform
            std::size_t n_free = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i]) ++n_free;
            std::size_t pick = rng.uniform_index(n_free);
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                if (pick == 0) {
                    chosen = i;
                    break;
                }
                --pick;
            }
        }
        taken[chosen] = true;
        out.start[chosen] = starts[j];
        for (int t = starts[j]; t <= T; ++t) out.exposure[chosen][t] = 1.0;
    }
    return out;
}

double exceedance_k(double tau, double p) {
    if (p <= 0.0 || p >= 1.0) throw data_error("exceedance target must lie in (0,1)");
    return std::fabs(tau) / normal_quantile(1.0 - 0.5 * p);
}

SimDraw apply_effects(const PanelDataset& base_panel, const TreatmentAssignment& assignment,
                      const SimScenario& scenario, std::uint64_t seed) {
    const std::size_t n = base_panel.n_units();
    const int n_times = base_panel.n_times();
    Rng rng(Rng::mix(seed, 0xeffec7));

    // unit heterogeneity tau_i = k * X_i gamma / ||gamma||
    std::vector<double> tau_i(n, 0.0);
    double k = scenario.k_scale;
    if (scenario.exceedance_target > 0.0)
        k = exceedance_k(scenario.tau, scenario.exceedance_target);
    if (k != 0.0) {
        const auto& covs = base_panel.covariate_names();
        if (covs.empty())
            throw data_error("heterogeneity requires unit covariates in the baseline panel");
        std::vector<double> gamma(covs.size());
        double norm2 = 0.0;
        for (auto& g : gamma) {
            g = rng.normal();
            norm2 += g * g;
        }
        const double norm = std::sqrt(std::max(norm2, 1e-300));
        for (std::size_t i = 0; i < n; ++i) {
            double z = 0.0;
            for (std::size_t c = 0; c < covs.size(); ++c)
                z += base_panel.covariate(covs[c], i, 0) * gamma[c];
            tau_i[i] = k * z / norm;
        }
    }

    const std::size_t cells = n * static_cast<std::size_t>(n_times);
    std::vector<double> y0(cells), y1(cells), observed(cells);
    std::map<std::string, std::vector<double>> policies;
    policies[scenario.policy].assign(cells, 0.0);
    int clamped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (int t = 0; t < n_times; ++t) {
            const std::size_t c = base_panel.idx(i, t);
            const double pop = base_panel.population(i, t);
            const double rate0 = base_panel.outcome(i, t) / pop;
            double rate1;
            if (scenario.effect_scale == EffectScale::additive) {
                rate1 = rate0 + scenario.tau + tau_i[i];
                if (rate1 < 0.0) {
                    rate1 = 0.0;
                    ++clamped;
                }
            } else {
                rate1 = rate0 * std::exp(scenario.tau + tau_i[i]);
            }
            y0[c] = base_panel.outcome(i, t);
            y1[c] = std::round(rate1 * pop);
            const bool treated = assignment.exposure[i][t] > 0.0;
            observed[c] = treated ? y1[c] : y0[c];
            policies[scenario.policy][c] = treated ? 1.0 : 0.0;
        }
    }

    std::map<std::string, std::vector<double>> covariates;
    for (const auto& name : base_panel.covariate_names()) {
        covariates[name].resize(cells);
        for (std::size_t i = 0; i < n; ++i)
            for (int t = 0; t < n_times; ++t)
                covariates[name][base_panel.idx(i, t)] = base_panel.covariate(name, i, t);
    }
    std::vector<double> population(cells);
    for (std::size_t i = 0; i < n; ++i)
        for (int t = 0; t < n_times; ++t)
            population[base_panel.idx(i, t)] = base_panel.population(i, t);

    SimDraw draw{PanelDataset(base_panel.units(), n_times, std::move(observed),
                              std::move(population), std::move(policies),
                              std::move(covariates)),
                 std::move(y1),
                 std::move(y0),
                 std::move(tau_i),
                 assignment.start,
                 clamped};
    return draw;
}

double true_satt(const SimDraw& draw, int horizon) {
    const PanelDataset& d = draw.observed;
    double acc = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < d.n_units(); ++i) {
        if (!draw.start[i]) continue;
        for (int m = 0; m < horizon; ++m) {
            const int t = *draw.start[i] + m;
            if (t > d.max_time()) continue;
            const std::size_t c = d.idx(i, t);
            acc += (draw.y1[c] - draw.y0[c]) / d.population(i, t);
            ++count;
        }
    }
    if (count == 0) throw data_error("true_satt: no treated unit-periods");
    return acc / static_cast<double>(count);
}

std::string confounding_label(double c) {
    if (c == 0.0) return "none";
    if (c <= 1.0) return "moderate";
    return "high";
}

std::string heterogeneity_label(double exceedance) {
    if (exceedance == 0.0) return "none";
    if (exceedance <= 0.1) return "moderate";
    return "high";
}

namespace {

struct RepOutcome {
    double truth = 0.0;
    double clamped = 0.0;
    // per estimator: point, lo, hi, ok
    std::vector<double> point, lo, hi;
    std::vector<char> ok;
};

RepOutcome run_replication(const SimScenario& scenario, const SimEstimatorConfig& est,
                           const PanelDataset& base_panel, std::uint64_t rep_seed) {
    RepOutcome out;
    const auto assignment =
        assign_treatment(base_panel, scenario.n_treated, scenario.start_lo, scenario.start_hi,
                         scenario.confounding_c, scenario.reference_period,
                         Rng::mix(rep_seed, 0xa551));
    const SimDraw draw = apply_effects(base_panel, assignment, scenario, rep_seed);
    out.truth = true_satt(draw, est.horizon);
    out.clamped = draw.clamped_cells;
    const std::size_t ne = est.names.size();
    out.point.assign(ne, 0.0);
    out.lo.assign(ne, 0.0);
    out.hi.assign(ne, 0.0);
    out.ok.assign(ne, 0);
    for (std::size_t e = 0; e < ne; ++e) {
        const std::string& name = est.names[e];
        try {
            if (name == "dam") {
                ModelSpec spec;
                spec.k = est.dam_k;
                spec.l = est.dam_l;
                spec.policies = {scenario.policy};
                spec.family = est.dam_family;
                const FreqFit fit = fit_mle(draw.observed, spec);
                const FitDraws draws =
                    draws_from_fit(fit, est.dam_draws, Rng::mix(rep_seed, 0xd9a1));
                EstimandRequest req;
                req.kind = EstimandKind::satt_avg;
                req.policy = scenario.policy;
                req.horizon = est.horizon;
                req.imputation = est.dam_imputation;
                req.seed = Rng::mix(rep_seed, 0xd9a2);
                req.rate_scale = (est.dam_family == Family::log_link);
                const EstimandResult r = satt(draws, draw.observed, req);
                out.point[e] = r.point;
                out.lo[e] = r.lo;
                out.hi[e] = r.hi;
            } else {
                ComparatorOptions copts;
                copts.n_bootstrap = est.n_bootstrap;
                copts.horizon = est.horizon;
                copts.seed = Rng::mix3(rep_seed, 0xc0, e);
                ComparatorResult r;
                if (name == "twfe")
                    r = twfe(draw.observed, scenario.policy, copts);
                else if (name == "did_gt")
                    r = did_gt(draw.observed, scenario.policy, copts);
                else if (name == "synth")
                    r = synth(draw.observed, scenario.policy, copts);
                else
                    throw data_error("unknown estimator: " + name);
                out.point[e] = r.point;
                out.lo[e] = r.lo;
                out.hi[e] = r.hi;
            }
            out.ok[e] = 1;
        } catch (const std::exception&) {
            out.ok[e] = 0;
        }
    }
    return out;
}

} // namespace

MetricsReport run_grid(const SimGrid& grid, const SimEstimatorConfig& est,
                       std::uint64_t seed) {
    if (est.names.empty()) throw data_error("run_grid: estimator list is empty");
    if (grid.n_replications < 1) throw data_error("run_grid: n_replications must be >= 1");
    MetricsReport report;
    report.seed = seed;
    unsigned n_threads = grid.threads > 0 ? static_cast<unsigned>(grid.threads)
                                          : std::max(1u, std::thread::hardware_concurrency());

    int scenario_index = 0;
    for (double c : grid.confounding) {
        for (double het : grid.heterogeneity) {
            SimScenario scenario = grid.base;
            scenario.confounding_c = c;
            scenario.exceedance_target = het;
            const std::uint64_t scen_seed = Rng::mix3(seed, 0x5ce0, scenario_index);

            std::vector<RepOutcome> reps(grid.n_replications);
            std::atomic<int> next{0};
            auto worker = [&]() {
                for (;;) {
                    const int r = next.fetch_add(1);
                    if (r >= grid.n_replications) return;
                    const std::uint64_t rep_seed = Rng::mix(scen_seed, r);
                    // baseline drawn once per replication seed
                    const PanelDataset base =
                        scenario.base_panel
                            ? *scenario.base_panel
                            : make_ar1_baseline(scenario.baseline, rep_seed, scenario.policy);
                    reps[r] = run_replication(scenario, est, base, rep_seed);
                }
            };
            std::vector<std::thread> pool;
            for (unsigned w = 1; w < n_threads; ++w) pool.emplace_back(worker);
            worker();
            for (auto& th : pool) th.join();

            ScenarioMetrics sm;
            sm.confounding_c = c;
            sm.exceedance = het;
            sm.confounding_label = confounding_label(c);
            sm.heterogeneity_label = heterogeneity_label(het);
            sm.n_replications = grid.n_replications;
            double truth_acc = 0.0, clamp_acc = 0.0;
            for (const auto& r : reps) {
                truth_acc += r.truth;
                clamp_acc += r.clamped;
            }
            sm.mean_true_satt = truth_acc / grid.n_replications;
            sm.mean_clamped_cells = clamp_acc / grid.n_replications;
            for (std::size_t e = 0; e < est.names.size(); ++e) {
                EstimatorMetrics em;
                em.name = est.names[e];
                double se_acc = 0.0, cov_acc = 0.0, pow_acc = 0.0, width_acc = 0.0,
                       point_acc = 0.0;
                int used = 0;
                for (const auto& r : reps) {
                    if (!r.ok[e]) {
                        ++em.failures;
                        continue;
                    }
                    ++used;
                    const double err = r.point[e] - r.truth;
                    se_acc += err * err;
                    cov_acc += (r.lo[e] <= r.truth && r.truth <= r.hi[e]) ? 1.0 : 0.0;
                    const bool excludes_zero = (r.lo[e] > 0.0) || (r.hi[e] < 0.0);
                    const bool sign_ok = (r.truth > 0.0 && r.lo[e] > 0.0) ||
                                         (r.truth < 0.0 && r.hi[e] < 0.0);
                    pow_acc += (excludes_zero && sign_ok) ? 1.0 : 0.0;
                    width_acc += r.hi[e] - r.lo[e];
                    point_acc += r.point[e];
                }
                if (used > 0) {
                    em.mse = se_acc / used;
                    em.coverage = cov_acc / used;
                    em.power = pow_acc / used;
                    em.mean_interval_width = width_acc / used;
                    em.mean_point = point_acc / used;
                }
                em.flagged = em.failures * 20 > grid.n_replications; // > 5%
                sm.estimators.push_back(em);
            }
            double min_mse = 0.0;
            for (const auto& em : sm.estimators)
                if (em.failures < grid.n_replications)
                    min_mse = (min_mse == 0.0) ? em.mse : std::min(min_mse, em.mse);
            for (auto& em : sm.estimators)
                em.std_mse = (min_mse > 0.0) ? em.mse / min_mse : 1.0;
            report.scenarios.push_back(std::move(sm));
            ++scenario_index;
        }
    }
    return report;
}

} // namespace dam
