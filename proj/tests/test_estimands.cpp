#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dam/error.hpp"
#include "dam/estimands.hpp"
#include "dam/estimation.hpp"
#include "dam/sim.hpp"
#include "dam/stats.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace dam;

namespace {

// hand-built draw set around fixed parameter values with small jitter
FitDraws jittered_draws(const ModelSpec& spec, const DamParams& center, int n_draws,
                        double jitter, std::uint64_t seed) {
    FitDraws out;
    out.spec = spec;
    Rng rng(seed);
    for (int j = 0; j < n_draws; ++j) {
        DamParams p = center;
        p.alpha += jitter * rng.normal();
        for (auto& d : p.delta) d = std::clamp(d + jitter * rng.normal(), 0.0, 1.0);
        for (auto& row : p.theta)
            for (auto& v : row) v += jitter * rng.normal();
        for (auto& z : p.zeta) z += jitter * rng.normal();
        out.params.push_back(p);
    }
    return out;
}

// staggered-adoption panel drawn from the simulation baseline
SimDraw sim_draw(double c, double exceedance, std::uint64_t seed,
                 EffectScale scale = EffectScale::additive) {
    SimScenario s;
    s.confounding_c = c;
    s.exceedance_target = exceedance;
    s.effect_scale = scale;
    s.seed = seed;
    const PanelDataset base = make_ar1_baseline(s.baseline, seed, s.policy);
    const auto assign = assign_treatment(base, s.n_treated, s.start_lo, s.start_hi,
                                         s.confounding_c, s.reference_period, seed);
    return apply_effects(base, assign, s, seed);
}

EstimandRequest satt_request(Imputation imp, std::uint64_t seed = 11) {
    EstimandRequest req;
    req.kind = EstimandKind::satt_avg;
    req.policy = "policy";
    req.horizon = 3;
    req.imputation = imp;
    req.seed = seed;
    return req;
}

} // namespace

// ---------------------------------------------------------------------------
// SATT
// ---------------------------------------------------------------------------

TEST_CASE("satt: a null-effect posterior centers on zero and covers zero") {
    const SimDraw draw = sim_draw(0.0, 0.0, 404);
    ModelSpec spec;
    spec.k = 2;
    spec.l = 0;
    spec.policies = {"policy"};
    // posterior mass exactly at theta = 0 with realistic AR coefficients
    DamParams center = DamParams::zeros(spec);
    center.alpha = 0.17;
    center.delta = {0.5, 0.3};
    center.sigma2 = 6e-4;
    const FitDraws draws = jittered_draws(spec, center, 2000, 0.0, 1);
    EstimandRequest req = satt_request(Imputation::double_draw);
    const EstimandResult res = satt(draws, draw.observed, req);
    const double draw_sd = sample_sd(res.draw_values);
    CHECK(std::fabs(res.point) < 3.0 * draw_sd / std::sqrt(2000.0) + 3.0 * draw_sd * 0.05);
    CHECK(res.lo <= 0.0);
    CHECK(res.hi >= 0.0);
    CHECK(res.n_contributing_units == 20);
}

TEST_CASE("satt: recovers the generator truth over replications (model_mean and draws)") {
    for (Imputation imp :
         {Imputation::model_mean, Imputation::double_draw, Imputation::observed_plus_model}) {
        std::vector<double> errors;
        for (int rep = 0; rep < 50; ++rep) {
            const SimDraw draw = sim_draw(0.0, 0.0, 7000 + rep);
            ModelSpec spec;
            spec.k = 2;
            spec.l = 0;
            spec.policies = {"policy"};
            const FreqFit fit = fit_mle(draw.observed, spec);
            const FitDraws draws = draws_from_fit(fit, 800, 100 + rep);
            EstimandRequest req = satt_request(imp, 300 + rep);
            const EstimandResult res = satt(draws, draw.observed, req);
            errors.push_back(res.point - true_satt(draw, 3));
        }
        const double mc_se = sample_sd(errors) / std::sqrt(static_cast<double>(errors.size()));
        INFO("imputation mode ", static_cast<int>(imp));
        CHECK(std::fabs(mean(errors)) < 3.0 * mc_se);
    }
}

TEST_CASE("satt: the two posterior-predictive approaches agree under correct specification") {
    std::vector<double> diffs;
    for (int rep = 0; rep < 200; ++rep) {
        const SimDraw draw = sim_draw(0.0, 0.0, 90000 + rep);
        ModelSpec spec;
        spec.k = 2;
        spec.l = 0;
        spec.policies = {"policy"};
        const FreqFit fit = fit_mle(draw.observed, spec);
        const FitDraws draws = draws_from_fit(fit, 600, 55 + rep);
        const EstimandResult r1 =
            satt(draws, draw.observed, satt_request(Imputation::observed_plus_model, rep));
        const EstimandResult r2 =
            satt(draws, draw.observed, satt_request(Imputation::double_draw, 7777 + rep));
        diffs.push_back(r1.point - r2.point);
    }
    const double mc_se = sample_sd(diffs) / std::sqrt(static_cast<double>(diffs.size()));
    CHECK(std::fabs(mean(diffs)) < 3.0 * mc_se);
}

TEST_CASE("satt: horizon shape, truncation bookkeeping, and the weighted-average identity") {
    const SimDraw draw = sim_draw(0.0, 0.0, 31337);
    ModelSpec spec;
    spec.k = 2;
    spec.l = 0;
    spec.policies = {"policy"};
    const FreqFit fit = fit_mle(draw.observed, spec);
    const FitDraws draws = draws_from_fit(fit, 500, 9);

    EstimandRequest req = satt_request(Imputation::model_mean);
    req.horizon = 3;
    const EstimandResult res = satt(draws, draw.observed, req);
    CHECK(res.per_period.size() == 3);

    // adoption window reaches 14 with T = 15: horizon 4 forces truncation
    EstimandRequest req4 = req;
    req4.horizon = 4;
    const EstimandResult res4 = satt(draws, draw.observed, req4);
    CHECK(res4.truncated_units > 0);
    CHECK(res4.per_period.size() == 4);

    // satt_avg draws equal the unit-count-weighted mean of per-period draws
    double total_units = 0.0;
    for (const auto& pp : res4.per_period) total_units += pp.n_units;
    for (std::size_t j = 0; j < res4.draw_values.size(); ++j) {
        double acc = 0.0;
        for (std::size_t m = 0; m < res4.per_period.size(); ++m)
            acc += res4.per_period_draws[m][j] * res4.per_period[m].n_units;
        CHECK(res4.draw_values[j] == doctest::Approx(acc / total_units).epsilon(1e-12));
    }

    // identical request via satt_by_period reproduces the same per-draw matrix
    const EstimandResult byp = satt_by_period(draws, draw.observed, req4);
    for (std::size_t m = 0; m < byp.per_period.size(); ++m)
        for (std::size_t j = 0; j < byp.per_period_draws[m].size(); ++j)
            CHECK(byp.per_period_draws[m][j] == res4.per_period_draws[m][j]);
}

TEST_CASE("satt_by_period: lag-0-only effects give equal per-period points") {
    std::vector<std::vector<double>> period_points(3);
    for (int rep = 0; rep < 40; ++rep) {
        const SimDraw draw = sim_draw(0.0, 0.0, 1200 + rep);
        ModelSpec spec;
        spec.k = 2;
        spec.l = 0;
        spec.policies = {"policy"};
        const FreqFit fit = fit_mle(draw.observed, spec);
        const FitDraws draws = draws_from_fit(fit, 500, rep);
        EstimandRequest req = satt_request(Imputation::model_mean, rep);
        req.kind = EstimandKind::satt_by_period;
        const EstimandResult res = satt_by_period(draws, draw.observed, req);
        for (int m = 0; m < 3; ++m) period_points[m].push_back(res.per_period[m].point);
    }
    const double m0 = mean(period_points[0]);
    for (int m = 1; m < 3; ++m) {
        const double diff = mean(period_points[m]) - m0;
        const double se = std::sqrt(sample_variance(period_points[m]) / 40.0 +
                                    sample_variance(period_points[0]) / 40.0);
        CHECK(std::fabs(diff) < 3.0 * se);
    }
}

TEST_CASE("satt: no treated units is an error") {
    const PanelDataset d = testutil::tiny_panel(4, 8, std::vector<double>(32, 1.0),
                                                std::vector<double>(32, 0.0));
    ModelSpec spec;
    spec.k = 1;
    spec.l = 0;
    spec.policies = {"a"};
    const FitDraws draws = jittered_draws(spec, DamParams::zeros(spec), 10, 0.0, 1);
    EstimandRequest req = satt_request(Imputation::model_mean);
    req.policy = "a";
    CHECK_THROWS_WITH_AS(satt(draws, d, req), doctest::Contains("no treated"), data_error);
}

// ---------------------------------------------------------------------------
// SAPO
// ---------------------------------------------------------------------------

namespace {

testutil::GenConfig multi_policy_config(std::uint64_t seed) {
    testutil::GenConfig cfg;
    cfg.spec.k = 1;
    cfg.spec.l = 0;
    cfg.spec.policies = {"a", "m"};
    cfg.spec.include_interactions = true;
    cfg.truth = DamParams::zeros(cfg.spec);
    cfg.truth.alpha = 0.25;
    cfg.truth.delta = {0.5};
    cfg.truth.theta[0][0] = -0.04;
    cfg.truth.theta[1][0] = 0.02;
    cfg.truth.zeta = {0.015};
    cfg.truth.sigma2 = 4e-4;
    cfg.prop_b0 = -0.6;
    cfg.prop_b1 = 0.0;
    cfg.n = 120;
    cfg.n_times = 16;
    cfg.seed = seed;
    return cfg;
}

std::vector<std::map<std::string, double>> four_levels() {
    return {{{"a", 0.0}, {"m", 0.0}},
            {{"a", 1.0}, {"m", 0.0}},
            {{"a", 0.0}, {"m", 1.0}},
            {{"a", 1.0}, {"m", 1.0}}};
}

} // namespace

TEST_CASE("sapo: a no-effect model collapses the grid") {
    const auto cfg = multi_policy_config(71);
    const auto gp = testutil::generate_panel(cfg);
    DamParams center = cfg.truth;
    center.theta[0][0] = center.theta[1][0] = 0.0;
    center.zeta = {0.0};
    const FitDraws draws = jittered_draws(cfg.spec, center, 300, 0.0, 2);
    EstimandRequest req;
    req.kind = EstimandKind::sapo;
    req.sapo_levels = four_levels();
    const auto grid = sapo_grid(draws, gp.panel, req);
    REQUIRE(grid.size() == 4);
    for (std::size_t j = 0; j < grid[0].draw_values.size(); ++j)
        for (std::size_t li = 1; li < 4; ++li)
            CHECK(grid[li].draw_values[j] ==
                  doctest::Approx(grid[0].draw_values[j]).epsilon(1e-12));
}

TEST_CASE("sapo: interaction contrast equals zeta per draw to 1e-8") {
    const auto cfg = multi_policy_config(72);
    const auto gp = testutil::generate_panel(cfg);
    const FitDraws draws = jittered_draws(cfg.spec, cfg.truth, 400, 0.01, 3);
    EstimandRequest req;
    req.kind = EstimandKind::sapo;
    req.sapo_levels = four_levels();
    const auto grid = sapo_grid(draws, gp.panel, req);
    for (std::size_t j = 0; j < grid[0].draw_values.size(); ++j) {
        const double contrast = grid[3].draw_values[j] - grid[1].draw_values[j] -
                                grid[2].draw_values[j] + grid[0].draw_values[j];
        CHECK(contrast == doctest::Approx(draws.params[j].zeta[0]).epsilon(1e-8));
    }
}

TEST_CASE("sapo: grid contrasts recover the generating effects over replications") {
    std::vector<double> err_a, err_m, err_int;
    for (int rep = 0; rep < 40; ++rep) {
        const auto cfg = multi_policy_config(5200 + rep);
        const auto gp = testutil::generate_panel(cfg);
        const FreqFit fit = fit_mle(gp.panel, cfg.spec);
        const FitDraws draws = draws_from_fit(fit, 400, rep);
        EstimandRequest req;
        req.kind = EstimandKind::sapo;
        req.sapo_levels = four_levels();
        const auto grid = sapo_grid(draws, gp.panel, req);
        err_a.push_back((grid[1].point - grid[0].point) - cfg.truth.theta[0][0]);
        err_m.push_back((grid[2].point - grid[0].point) - cfg.truth.theta[1][0]);
        err_int.push_back((grid[3].point - grid[1].point - grid[2].point + grid[0].point) -
                          cfg.truth.zeta[0]);
    }
    for (const auto* v : {&err_a, &err_m, &err_int}) {
        const double mc_se = sample_sd(*v) / std::sqrt(40.0);
        CHECK(std::fabs(mean(*v)) < 3.0 * mc_se);
    }
}

TEST_CASE("sapo: unknown policy and out-of-range levels are rejected") {
    const auto cfg = multi_policy_config(73);
    const auto gp = testutil::generate_panel(cfg);
    const FitDraws draws = jittered_draws(cfg.spec, cfg.truth, 5, 0.0, 4);
    EstimandRequest req;
    req.kind = EstimandKind::sapo;
    req.sapo_levels = {{{"nope", 1.0}}};
    CHECK_THROWS_AS(sapo_grid(draws, gp.panel, req), data_error);
    req.sapo_levels = {{{"a", 1.4}}};
    CHECK_THROWS_AS(sapo_grid(draws, gp.panel, req), data_error);
}

// ---------------------------------------------------------------------------
// multiplicative ratio
// ---------------------------------------------------------------------------

namespace {

testutil::GenConfig nb_config(double tau, std::uint64_t seed) {
    testutil::GenConfig cfg;
    cfg.spec.k = 1;
    cfg.spec.l = 0;
    cfg.spec.policies = {"a"};
    cfg.spec.family = Family::log_link;
    cfg.truth = DamParams::zeros(cfg.spec);
    cfg.truth.delta = {0.45};
    cfg.truth.theta[0][0] = tau;
    cfg.truth.dispersion = 80.0;
    cfg.population = 5000.0;
    cfg.init_mean = 0.6;
    cfg.truth.alpha = (1.0 - 0.45) * std::log(0.6 * 5000.0) - 0.45 * std::log(5000.0);
    cfg.prop_b0 = -0.5;
    cfg.n = 150;
    cfg.n_times = 14;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("multiplicative_ratio: zero effect gives ratio exactly 1 per draw") {
    const auto cfg = nb_config(0.0, 81);
    const auto gp = testutil::generate_panel(cfg);
    DamParams center = cfg.truth;
    center.theta[0][0] = 0.0;
    const FitDraws draws = jittered_draws(cfg.spec, center, 50, 0.0, 5);
    EstimandRequest req;
    req.kind = EstimandKind::multiplicative_ratio;
    req.policy = "a";
    const EstimandResult res = multiplicative_ratio(draws, gp.panel, req);
    for (double v : res.draw_values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("multiplicative_ratio: recovers exp(tau) on the NB generator over replications") {
    std::vector<double> ratios;
    const double tau = -0.05;
    for (int rep = 0; rep < 25; ++rep) {
        const auto cfg = nb_config(tau, 6100 + rep);
        const auto gp = testutil::generate_panel(cfg);
        const FreqFit fit = fit_mle(gp.panel, cfg.spec);
        const FitDraws draws = draws_from_fit(fit, 400, rep);
        EstimandRequest req;
        req.kind = EstimandKind::multiplicative_ratio;
        req.policy = "a";
        ratios.push_back(multiplicative_ratio(draws, gp.panel, req).point);
    }
    const double mc_se = sample_sd(ratios) / std::sqrt(static_cast<double>(ratios.size()));
    CHECK(std::fabs(mean(ratios) - std::exp(tau)) < 3.0 * mc_se);
}

TEST_CASE("multiplicative_ratio: invariant to rescaling all populations") {
    const auto cfg = nb_config(-0.05, 82);
    const auto gp = testutil::generate_panel(cfg);
    const FitDraws draws = jittered_draws(cfg.spec, cfg.truth, 60, 0.01, 6);
    EstimandRequest req;
    req.kind = EstimandKind::multiplicative_ratio;
    req.policy = "a";
    const EstimandResult r1 = multiplicative_ratio(draws, gp.panel, req);

    const std::size_t cells = gp.panel.n_units() * gp.panel.n_times();
    std::vector<double> pop(cells, cfg.population * 13.0);
    std::map<std::string, std::vector<double>> pols{{"a", gp.panel.policy_grid("a")}};
    const PanelDataset scaled(gp.panel.units(), gp.panel.n_times(), gp.panel.outcome_grid(),
                              pop, pols, {});
    const EstimandResult r2 = multiplicative_ratio(draws, scaled, req);
    for (std::size_t j = 0; j < r1.draw_values.size(); ++j)
        CHECK(r1.draw_values[j] == doctest::Approx(r2.draw_values[j]).epsilon(1e-10));
}

TEST_CASE("multiplicative_ratio requires the log_link family") {
    ModelSpec spec;
    spec.k = 1;
    spec.l = 0;
    spec.policies = {"a"};
    const PanelDataset d = testutil::tiny_panel(3, 5, std::vector<double>(15, 1.0),
                                                std::vector<double>(15, 0.0));
    const FitDraws draws = jittered_draws(spec, DamParams::zeros(spec), 5, 0.0, 7);
    EstimandRequest req;
    req.kind = EstimandKind::multiplicative_ratio;
    req.policy = "a";
    CHECK_THROWS_AS(multiplicative_ratio(draws, d, req), data_error);
}

// ---------------------------------------------------------------------------
// frequentist draw machinery
// ---------------------------------------------------------------------------

TEST_CASE("FreqFit draws: point estimates stable to 0.1 SE across draw seeds") {
    const SimDraw draw = sim_draw(0.0, 0.0, 2025);
    ModelSpec spec;
    spec.k = 2;
    spec.l = 0;
    spec.policies = {"policy"};
    const FreqFit fit = fit_mle(draw.observed, spec);
    const double se = fit.se("theta_0");
    EstimandRequest req = satt_request(Imputation::model_mean);
    std::vector<double> points;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const FitDraws draws = draws_from_fit(fit, 4000, s);
        req.seed = s;
        points.push_back(satt(draws, draw.observed, req).point);
    }
    for (double p : points) CHECK(std::fabs(p - points[0]) < 0.1 * se);
}

TEST_CASE("estimand layer does not mutate the input panel") {
    const SimDraw draw = sim_draw(0.0, 0.0, 3);
    const std::vector<double> before = draw.observed.outcome_grid();
    ModelSpec spec;
    spec.k = 2;
    spec.l = 0;
    spec.policies = {"policy"};
    DamParams center = DamParams::zeros(spec);
    center.delta = {0.4, 0.2};
    center.sigma2 = 1e-4;
    const FitDraws draws = jittered_draws(spec, center, 50, 0.0, 8);
    satt(draws, draw.observed, satt_request(Imputation::double_draw));
    CHECK(draw.observed.outcome_grid() == before);
}
