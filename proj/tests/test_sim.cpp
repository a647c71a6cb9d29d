#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dam/artifacts.hpp"
#include "dam/error.hpp"
#include "dam/sim.hpp"
#include "dam/stats.hpp"

#include "helpers.hpp"

#include <cmath>
#include <set>

using namespace dam;

namespace {

PanelDataset fixed_baseline(std::uint64_t seed = 5) {
    BaselineConfig cfg;
    return make_ar1_baseline(cfg, seed, "policy");
}

} // namespace

// ---------------------------------------------------------------------------
// assign_treatment
// ---------------------------------------------------------------------------

TEST_CASE("assign_treatment: c=0 selects units uniformly (chi-square over 10000 seeds)") {
    const PanelDataset base = fixed_baseline();
    std::vector<long> counts(base.n_units(), 0);
    const int n_seeds = 10000;
    for (int s = 0; s < n_seeds; ++s) {
        const auto a = assign_treatment(base, 20, 8, 14, 0.0, 7, 1000 + s);
        for (std::size_t i = 0; i < base.n_units(); ++i)
            if (a.start[i]) ++counts[i];
    }
    const double expect = n_seeds * 20.0 / 51.0;
    double stat = 0.0;
    for (long c : counts) stat += (c - expect) * (c - expect) / expect;
    // 0.99 quantile of chi-square with 50 df; the fixed-size draw makes the
    // statistic stochastically smaller, so this is a conservative gate
    CHECK(stat < 76.154);
}

TEST_CASE("assign_treatment: c=50 sends the earliest times to the largest units") {
    // exponentially separated reference outcomes make the weight ratios
    // overwhelming at c=50
    const int n = 51, nt = 16;
    std::vector<double> outcome(n * nt), a(n * nt, 0.0);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < nt; ++t) outcome[i * nt + t] = std::pow(2.0, i);
    const PanelDataset base = testutil::tiny_panel(n, nt, outcome, a);

    int exact = 0;
    const int n_seeds = 200;
    for (int s = 0; s < n_seeds; ++s) {
        const auto asg = assign_treatment(base, 20, 8, 14, 50.0, 7, 400 + s);
        std::vector<int> starts;
        for (int j = 0; j < 20; ++j) {
            const std::size_t unit = 50 - j; // j-th largest reference outcome
            if (!asg.start[unit]) break;
            starts.push_back(*asg.start[unit]);
        }
        bool ok = starts.size() == 20;
        for (std::size_t j = 0; ok && j + 1 < starts.size(); ++j)
            if (starts[j] > starts[j + 1]) ok = false;
        // no unit outside the top 20 may be treated
        for (int i = 0; i <= 30 && ok; ++i)
            if (asg.start[i]) ok = false;
        if (ok) ++exact;
    }
    CHECK(exact >= 199);
}

TEST_CASE("assign_treatment: exposure is absorbing and starts lie in the window") {
    const PanelDataset base = fixed_baseline();
    const auto a = assign_treatment(base, 20, 8, 14, 1.0, 7, 99);
    int n_treated = 0;
    for (std::size_t i = 0; i < base.n_units(); ++i) {
        if (a.start[i]) {
            ++n_treated;
            CHECK(*a.start[i] >= 8);
            CHECK(*a.start[i] <= 14);
        }
        for (int t = 1; t <= base.max_time(); ++t)
            CHECK(a.exposure[i][t] >= a.exposure[i][t - 1]); // nondecreasing
    }
    CHECK(n_treated == 20);
}

TEST_CASE("assign_treatment: n_treated greater than n is an error") {
    const PanelDataset base = fixed_baseline();
    CHECK_THROWS_AS(assign_treatment(base, 52, 8, 14, 0.0, 7, 1), data_error);
}

// ---------------------------------------------------------------------------
// apply_effects
// ---------------------------------------------------------------------------

TEST_CASE("apply_effects: homogeneous case shifts treated rates by exactly tau") {
    const PanelDataset base = fixed_baseline(21);
    const auto asg = assign_treatment(base, 20, 8, 14, 0.0, 7, 22);
    SimScenario s;
    s.tau = -0.02;
    s.exceedance_target = 0.0;
    const SimDraw draw = apply_effects(base, asg, s, 23);
    for (std::size_t i = 0; i < base.n_units(); ++i) {
        CHECK(draw.tau_i[i] == 0.0);
        for (int t = 0; t <= base.max_time(); ++t) {
            const std::size_t c = base.idx(i, t);
            const double pop = base.population(i, t);
            const double expected1 = std::round((base.outcome(i, t) / pop - 0.02) * pop);
            CHECK(draw.y1[c] == expected1);
            CHECK(draw.y0[c] == base.outcome(i, t));
            // consistency: observed = A*Y(1) + (1-A)*Y(0)
            const bool treated = asg.exposure[i][t] > 0.0;
            CHECK(draw.observed.outcome(i, t) == (treated ? draw.y1[c] : draw.y0[c]));
        }
    }
}

TEST_CASE("apply_effects: exceedance calibration within 0.02 over 100000 draws") {
    // covariates and gamma both redrawn per replication, as in run_grid; the
    // projection X_i gamma / |gamma| is then standard normal per unit
    for (double p : {0.1, 0.33}) {
        SimScenario s;
        s.tau = -0.02;
        s.exceedance_target = p;
        long exceed = 0, total = 0;
        for (int rep = 0; rep < 2000; ++rep) {
            const PanelDataset base = fixed_baseline(81000 + rep);
            const auto asg = assign_treatment(base, 20, 8, 14, 0.0, 7, 32);
            const SimDraw draw = apply_effects(base, asg, s, 5000 + rep);
            for (double ti : draw.tau_i) {
                if (std::fabs(ti) > 0.02) ++exceed;
                ++total;
            }
        }
        REQUIRE(total >= 100000);
        const double phat = static_cast<double>(exceed) / static_cast<double>(total);
        CHECK(std::fabs(phat - p) < 0.02);
    }
}

TEST_CASE("apply_effects: negative rates clamp to zero and are flagged") {
    const PanelDataset base = fixed_baseline(41);
    const auto asg = assign_treatment(base, 20, 8, 14, 0.0, 7, 42);
    SimScenario s;
    s.tau = -5.0; // far below any baseline rate
    const SimDraw draw = apply_effects(base, asg, s, 43);
    CHECK(draw.clamped_cells > 0);
    for (std::size_t i = 0; i < base.n_units(); ++i)
        for (int t = 0; t <= base.max_time(); ++t)
            CHECK(draw.y1[base.idx(i, t)] >= 0.0);
}

TEST_CASE("apply_effects: multiplicative scale matches exp(tau) on rates") {
    const PanelDataset base = fixed_baseline(51);
    const auto asg = assign_treatment(base, 20, 8, 14, 0.0, 7, 52);
    SimScenario s;
    s.tau = -0.05;
    s.effect_scale = EffectScale::multiplicative;
    const SimDraw draw = apply_effects(base, asg, s, 53);
    for (std::size_t i = 0; i < base.n_units(); ++i)
        for (int t = 0; t <= base.max_time(); ++t) {
            const std::size_t c = base.idx(i, t);
            const double pop = base.population(i, t);
            const double expected =
                std::round(base.outcome(i, t) / pop * std::exp(-0.05) * pop);
            CHECK(draw.y1[c] == expected);
        }
}

TEST_CASE("true_satt equals tau in the homogeneous additive case (up to rounding)") {
    const PanelDataset base = fixed_baseline(61);
    const auto asg = assign_treatment(base, 20, 8, 14, 0.0, 7, 62);
    SimScenario s;
    s.tau = -0.02;
    const SimDraw draw = apply_effects(base, asg, s, 63);
    CHECK(true_satt(draw, 3) == doctest::Approx(-0.02).epsilon(1e-3));
}

// ---------------------------------------------------------------------------
// run_grid
// ---------------------------------------------------------------------------

TEST_CASE("run_grid: a single estimator has standardized MSE exactly 1") {
    SimGrid grid;
    grid.confounding = {0.0};
    grid.heterogeneity = {0.0};
    grid.n_replications = 4;
    grid.threads = 1;
    SimEstimatorConfig est;
    est.names = {"dam"};
    est.dam_draws = 200;
    est.n_bootstrap = 64;
    const MetricsReport report = run_grid(grid, est, 777);
    REQUIRE(report.scenarios.size() == 1);
    CHECK(report.scenarios[0].estimators[0].std_mse == 1.0);
}

TEST_CASE("run_grid: deterministic across repeated calls and thread counts") {
    SimGrid grid;
    grid.confounding = {0.0, 3.0};
    grid.heterogeneity = {0.0};
    grid.n_replications = 6;
    SimEstimatorConfig est;
    est.names = {"dam", "twfe"};
    est.dam_draws = 150;
    est.n_bootstrap = 32;

    grid.threads = 1;
    const std::string a = metrics_to_json(run_grid(grid, est, 2024)).dump();
    grid.threads = 2;
    const std::string b = metrics_to_json(run_grid(grid, est, 2024)).dump();
    grid.threads = 2;
    const std::string c = metrics_to_json(run_grid(grid, est, 2024)).dump();
    CHECK(a == b);
    CHECK(b == c);
}

TEST_CASE("run_grid: min standardized MSE is exactly 1 with several estimators") {
    SimGrid grid;
    grid.confounding = {0.0};
    grid.heterogeneity = {0.0};
    grid.n_replications = 5;
    grid.threads = 2;
    SimEstimatorConfig est;
    est.names = {"dam", "twfe", "did_gt", "synth"};
    est.dam_draws = 150;
    est.n_bootstrap = 32;
    const MetricsReport report = run_grid(grid, est, 31);
    double min_std = 1e18;
    for (const auto& e : report.scenarios[0].estimators) {
        CHECK(e.failures == 0);
        min_std = std::min(min_std, e.std_mse);
        CHECK(e.coverage >= 0.0);
        CHECK(e.coverage <= 1.0);
        CHECK(e.power >= 0.0);
        CHECK(e.power <= 1.0);
    }
    CHECK(min_std == 1.0);
}

TEST_CASE("run_grid: empty estimator list is rejected") {
    SimGrid grid;
    SimEstimatorConfig est;
    est.names = {};
    CHECK_THROWS_AS(run_grid(grid, est, 1), data_error);
}

TEST_CASE("baseline generator: populations and covariates drawn once per seed") {
    const PanelDataset b1 = fixed_baseline(71);
    const PanelDataset b2 = fixed_baseline(71);
    CHECK(b1.outcome_grid() == b2.outcome_grid());
    // populations constant over time within a unit
    for (std::size_t i = 0; i < b1.n_units(); ++i)
        for (int t = 1; t <= b1.max_time(); ++t)
            CHECK(b1.population(i, t) == b1.population(i, 0));
    // time-invariant unit covariates
    for (const auto& name : b1.covariate_names())
        for (std::size_t i = 0; i < b1.n_units(); ++i)
            for (int t = 1; t <= b1.max_time(); ++t)
                CHECK(b1.covariate(name, i, t) == b1.covariate(name, i, 0));
}
