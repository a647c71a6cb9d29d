#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dam/bias.hpp"
#include "dam/error.hpp"
#include "dam/rng.hpp"
#include "dam/sim.hpp"
#include "dam/stats.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace dam;

namespace {

// moments implied by Y = alpha + delta*Y0 + Delta*A + lambda*U + noise with
// (A, Y0, U) built from independent standard normals:
//   Y0 = s_y0 Z1, U = s_u Z2, A = b_y0 Z1 + b_u Z2 + s_a Z3.
struct GaussianDesign {
    double s_y0 = 1.0, s_u = 0.5, s_a = 1.0;
    double b_y0 = 0.4, b_u = 0.0;
    double delta = 0.6, Delta = 1.5, lambda = 0.0, s_e = 1.0;

    MomentInputs moments() const {
        MomentInputs m;
        m.var_Y0 = s_y0 * s_y0;
        m.var_U = s_u * s_u;
        m.var_A = b_y0 * b_y0 + b_u * b_u + s_a * s_a;
        m.cov_A_Y0 = b_y0 * s_y0;
        m.cov_A_U = b_u * s_u;
        m.cov_A_Y = delta * m.cov_A_Y0 + Delta * m.var_A + lambda * m.cov_A_U;
        m.cov_Y_Y0 = delta * m.var_Y0 + Delta * m.cov_A_Y0;
        m.cov_Y_U = Delta * m.cov_A_U + lambda * m.var_U;
        m.delta = delta;
        m.Delta = Delta;
        m.gamma_A = m.cov_A_Y0 / m.var_A;
        m.resid_var_Y0_given_A = m.var_Y0 - m.cov_A_Y0 * m.cov_A_Y0 / m.var_A;
        return m;
    }
};

} // namespace

// ---------------------------------------------------------------------------
// classical_bias
// ---------------------------------------------------------------------------

TEST_CASE("classical_bias: limiting cases") {
    MomentInputs m;
    m.delta = 0.6;
    m.gamma_A = 0.8;
    m.resid_var_Y0_given_A = 2.0;
    m.Delta = -0.5;

    SUBCASE("Var(U) = 0 gives zero bias") {
        m.var_U = 0.0;
        const auto r = classical_bias(m);
        CHECK(r.bias == 0.0);
        CHECK(r.expected_delta_hat == doctest::Approx(-0.5));
    }
    SUBCASE("Var(U) equal to the residual variance halves the no-adjustment bias") {
        m.var_U = 2.0;
        const auto r = classical_bias(m);
        CHECK(r.bias == doctest::Approx(0.6 * 0.8 / 2.0).epsilon(1e-12));
    }
    SUBCASE("Var(U) -> infinity approaches the no-adjustment bias delta*gamma_A") {
        m.var_U = 1e12;
        const auto r = classical_bias(m);
        CHECK(r.bias == doctest::Approx(0.6 * 0.8).epsilon(1e-6));
    }
}

TEST_CASE("classical_bias is monotone in Var(U) and validates inputs") {
    MomentInputs m;
    m.delta = 0.5;
    m.gamma_A = 1.0;
    m.resid_var_Y0_given_A = 1.0;
    double prev = -1.0;
    for (double vu : {0.0, 0.1, 0.5, 1.0, 5.0, 50.0}) {
        m.var_U = vu;
        const double b = classical_bias(m).bias;
        CHECK(b >= prev);
        prev = b;
    }
    m.var_U = -1.0;
    CHECK_THROWS_AS(classical_bias(m), data_error);
    m.var_U = 1.0;
    m.cov_Y_U = 0.2;
    CHECK_THROWS_WITH_AS(classical_bias(m), doctest::Contains("general_bias"), data_error);
}

// ---------------------------------------------------------------------------
// proposition 1 bound
// ---------------------------------------------------------------------------

TEST_CASE("proposition1_bound: closed form and limits") {
    CHECK(proposition1_bound(0.6, 0.8, 1.0) == doctest::Approx(0.24).epsilon(1e-12));
    CHECK(proposition1_bound(0.6, 0.8, 1e-9) < 1e-9);
    CHECK_THROWS_AS(proposition1_bound(0.6, 0.8, 0.0), data_error);
    CHECK_THROWS_AS(proposition1_bound(0.6, 0.8, -1.0), data_error);
}

TEST_CASE("proposition1_bound dominates the classical bias over a random sweep") {
    Rng rng(12345);
    for (int i = 0; i < 1000; ++i) {
        MomentInputs m;
        m.delta = rng.normal(0, 1);
        m.gamma_A = rng.normal(0, 1);
        m.resid_var_Y0_given_A = 0.05 + 5.0 * rng.uniform();
        const double k = 0.01 + 4.0 * rng.uniform();
        // any Var(U) with Var(U)/resid_var <= k stays under the bound
        m.var_U = m.resid_var_Y0_given_A * k * rng.uniform();
        const double bias = classical_bias(m).bias;
        const double bound = proposition1_bound(m.delta, m.gamma_A, k);
        CHECK(std::fabs(bias) <= bound + 1e-14);
        // tight exactly at the boundary ratio
        m.var_U = m.resid_var_Y0_given_A * k;
        CHECK(std::fabs(classical_bias(m).bias) == doctest::Approx(bound).epsilon(1e-10));
    }
}

// ---------------------------------------------------------------------------
// general_bias
// ---------------------------------------------------------------------------

TEST_CASE("general_bias collapses to classical_bias when error is classical (1e-12)") {
    Rng rng(777);
    for (int i = 0; i < 1000; ++i) {
        GaussianDesign g;
        g.s_y0 = 0.2 + 2.0 * rng.uniform();
        g.s_u = 2.0 * rng.uniform();
        g.s_a = 0.2 + rng.uniform();
        g.b_y0 = rng.normal(0, 0.7);
        g.b_u = 0.0;       // classical: A independent of U
        g.lambda = 0.0;    // classical: Y unrelated to U given (Y0, A)
        g.delta = rng.normal(0, 0.8);
        g.Delta = rng.normal(0, 2);
        const MomentInputs m = g.moments();
        const auto gen = general_bias(m);
        const auto cls = classical_bias(m);
        CHECK(gen.expected_delta_hat ==
              doctest::Approx(cls.expected_delta_hat).epsilon(1e-12));
        REQUIRE(gen.has_decomposition);
        // decomposition identity: (C1 + C2 + C3)/den equals the general value
        CHECK((gen.c1 + gen.c2 + gen.c3) / gen.denominator ==
              doctest::Approx(gen.expected_delta_hat).epsilon(1e-12));
        CHECK(gen.c3 == doctest::Approx(0.0));
    }
}

TEST_CASE("general_bias with Var(U)=0 and model-consistent moments recovers Delta") {
    GaussianDesign g;
    g.s_u = 0.0;
    g.lambda = 0.0;
    const auto r = general_bias(g.moments());
    CHECK(r.expected_delta_hat == doctest::Approx(g.Delta).epsilon(1e-12));
}

TEST_CASE("general_bias equals the differential-error decomposition from the paper") {
    // E(Delta_hat) = Delta + classical term + C3 / denominator when cov(A,U)=0
    Rng rng(991);
    for (int i = 0; i < 200; ++i) {
        GaussianDesign g;
        g.s_u = 0.3 + rng.uniform();
        g.b_y0 = rng.normal(0, 0.6);
        g.lambda = rng.normal(0, 0.8); // differential: Y correlated with U
        g.delta = rng.normal(0, 0.8);
        g.Delta = rng.normal(0, 1.5);
        const MomentInputs m = g.moments();
        const auto gen = general_bias(m);
        REQUIRE(gen.has_decomposition);
        const double classical_term =
            m.delta * m.gamma_A * (m.var_U / (m.var_U + m.resid_var_Y0_given_A));
        CHECK(gen.expected_delta_hat ==
              doctest::Approx(m.Delta + classical_term + gen.c3 / gen.denominator)
                  .epsilon(1e-10));
        // C3/C2 ratio
        if (m.cov_Y_Y0 != 0.0)
            CHECK(gen.c3_over_c2 == doctest::Approx(m.cov_Y_U / m.cov_Y_Y0).epsilon(1e-12));
    }
}

TEST_CASE("general_bias matches a large-n OLS oracle on jointly Gaussian data") {
    Rng rng(20260810);
    const int n = 200000;
    for (int config = 0; config < 6; ++config) {
        GaussianDesign g;
        g.s_y0 = 0.5 + rng.uniform();
        g.s_u = 0.3 + 0.8 * rng.uniform();
        g.s_a = 0.5 + 0.5 * rng.uniform();
        g.b_y0 = rng.normal(0, 0.5);
        g.b_u = (config % 2 == 0) ? 0.0 : rng.normal(0, 0.3);
        g.lambda = rng.normal(0, 0.6);
        g.delta = rng.normal(0, 0.7);
        g.Delta = rng.normal(0, 1.0);
        g.s_e = 0.8;

        Eigen::MatrixXd X(n, 3);
        Eigen::VectorXd y(n);
        for (int r = 0; r < n; ++r) {
            const double z1 = rng.normal(), z2 = rng.normal(), z3 = rng.normal();
            const double y0 = g.s_y0 * z1;
            const double u = g.s_u * z2;
            const double a = g.b_y0 * z1 + g.b_u * z2 + g.s_a * z3;
            X(r, 0) = 1.0;
            X(r, 1) = y0 + u; // the error-prone proxy W
            X(r, 2) = a;
            y[r] = 0.3 + g.delta * y0 + g.Delta * a + g.lambda * u + g.s_e * rng.normal();
        }
        const Eigen::VectorXd beta = testutil::ols(X, y);
        const double se = testutil::ols_se_for(X, y, 2);
        const auto gen = general_bias(g.moments());
        INFO("config ", config);
        CHECK(std::fabs(beta[2] - gen.expected_delta_hat) < 3.0 * se);
    }
}

TEST_CASE("general_bias is scale-equivariant in the outcome moments") {
    GaussianDesign g;
    g.lambda = 0.4;
    g.b_u = 0.2;
    const MomentInputs m = g.moments();
    const double c = 3.7;
    MomentInputs scaled = m;
    scaled.cov_A_Y *= c;
    scaled.cov_Y_Y0 *= c;
    scaled.cov_Y_U *= c;
    CHECK(general_bias(scaled).expected_delta_hat ==
          doctest::Approx(c * general_bias(m).expected_delta_hat).epsilon(1e-12));
}

TEST_CASE("general_bias errors: degenerate denominator and PSD violations") {
    MomentInputs m;
    m.var_A = 1.0;
    m.var_Y0 = 1.0;
    m.var_U = 0.0;
    m.cov_A_Y0 = 1.0; // A perfectly explained by Y0
    m.resid_var_Y0_given_A = 1.0;
    CHECK_THROWS_AS(general_bias(m), numeric_error);
    m.cov_A_Y0 = 1.5; // violates Cauchy-Schwarz
    CHECK_THROWS_AS(general_bias(m), data_error);
}

// ---------------------------------------------------------------------------
// projection decomposition
// ---------------------------------------------------------------------------

TEST_CASE("projection_decompose: trivial and extreme correlations") {
    CHECK(projection_decompose(2.0, 0.0, 3.0).var_U_star == doctest::Approx(2.0));
    // perfect correlation: cov = sqrt(var_U * var_Y0)
    CHECK(projection_decompose(2.0, std::sqrt(6.0), 3.0).var_U_star ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(projection_decompose(1.0, 2.0, 1.0),
                         doctest::Contains("Cauchy-Schwarz"), data_error);
}

TEST_CASE("projection_decompose: Var(U*) <= Var(U) over a 10000-draw sweep") {
    Rng rng(5150);
    for (int i = 0; i < 10000; ++i) {
        const double var_U = 5.0 * rng.uniform();
        const double var_Y0 = 0.01 + 5.0 * rng.uniform();
        const double rho = 2.0 * rng.uniform() - 1.0;
        const double cov = rho * std::sqrt(var_U * var_Y0);
        const auto r = projection_decompose(var_U, cov, var_Y0);
        CHECK(r.var_U_star <= var_U + 1e-12);
        CHECK(r.var_U_star >= -1e-12);
    }
}

// ---------------------------------------------------------------------------
// variance diagnostic
// ---------------------------------------------------------------------------

namespace {

SimScenario diag_scenario(double exceedance, std::uint64_t seed) {
    SimScenario s;
    s.confounding_c = 0.0;
    s.tau = -0.02;
    s.exceedance_target = exceedance;
    s.seed = seed;
    return s;
}

} // namespace

TEST_CASE("variance_diagnostic: ratio centers on 1 without heterogeneity") {
    std::vector<double> ratios;
    for (int rep = 0; rep < 60; ++rep) {
        const SimScenario s = diag_scenario(0.0, 100 + rep);
        const PanelDataset base = make_ar1_baseline(s.baseline, s.seed, s.policy);
        const auto assign = assign_treatment(base, s.n_treated, s.start_lo, s.start_hi,
                                             s.confounding_c, s.reference_period, s.seed);
        const SimDraw draw = apply_effects(base, assign, s, s.seed);
        ratios.push_back(variance_diagnostic(draw.observed, s.policy).ratio);
    }
    const double m = mean(ratios);
    CHECK(m > 0.92);
    CHECK(m < 1.08);
}

TEST_CASE("variance_diagnostic: high heterogeneity pushes the mean ratio above 1") {
    std::vector<double> ratios;
    for (int rep = 0; rep < 60; ++rep) {
        const SimScenario s = diag_scenario(0.33, 900 + rep);
        const PanelDataset base = make_ar1_baseline(s.baseline, s.seed, s.policy);
        const auto assign = assign_treatment(base, s.n_treated, s.start_lo, s.start_hi,
                                             s.confounding_c, s.reference_period, s.seed);
        const SimDraw draw = apply_effects(base, assign, s, s.seed);
        ratios.push_back(variance_diagnostic(draw.observed, s.policy).ratio);
    }
    const double m = mean(ratios);
    const double se = sample_sd(ratios) / std::sqrt(static_cast<double>(ratios.size()));
    CHECK(m > 1.0 + 2.0 * se);
}

TEST_CASE("variance_diagnostic: empty strata are errors") {
    const PanelDataset d = testutil::tiny_panel(3, 4, std::vector<double>(12, 1.0),
                                                std::vector<double>(12, 0.0));
    CHECK_THROWS_WITH_AS(variance_diagnostic(d, "a"), doctest::Contains("stratum"), data_error);
}
