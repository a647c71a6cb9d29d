#pragma once

#include "dam/panel.hpp"

#include <string>

namespace dam {

// Moments of the joint law of (A_t, Y_{t-1}(0), U_{t-1}, Y_t) feeding the
// closed-form bias expressions. U is the heterogeneity-induced measurement
// error A_{t-1}(Delta_{i,t-1} - Delta); the formulas treat U as uncorrelated
// with Y_{t-1}(0) (the correlated case reduces to this one via
// projection_decompose).
struct MomentInputs {
    double var_U = 0.0;
    double resid_var_Y0_given_A = 1.0; // residual variance of Y_{t-1}(0) on A_t
    double gamma_A = 0.0;              // coefficient of A_t in that regression
    double delta = 0.0;                // AR coefficient
    double cov_A_Y = 0.0;
    double cov_A_Y0 = 0.0;
    double cov_Y_Y0 = 0.0;
    double cov_Y_U = 0.0;
    double cov_A_U = 0.0;
    double var_A = 1.0;
    double var_Y0 = 1.0;
    double Delta = 0.0; // true effect

    void validate() const;
};

struct ClassicalBias {
    double expected_delta_hat = 0.0;
    double bias = 0.0;
};

// Attenuation formula for classical measurement error:
// E(Delta_hat) = Delta + delta * gamma_A * VarU / (VarU + resid_var).
// Requires cov_Y_U = cov_A_U = 0.
ClassicalBias classical_bias(const MomentInputs& m);

// |delta * gamma_A| * k / (k + 1), the bias bound under Var(U)/resid_var < k.
double proposition1_bound(double delta, double gamma_A, double k_ratio);

struct GeneralBias {
    double expected_delta_hat = 0.0;
    bool has_decomposition = false; // available when cov_A_U = 0
    double c1 = 0.0, c2 = 0.0, c3 = 0.0;
    double c3_over_c2 = 0.0;
    double denominator = 0.0;
};

// Probability limit of the OLS coefficient on A when regressing Y on
// (1, Y_{t-1}(0) + U, A); exact for arbitrary differential error.
GeneralBias general_bias(const MomentInputs& m);

struct ProjectionResult {
    double var_U_star = 0.0;
    std::string attenuation_note;
};

// Var(U*) = Var(U) - Cov^2(U, Y0)/Var(Y0): the residual error variance after
// projecting U onto Y_{t-1}(0).
ProjectionResult projection_decompose(double var_U, double cov_U_Y0, double var_Y0);

struct VarianceDiagnostic {
    double var_treated = 0.0;
    double var_control = 0.0;
    double ratio = 1.0;
    double adjusted_ratio = 1.0; // after removing time fixed effects
    int n_treated_cells = 0;
    int n_control_cells = 0;
    bool flagged = false;
    double threshold = 1.2;
};

// Treated-vs-control outcome-rate variance comparison (not a formal test).
VarianceDiagnostic variance_diagnostic(const PanelDataset& data, const std::string& policy,
                                       double flag_threshold = 1.2);

} // namespace dam
