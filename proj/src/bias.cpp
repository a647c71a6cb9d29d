#include "dam/bias.hpp"

#include "dam/error.hpp"

#include <cmath>
#include <vector>

namespace dam {

void MomentInputs::validate() const {
    if (var_U < 0.0 || var_A < 0.0 || var_Y0 < 0.0)
        throw data_error("moments: variances must be nonnegative");
    if (resid_var_Y0_given_A <= 0.0)
        throw data_error("moments: residual variance of Y(0) given A must be positive");
    const double tol = 1e-9;
    if (cov_A_Y0 * cov_A_Y0 > var_A * var_Y0 * (1.0 + tol) + tol)
        throw data_error("moments: (A, Y0) covariance block is not positive semidefinite");
    if (cov_A_U * cov_A_U > var_A * var_U * (1.0 + tol) + tol)
        throw data_error("moments: (A, U) covariance block is not positive semidefinite");
}

ClassicalBias classical_bias(const MomentInputs& m) {
    m.validate();
    if (m.cov_Y_U != 0.0 || m.cov_A_U != 0.0)
        throw data_error("classical_bias requires cov_Y_U = cov_A_U = 0; "
                         "use general_bias for differential error");
    ClassicalBias out;
    if (m.var_U == 0.0) {
        out.bias = 0.0;
    } else {
        out.bias = m.delta * m.gamma_A * (m.var_U / (m.var_U + m.resid_var_Y0_given_A));
    }
    out.expected_delta_hat = m.Delta + out.bias;
    return out;
}

double proposition1_bound(double delta, double gamma_A, double k_ratio) {
    if (!(k_ratio > 0.0)) throw data_error("proposition1_bound requires k > 0");
    return std::fabs(delta * gamma_A) * k_ratio / (k_ratio + 1.0);
}

GeneralBias general_bias(const MomentInputs& m) {
    m.validate();
    // W = Y_{t-1}(0) + U with cov(U, Y0) = 0 in this parameterization
    const double var_W = m.var_Y0 + m.var_U;
    if (!(var_W > 0.0)) throw data_error("general_bias: Var(Y0 + U) must be positive");
    const double cov_A_W = m.cov_A_Y0 + m.cov_A_U;
    const double cov_Y_W = m.cov_Y_Y0 + m.cov_Y_U;
    GeneralBias out;
    out.denominator = m.var_A - cov_A_W * cov_A_W / var_W;
    if (std::fabs(out.denominator) < 1e-14)
        throw numeric_error("general_bias: Var(A) is fully explained by the proxy "
                            "(degenerate denominator)");
    out.expected_delta_hat = (m.cov_A_Y - cov_A_W * cov_Y_W / var_W) / out.denominator;
    if (m.cov_A_U == 0.0) {
        out.has_decomposition = true;
        out.c1 = m.cov_A_Y;
        out.c2 = -m.cov_A_Y0 * m.cov_Y_Y0 / var_W;
        out.c3 = -m.cov_A_Y0 * m.cov_Y_U / var_W;
        out.c3_over_c2 = (m.cov_Y_Y0 != 0.0) ? (m.cov_Y_U / m.cov_Y_Y0) : 0.0;
    }
    return out;
}

ProjectionResult projection_decompose(double var_U, double cov_U_Y0, double var_Y0) {
    if (var_U < 0.0 || var_Y0 < 0.0)
        throw data_error("projection: variances must be nonnegative");
    if (cov_U_Y0 * cov_U_Y0 > var_U * var_Y0 * (1.0 + 1e-9) + 1e-12)
        throw data_error("projection: moments violate Cauchy-Schwarz");
    ProjectionResult out;
    out.var_U_star = (var_Y0 > 0.0) ? var_U - cov_U_Y0 * cov_U_Y0 / var_Y0 : var_U;
    if (out.var_U_star < 0.0) out.var_U_star = 0.0;
    out.attenuation_note =
        "Var(U*) <= Var(U): bias from Y(0)-correlated error is bounded by the "
        "classical formula evaluated at the residual error variance";
    return out;
}

VarianceDiagnostic variance_diagnostic(const PanelDataset& data, const std::string& policy,
                                       double flag_threshold) {
    if (!data.has_policy(policy)) throw data_error("unknown policy: " + policy);
    const int T = data.max_time();
    std::vector<double> time_mean(T + 1, 0.0);
    for (int t = 0; t <= T; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < data.n_units(); ++i) s += data.rate(i, t);
        time_mean[t] = s / static_cast<double>(data.n_units());
    }
    struct Acc {
        double sum = 0.0, sum2 = 0.0;
        long n = 0;
        void add(double v) {
            sum += v;
            sum2 += v * v;
            ++n;
        }
        double var() const {
            return (sum2 - sum * sum / static_cast<double>(n)) / static_cast<double>(n - 1);
        }
    };
    Acc treated, control, treated_adj, control_adj;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        for (int t = 0; t <= T; ++t) {
            const double r = data.rate(i, t);
            const bool is_treated = data.policy(policy, i, t) > 0.0;
            (is_treated ? treated : control).add(r);
            (is_treated ? treated_adj : control_adj).add(r - time_mean[t]);
        }
    }
    if (treated.n < 2)
        throw data_error("variance diagnostic: treated stratum has fewer than 2 cells");
    if (control.n < 2)
        throw data_error("variance diagnostic: control stratum has fewer than 2 cells");
    VarianceDiagnostic out;
    out.var_treated = treated.var();
    out.var_control = control.var();
    out.ratio = out.var_treated / out.var_control;
    out.adjusted_ratio = treated_adj.var() / control_adj.var();
    out.n_treated_cells = static_cast<int>(treated.n);
    out.n_control_cells = static_cast<int>(control.n);
    out.threshold = flag_threshold;
    out.flagged = out.adjusted_ratio > flag_threshold || out.ratio > flag_threshold;
    return out;
}

} // namespace dam
