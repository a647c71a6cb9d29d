#include "dam/comparators.hpp"

#include "dam/error.hpp"
#include "dam/estimands.hpp"
#include "dam/rng.hpp"
#include "dam/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

namespace dam {

namespace {

struct RatePanel {
    std::vector<std::vector<double>> y;     // [unit][time] rates
    std::vector<std::optional<int>> adopt;  // adoption time per unit
    int T = 0;
};

RatePanel make_rate_panel(const PanelDataset& data, const std::string& policy) {
    if (!data.has_policy(policy)) throw data_error("unknown policy: " + policy);
    RatePanel p;
    p.T = data.max_time();
    p.y.resize(data.n_units());
    p.adopt.resize(data.n_units());
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        p.y[i].resize(p.T + 1);
        for (int t = 0; t <= p.T; ++t) p.y[i][t] = data.rate(i, t);
        p.adopt[i] = adoption_time(data, policy, i);
        // absorbing staggered adoption check (on the dichotomized view)
        bool on = false;
        for (int t = 0; t <= p.T; ++t) {
            const bool now = data.policy(policy, i, t) > 0.0;
            if (on && !now)
                throw data_error("policy " + policy + " is not absorbing for unit " +
                                 data.units()[i] + " (treated, then untreated)");
            on = on || now;
        }
    }
    return p;
}

void percentile_interval(std::vector<double>& boot, double level, double& lo, double& hi) {
    lo = quantile(boot, 0.5 * (1.0 - level));
    hi = quantile(boot, 0.5 * (1.0 + level));
}

} // namespace

// ---------------------------------------------------------------------------
// two-way fixed effects
// ---------------------------------------------------------------------------

namespace {

// balanced-panel within estimator via double centering
std::optional<double> twfe_point(const RatePanel& p, const std::vector<std::size_t>& units,
                                 const std::vector<std::vector<double>>& a) {
    const int T = p.T;
    const std::size_t n = units.size();
    const double nt = static_cast<double>(n) * (T + 1);
    double ybar = 0.0, abar = 0.0;
    std::vector<double> yu(n, 0.0), au(n, 0.0);
    std::vector<double> yt(T + 1, 0.0), at(T + 1, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (int t = 0; t <= T; ++t) {
            const double yv = p.y[units[r]][t];
            const double av = a[units[r]][t];
            yu[r] += yv;
            au[r] += av;
            yt[t] += yv;
            at[t] += av;
            ybar += yv;
            abar += av;
        }
    }
    for (std::size_t r = 0; r < n; ++r) {
        yu[r] /= (T + 1);
        au[r] /= (T + 1);
    }
    for (int t = 0; t <= T; ++t) {
        yt[t] /= static_cast<double>(n);
        at[t] /= static_cast<double>(n);
    }
    ybar /= nt;
    abar /= nt;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (int t = 0; t <= T; ++t) {
            const double yd = p.y[units[r]][t] - yu[r] - yt[t] + ybar;
            const double ad = a[units[r]][t] - au[r] - at[t] + abar;
            sxy += ad * yd;
            sxx += ad * ad;
        }
    }
    if (sxx < 1e-14) return std::nullopt;
    return sxy / sxx;
}

} // namespace

ComparatorResult twfe(const PanelDataset& data, const std::string& policy,
                      const ComparatorOptions& opts) {
    const RatePanel p = make_rate_panel(data, policy);
    std::vector<std::vector<double>> a(data.n_units(), std::vector<double>(p.T + 1, 0.0));
    for (std::size_t i = 0; i < data.n_units(); ++i)
        for (int t = 0; t <= p.T; ++t)
            a[i][t] = data.policy(policy, i, t) > 0.0 ? 1.0 : 0.0;

    std::vector<std::size_t> all(data.n_units());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto point = twfe_point(p, all, a);
    if (!point)
        throw numeric_error("twfe: rank-deficient design (no within variation in the policy)");

    ComparatorResult res;
    res.estimator = "twfe";
    res.point = *point;
    res.interval_level = opts.interval_level;
    std::vector<double> boot;
    boot.reserve(opts.n_bootstrap);
    int degenerate = 0;
    for (int b = 0; b < opts.n_bootstrap; ++b) {
        Rng rng(Rng::mix3(opts.seed, 0xb001, b));
        std::vector<std::size_t> units(all.size());
        for (std::size_t i = 0; i < units.size(); ++i)
            units[i] = static_cast<std::size_t>(rng.uniform_index(all.size()));
        const auto pb = twfe_point(p, units, a);
        if (pb)
            boot.push_back(*pb);
        else
            ++degenerate;
    }
    if (boot.size() < 32) throw numeric_error("twfe: bootstrap degenerate in almost all resamples");
    percentile_interval(boot, opts.interval_level, res.lo, res.hi);
    res.n_bootstrap_used = static_cast<int>(boot.size());
    if (degenerate > 0)
        res.notes.push_back(std::to_string(degenerate) + " degenerate bootstrap resamples skipped");
    return res;
}

// ---------------------------------------------------------------------------
// group-time difference in differences
// ---------------------------------------------------------------------------

namespace {

struct DidAggregate {
    double att = 0.0;
    bool ok = false;
    std::map<std::string, double> cells;
    int dropped_cells = 0;
};

DidAggregate did_aggregate(const RatePanel& p, const std::vector<std::size_t>& units,
                           int horizon, bool want_cells) {
    DidAggregate out;
    // cohorts present among the given units, g >= 1 (need Y_{g-1})
    std::vector<int> cohorts;
    for (std::size_t u : units) {
        if (!p.adopt[u]) continue;
        const int g = *p.adopt[u];
        if (g < 1) continue;
        if (std::find(cohorts.begin(), cohorts.end(), g) == cohorts.end())
            cohorts.push_back(g);
    }
    std::sort(cohorts.begin(), cohorts.end());
    double num = 0.0, den = 0.0;
    for (int g : cohorts) {
        std::vector<std::size_t> treated;
        for (std::size_t u : units)
            if (p.adopt[u] && *p.adopt[u] == g) treated.push_back(u);
        for (int e = 0; e < horizon; ++e) {
            const int t = g + e;
            if (t > p.T) continue;
            std::vector<std::size_t> controls;
            for (std::size_t u : units)
                if (!p.adopt[u] || *p.adopt[u] > t) controls.push_back(u);
            if (controls.empty()) {
                ++out.dropped_cells;
                continue;
            }
            double dt = 0.0, dc = 0.0;
            for (std::size_t u : treated) dt += p.y[u][t] - p.y[u][g - 1];
            for (std::size_t u : controls) dc += p.y[u][t] - p.y[u][g - 1];
            const double att_gt = dt / static_cast<double>(treated.size()) -
                                  dc / static_cast<double>(controls.size());
            if (want_cells)
                out.cells["g" + std::to_string(g) + "_t" + std::to_string(t)] = att_gt;
            const double w = static_cast<double>(treated.size());
            num += w * att_gt;
            den += w;
        }
    }
    if (den > 0.0) {
        out.att = num / den;
        out.ok = true;
    }
    return out;
}

} // namespace

ComparatorResult did_gt(const PanelDataset& data, const std::string& policy,
                        const ComparatorOptions& opts) {
    const RatePanel p = make_rate_panel(data, policy);
    bool any_treated = false;
    for (const auto& g : p.adopt)
        if (g) any_treated = true;
    if (!any_treated) throw data_error("did_gt: no treated units for policy " + policy);

    std::vector<std::size_t> all(data.n_units());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const DidAggregate agg = did_aggregate(p, all, opts.horizon, true);
    if (!agg.ok)
        throw numeric_error("did_gt: every (g,t) cell lacked not-yet-treated controls");

    ComparatorResult res;
    res.estimator = "did_gt";
    res.point = agg.att;
    res.interval_level = opts.interval_level;
    res.per_group_detail = agg.cells;
    if (agg.dropped_cells > 0)
        res.notes.push_back(std::to_string(agg.dropped_cells) +
                            " (g,t) cells dropped for lack of controls");
    std::vector<double> boot;
    boot.reserve(opts.n_bootstrap);
    int degenerate = 0;
    for (int b = 0; b < opts.n_bootstrap; ++b) {
        Rng rng(Rng::mix3(opts.seed, 0xd1d0, b));
        std::vector<std::size_t> units(all.size());
        for (std::size_t i = 0; i < units.size(); ++i)
            units[i] = static_cast<std::size_t>(rng.uniform_index(all.size()));
        const DidAggregate ab = did_aggregate(p, units, opts.horizon, false);
        if (ab.ok)
            boot.push_back(ab.att);
        else
            ++degenerate;
    }
    if (boot.size() < 32)
        throw numeric_error("did_gt: bootstrap degenerate in almost all resamples");
    percentile_interval(boot, opts.interval_level, res.lo, res.hi);
    res.n_bootstrap_used = static_cast<int>(boot.size());
    if (degenerate > 0)
        res.notes.push_back(std::to_string(degenerate) + " degenerate bootstrap resamples skipped");
    return res;
}

// ---------------------------------------------------------------------------
// synthetic control
// ---------------------------------------------------------------------------

namespace {

// Euclidean projection onto the probability simplex (sort-based).
void project_simplex(Eigen::VectorXd& w) {
    const int n = static_cast<int>(w.size());
    std::vector<double> u(w.data(), w.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, tau = 0.0;
    for (int j = 0; j < n; ++j) {
        css += u[j];
        const double cand = (css - 1.0) / static_cast<double>(j + 1);
        if (u[j] - cand > 0.0) tau = cand;
    }
    for (int j = 0; j < n; ++j) w[j] = std::max(w[j] - tau, 0.0);
}

} // namespace

std::vector<double> simplex_weights(const std::vector<std::vector<double>>& donor_cols,
                                    const std::vector<double>& target, double tol,
                                    int max_iter) {
    const int m = static_cast<int>(target.size());
    const int n = static_cast<int>(donor_cols.size());
    if (n == 0 || m == 0) throw data_error("simplex_weights: empty problem");
    Eigen::MatrixXd D(m, n);
    for (int j = 0; j < n; ++j) {
        if (static_cast<int>(donor_cols[j].size()) != m)
            throw data_error("simplex_weights: ragged donor matrix");
        for (int i = 0; i < m; ++i) D(i, j) = donor_cols[j][i];
    }
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(target.data(), m);
    // Since the weights sum to one, centering target and donors by the target
    // mean leaves the objective unchanged on the simplex; it also makes the
    // solve canonical under a constant shift of every outcome.
    const double ybar = y.mean();
    y.array() -= ybar;
    D.array() -= ybar;
    const Eigen::MatrixXd G = D.transpose() * D;
    const Eigen::VectorXd c = D.transpose() * y;
    // Lipschitz constant of the gradient: largest eigenvalue of G
    double L = G.trace();
    {
        Eigen::VectorXd v = Eigen::VectorXd::Ones(n).normalized();
        for (int it = 0; it < 100; ++it) {
            Eigen::VectorXd gv = G * v;
            const double norm = gv.norm();
            if (norm < 1e-30) break;
            v = gv / norm;
            L = norm;
        }
    }
    const double step = 1.0 / std::max(L, 1e-12);
    // accelerated projected gradient with gradient-based restart
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
    Eigen::VectorXd v = w;
    double tk = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd grad = G * v - c;
        Eigen::VectorXd w_new = v - step * grad;
        project_simplex(w_new);
        const double move = (w_new - w).lpNorm<Eigen::Infinity>();
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        if (grad.dot(w_new - w) > 0.0) {
            // momentum points uphill: restart
            v = w_new;
            tk = 1.0;
        } else {
            v = w_new + ((tk - 1.0) / t_next) * (w_new - w);
            tk = t_next;
        }
        w = w_new;
        if (move < tol) break;
    }
    return std::vector<double>(w.data(), w.data() + n);
}

ComparatorResult synth(const PanelDataset& data, const std::string& policy,
                       const ComparatorOptions& opts) {
    const RatePanel p = make_rate_panel(data, policy);
    const int min_pre = 3, min_donors = 2;

    struct UnitFit {
        std::size_t unit;
        double effect;
        double prefit_rmse;
    };
    std::vector<UnitFit> fits;
    int skipped_pre = 0, skipped_donors = 0;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        if (!p.adopt[i]) continue;
        const int ti = *p.adopt[i];
        if (ti < min_pre) {
            ++skipped_pre;
            continue;
        }
        const int last_eval = std::min(ti + opts.horizon - 1, p.T);
        std::vector<std::size_t> donors;
        for (std::size_t j = 0; j < data.n_units(); ++j) {
            if (j == i) continue;
            if (!p.adopt[j] || *p.adopt[j] > last_eval) donors.push_back(j);
        }
        if (static_cast<int>(donors.size()) < min_donors) {
            ++skipped_donors;
            continue;
        }
        std::vector<double> target(p.y[i].begin(), p.y[i].begin() + ti);
        std::vector<std::vector<double>> cols;
        cols.reserve(donors.size());
        for (std::size_t j : donors)
            cols.emplace_back(p.y[j].begin(), p.y[j].begin() + ti);
        const auto w = simplex_weights(cols, target);
        double pre_err = 0.0;
        for (int t = 0; t < ti; ++t) {
            double synth_t = 0.0;
            for (std::size_t jj = 0; jj < donors.size(); ++jj)
                synth_t += w[jj] * p.y[donors[jj]][t];
            pre_err += (p.y[i][t] - synth_t) * (p.y[i][t] - synth_t);
        }
        double eff = 0.0;
        int n_eval = 0;
        for (int t = ti; t <= last_eval; ++t) {
            double synth_t = 0.0;
            for (std::size_t jj = 0; jj < donors.size(); ++jj)
                synth_t += w[jj] * p.y[donors[jj]][t];
            eff += p.y[i][t] - synth_t;
            ++n_eval;
        }
        fits.push_back({i, eff / n_eval, std::sqrt(pre_err / ti)});
    }
    if (fits.empty())
        throw data_error("synth: no treated unit satisfies the pre-period/donor requirements");

    ComparatorResult res;
    res.estimator = "synth";
    res.interval_level = opts.interval_level;
    double acc = 0.0;
    for (const auto& f : fits) {
        acc += f.effect;
        res.per_group_detail[data.units()[f.unit]] = f.effect;
    }
    res.point = acc / static_cast<double>(fits.size());
    if (skipped_pre > 0)
        res.notes.push_back(std::to_string(skipped_pre) +
                            " treated unit(s) dropped: fewer than 3 pre-periods");
    if (skipped_donors > 0)
        res.notes.push_back(std::to_string(skipped_donors) +
                            " treated unit(s) dropped: fewer than 2 donors");

    // unit bootstrap over the per-treated-unit effects
    std::vector<double> boot;
    boot.reserve(opts.n_bootstrap);
    for (int b = 0; b < opts.n_bootstrap; ++b) {
        Rng rng(Rng::mix3(opts.seed, 0x5c5c, b));
        double s = 0.0;
        for (std::size_t r = 0; r < fits.size(); ++r)
            s += fits[rng.uniform_index(fits.size())].effect;
        boot.push_back(s / static_cast<double>(fits.size()));
    }
    percentile_interval(boot, opts.interval_level, res.lo, res.hi);
    res.n_bootstrap_used = static_cast<int>(boot.size());
    return res;
}

} // namespace dam
