#include "dam/estimation.hpp"

#include "dam/error.hpp"
#include "dam/rng.hpp"
#include "dam/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

namespace dam {

namespace {

constexpr double kPriorVariance = 100.0; // N(0, 100) regression priors
constexpr double kIgShape = 0.001;
constexpr double kIgRate = 0.001;

// ---------------------------------------------------------------------------
// materialized fitting design
// ---------------------------------------------------------------------------

struct Design {
    Eigen::VectorXd y;               // response: rate (linear) or count (log_link)
    Eigen::MatrixXd ylag;            // N x k, transformed lag outcomes
    std::vector<Eigen::MatrixXd> E;  // b = 0..k, each N x neff
    Eigen::MatrixXd X;               // N x q
    Eigen::VectorXd offset;          // log population (log_link), zeros otherwise
    int k = 0;
    std::size_t neff = 0;
    std::size_t q = 0;
    std::size_t n() const { return static_cast<std::size_t>(y.size()); }
};

Design build_design(const PanelDataset& data, const ModelSpec& spec) {
    spec.validate();
    const auto views = model_views(data, spec);
    const int n_times_fit = data.max_time() - (spec.k + spec.l) + 1;
    if (n_times_fit < 2)
        throw data_error("fit requires at least two fitable time periods (T >= k + l + 1)");
    const std::size_t N = views.size();
    Design d;
    d.k = spec.k;
    d.neff = spec.n_effect_params();
    d.q = spec.covariates.size();
    d.y.resize(N);
    d.ylag.resize(N, spec.k);
    d.E.assign(spec.k + 1, Eigen::MatrixXd::Zero(N, d.neff));
    d.X.resize(N, d.q);
    d.offset = Eigen::VectorXd::Zero(N);
    const auto pairs = spec.interaction_pairs();
    const std::size_t n_pol = spec.policies.size();
    for (std::size_t r = 0; r < N; ++r) {
        const LagView& v = views[r];
        if (spec.family == Family::linear) {
            d.y[r] = v.outcome / v.population;
            for (int b = 1; b <= spec.k; ++b)
                d.ylag(r, b - 1) = v.outcome_lags[b - 1] / v.outcome_lag_pops[b - 1];
        } else {
            d.y[r] = v.outcome;
            for (int b = 1; b <= spec.k; ++b) {
                const double shifted = v.outcome_lags[b - 1] + spec.log_shift;
                if (!(shifted > 0.0))
                    throw data_error("log_link: outcome + shift nonpositive for unit " +
                                     data.units()[v.unit] + ", time " +
                                     std::to_string(v.target_time - b));
                d.ylag(r, b - 1) = std::log(shifted);
            }
            d.offset[r] = std::log(v.population);
        }
        for (int b = 0; b <= spec.k; ++b) {
            std::size_t col = 0;
            for (std::size_t p = 0; p < n_pol; ++p)
                for (int z = 0; z <= spec.l; ++z) d.E[b](r, col++) = v.policy_lags[p][b + z];
            for (const auto& [pa, pb] : pairs)
                d.E[b](r, col++) = v.policy_lags[pa][b] * v.policy_lags[pb][b];
        }
        for (std::size_t c = 0; c < d.q; ++c) d.X(r, c) = v.covariate_row[c];
    }
    return d;
}

// linear predictor eta for flat mean parameters
Eigen::VectorXd predictor(const Design& d, const Eigen::VectorXd& delta,
                          const Eigen::VectorXd& theta, double alpha,
                          const Eigen::VectorXd& gamma, bool debias) {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(d.y.size(), alpha) + d.offset;
    if (d.neff > 0) eta += d.E[0] * theta;
    for (int b = 1; b <= d.k; ++b) {
        Eigen::VectorXd lagcol = d.ylag.col(b - 1);
        if (debias && d.neff > 0) lagcol -= d.E[b] * theta;
        eta += delta[b - 1] * lagcol;
    }
    if (d.q > 0) eta += d.X * gamma;
    return eta;
}

struct SplitParams {
    double alpha = 0.0;
    Eigen::VectorXd delta;
    Eigen::VectorXd theta;
    Eigen::VectorXd gamma;
    double noise = 1.0; // sigma2 or dispersion
};

SplitParams split_flat(const std::vector<double>& flat, const ModelSpec& spec) {
    SplitParams s;
    std::size_t j = 0;
    s.alpha = flat[j++];
    s.delta.resize(spec.k);
    for (int b = 0; b < spec.k; ++b) s.delta[b] = flat[j++];
    s.theta.resize(spec.n_effect_params());
    for (Eigen::Index i = 0; i < s.theta.size(); ++i) s.theta[i] = flat[j++];
    s.gamma.resize(spec.covariates.size());
    for (Eigen::Index i = 0; i < s.gamma.size(); ++i) s.gamma[i] = flat[j++];
    s.noise = flat[j++];
    return s;
}

std::vector<double> join_flat(const SplitParams& s) {
    std::vector<double> flat;
    flat.push_back(s.alpha);
    for (int b = 0; b < s.delta.size(); ++b) flat.push_back(s.delta[b]);
    for (int i = 0; i < s.theta.size(); ++i) flat.push_back(s.theta[i]);
    for (int i = 0; i < s.gamma.size(); ++i) flat.push_back(s.gamma[i]);
    flat.push_back(s.noise);
    return flat;
}

// ---------------------------------------------------------------------------
// log likelihoods
// ---------------------------------------------------------------------------

double count_loglik(const Design& d, const Eigen::VectorXd& eta, double phi,
                    CountLikelihood lik) {
    double ll = 0.0;
    for (std::size_t r = 0; r < d.n(); ++r) {
        const double e = std::min(eta[r], 700.0);
        const double mu = std::exp(e);
        const double y = d.y[r];
        if (lik == CountLikelihood::poisson) {
            ll += y * e - mu - std::lgamma(y + 1.0);
        } else {
            ll += std::lgamma(y + phi) - std::lgamma(phi) - std::lgamma(y + 1.0) +
                  phi * std::log(phi / (phi + mu)) + y * (e - std::log(phi + mu));
        }
    }
    return ll;
}

// count loglik terms that depend on the mean only (phi-constant parts dropped)
double count_partial_loglik(const Design& d, const Eigen::VectorXd& eta, double phi,
                            CountLikelihood lik) {
    double ll = 0.0;
    for (std::size_t r = 0; r < d.n(); ++r) {
        const double e = std::min(eta[r], 700.0);
        const double y = d.y[r];
        if (lik == CountLikelihood::poisson)
            ll += y * e - std::exp(e);
        else
            ll += y * e - (y + phi) * std::log(phi + std::exp(e));
    }
    return ll;
}

// ---------------------------------------------------------------------------
// inner solves
// ---------------------------------------------------------------------------

void check_inner_rank(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                      const ModelSpec& spec) {
    const Eigen::Index want = qr.cols();
    if (qr.rank() >= want) return;
    std::string dropped;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < want; ++j) {
        const Eigen::Index orig = perm[j];
        if (!dropped.empty()) dropped += ", ";
        dropped += (orig == 0) ? std::string("intercept")
                               : spec.covariates[static_cast<std::size_t>(orig - 1)];
    }
    throw numeric_error("singular inner solve; collinear columns: " + dropped);
}

// exact (alpha, gamma) least squares given (delta, theta); returns RSS
double inner_ols(const Design& d, const ModelSpec& spec, const Eigen::VectorXd& delta,
                 const Eigen::VectorXd& theta, bool debias, double& alpha,
                 Eigen::VectorXd& gamma) {
    Eigen::VectorXd partial =
        predictor(d, delta, theta, 0.0, Eigen::VectorXd::Zero(d.q), debias);
    Eigen::VectorXd target = d.y - partial;
    Eigen::MatrixXd Z(d.n(), 1 + d.q);
    Z.col(0).setOnes();
    if (d.q > 0) Z.rightCols(d.q) = d.X;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
    qr.setThreshold(1e-10);
    check_inner_rank(qr, spec);
    Eigen::VectorXd coef = qr.solve(target);
    alpha = coef[0];
    gamma = coef.tail(d.q);
    return (target - Z * coef).squaredNorm();
}

// (alpha, gamma) by Fisher scoring for the count families given (delta, theta)
// and dispersion; returns maximized partial loglik
double inner_glm(const Design& d, const ModelSpec& spec, const Eigen::VectorXd& delta,
                 const Eigen::VectorXd& theta, double phi, bool debias, double& alpha,
                 Eigen::VectorXd& gamma) {
    Eigen::VectorXd base = predictor(d, delta, theta, 0.0, Eigen::VectorXd::Zero(d.q), debias);
    Eigen::MatrixXd Z(d.n(), 1 + d.q);
    Z.col(0).setOnes();
    if (d.q > 0) Z.rightCols(d.q) = d.X;
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(1 + d.q);
    const double mean_y = std::max(d.y.mean(), 1e-8);
    coef[0] = std::log(mean_y) - base.mean();
    const bool nb = spec.count_likelihood == CountLikelihood::negbin;
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd eta = base + Z * coef;
        Eigen::VectorXd w(d.n()), resid(d.n());
        for (std::size_t r = 0; r < d.n(); ++r) {
            const double mu = std::exp(std::clamp(eta[r], -700.0, 700.0));
            const double wr = nb ? (phi * mu / (phi + mu)) : mu;
            w[r] = std::max(wr, 1e-12);
            resid[r] = (d.y[r] - mu) * (nb ? (phi / (phi + mu)) : 1.0);
        }
        Eigen::MatrixXd info = Z.transpose() * w.asDiagonal() * Z;
        Eigen::VectorXd score = Z.transpose() * resid;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success)
            throw numeric_error("singular inner GLM solve (collinear covariates)");
        Eigen::VectorXd step = ldlt.solve(score);
        // step halving to keep the likelihood finite
        double scale = 1.0;
        for (int h = 0; h < 30; ++h) {
            if ((base + Z * (coef + scale * step)).maxCoeff() < 690.0) break;
            scale *= 0.5;
        }
        coef += scale * step;
        if (step.lpNorm<Eigen::Infinity>() * scale < 1e-11) break;
    }
    alpha = coef[0];
    gamma = coef.tail(d.q);
    return count_partial_loglik(d, base + Z * coef, phi, spec.count_likelihood);
}

// dispersion ML given the fitted means (NB2 size parameter)
double fit_dispersion(const Design& d, const Eigen::VectorXd& eta) {
    auto dll = [&](double log_phi) {
        const double phi = std::exp(log_phi);
        double g = 0.0;
        for (std::size_t r = 0; r < d.n(); ++r) {
            const double mu = std::exp(std::clamp(eta[r], -700.0, 700.0));
            g += digamma(d.y[r] + phi) - digamma(phi) + std::log(phi / (phi + mu)) + 1.0 -
                 (d.y[r] + phi) / (phi + mu);
        }
        return g * phi; // d/d(log phi)
    };
    double lo = std::log(1e-3), hi = std::log(1e8);
    double glo = dll(lo), ghi = dll(hi);
    if (glo <= 0.0) return std::exp(lo);  // extreme overdispersion
    if (ghi >= 0.0) return std::exp(hi);  // effectively Poisson
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double gm = dll(mid);
        if (gm > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------
// Nelder-Mead (deterministic)
// ---------------------------------------------------------------------------

struct NmResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int evals = 0;
    bool converged = false;
};

NmResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& fn,
                     const Eigen::VectorXd& x0, const Eigen::VectorXd& steps, int max_evals) {
    const int n = static_cast<int>(x0.size());
    NmResult res;
    if (n == 0) {
        res.x = x0;
        res.f = fn(x0);
        res.evals = 1;
        res.converged = true;
        return res;
    }
    std::vector<Eigen::VectorXd> xs(n + 1, x0);
    std::vector<double> fs(n + 1);
    for (int i = 1; i <= n; ++i) xs[i][i - 1] += steps[i - 1];
    for (int i = 0; i <= n; ++i) fs[i] = fn(xs[i]);
    int evals = n + 1;
    auto order = [&]() {
        std::vector<int> idx(n + 1);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
        std::vector<Eigen::VectorXd> xs2(n + 1);
        std::vector<double> fs2(n + 1);
        for (int i = 0; i <= n; ++i) {
            xs2[i] = xs[idx[i]];
            fs2[i] = fs[idx[i]];
        }
        xs = std::move(xs2);
        fs = std::move(fs2);
    };
    order();
    while (evals < max_evals) {
        if (std::fabs(fs[n] - fs[0]) <= 1e-12 * (1.0 + std::fabs(fs[0]))) {
            res.converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) centroid += xs[i];
        centroid /= static_cast<double>(n);
        Eigen::VectorXd xr = centroid + (centroid - xs[n]);
        const double fr = fn(xr);
        ++evals;
        if (fr < fs[0]) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[n]);
            const double fe = fn(xe);
            ++evals;
            if (fe < fr) {
                xs[n] = xe;
                fs[n] = fe;
            } else {
                xs[n] = xr;
                fs[n] = fr;
            }
        } else if (fr < fs[n - 1]) {
            xs[n] = xr;
            fs[n] = fr;
        } else {
            const bool outside = fr < fs[n];
            Eigen::VectorXd xc =
                outside ? centroid + 0.5 * (xr - centroid) : centroid + 0.5 * (xs[n] - centroid);
            const double fc = fn(xc);
            ++evals;
            if (fc < (outside ? fr : fs[n])) {
                xs[n] = xc;
                fs[n] = fc;
            } else {
                for (int i = 1; i <= n; ++i) {
                    xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
                    fs[i] = fn(xs[i]);
                }
                evals += n;
            }
        }
        order();
    }
    res.x = xs[0];
    res.f = fs[0];
    res.evals = evals;
    return res;
}

// ---------------------------------------------------------------------------
// scores and sandwich covariance
// ---------------------------------------------------------------------------

// per-row scores for the full flat parameter vector (mean params + noise)
Eigen::MatrixXd row_scores(const Design& d, const ModelSpec& spec,
                           const std::vector<double>& flat, bool debias) {
    const SplitParams s = split_flat(flat, spec);
    const std::size_t N = d.n();
    const std::size_t p = flat.size();
    const Eigen::VectorXd eta = predictor(d, s.delta, s.theta, s.alpha, s.gamma, debias);
    Eigen::VectorXd dl_deta(N);
    Eigen::VectorXd dl_dnoise(N);
    if (spec.family == Family::linear) {
        for (std::size_t r = 0; r < N; ++r) {
            const double res = d.y[r] - eta[r];
            dl_deta[r] = res / s.noise;
            dl_dnoise[r] = -0.5 / s.noise + res * res / (2.0 * s.noise * s.noise);
        }
    } else {
        for (std::size_t r = 0; r < N; ++r) {
            const double mu = std::exp(std::clamp(eta[r], -700.0, 700.0));
            if (spec.count_likelihood == CountLikelihood::poisson) {
                dl_deta[r] = d.y[r] - mu;
                dl_dnoise[r] = 0.0;
            } else {
                const double phi = s.noise;
                dl_deta[r] = (d.y[r] - mu) * phi / (phi + mu);
                dl_dnoise[r] = digamma(d.y[r] + phi) - digamma(phi) +
                               std::log(phi / (phi + mu)) + 1.0 - (d.y[r] + phi) / (phi + mu);
            }
        }
    }
    // deta/dparam columns
    Eigen::MatrixXd J(N, p);
    std::size_t col = 0;
    J.col(col++).setOnes(); // alpha
    for (int b = 1; b <= d.k; ++b) {
        Eigen::VectorXd lagcol = d.ylag.col(b - 1);
        if (debias && d.neff > 0) lagcol -= d.E[b] * s.theta;
        J.col(col++) = lagcol;
    }
    for (std::size_t j = 0; j < d.neff; ++j) {
        Eigen::VectorXd cj = d.E[0].col(j);
        if (debias)
            for (int b = 1; b <= d.k; ++b) cj -= s.delta[b - 1] * d.E[b].col(j);
        J.col(col++) = cj;
    }
    for (std::size_t c = 0; c < d.q; ++c) J.col(col++) = d.X.col(c);
    Eigen::MatrixXd scores(N, p);
    for (std::size_t j = 0; j + 1 < p; ++j)
        scores.col(j) = dl_deta.cwiseProduct(J.col(j));
    scores.col(p - 1) = dl_dnoise;
    return scores;
}

Eigen::VectorXd mean_score(const Design& d, const ModelSpec& spec,
                           const std::vector<double>& flat, bool debias) {
    const Eigen::MatrixXd s = row_scores(d, spec, flat, debias);
    return s.colwise().mean();
}

Eigen::MatrixXd psd_project(Eigen::MatrixXd m) {
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// sandwich A^-1 B A^-T / N with numerically differentiated bread
Eigen::MatrixXd sandwich_vcov(const Design& d, const ModelSpec& spec,
                              const std::vector<double>& flat, bool debias) {
    const std::size_t p = flat.size();
    const std::size_t N = d.n();
    const Eigen::MatrixXd scores = row_scores(d, spec, flat, debias);
    const Eigen::MatrixXd B = scores.transpose() * scores / static_cast<double>(N);
    Eigen::MatrixXd A(p, p);
    for (std::size_t j = 0; j < p; ++j) {
        const double h = 1e-5 * std::max(std::fabs(flat[j]), 1e-2);
        auto fp = flat;
        auto fm = flat;
        fp[j] += h;
        fm[j] -= h;
        A.col(j) = (mean_score(d, spec, fp, debias) - mean_score(d, spec, fm, debias)) / (2.0 * h);
    }
    Eigen::MatrixXd Ainv = A.fullPivLu().inverse();
    Eigen::MatrixXd v = Ainv * B * Ainv.transpose() / static_cast<double>(N);
    return psd_project(std::move(v));
}

} // namespace

// ---------------------------------------------------------------------------
// FreqFit / PosteriorFit accessors
// ---------------------------------------------------------------------------

double FreqFit::estimate(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return estimates[i];
    throw data_error("unknown parameter: " + name);
}

double FreqFit::se(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return std::sqrt(std::max(vcov(i, i), 0.0));
    throw data_error("unknown parameter: " + name);
}

DamParams FreqFit::params() const {
    if (!has_spec) throw data_error("fit carries no model spec");
    return ParamLayout::for_spec(spec).unflatten(estimates, spec);
}

std::vector<double> PosteriorFit::posterior_mean() const {
    std::vector<double> m(names.size(), 0.0);
    for (const auto& row : draws)
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += row[j];
    for (double& v : m) v /= static_cast<double>(draws.size());
    return m;
}

DamParams PosteriorFit::draw_params(std::size_t j) const {
    return ParamLayout::for_spec(spec).unflatten(draws.at(j), spec);
}

// ---------------------------------------------------------------------------
// fit_ipw
// ---------------------------------------------------------------------------

FreqFit fit_ipw(const PanelDataset& data, PropensityLink link) {
    if (data.policy_names().size() != 1)
        throw data_error("fit_ipw requires a single policy (got " +
                         std::to_string(data.policy_names().size()) + ")");
    const std::string policy = data.policy_names()[0];
    const auto& grid = data.policy_grid(policy);
    for (double v : grid)
        if (v != 0.0 && v != 1.0)
            throw data_error("fit_ipw requires a binary policy; dichotomize first");
    if (data.max_time() < 2)
        throw data_error("fit requires at least two fitable time periods (T >= k + l + 1)");

    // rows at t >= 1, rate scale
    struct Row {
        double y, ylag, a, alag;
    };
    std::vector<Row> rows;
    for (int t = 1; t <= data.max_time(); ++t) {
        bool any_treated = false, any_control = false;
        for (std::size_t i = 0; i < data.n_units(); ++i) {
            Row r{data.rate(i, t), data.rate(i, t - 1), data.policy(policy, i, t),
                  data.policy(policy, i, t - 1)};
            (r.a > 0.0 ? any_treated : any_control) = true;
            rows.push_back(r);
        }
        if (!any_treated || !any_control)
            throw data_error("positivity violated: no " +
                             std::string(any_treated ? "control" : "treated") +
                             " units at time " + std::to_string(t));
    }
    const double N = static_cast<double>(rows.size());

    auto propensity = [&](double eta, double& e, double& s) {
        if (link == PropensityLink::logit) {
            e = 1.0 / (1.0 + std::exp(-eta));
            s = 1.0; // logistic score weight
        } else {
            e = normal_cdf(eta);
            const double pdf = std::exp(-0.5 * eta * eta) / std::sqrt(2.0 * M_PI);
            s = pdf / std::max(e * (1.0 - e), 1e-12);
        }
        e = std::clamp(e, 1e-10, 1.0 - 1e-10);
    };

    auto moment_rows = [&](const Eigen::Vector3d& p, Eigen::MatrixXd* out) -> Eigen::Vector3d {
        const double delta = p[0], b0 = p[1], b1 = p[2];
        Eigen::Vector3d total = Eigen::Vector3d::Zero();
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double w = rows[r].ylag - rows[r].alag * delta;
            double e, s;
            propensity(b0 + b1 * w, e, s);
            Eigen::Vector3d m;
            m[0] = rows[r].y * (rows[r].a / e - (1.0 - rows[r].a) / (1.0 - e)) - delta;
            m[1] = (rows[r].a - e) * s;
            m[2] = (rows[r].a - e) * s * w;
            total += m;
            if (out) out->row(r) = m.transpose();
        }
        return total / N;
    };

    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Vector3d F = moment_rows(p, nullptr);
    bool converged = false;
    int iter = 0;
    for (; iter < 200; ++iter) {
        if (F.norm() < 1e-11) {
            converged = true;
            break;
        }
        Eigen::Matrix3d J;
        for (int j = 0; j < 3; ++j) {
            const double h = 1e-6 * std::max(std::fabs(p[j]), 1.0);
            Eigen::Vector3d pp = p, pm = p;
            pp[j] += h;
            pm[j] -= h;
            J.col(j) = (moment_rows(pp, nullptr) - moment_rows(pm, nullptr)) / (2.0 * h);
        }
        Eigen::Vector3d step = J.fullPivLu().solve(-F);
        double lambda = 1.0;
        bool moved = false;
        for (int hcut = 0; hcut < 25; ++hcut) {
            Eigen::Vector3d cand = p + lambda * step;
            Eigen::Vector3d Fc = moment_rows(cand, nullptr);
            if (Fc.norm() < F.norm() * (1.0 - 1e-4 * lambda)) {
                p = cand;
                F = Fc;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!moved) break;
    }
    if (!converged && F.norm() >= 1e-8)
        throw numeric_error("fit_ipw: Newton failed to converge; last Delta = " +
                            std::to_string(p[0]) + ", |F| = " + std::to_string(F.norm()));

    Eigen::MatrixXd psi(rows.size(), 3);
    moment_rows(p, &psi);
    Eigen::Matrix3d B = psi.transpose() * psi / N;
    Eigen::Matrix3d A;
    for (int j = 0; j < 3; ++j) {
        const double h = 1e-6 * std::max(std::fabs(p[j]), 1.0);
        Eigen::Vector3d pp = p, pm = p;
        pp[j] += h;
        pm[j] -= h;
        A.col(j) = (moment_rows(pp, nullptr) - moment_rows(pm, nullptr)) / (2.0 * h);
    }
    Eigen::Matrix3d Ainv = A.fullPivLu().inverse();
    FreqFit fit;
    fit.names = {"delta", "beta0", "beta1"};
    fit.estimates = {p[0], p[1], p[2]};
    fit.vcov = psd_project(Ainv * B * Ainv.transpose() / N);
    fit.convergence = {converged, iter, F.norm()};
    return fit;
}

// ---------------------------------------------------------------------------
// fit_mle
// ---------------------------------------------------------------------------

FreqFit fit_mle(const PanelDataset& data, const ModelSpec& spec, const FitOptions& opts) {
    const Design d = build_design(data, spec);
    const std::size_t n_outer = static_cast<std::size_t>(spec.k) + (opts.debias ? d.neff : 0);
    if (d.n() <= spec.n_params())
        throw data_error("fit: fewer rows than parameters");
    const ParamLayout layout = ParamLayout::for_spec(spec);
    const double sd_y = std::sqrt((d.y.array() - d.y.mean()).square().mean());

    SplitParams sol;
    sol.delta = Eigen::VectorXd::Constant(spec.k, 0.5);
    sol.theta = Eigen::VectorXd::Zero(d.neff);
    sol.gamma = Eigen::VectorXd::Zero(d.q);
    Convergence conv;

    if (spec.family == Family::linear) {
        if (!opts.debias) {
            // fully linear: one exact least-squares fit over everything
            Eigen::MatrixXd Z(d.n(), 1 + spec.k + d.neff + d.q);
            Z.col(0).setOnes();
            for (int b = 1; b <= spec.k; ++b) Z.col(b) = d.ylag.col(b - 1);
            if (d.neff > 0) Z.middleCols(1 + spec.k, d.neff) = d.E[0];
            if (d.q > 0) Z.rightCols(d.q) = d.X;
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
            qr.setThreshold(1e-10);
            if (qr.rank() < Z.cols()) throw numeric_error("singular design in raw-lag fit");
            Eigen::VectorXd coef = qr.solve(d.y);
            sol.alpha = coef[0];
            sol.delta = coef.segment(1, spec.k);
            sol.theta = coef.segment(1 + spec.k, d.neff);
            sol.gamma = coef.tail(d.q);
            sol.noise = (d.y - Z * coef).squaredNorm() / static_cast<double>(d.n());
            conv = {true, 1, 0.0};
        } else {
            auto objective = [&](const Eigen::VectorXd& x) {
                double alpha;
                Eigen::VectorXd gamma;
                return inner_ols(d, spec, x.head(spec.k), x.tail(d.neff), true, alpha, gamma);
            };
            Eigen::VectorXd x0(n_outer), steps(n_outer);
            x0 << sol.delta, sol.theta;
            for (int b = 0; b < spec.k; ++b) steps[b] = 0.15;
            for (std::size_t j = 0; j < d.neff; ++j)
                steps[spec.k + j] = std::max(0.25 * sd_y, 1e-4);
            NmResult nm = nelder_mead(objective, x0, steps,
                                      opts.max_evals_per_dim * static_cast<int>(n_outer));
            NmResult nm2 = nelder_mead(objective, nm.x, steps * 0.05,
                                       opts.max_evals_per_dim * static_cast<int>(n_outer) / 2);
            const NmResult& best = (nm2.f < nm.f) ? nm2 : nm;
            sol.delta = best.x.head(spec.k);
            sol.theta = best.x.tail(d.neff);
            const double rss = inner_ols(d, spec, sol.delta, sol.theta, true, sol.alpha, sol.gamma);
            sol.noise = rss / static_cast<double>(d.n());
            conv.converged = nm.converged || nm2.converged;
            conv.iterations = nm.evals + nm2.evals;
        }
    } else {
        // count family: profile (alpha, gamma) by GLM, re-estimating the
        // dispersion between simplex rounds
        double phi = 10.0;
        const bool nb = spec.count_likelihood == CountLikelihood::negbin;
        Eigen::VectorXd x(n_outer);
        if (opts.debias)
            x << sol.delta, sol.theta;
        else
            x = sol.delta;
        int total_evals = 0;
        bool nm_converged = false;
        const int rounds = nb ? 3 : 1;
        for (int round = 0; round < rounds; ++round) {
            auto objective = [&](const Eigen::VectorXd& xx) {
                double alpha;
                Eigen::VectorXd gamma;
                const Eigen::VectorXd delta = xx.head(spec.k);
                const Eigen::VectorXd theta =
                    opts.debias ? Eigen::VectorXd(xx.tail(d.neff)) : sol.theta;
                return -inner_glm(d, spec, delta, theta, phi, opts.debias, alpha, gamma);
            };
            Eigen::VectorXd steps(n_outer);
            for (int b = 0; b < spec.k; ++b) steps[b] = (round == 0) ? 0.15 : 0.03;
            for (std::size_t j = spec.k; j < n_outer; ++j)
                steps[j] = (round == 0) ? 0.05 : 0.01;
            NmResult nm = nelder_mead(objective, x, steps,
                                      opts.max_evals_per_dim * static_cast<int>(n_outer));
            x = nm.x;
            total_evals += nm.evals;
            nm_converged = nm.converged;
            sol.delta = x.head(spec.k);
            if (opts.debias) sol.theta = x.tail(d.neff);
            inner_glm(d, spec, sol.delta, sol.theta, phi, opts.debias, sol.alpha, sol.gamma);
            if (nb) {
                const Eigen::VectorXd eta =
                    predictor(d, sol.delta, sol.theta, sol.alpha, sol.gamma, opts.debias);
                const double phi_new = fit_dispersion(d, eta);
                if (std::fabs(std::log(phi_new / phi)) < 1e-4 && round > 0) {
                    phi = phi_new;
                    break;
                }
                phi = phi_new;
            }
        }
        sol.noise = nb ? phi : 1.0;
        conv.converged = nm_converged;
        conv.iterations = total_evals;
    }

    std::vector<double> flat = join_flat(sol);
    FreqFit fit;
    fit.names = layout.names;
    fit.estimates = flat;
    fit.vcov = sandwich_vcov(d, spec, flat, opts.debias);
    if (spec.family == Family::log_link && spec.count_likelihood == CountLikelihood::poisson) {
        // dispersion row is not estimated; keep it pinned
        fit.vcov.row(fit.vcov.rows() - 1).setZero();
        fit.vcov.col(fit.vcov.cols() - 1).setZero();
    }
    const Eigen::VectorXd g = mean_score(d, spec, flat, opts.debias);
    conv.final_grad_norm = g.head(g.size() - 1).norm();
    fit.convergence = conv;
    fit.has_spec = true;
    fit.spec = spec;
    return fit;
}

// ---------------------------------------------------------------------------
// fit_bayes
// ---------------------------------------------------------------------------

namespace {

struct Block {
    std::vector<int> dims;       // indices into the flat mean-parameter order
    double scale = 0.1;
    long proposed = 0, accepted = 0;       // post burn-in
    long win_proposed = 0, win_accepted = 0; // adaptation window
};

void adapt(Block& b) {
    if (b.win_proposed < 60) return;
    const double rate =
        static_cast<double>(b.win_accepted) / static_cast<double>(b.win_proposed);
    b.scale *= std::exp(1.2 * (rate - 0.30));
    b.scale = std::clamp(b.scale, 1e-5, 1e3);
    b.win_proposed = b.win_accepted = 0;
}

} // namespace

PosteriorFit fit_bayes(const PanelDataset& data, const ModelSpec& spec,
                       const SamplerConfig& config) {
    if (config.burn_in >= config.n_iter)
        throw data_error("sampler: burn_in must be smaller than n_iter");
    if (config.thin < 1) throw data_error("sampler: thin must be >= 1");
    const Design d = build_design(data, spec);
    if (d.n() <= spec.n_params()) throw data_error("fit: fewer rows than parameters");
    const ParamLayout layout = ParamLayout::for_spec(spec);
    Rng rng(config.seed);
    const bool linear = spec.family == Family::linear;
    const bool nb = spec.count_likelihood == CountLikelihood::negbin;
    const double sd_y = std::sqrt((d.y.array() - d.y.mean()).square().mean());

    SplitParams s;
    s.delta = Eigen::VectorXd::Constant(spec.k, 0.5);
    s.theta = Eigen::VectorXd::Zero(d.neff);
    s.gamma = Eigen::VectorXd::Zero(d.q);
    s.alpha = linear ? d.y.mean() : std::log(std::max(d.y.mean(), 1e-8)) - d.offset.mean();
    s.noise = linear ? std::max(sd_y * sd_y, 1e-12) : 10.0;

    // per-coordinate proposal step bases
    Eigen::VectorXd theta_base(spec.k + d.neff);
    for (int b = 0; b < spec.k; ++b) theta_base[b] = 0.1;
    for (std::size_t j = 0; j < d.neff; ++j)
        theta_base[spec.k + j] = linear ? std::max(0.5 * sd_y, 1e-4) : 0.05;
    Block theta_block{{}, config.initial_scale};
    Block coef_block{{}, config.initial_scale};  // log_link (alpha, gamma)
    Block disp_block{{}, config.initial_scale};  // log_link dispersion

    auto loglik_given = [&](const Eigen::VectorXd& delta, const Eigen::VectorXd& theta) {
        const Eigen::VectorXd eta = predictor(d, delta, theta, s.alpha, s.gamma, true);
        if (linear) return -0.5 * (d.y - eta).squaredNorm() / s.noise;
        return count_partial_loglik(d, eta, s.noise, spec.count_likelihood);
    };
    auto logprior_effects = [&](const Eigen::VectorXd& theta) {
        return -0.5 * theta.squaredNorm() / kPriorVariance;
    };

    double cur_ll = loglik_given(s.delta, s.theta);

    const int n_keep = (config.n_iter - config.burn_in) / config.thin;
    PosteriorFit out;
    out.spec = spec;
    out.names = layout.names;
    out.config = config;
    out.draws.reserve(n_keep);

    for (int iter = 0; iter < config.n_iter; ++iter) {
        const bool adapting = iter < config.burn_in;

        // (delta, theta) random-walk block; delta outside [0,1] auto-rejected
        {
            Eigen::VectorXd prop(spec.k + d.neff);
            for (int j = 0; j < prop.size(); ++j)
                prop[j] = (j < spec.k ? s.delta[j] : s.theta[j - spec.k]) +
                          theta_block.scale * theta_base[j] * rng.normal();
            ++theta_block.win_proposed;
            if (!adapting) ++theta_block.proposed;
            bool in_support = true;
            for (int b = 0; b < spec.k; ++b)
                if (prop[b] < 0.0 || prop[b] > 1.0) in_support = false;
            if (in_support) {
                const Eigen::VectorXd pd = prop.head(spec.k);
                const Eigen::VectorXd pt = prop.tail(d.neff);
                const double ll = loglik_given(pd, pt);
                const double lr = ll - cur_ll + logprior_effects(pt) - logprior_effects(s.theta);
                if (std::log(std::max(rng.uniform(), 1e-300)) < lr) {
                    s.delta = pd;
                    s.theta = pt;
                    cur_ll = ll;
                    ++theta_block.win_accepted;
                    if (!adapting) ++theta_block.accepted;
                }
            }
            if (adapting) adapt(theta_block);
        }

        if (linear) {
            // conjugate (alpha, gamma) given everything else
            Eigen::VectorXd partial =
                predictor(d, s.delta, s.theta, 0.0, Eigen::VectorXd::Zero(d.q), true);
            Eigen::VectorXd target = d.y - partial;
            Eigen::MatrixXd Z(d.n(), 1 + d.q);
            Z.col(0).setOnes();
            if (d.q > 0) Z.rightCols(d.q) = d.X;
            Eigen::MatrixXd prec = Z.transpose() * Z / s.noise;
            prec.diagonal().array() += 1.0 / kPriorVariance;
            Eigen::LLT<Eigen::MatrixXd> llt(prec);
            if (llt.info() != Eigen::Success)
                throw numeric_error("conjugate update failed (singular precision)");
            Eigen::VectorXd mean_vec = llt.solve(Z.transpose() * target / s.noise);
            Eigen::VectorXd z(1 + d.q);
            for (int j = 0; j < z.size(); ++j) z[j] = rng.normal();
            Eigen::VectorXd coef =
                mean_vec + llt.matrixU().solve(z); // U^-1 z ~ N(0, prec^-1)
            s.alpha = coef[0];
            s.gamma = coef.tail(d.q);

            // conjugate sigma2
            const Eigen::VectorXd eta = predictor(d, s.delta, s.theta, s.alpha, s.gamma, true);
            const double rss = (d.y - eta).squaredNorm();
            s.noise = rng.inverse_gamma(kIgShape + 0.5 * static_cast<double>(d.n()),
                                        kIgRate + 0.5 * rss);
            cur_ll = -0.5 * rss / s.noise;
        } else {
            // (alpha, gamma) random walk
            {
                const double step = coef_block.scale;
                double alpha_p = s.alpha + 0.2 * step * rng.normal();
                Eigen::VectorXd gamma_p = s.gamma;
                for (int j = 0; j < gamma_p.size(); ++j)
                    gamma_p[j] += 0.2 * step * rng.normal();
                ++coef_block.win_proposed;
                if (!adapting) ++coef_block.proposed;
                const Eigen::VectorXd eta_p =
                    predictor(d, s.delta, s.theta, alpha_p, gamma_p, true);
                const double ll = count_partial_loglik(d, eta_p, s.noise,
                                                       spec.count_likelihood);
                double lr = ll - cur_ll;
                lr += -0.5 * (alpha_p * alpha_p - s.alpha * s.alpha) / kPriorVariance;
                lr += -0.5 * (gamma_p.squaredNorm() - s.gamma.squaredNorm()) / kPriorVariance;
                if (std::log(std::max(rng.uniform(), 1e-300)) < lr) {
                    s.alpha = alpha_p;
                    s.gamma = gamma_p;
                    cur_ll = ll;
                    ++coef_block.win_accepted;
                    if (!adapting) ++coef_block.accepted;
                }
                if (adapting) adapt(coef_block);
            }
            // dispersion random walk on log(phi), Gamma(1e-3, 1e-3) prior
            if (nb) {
                const Eigen::VectorXd eta =
                    predictor(d, s.delta, s.theta, s.alpha, s.gamma, true);
                auto full_ll = [&](double phi) {
                    return count_loglik(d, eta, phi, spec.count_likelihood) +
                           (kIgShape - 1.0) * std::log(phi) - kIgRate * phi;
                };
                const double log_phi = std::log(s.noise);
                const double prop = log_phi + 0.3 * disp_block.scale * rng.normal();
                ++disp_block.win_proposed;
                if (!adapting) ++disp_block.proposed;
                const double lr = full_ll(std::exp(prop)) - full_ll(s.noise) + prop - log_phi;
                if (std::log(std::max(rng.uniform(), 1e-300)) < lr) {
                    s.noise = std::exp(prop);
                    cur_ll = count_partial_loglik(d, eta, s.noise, spec.count_likelihood);
                    ++disp_block.win_accepted;
                    if (!adapting) ++disp_block.accepted;
                }
                if (adapting) adapt(disp_block);
            }
        }

        if (iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0)
            out.draws.push_back(join_flat(s));
    }

    auto push_diag = [&](const char* name, const Block& b) {
        if (b.proposed == 0) return;
        BlockDiagnostics bd;
        bd.block = name;
        bd.acceptance_rate = static_cast<double>(b.accepted) / static_cast<double>(b.proposed);
        bd.adapted_scale = b.scale;
        out.block_diagnostics.push_back(bd);
    };
    push_diag("delta_theta", theta_block);
    push_diag("alpha_gamma", coef_block);
    push_diag("dispersion", disp_block);
    for (const auto& bd : out.block_diagnostics) {
        if (bd.acceptance_rate == 0.0)
            throw numeric_error("sampler mixing failure: block " + bd.block +
                                " accepted nothing after adaptation (scale = " +
                                std::to_string(bd.adapted_scale) + ")");
    }
    out.ess.resize(layout.size());
    std::vector<double> chain(out.draws.size());
    for (std::size_t j = 0; j < layout.size(); ++j) {
        for (std::size_t i = 0; i < out.draws.size(); ++i) chain[i] = out.draws[i][j];
        out.ess[j] = effective_sample_size(chain);
    }
    return out;
}

} // namespace dam
