#include "dam/artifacts.hpp"

#include "dam/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dam {

namespace {

std::string kind_name(EstimandKind k) {
    switch (k) {
        case EstimandKind::satt_avg: return "satt_avg";
        case EstimandKind::satt_by_period: return "satt_by_period";
        case EstimandKind::sapo: return "sapo";
        case EstimandKind::multiplicative_ratio: return "multiplicative_ratio";
    }
    return "?";
}

std::string csv_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace

std::uint64_t stable_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    static const char* hex = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[i] = hex[h & 0xf];
        h >>= 4;
    }
    buf[16] = '\0';
    return std::string(buf);
}

ordered_json spec_to_json(const ModelSpec& spec) {
    ordered_json j;
    j["k"] = spec.k;
    j["l"] = spec.l;
    j["policies"] = spec.policies;
    j["include_interactions"] = spec.include_interactions;
    j["covariates"] = spec.covariates;
    j["family"] = spec.family == Family::linear ? "linear" : "log_link";
    j["log_shift"] = spec.log_shift;
    j["count_likelihood"] =
        spec.count_likelihood == CountLikelihood::negbin ? "negbin" : "poisson";
    return j;
}

ModelSpec spec_from_json(const ordered_json& j) {
    ModelSpec spec;
    spec.k = j.at("k").get<int>();
    spec.l = j.at("l").get<int>();
    spec.policies = j.at("policies").get<std::vector<std::string>>();
    spec.include_interactions = j.value("include_interactions", false);
    if (j.contains("covariates"))
        spec.covariates = j.at("covariates").get<std::vector<std::string>>();
    const std::string fam = j.value("family", "linear");
    if (fam == "linear")
        spec.family = Family::linear;
    else if (fam == "log_link")
        spec.family = Family::log_link;
    else
        throw data_error("unknown family: " + fam);
    spec.log_shift = j.value("log_shift", 1.0);
    const std::string lik = j.value("count_likelihood", "negbin");
    if (lik == "negbin")
        spec.count_likelihood = CountLikelihood::negbin;
    else if (lik == "poisson")
        spec.count_likelihood = CountLikelihood::poisson;
    else
        throw data_error("unknown count likelihood: " + lik);
    spec.validate();
    return spec;
}

std::string spec_hash(const ModelSpec& spec) {
    return hash_hex(stable_hash(spec_to_json(spec).dump()));
}

ordered_json params_to_json(const DamParams& params, const ModelSpec& spec) {
    const ParamLayout layout = ParamLayout::for_spec(spec);
    const auto flat = layout.flatten(params, spec);
    ordered_json j;
    for (std::size_t i = 0; i < layout.names.size(); ++i) j[layout.names[i]] = flat[i];
    return j;
}

ordered_json freqfit_to_json(const FreqFit& fit) {
    ordered_json j;
    j["type"] = "frequentist";
    ordered_json est;
    for (std::size_t i = 0; i < fit.names.size(); ++i) est[fit.names[i]] = fit.estimates[i];
    j["estimates"] = est;
    std::vector<std::vector<double>> vc(fit.vcov.rows(), std::vector<double>(fit.vcov.cols()));
    for (Eigen::Index r = 0; r < fit.vcov.rows(); ++r)
        for (Eigen::Index c = 0; c < fit.vcov.cols(); ++c) vc[r][c] = fit.vcov(r, c);
    j["vcov"] = vc;
    j["convergence"] = {{"converged", fit.convergence.converged},
                        {"iterations", fit.convergence.iterations},
                        {"final_grad_norm", fit.convergence.final_grad_norm}};
    if (fit.has_spec) {
        j["spec"] = spec_to_json(fit.spec);
        j["spec_hash"] = spec_hash(fit.spec);
    }
    return j;
}

FreqFit freqfit_from_json(const ordered_json& j) {
    FreqFit fit;
    for (const auto& [name, value] : j.at("estimates").items()) {
        fit.names.push_back(name);
        fit.estimates.push_back(value.get<double>());
    }
    const auto vc = j.at("vcov").get<std::vector<std::vector<double>>>();
    fit.vcov.resize(vc.size(), vc.empty() ? 0 : vc[0].size());
    for (std::size_t r = 0; r < vc.size(); ++r)
        for (std::size_t c = 0; c < vc[r].size(); ++c) fit.vcov(r, c) = vc[r][c];
    fit.convergence.converged = j.at("convergence").at("converged").get<bool>();
    fit.convergence.iterations = j.at("convergence").at("iterations").get<int>();
    fit.convergence.final_grad_norm = j.at("convergence").at("final_grad_norm").get<double>();
    if (j.contains("spec")) {
        fit.spec = spec_from_json(j.at("spec"));
        fit.has_spec = true;
    }
    return fit;
}

ordered_json posterior_to_json(const PosteriorFit& fit, const std::string& draws_csv_name) {
    ordered_json j;
    j["type"] = "bayes";
    j["spec"] = spec_to_json(fit.spec);
    j["spec_hash"] = spec_hash(fit.spec);
    j["draws_csv"] = draws_csv_name;
    j["n_draws"] = fit.draws.size();
    j["sampler"] = {{"n_iter", fit.config.n_iter},
                    {"burn_in", fit.config.burn_in},
                    {"thin", fit.config.thin},
                    {"seed", fit.config.seed},
                    {"initial_scale", fit.config.initial_scale}};
    ordered_json means;
    const auto pm = fit.posterior_mean();
    for (std::size_t i = 0; i < fit.names.size(); ++i) means[fit.names[i]] = pm[i];
    j["posterior_mean"] = means;
    ordered_json diag;
    for (const auto& b : fit.block_diagnostics)
        diag[b.block] = {{"acceptance_rate", b.acceptance_rate},
                         {"adapted_scale", b.adapted_scale}};
    ordered_json ess;
    for (std::size_t i = 0; i < fit.names.size(); ++i) ess[fit.names[i]] = fit.ess[i];
    j["diagnostics"] = {{"blocks", diag}, {"effective_sample_size", ess}};
    return j;
}

void write_draws_csv(const PosteriorFit& fit, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path);
    for (std::size_t i = 0; i < fit.names.size(); ++i)
        out << (i ? "," : "") << fit.names[i];
    out << "\n";
    for (const auto& row : fit.draws) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_double(row[i]);
        out << "\n";
    }
}

std::vector<std::vector<double>> read_draws_csv(const std::string& path,
                                                std::vector<std::string>& names) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error(path + ": empty draws file");
    names.clear();
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) names.push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != names.size()) throw data_error(path + ": ragged draws row");
        rows.push_back(std::move(row));
    }
    return rows;
}

ordered_json estimand_to_json(const EstimandResult& res) {
    ordered_json j;
    j["kind"] = kind_name(res.kind);
    j["point"] = res.point;
    j["interval"] = {res.lo, res.hi};
    j["interval_level"] = res.interval_level;
    j["n_contributing_units"] = res.n_contributing_units;
    j["truncated_units"] = res.truncated_units;
    if (!res.per_period.empty()) {
        ordered_json pp = ordered_json::array();
        for (const auto& p : res.per_period)
            pp.push_back({{"m", p.m},
                          {"point", p.point},
                          {"lo", p.lo},
                          {"hi", p.hi},
                          {"n_units", p.n_units}});
        j["per_period"] = pp;
    }
    if (!res.notes.empty()) j["notes"] = res.notes;
    return j;
}

void write_per_period_csv(const EstimandResult& res, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path);
    out << "period,point,lo,hi,n_units\n";
    for (const auto& p : res.per_period)
        out << p.m << ',' << csv_double(p.point) << ',' << csv_double(p.lo) << ','
            << csv_double(p.hi) << ',' << p.n_units << "\n";
}

ordered_json comparator_to_json(const ComparatorResult& res) {
    ordered_json j;
    j["estimator"] = res.estimator;
    j["point"] = res.point;
    j["interval"] = {res.lo, res.hi};
    j["interval_level"] = res.interval_level;
    j["n_bootstrap_used"] = res.n_bootstrap_used;
    if (!res.per_group_detail.empty()) j["per_group_detail"] = res.per_group_detail;
    if (!res.notes.empty()) j["notes"] = res.notes;
    return j;
}

ordered_json metrics_to_json(const MetricsReport& report) {
    ordered_json j;
    j["seed"] = report.seed;
    ordered_json arr = ordered_json::array();
    for (const auto& s : report.scenarios) {
        ordered_json sj;
        sj["confounding"] = s.confounding_label;
        sj["confounding_c"] = s.confounding_c;
        sj["heterogeneity"] = s.heterogeneity_label;
        sj["exceedance_target"] = s.exceedance;
        sj["n_replications"] = s.n_replications;
        sj["mean_true_satt"] = s.mean_true_satt;
        sj["mean_clamped_cells"] = s.mean_clamped_cells;
        ordered_json est = ordered_json::array();
        for (const auto& e : s.estimators) {
            est.push_back({{"estimator", e.name},
                           {"mse", e.mse},
                           {"standardized_mse", e.std_mse},
                           {"coverage", e.coverage},
                           {"power", e.power},
                           {"mean_interval_width", e.mean_interval_width},
                           {"mean_point", e.mean_point},
                           {"failures", e.failures},
                           {"flagged", e.flagged}});
        }
        sj["estimators"] = est;
        arr.push_back(sj);
    }
    j["scenarios"] = arr;
    return j;
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path);
    out << "confounding,heterogeneity,estimator,metric,value\n";
    for (const auto& s : report.scenarios) {
        for (const auto& e : s.estimators) {
            auto emit = [&](const char* metric, double v) {
                out << s.confounding_label << ',' << s.heterogeneity_label << ',' << e.name
                    << ',' << metric << ',' << csv_double(v) << "\n";
            };
            emit("mse", e.mse);
            emit("standardized_mse", e.std_mse);
            emit("coverage", e.coverage);
            emit("power", e.power);
            emit("mean_interval_width", e.mean_interval_width);
            emit("failures", e.failures);
        }
    }
}

ordered_json moments_to_json(const MomentInputs& m) {
    ordered_json j;
    j["var_U"] = m.var_U;
    j["resid_var_Y0_given_A"] = m.resid_var_Y0_given_A;
    j["gamma_A"] = m.gamma_A;
    j["delta"] = m.delta;
    j["cov_A_Y"] = m.cov_A_Y;
    j["cov_A_Y0"] = m.cov_A_Y0;
    j["cov_Y_Y0"] = m.cov_Y_Y0;
    j["cov_Y_U"] = m.cov_Y_U;
    j["cov_A_U"] = m.cov_A_U;
    j["var_A"] = m.var_A;
    j["var_Y0"] = m.var_Y0;
    j["Delta"] = m.Delta;
    return j;
}

MomentInputs moments_from_json(const ordered_json& j) {
    MomentInputs m;
    m.var_U = j.value("var_U", 0.0);
    m.resid_var_Y0_given_A = j.value("resid_var_Y0_given_A", 1.0);
    m.gamma_A = j.value("gamma_A", 0.0);
    m.delta = j.value("delta", 0.0);
    m.cov_A_Y = j.value("cov_A_Y", 0.0);
    m.cov_A_Y0 = j.value("cov_A_Y0", 0.0);
    m.cov_Y_Y0 = j.value("cov_Y_Y0", 0.0);
    m.cov_Y_U = j.value("cov_Y_U", 0.0);
    m.cov_A_U = j.value("cov_A_U", 0.0);
    m.var_A = j.value("var_A", 1.0);
    m.var_Y0 = j.value("var_Y0", 1.0);
    m.Delta = j.value("Delta", 0.0);
    return m;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path);
    out << content;
}

ordered_json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw data_error(path + ": invalid JSON: " + e.what());
    }
    return j;
}

} // namespace dam
