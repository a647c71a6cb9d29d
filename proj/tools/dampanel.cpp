// dampanel: panel-data policy evaluation with debiased autoregressive models.
//
// Subcommands: fit, estimate, compare, simulate, bias, diagnose. One JSON
// config file drives everything; flags override scalar fields. Exit codes:
// 0 success, 2 config/data error, 3 numerical failure.

#include "dam/artifacts.hpp"
#include "dam/bias.hpp"
#include "dam/comparators.hpp"
#include "dam/error.hpp"
#include "dam/estimands.hpp"
#include "dam/estimation.hpp"
#include "dam/panel.hpp"
#include "dam/rng.hpp"
#include "dam/sim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using dam::ordered_json;

namespace {

struct Cli {
    std::string config_path;
    std::string fit_artifact;    // estimate
    std::string moments_path;    // bias
    std::string output_dir_override;
    long long seed_override = -1;
    int threads = 0;
};

ordered_json load_config(const Cli& cli) {
    ordered_json cfg = dam::read_json_file(cli.config_path);
    if (cli.seed_override >= 0) cfg["seed"] = static_cast<std::uint64_t>(cli.seed_override);
    if (!cli.output_dir_override.empty()) cfg["output_dir"] = cli.output_dir_override;
    if (cli.threads > 0) cfg["threads"] = cli.threads;
    return cfg;
}

std::string config_hash(const ordered_json& cfg) {
    return dam::hash_hex(dam::stable_hash(cfg.dump()));
}

fs::path ensure_output_dir(const ordered_json& cfg) {
    if (!cfg.contains("output_dir"))
        throw dam::data_error("config: output_dir is required");
    fs::path dir = cfg.at("output_dir").get<std::string>();
    fs::create_directories(dir);
    return dir;
}

std::uint64_t config_seed(const ordered_json& cfg) {
    return cfg.value("seed", std::uint64_t{1});
}

ordered_json run_manifest(const ordered_json& cfg) {
    ordered_json m;
    m["tool"] = "dampanel";
    m["format_version"] = 1;
    m["config_hash"] = config_hash(cfg);
    m["seed"] = config_seed(cfg);
    m["config"] = cfg;
    return m;
}

dam::PanelDataset load_panel(const ordered_json& cfg) {
    if (!cfg.contains("data")) throw dam::data_error("config: data block is required");
    const auto& d = cfg.at("data");
    if (!d.contains("csv")) throw dam::data_error("config: data.csv is required");
    dam::CsvSchema schema;
    for (const auto& [column, role] : d.at("schema").items())
        schema[column] = role.get<std::string>();
    dam::PanelDataset panel = dam::load_csv(d.at("csv").get<std::string>(), schema);
    if (d.contains("dichotomize"))
        for (const auto& p : d.at("dichotomize"))
            panel = panel.dichotomize(p.get<std::string>());
    return panel;
}

dam::ModelSpec model_spec(const ordered_json& cfg) {
    if (!cfg.contains("model")) throw dam::data_error("config: model block is required");
    return dam::spec_from_json(cfg.at("model"));
}

dam::EstimandRequest estimand_request(const ordered_json& j, std::uint64_t seed) {
    dam::EstimandRequest req;
    const std::string kind = j.value("kind", "satt_avg");
    if (kind == "satt_avg")
        req.kind = dam::EstimandKind::satt_avg;
    else if (kind == "satt_by_period")
        req.kind = dam::EstimandKind::satt_by_period;
    else if (kind == "sapo")
        req.kind = dam::EstimandKind::sapo;
    else if (kind == "multiplicative_ratio")
        req.kind = dam::EstimandKind::multiplicative_ratio;
    else
        throw dam::data_error("unknown estimand kind: " + kind);
    req.policy = j.value("policy", "");
    req.horizon = j.value("horizon", 3);
    const std::string imp = j.value("imputation", "double_draw");
    if (imp == "double_draw")
        req.imputation = dam::Imputation::double_draw;
    else if (imp == "observed_plus_model")
        req.imputation = dam::Imputation::observed_plus_model;
    else if (imp == "model_mean")
        req.imputation = dam::Imputation::model_mean;
    else
        throw dam::data_error("unknown imputation approach: " + imp);
    req.interval_level = j.value("interval_level", 0.95);
    req.n_draws = j.value("n_draws", 4000);
    req.seed = j.value("seed", seed);
    req.rate_scale = j.value("rate_scale", false);
    req.eval_time = j.value("eval_time", -1);
    if (j.contains("sapo_levels"))
        for (const auto& level : j.at("sapo_levels"))
            req.sapo_levels.push_back(level.get<std::map<std::string, double>>());
    if (j.contains("ratio_levels"))
        req.ratio_levels = j.at("ratio_levels").get<std::map<std::string, double>>();
    return req;
}

// ---------------------------------------------------------------------------

int cmd_fit(const Cli& cli) {
    const ordered_json cfg = load_config(cli);
    const fs::path dir = ensure_output_dir(cfg);
    const dam::PanelDataset panel = load_panel(cfg);
    const std::uint64_t seed = config_seed(cfg);
    const std::string method =
        cfg.contains("fit") ? cfg.at("fit").value("method", "bayes") : "bayes";

    ordered_json artifact;
    if (method == "bayes") {
        const dam::ModelSpec spec = model_spec(cfg);
        dam::SamplerConfig sc;
        sc.seed = seed;
        if (cfg.contains("sampler")) {
            const auto& s = cfg.at("sampler");
            sc.n_iter = s.value("n_iter", sc.n_iter);
            sc.burn_in = s.value("burn_in", sc.burn_in);
            sc.thin = s.value("thin", sc.thin);
            sc.seed = s.value("seed", sc.seed);
            sc.initial_scale = s.value("initial_scale", sc.initial_scale);
        }
        const dam::PosteriorFit fit = dam::fit_bayes(panel, spec, sc);
        dam::write_draws_csv(fit, (dir / "draws.csv").string());
        artifact = dam::posterior_to_json(fit, "draws.csv");
    } else if (method == "mle") {
        const dam::ModelSpec spec = model_spec(cfg);
        const dam::FreqFit fit = dam::fit_mle(panel, spec);
        artifact = dam::freqfit_to_json(fit);
    } else if (method == "ipw") {
        dam::PropensityLink link = dam::PropensityLink::logit;
        if (cfg.contains("fit") && cfg.at("fit").value("ipw_link", "logit") == "probit")
            link = dam::PropensityLink::probit;
        const dam::FreqFit fit = dam::fit_ipw(panel, link);
        artifact = dam::freqfit_to_json(fit);
    } else {
        throw dam::data_error("unknown fit method: " + method);
    }
    artifact["manifest"] = run_manifest(cfg);
    dam::write_text_file((dir / "fit.json").string(), artifact.dump(2) + "\n");
    std::cout << "wrote " << (dir / "fit.json").string() << "\n";
    return 0;
}

int cmd_estimate(const Cli& cli) {
    const ordered_json cfg = load_config(cli);
    const fs::path dir = ensure_output_dir(cfg);
    const dam::PanelDataset panel = load_panel(cfg);
    const dam::ModelSpec spec = model_spec(cfg);
    const std::uint64_t seed = config_seed(cfg);

    const std::string fit_path =
        cli.fit_artifact.empty() ? (dir / "fit.json").string() : cli.fit_artifact;
    const ordered_json fit_json = dam::read_json_file(fit_path);
    if (fit_json.value("spec_hash", "") != dam::spec_hash(spec))
        throw dam::data_error("estimate: fit artifact spec hash does not match the config "
                              "model (refusing to mix model and estimand specs)");

    dam::FitDraws draws;
    if (fit_json.value("type", "") == "bayes") {
        dam::PosteriorFit fit;
        fit.spec = dam::spec_from_json(fit_json.at("spec"));
        const fs::path draws_path =
            fs::path(fit_path).parent_path() / fit_json.at("draws_csv").get<std::string>();
        fit.draws = dam::read_draws_csv(draws_path.string(), fit.names);
        draws = dam::draws_from_fit(fit);
    } else {
        const dam::FreqFit fit = dam::freqfit_from_json(fit_json);
        int n_draws = 4000;
        if (cfg.contains("estimands") && !cfg.at("estimands").empty())
            n_draws = cfg.at("estimands")[0].value("n_draws", 4000);
        draws = dam::draws_from_fit(fit, n_draws, seed);
    }

    if (!cfg.contains("estimands") || cfg.at("estimands").empty())
        throw dam::data_error("config: estimands list is required for estimate");
    int index = 0;
    for (const auto& ej : cfg.at("estimands")) {
        const dam::EstimandRequest req = estimand_request(ej, dam::Rng::mix(seed, index));
        const std::string stem = "estimand_" + std::to_string(index) + "_" +
                                 ej.value("kind", "satt_avg");
        if (req.kind == dam::EstimandKind::sapo) {
            const auto results = dam::sapo_grid(draws, panel, req);
            ordered_json arr = ordered_json::array();
            std::string csv = "level,point,lo,hi\n";
            for (std::size_t li = 0; li < results.size(); ++li) {
                ordered_json rj = dam::estimand_to_json(results[li]);
                rj["level"] = req.sapo_levels[li];
                arr.push_back(rj);
                std::string label;
                for (const auto& [pol, val] : req.sapo_levels[li])
                    label += (label.empty() ? "" : ";") + pol + "=" + std::to_string(val);
                csv += label + "," + std::to_string(results[li].point) + "," +
                       std::to_string(results[li].lo) + "," + std::to_string(results[li].hi) +
                       "\n";
            }
            ordered_json out;
            out["results"] = arr;
            out["manifest"] = run_manifest(cfg);
            dam::write_text_file((dir / (stem + ".json")).string(), out.dump(2) + "\n");
            dam::write_text_file((dir / (stem + ".csv")).string(), csv);
        } else {
            dam::EstimandResult res;
            if (req.kind == dam::EstimandKind::satt_avg)
                res = dam::satt(draws, panel, req);
            else if (req.kind == dam::EstimandKind::satt_by_period)
                res = dam::satt_by_period(draws, panel, req);
            else
                res = dam::multiplicative_ratio(draws, panel, req);
            ordered_json out = dam::estimand_to_json(res);
            out["manifest"] = run_manifest(cfg);
            dam::write_text_file((dir / (stem + ".json")).string(), out.dump(2) + "\n");
            if (!res.per_period.empty())
                dam::write_per_period_csv(res, (dir / (stem + ".csv")).string());
        }
        ++index;
    }
    std::cout << "wrote " << index << " estimand result(s) to " << dir.string() << "\n";
    return 0;
}

int cmd_compare(const Cli& cli) {
    const ordered_json cfg = load_config(cli);
    const fs::path dir = ensure_output_dir(cfg);
    const dam::PanelDataset panel = load_panel(cfg);
    if (!cfg.contains("comparators")) throw dam::data_error("config: comparators list required");
    const std::string policy = cfg.contains("model")
                                   ? model_spec(cfg).policies.at(0)
                                   : cfg.at("comparator_policy").get<std::string>();
    dam::ComparatorOptions opts;
    opts.seed = config_seed(cfg);
    if (cfg.contains("comparator_options")) {
        const auto& c = cfg.at("comparator_options");
        opts.n_bootstrap = c.value("n_bootstrap", opts.n_bootstrap);
        opts.horizon = c.value("horizon", opts.horizon);
        opts.interval_level = c.value("interval_level", opts.interval_level);
    }
    ordered_json arr = ordered_json::array();
    for (const auto& cj : cfg.at("comparators")) {
        const std::string name = cj.get<std::string>();
        dam::ComparatorResult res;
        if (name == "twfe")
            res = dam::twfe(panel, policy, opts);
        else if (name == "did_gt")
            res = dam::did_gt(panel, policy, opts);
        else if (name == "synth")
            res = dam::synth(panel, policy, opts);
        else
            throw dam::data_error("unknown comparator: " + name);
        arr.push_back(dam::comparator_to_json(res));
    }
    ordered_json out;
    out["results"] = arr;
    out["manifest"] = run_manifest(cfg);
    dam::write_text_file((dir / "comparators.json").string(), out.dump(2) + "\n");
    std::cout << "wrote " << (dir / "comparators.json").string() << "\n";
    return 0;
}

int cmd_simulate(const Cli& cli) {
    const ordered_json cfg = load_config(cli);
    const fs::path dir = ensure_output_dir(cfg);
    if (!cfg.contains("simulation")) throw dam::data_error("config: simulation block required");
    const auto& sj = cfg.at("simulation");
    dam::SimGrid grid;
    if (sj.contains("baseline")) {
        const auto& b = sj.at("baseline");
        grid.base.baseline.n_units = b.value("n_units", 51);
        grid.base.baseline.n_times = b.value("n_times", 16);
        grid.base.baseline.mu_mean = b.value("mu_mean", 0.85);
        grid.base.baseline.mu_sd = b.value("mu_sd", 0.04);
        grid.base.baseline.ar_coef = b.value("ar_coef", 0.8);
        grid.base.baseline.noise_sd = b.value("noise_sd", 0.025);
        grid.base.baseline.pop_min = b.value("pop_min", 2e5);
        grid.base.baseline.pop_max = b.value("pop_max", 8e6);
        grid.base.baseline.n_het_covariates = b.value("n_het_covariates", 3);
        if (b.contains("csv")) {
            dam::CsvSchema schema;
            for (const auto& [column, role] : b.at("schema").items())
                schema[column] = role.get<std::string>();
            grid.base.base_panel = dam::load_csv(b.at("csv").get<std::string>(), schema);
        }
    }
    grid.base.n_treated = sj.value("n_treated", 20);
    if (sj.contains("start_window")) {
        grid.base.start_lo = sj.at("start_window")[0].get<int>();
        grid.base.start_hi = sj.at("start_window")[1].get<int>();
    }
    grid.base.reference_period = sj.value("reference_period", 7);
    grid.base.tau = sj.value("tau", -0.02);
    grid.base.effect_scale = sj.value("effect_scale", "additive") == "multiplicative"
                                 ? dam::EffectScale::multiplicative
                                 : dam::EffectScale::additive;
    grid.confounding = sj.value("confounding", std::vector<double>{0.0, 1.0, 3.0});
    grid.heterogeneity = sj.value("heterogeneity", std::vector<double>{0.0, 0.1, 0.33});
    grid.n_replications = sj.value("n_replications", 200);
    grid.threads = cfg.value("threads", 0);

    dam::SimEstimatorConfig est;
    est.names = sj.value("estimators",
                         std::vector<std::string>{"dam", "twfe", "did_gt", "synth"});
    if (sj.contains("dam")) {
        const auto& dj = sj.at("dam");
        est.dam_k = dj.value("k", 2);
        est.dam_l = dj.value("l", 0);
        est.dam_family =
            dj.value("family", "linear") == "log_link" ? dam::Family::log_link
                                                       : dam::Family::linear;
        est.dam_draws = dj.value("n_draws", 2000);
        const std::string imp = dj.value("imputation", "model_mean");
        est.dam_imputation = imp == "double_draw" ? dam::Imputation::double_draw
                             : imp == "observed_plus_model"
                                 ? dam::Imputation::observed_plus_model
                                 : dam::Imputation::model_mean;
    } else if (grid.base.effect_scale == dam::EffectScale::multiplicative) {
        est.dam_family = dam::Family::log_link;
    }
    est.n_bootstrap = sj.value("n_bootstrap", 999);
    est.horizon = sj.value("horizon", 3);

    const dam::MetricsReport report = dam::run_grid(grid, est, config_seed(cfg));
    ordered_json out = dam::metrics_to_json(report);
    out["manifest"] = run_manifest(cfg);
    dam::write_text_file((dir / "metrics.json").string(), out.dump(2) + "\n");
    dam::write_metrics_csv(report, (dir / "metrics.csv").string());
    std::cout << "wrote " << (dir / "metrics.json").string() << "\n";
    return 0;
}

int cmd_bias(const Cli& cli) {
    ordered_json cfg;
    ordered_json mj;
    fs::path dir;
    if (!cli.moments_path.empty()) {
        mj = dam::read_json_file(cli.moments_path);
        if (!cli.config_path.empty()) {
            cfg = load_config(cli);
            dir = ensure_output_dir(cfg);
        }
    } else {
        cfg = load_config(cli);
        dir = ensure_output_dir(cfg);
        if (!cfg.contains("moments")) throw dam::data_error("config: moments block required");
        mj = cfg.at("moments");
    }
    const dam::MomentInputs m = dam::moments_from_json(mj);
    ordered_json out;
    out["inputs"] = dam::moments_to_json(m);
    const dam::GeneralBias g = dam::general_bias(m);
    out["general"] = {{"expected_delta_hat", g.expected_delta_hat},
                      {"bias", g.expected_delta_hat - m.Delta}};
    if (g.has_decomposition) {
        out["general"]["C1"] = g.c1;
        out["general"]["C2"] = g.c2;
        out["general"]["C3"] = g.c3;
        out["general"]["C3_over_C2"] = g.c3_over_c2;
    }
    if (m.cov_Y_U == 0.0 && m.cov_A_U == 0.0) {
        const dam::ClassicalBias c = dam::classical_bias(m);
        out["classical"] = {{"expected_delta_hat", c.expected_delta_hat}, {"bias", c.bias}};
        if (m.resid_var_Y0_given_A > 0.0 && m.var_U > 0.0) {
            const double k = m.var_U / m.resid_var_Y0_given_A;
            out["proposition1_bound"] = dam::proposition1_bound(m.delta, m.gamma_A, k);
            out["proposition1_k"] = k;
        }
    }
    std::cout << out.dump(2) << "\n";
    if (!dir.empty()) {
        if (!cfg.empty()) out["manifest"] = run_manifest(cfg);
        dam::write_text_file((dir / "bias.json").string(), out.dump(2) + "\n");
    }
    return 0;
}

int cmd_diagnose(const Cli& cli) {
    const ordered_json cfg = load_config(cli);
    const fs::path dir = ensure_output_dir(cfg);
    const dam::PanelDataset panel = load_panel(cfg);
    const double threshold =
        cfg.contains("diagnose") ? cfg.at("diagnose").value("ratio_threshold", 1.2) : 1.2;
    ordered_json arr = ordered_json::array();
    std::vector<std::string> policies;
    if (cfg.contains("diagnose") && cfg.at("diagnose").contains("policies"))
        policies = cfg.at("diagnose").at("policies").get<std::vector<std::string>>();
    else
        policies = panel.policy_names();
    for (const auto& policy : policies) {
        const dam::VarianceDiagnostic d = dam::variance_diagnostic(panel, policy, threshold);
        arr.push_back({{"policy", policy},
                       {"var_treated", d.var_treated},
                       {"var_control", d.var_control},
                       {"ratio", d.ratio},
                       {"adjusted_ratio", d.adjusted_ratio},
                       {"n_treated_cells", d.n_treated_cells},
                       {"n_control_cells", d.n_control_cells},
                       {"flagged", d.flagged},
                       {"threshold", d.threshold},
                       {"note", "heterogeneity screen, not a formal test"}});
    }
    ordered_json out;
    out["results"] = arr;
    out["manifest"] = run_manifest(cfg);
    dam::write_text_file((dir / "diagnose.json").string(), out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"panel-data policy evaluation with debiased autoregressive models"};
    app.require_subcommand(1);
    Cli cli;

    auto add_common = [&](CLI::App* sub, bool config_required = true) {
        sub->add_option("-c,--config", cli.config_path, "JSON config file")
            ->required(config_required);
        sub->add_option("--seed", cli.seed_override, "override config seed");
        sub->add_option("--output-dir", cli.output_dir_override, "override output directory");
        sub->add_option("--threads", cli.threads, "thread cap for simulation loops");
    };

    auto* fit = app.add_subcommand("fit", "fit the model specified in the config");
    add_common(fit);
    auto* estimate = app.add_subcommand("estimate", "compute estimands from a fit artifact");
    add_common(estimate);
    estimate->add_option("--fit", cli.fit_artifact, "fit.json path (default: output_dir/fit.json)");
    auto* compare = app.add_subcommand("compare", "run comparator estimators");
    add_common(compare);
    auto* simulate = app.add_subcommand("simulate", "run the simulation grid");
    add_common(simulate);
    auto* bias = app.add_subcommand("bias", "closed-form heterogeneity bias analysis");
    add_common(bias, false);
    bias->add_option("--moments", cli.moments_path, "moment-inputs JSON file");
    auto* diagnose = app.add_subcommand("diagnose", "treated/control variance diagnostic");
    add_common(diagnose);

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) return cmd_fit(cli);
        if (estimate->parsed()) return cmd_estimate(cli);
        if (compare->parsed()) return cmd_compare(cli);
        if (simulate->parsed()) return cmd_simulate(cli);
        if (bias->parsed()) return cmd_bias(cli);
        if (diagnose->parsed()) return cmd_diagnose(cli);
    } catch (const dam::data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dam::numeric_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
