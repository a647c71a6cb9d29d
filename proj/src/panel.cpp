#include "dam/panel.hpp"

#include "dam/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace dam {

namespace {

bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end != begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
    if (begin == end) return false;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string format_value(double v) {
    // shortest round-trip representation
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace

PanelDataset::PanelDataset(std::vector<std::string> units, int n_times,
                           std::vector<double> outcome, std::vector<double> population,
                           std::map<std::string, std::vector<double>> policies,
                           std::map<std::string, std::vector<double>> covariates)
    : units_(std::move(units)),
      n_times_(n_times),
      outcome_(std::move(outcome)),
      population_(std::move(population)),
      policies_(std::move(policies)),
      covariates_(std::move(covariates)) {
    const std::size_t cells = units_.size() * static_cast<std::size_t>(n_times_);
    if (n_times_ < 1) throw data_error("panel needs at least one time period");
    if (outcome_.size() != cells) throw data_error("outcome grid size mismatch");
    if (population_.empty()) population_.assign(cells, 1.0);
    if (population_.size() != cells) throw data_error("population grid size mismatch");
    for (double p : population_)
        if (!(p > 0.0)) throw data_error("populations must be positive");
    if (policies_.empty()) throw data_error("panel requires at least one policy column");
    for (const auto& [name, grid] : policies_) {
        if (grid.size() != cells) throw data_error("policy grid size mismatch for " + name);
        for (std::size_t c = 0; c < grid.size(); ++c) {
            if (grid[c] < 0.0 || grid[c] > 1.0) {
                throw data_error("policy " + name + " exposure outside [0,1] for unit " +
                                 units_[c / n_times_] + ", time " +
                                 std::to_string(static_cast<int>(c % n_times_)));
            }
        }
        policy_names_.push_back(name);
    }
    for (const auto& [name, grid] : covariates_) {
        if (grid.size() != cells) throw data_error("covariate grid size mismatch for " + name);
        covariate_names_.push_back(name);
    }
}

double PanelDataset::policy(const std::string& name, std::size_t i, int t) const {
    auto it = policies_.find(name);
    if (it == policies_.end()) throw data_error("unknown policy: " + name);
    return it->second[idx(i, t)];
}

double PanelDataset::covariate(const std::string& name, std::size_t i, int t) const {
    auto it = covariates_.find(name);
    if (it == covariates_.end()) throw data_error("unknown covariate: " + name);
    return it->second[idx(i, t)];
}

const std::vector<double>& PanelDataset::policy_grid(const std::string& name) const {
    auto it = policies_.find(name);
    if (it == policies_.end()) throw data_error("unknown policy: " + name);
    return it->second;
}

bool PanelDataset::has_policy(const std::string& name) const {
    return policies_.count(name) > 0;
}

PanelDataset PanelDataset::dichotomize(const std::string& policy) const {
    auto it = policies_.find(policy);
    if (it == policies_.end()) throw data_error("unknown policy: " + policy);
    auto policies = policies_;
    for (double& v : policies[policy]) v = (v > 0.0) ? 1.0 : 0.0;
    return PanelDataset(units_, n_times_, outcome_, population_, std::move(policies),
                        covariates_);
}

PanelDataset PanelDataset::with_outcome(std::vector<double> outcome) const {
    return PanelDataset(units_, n_times_, std::move(outcome), population_, policies_,
                        covariates_);
}

std::vector<LagView> lag_views(const PanelDataset& data, int k, int l,
                               const std::vector<std::string>& policies,
                               const std::vector<std::string>& covariates) {
    if (k < 1) throw data_error("lag count k must be >= 1");
    if (l < 0) throw data_error("carryover count l must be >= 0");
    if (data.max_time() < k + l)
        throw data_error("insufficient history: T = " + std::to_string(data.max_time()) +
                         " < k + l = " + std::to_string(k + l));
    std::vector<LagView> views;
    views.reserve(data.n_units() * static_cast<std::size_t>(data.max_time() - k - l + 1));
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        for (int t = k + l; t <= data.max_time(); ++t) {
            LagView v;
            v.unit = i;
            v.target_time = t;
            v.outcome = data.outcome(i, t);
            v.population = data.population(i, t);
            v.outcome_lags.resize(k);
            v.outcome_lag_pops.resize(k);
            for (int b = 1; b <= k; ++b) {
                v.outcome_lags[b - 1] = data.outcome(i, t - b);
                v.outcome_lag_pops[b - 1] = data.population(i, t - b);
            }
            v.policy_lags.resize(policies.size());
            for (std::size_t p = 0; p < policies.size(); ++p) {
                v.policy_lags[p].resize(k + l + 1);
                for (int z = 0; z <= k + l; ++z)
                    v.policy_lags[p][z] = data.policy(policies[p], i, t - z);
            }
            v.covariate_row.resize(covariates.size());
            for (std::size_t c = 0; c < covariates.size(); ++c)
                v.covariate_row[c] = data.covariate(covariates[c], i, t);
            views.push_back(std::move(v));
        }
    }
    return views;
}

PanelDataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path);

    std::string header_line;
    if (!std::getline(in, header_line)) throw data_error(path + ": empty file");
    const auto headers = split_csv_line(header_line);

    int unit_col = -1, time_col = -1, outcome_col = -1, pop_col = -1;
    std::map<int, std::string> policy_cols;   // column index -> policy name
    std::map<int, std::string> covariate_cols;
    for (const auto& [column, role] : schema) {
        auto it = std::find(headers.begin(), headers.end(), column);
        if (it == headers.end()) throw data_error(path + ": column not found: " + column);
        const int ci = static_cast<int>(it - headers.begin());
        if (role == "unit") unit_col = ci;
        else if (role == "time") time_col = ci;
        else if (role == "outcome") outcome_col = ci;
        else if (role == "population") pop_col = ci;
        else if (role.rfind("policy:", 0) == 0) policy_cols[ci] = role.substr(7);
        else if (role.rfind("covariate:", 0) == 0) covariate_cols[ci] = role.substr(10);
        else throw data_error("unknown schema role: " + role);
    }
    if (unit_col < 0) throw data_error(path + ": schema names no unit column");
    if (time_col < 0) throw data_error(path + ": schema names no time column");
    if (outcome_col < 0) throw data_error(path + ": schema names no outcome column");
    if (policy_cols.empty()) throw data_error(path + ": schema names no policy column");

    struct RawRow {
        std::string unit;
        long time;
        double outcome;
        double population;
        std::vector<double> policies;
        std::vector<double> covariates;
    };
    std::vector<RawRow> rows;
    std::vector<std::string> unit_order;
    std::set<std::string> unit_seen;
    std::set<long> time_values;

    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != headers.size())
            throw data_error(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(headers.size()) + " cells, got " +
                             std::to_string(cells.size()));
        RawRow r;
        r.unit = cells[unit_col];
        double tval;
        if (!parse_double(cells[time_col], tval) || tval != std::floor(tval))
            throw data_error(path + ":" + std::to_string(line_no) +
                             ": non-integer time value '" + cells[time_col] + "'");
        r.time = static_cast<long>(tval);
        if (!parse_double(cells[outcome_col], r.outcome))
            throw data_error(path + ":" + std::to_string(line_no) +
                             ": non-numeric outcome '" + cells[outcome_col] + "'");
        r.population = 1.0;
        if (pop_col >= 0 && !parse_double(cells[pop_col], r.population))
            throw data_error(path + ":" + std::to_string(line_no) +
                             ": non-numeric population '" + cells[pop_col] + "'");
        for (const auto& [ci, name] : policy_cols) {
            double v;
            if (!parse_double(cells[ci], v))
                throw data_error(path + ":" + std::to_string(line_no) +
                                 ": non-numeric exposure for policy " + name);
            if (v < 0.0 || v > 1.0)
                throw data_error(path + ":" + std::to_string(line_no) + ": policy " + name +
                                 " exposure " + cells[ci] + " outside [0,1]");
            r.policies.push_back(v);
        }
        for (const auto& [ci, name] : covariate_cols) {
            double v;
            if (!parse_double(cells[ci], v))
                throw data_error(path + ":" + std::to_string(line_no) +
                                 ": non-numeric covariate " + name);
            r.covariates.push_back(v);
        }
        if (!unit_seen.count(r.unit)) {
            unit_seen.insert(r.unit);
            unit_order.push_back(r.unit);
        }
        time_values.insert(r.time);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw data_error(path + ": no data rows");

    // times re-indexed to 0..T preserving order; gaps are forbidden
    std::vector<long> times(time_values.begin(), time_values.end());
    for (std::size_t j = 1; j < times.size(); ++j) {
        if (times[j] != times[j - 1] + 1)
            throw data_error(path + ": time index gap between " + std::to_string(times[j - 1]) +
                             " and " + std::to_string(times[j]));
    }
    const long t0 = times.front();
    const int n_times = static_cast<int>(times.size());

    std::map<std::string, std::size_t> unit_index;
    for (std::size_t i = 0; i < unit_order.size(); ++i) unit_index[unit_order[i]] = i;

    const std::size_t cells = unit_order.size() * static_cast<std::size_t>(n_times);
    const double missing = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> outcome(cells, missing);
    std::vector<double> population(cells, missing);
    std::map<std::string, std::vector<double>> policies, covariates;
    for (const auto& [ci, name] : policy_cols) policies[name].assign(cells, missing);
    for (const auto& [ci, name] : covariate_cols) covariates[name].assign(cells, missing);

    for (const auto& r : rows) {
        const std::size_t i = unit_index[r.unit];
        const int t = static_cast<int>(r.time - t0);
        const std::size_t c = i * n_times + t;
        if (!std::isnan(outcome[c]))
            throw data_error(path + ": duplicate cell for unit " + r.unit + ", time " +
                             std::to_string(r.time));
        outcome[c] = r.outcome;
        population[c] = r.population;
        std::size_t pi = 0;
        for (const auto& [ci, name] : policy_cols) policies[name][c] = r.policies[pi++];
        std::size_t vi = 0;
        for (const auto& [ci, name] : covariate_cols) covariates[name][c] = r.covariates[vi++];
    }

    for (std::size_t i = 0; i < unit_order.size(); ++i) {
        for (int t = 0; t < n_times; ++t) {
            const std::size_t c = i * n_times + t;
            if (std::isnan(outcome[c]))
                throw data_error(path + ": missing cell for unit " + unit_order[i] + ", time " +
                                 std::to_string(t0 + t) + ", column outcome");
        }
    }

    return PanelDataset(std::move(unit_order), n_times, std::move(outcome),
                        std::move(population), std::move(policies), std::move(covariates));
}

void write_csv(const PanelDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path);
    out << "unit,time,outcome,population";
    for (const auto& p : data.policy_names()) out << ",policy:" << p;
    for (const auto& c : data.covariate_names()) out << ",covariate:" << c;
    out << "\n";
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        for (int t = 0; t < data.n_times(); ++t) {
            out << data.units()[i] << ',' << t << ',' << format_value(data.outcome(i, t)) << ','
                << format_value(data.population(i, t));
            for (const auto& p : data.policy_names())
                out << ',' << format_value(data.policy(p, i, t));
            for (const auto& c : data.covariate_names())
                out << ',' << format_value(data.covariate(c, i, t));
            out << "\n";
        }
    }
}

} // namespace dam
