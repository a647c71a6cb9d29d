#pragma once

#include "dam/bias.hpp"
#include "dam/comparators.hpp"
#include "dam/estimands.hpp"
#include "dam/estimation.hpp"
#include "dam/model.hpp"
#include "dam/sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace dam {

using ordered_json = nlohmann::ordered_json;

// FNV-1a over the canonical dump; stable across runs and platforms.
std::uint64_t stable_hash(const std::string& text);
std::string hash_hex(std::uint64_t h);

ordered_json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const ordered_json& j);
std::string spec_hash(const ModelSpec& spec);

ordered_json params_to_json(const DamParams& params, const ModelSpec& spec);

ordered_json freqfit_to_json(const FreqFit& fit);
FreqFit freqfit_from_json(const ordered_json& j);

ordered_json posterior_to_json(const PosteriorFit& fit, const std::string& draws_csv_name);
void write_draws_csv(const PosteriorFit& fit, const std::string& path);
// reads a draws CSV written by write_draws_csv
std::vector<std::vector<double>> read_draws_csv(const std::string& path,
                                                std::vector<std::string>& names);

ordered_json estimand_to_json(const EstimandResult& res);
void write_per_period_csv(const EstimandResult& res, const std::string& path);

ordered_json comparator_to_json(const ComparatorResult& res);

ordered_json metrics_to_json(const MetricsReport& report);
void write_metrics_csv(const MetricsReport& report, const std::string& path);

ordered_json moments_to_json(const MomentInputs& m);
MomentInputs moments_from_json(const ordered_json& j);

void write_text_file(const std::string& path, const std::string& content);
ordered_json read_json_file(const std::string& path);

} // namespace dam
