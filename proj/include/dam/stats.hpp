#pragma once

#include <cstddef>
#include <vector>

namespace dam {

double mean(const std::vector<double>& x);
double sample_variance(const std::vector<double>& x); // n-1 denominator
double sample_sd(const std::vector<double>& x);

// Empirical quantile with linear interpolation (type 7). p in [0,1].
double quantile(std::vector<double> x, double p);

// Standard normal inverse CDF (Wichura's AS241, double precision).
double normal_quantile(double p);

// Standard normal CDF.
double normal_cdf(double x);

// Effective sample size of an MCMC trace via Geyer's initial positive
// sequence of autocovariances.
double effective_sample_size(const std::vector<double>& chain);

double digamma(double x);

} // namespace dam
