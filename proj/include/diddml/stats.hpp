#pragma once

#include <cmath>
#include <span>

namespace diddml::stats {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Two-sided p-value of a z statistic.
inline double normal_p_value(double z) {
  if (!std::isfinite(z)) return std::isnan(z) ? 1.0 : 0.0;
  return std::erfc(std::fabs(z) / std::sqrt(2.0));
}

// Two-sided p-value of a t statistic with df degrees of freedom.
double student_t_p_value(double t, double df);

inline constexpr double z975 = 1.959963984540054;

double mean(std::span<const double> v);
// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> v);
// Linear-interpolation quantile (type 7) of an unsorted sample.
double quantile(std::span<const double> v, double q);

}  // namespace diddml::stats
