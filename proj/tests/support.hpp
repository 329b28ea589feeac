#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace pbtest {

/// One-sample Kolmogorov-Smirnov p-value against a continuous CDF.
inline double ks_pvalue(std::vector<double> sample, const std::function<double(double)> &cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  // asymptotic Kolmogorov tail with the usual small-sample correction
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k)
    q += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

/// Pearson chi-square p-value for observed vs expected bin counts.
inline double chi2_pvalue(const std::vector<double> &observed, const std::vector<double> &expected,
                          int fitted_params = 0) {
  double chi2 = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i)
    chi2 += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  boost::math::chi_squared_distribution<double> dist(
      static_cast<double>(observed.size()) - 1.0 - fitted_params);
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

/// |x - mean| within k standard deviations.
inline bool within_sigma(double x, double mean, double sigma, double k = 3.0) {
  return std::abs(x - mean) <= k * sigma;
}

} // namespace pbtest
