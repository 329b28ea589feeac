#include <photonbench/analysis.hpp>
#include <photonbench/lsq.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

namespace photonbench::analysis {

namespace {

double median(std::vector<double> values) {
  if (values.empty())
    return 0.0;
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  double m = *mid;
  if (values.size() % 2 == 0) {
    const double lower = *std::max_element(values.begin(), mid);
    m = 0.5 * (m + lower);
  }
  return m;
}

} // namespace

// ---------------------------------------------------------------- antibunching

double g2_model(const Eigen::Vector4d &p, double tau_ns) {
  return p[0] - p[1] * std::exp(-std::abs(tau_ns - p[3]) / p[2]);
}

Eigen::Vector4d g2_model_gradient(const Eigen::Vector4d &p, double tau_ns) {
  const double d = tau_ns - p[3];
  const double ad = std::abs(d);
  const double e = std::exp(-ad / p[2]);
  const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  return {1.0, -e, -p[1] * e * ad / (p[2] * p[2]), -p[1] * e * sign / p[2]};
}

G2Fit fit_g2(const correlator::CorrelationHistogram &h) {
  if (!h.normalized)
    throw ValidationError("fit_g2 needs a normalized histogram", "g2");
  const auto &y = *h.normalized;
  const std::size_t n = y.size();
  if (n < static_cast<std::size_t>(kMinG2Bins))
    throw ValidationError("fit_g2 needs at least 20 bins", "bin_count");

  G2Fit fit;
  fit.raw_zero_bin = y[n / 2];

  const double total_counts =
      static_cast<double>(std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0}));
  const double total_g2 = std::accumulate(y.begin(), y.end(), 0.0);
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  if (total_counts <= 0.0 || *hi_it - *lo_it <= 1e-12 * std::max(1.0, std::abs(*hi_it))) {
    fit.baseline = total_g2 / static_cast<double>(n);
    fit.amplitude = 0.0;
    fit.g2_zero = fit.baseline;
    fit.converged = false;
    fit.message = "degenerate histogram: baseline-only fit";
    return fit;
  }
  const double scale = total_g2 / total_counts;

  std::vector<double> tau(n), sigma(n);
  for (std::size_t k = 0; k < n; ++k) {
    tau[k] = (static_cast<double>(h.spec.bin_start(static_cast<int>(k))) +
              0.5 * static_cast<double>(h.spec.bin_width)) /
             kPsPerNs;
    sigma[k] = std::sqrt(std::max(static_cast<double>(h.counts[k]), 1.0)) * scale;
  }

  // initial guess
  const std::size_t outer = std::max<std::size_t>(1, n / 10);
  std::vector<double> wings(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(outer));
  wings.insert(wings.end(), y.end() - static_cast<std::ptrdiff_t>(outer), y.end());
  const double baseline0 = median(wings);
  const double amplitude0 = baseline0 - *lo_it;
  constexpr int kSmooth = 4;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_k = n / 2;
  for (std::size_t k = kSmooth; k + kSmooth < n; ++k) {
    double s = 0.0;
    for (int d = -kSmooth; d <= kSmooth; ++d)
      s += y[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(k) + d)];
    if (s < best) {
      best = s;
      best_k = k;
    }
  }

  const auto residuals = [&](const lsq::Vector &p, lsq::Vector &r, lsq::Matrix *jac) {
    const Eigen::Vector4d params = p.head<4>();
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      r[row] = (g2_model(params, tau[k]) - y[k]) / sigma[k];
      if (jac)
        jac->row(row) = g2_model_gradient(params, tau[k]).transpose() / sigma[k];
    }
  };
  lsq::Vector p0(4);
  p0 << baseline0, amplitude0, 10.0, tau[best_k];
  lsq::Result lm = lsq::levenberg_marquardt(residuals, p0, n);
  // Observed-count weights drag the curve down at low counts per bin; refit with
  // the variance the model predicts until the weights settle.
  for (int pass = 0; pass < 3 && lm.converged; ++pass) {
    const Eigen::Vector4d params = lm.params.head<4>();
    for (std::size_t k = 0; k < n; ++k)
      sigma[k] = std::sqrt(std::max(g2_model(params, tau[k]) / scale, 1.0)) * scale;
    lm = lsq::levenberg_marquardt(residuals, lm.params, n);
  }

  fit.baseline = lm.params[0];
  fit.amplitude = lm.params[1];
  fit.tau_anti_ns = lm.params[2];
  fit.center_ns = lm.params[3];
  fit.covariance = lm.jtj_inverse;
  fit.iterations = lm.iterations;
  fit.g2_zero = fit.baseline - fit.amplitude;
  const double var = fit.covariance(0, 0) + fit.covariance(1, 1) - 2.0 * fit.covariance(0, 1);
  fit.g2_zero_sigma = std::sqrt(std::max(var, 0.0));
  fit.reduced_chi2 = 2.0 * lm.cost / static_cast<double>(n - 4);

  const double amplitude_sigma = std::sqrt(std::max(fit.covariance(1, 1), 0.0));
  if (!lm.converged) {
    fit.message = "iteration budget exhausted";
  } else if (!(fit.tau_anti_ns > 0.0)) {
    fit.message = "non-positive antibunching time";
  } else if (!(fit.amplitude >= 2.0 * amplitude_sigma) || fit.amplitude <= 0.0) {
    fit.message = "dip amplitude below 2 sigma";
  } else {
    fit.converged = true;
    fit.message = "ok";
  }
  return fit;
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
  case Verdict::single:
    return "single";
  case Verdict::not_single:
    return "not_single";
  case Verdict::inconclusive:
    return "inconclusive";
  }
  return "inconclusive";
}

Verdict classify_single_emitter(const G2Fit &fit) {
  if (!fit.converged)
    return Verdict::inconclusive;
  if (fit.g2_zero + 2.0 * fit.g2_zero_sigma < 0.5)
    return Verdict::single;
  if (fit.g2_zero - 2.0 * fit.g2_zero_sigma >= 0.5)
    return Verdict::not_single;
  return Verdict::inconclusive;
}

// ---------------------------------------------------------------- beam profiling

double beam_model(const Eigen::Vector2d &p, double z_um, double wavelength_nm, double m_squared) {
  const double c = m_squared * wavelength_nm * 1e-3 / std::numbers::pi;
  const double u = (z_um - p[1]) * c / (p[0] * p[0]);
  return p[0] * std::sqrt(1.0 + u * u);
}

Eigen::Vector2d beam_model_gradient(const Eigen::Vector2d &p, double z_um, double wavelength_nm,
                                    double m_squared) {
  const double c = m_squared * wavelength_nm * 1e-3 / std::numbers::pi;
  const double dz = z_um - p[1];
  const double w = beam_model(p, z_um, wavelength_nm, m_squared);
  const double w0 = p[0];
  const double a = dz * c;
  return {(w0 - a * a / (w0 * w0 * w0)) / w, -dz * c * c / (w0 * w0 * w)};
}

BeamWaistFit fit_beam_waist(std::span<const BeamSample> samples, double wavelength_nm,
                            double m_squared) {
  std::set<double> distinct;
  for (const auto &s : samples) {
    if (!std::isfinite(s.z_um) || !std::isfinite(s.radius_um) || s.radius_um <= 0.0)
      throw FitError("beam samples must be finite with positive radii");
    distinct.insert(s.z_um);
  }
  if (distinct.size() < 3)
    throw FitError("beam waist fit needs at least 3 distinct z positions");

  const auto smallest = std::min_element(samples.begin(), samples.end(), [](auto &a, auto &b) {
    return a.radius_um < b.radius_um;
  });
  const std::size_t n = samples.size();
  const auto residuals = [&](const lsq::Vector &p, lsq::Vector &r, lsq::Matrix *jac) {
    const Eigen::Vector2d params = p.head<2>();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      r[row] = beam_model(params, samples[i].z_um, wavelength_nm, m_squared) - samples[i].radius_um;
      if (jac)
        jac->row(row) =
            beam_model_gradient(params, samples[i].z_um, wavelength_nm, m_squared).transpose();
    }
  };
  lsq::Vector p0(2);
  p0 << smallest->radius_um, smallest->z_um;
  lsq::Options options;
  options.relative_tolerance = 1e-14;
  const lsq::Result lm = lsq::levenberg_marquardt(residuals, p0, n, options);

  BeamWaistFit fit;
  fit.w0_um = std::abs(lm.params[0]);
  fit.z_focus_um = lm.params[1];
  const double dof = static_cast<double>(n) - 2.0;
  const double s2 = dof > 0.0 ? 2.0 * lm.cost / dof : 0.0;
  const lsq::Matrix cov = s2 * lm.jtj_inverse;
  if (!cov.allFinite() || !std::isfinite(fit.w0_um) || fit.w0_um <= 0.0)
    throw FitError("beam waist fit is degenerate for these samples");
  fit.w0_uncertainty_um = std::sqrt(std::max(cov(0, 0), 0.0));
  fit.z_focus_uncertainty_um = std::sqrt(std::max(cov(1, 1), 0.0));
  fit.residual_rms_um = std::sqrt(2.0 * lm.cost / static_cast<double>(n));
  fit.converged = lm.converged;
  return fit;
}

double gaussian_model(const Eigen::Vector4d &p, double x) {
  const double u = (x - p[1]) / p[2];
  return p[3] + p[0] * std::exp(-0.5 * u * u);
}

Eigen::Vector4d gaussian_model_gradient(const Eigen::Vector4d &p, double x) {
  const double d = x - p[1];
  const double u = d / p[2];
  const double e = std::exp(-0.5 * u * u);
  return {e, p[0] * e * d / (p[2] * p[2]), p[0] * e * d * d / (p[2] * p[2] * p[2]), 1.0};
}

GaussianProfileFit fit_gaussian_cross_section(std::span<const double> row, double pixel_pitch_um) {
  if (row.size() < 5)
    throw ValidationError("cross-section needs at least 5 samples", "row");
  if (!(pixel_pitch_um > 0.0))
    throw ValidationError("pixel pitch must be positive", "pixel_pitch");
  for (double v : row) {
    if (!std::isfinite(v))
      throw ValidationError("cross-section contains non-finite values", "row");
  }
  GaussianProfileFit fit;
  const auto [lo_it, hi_it] = std::minmax_element(row.begin(), row.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    fit.offset = lo;
    fit.amplitude = 0.0;
    fit.center_um = 0.5 * static_cast<double>(row.size() - 1) * pixel_pitch_um;
    fit.center_constrained = false;
    return fit;
  }

  // moments of the baseline-subtracted profile
  double mass = 0.0, first = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    mass += row[i] - lo;
    first += (row[i] - lo) * static_cast<double>(i);
  }
  const double mean = first / mass;
  double second = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i)
    second += (row[i] - lo) * (static_cast<double>(i) - mean) * (static_cast<double>(i) - mean);
  const double sigma0 = std::max(std::sqrt(second / mass), 0.5);

  const std::size_t n = row.size();
  const auto residuals = [&](const lsq::Vector &p, lsq::Vector &r, lsq::Matrix *jac) {
    const Eigen::Vector4d params = p.head<4>();
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double x = static_cast<double>(i);
      r[k] = gaussian_model(params, x) - row[i];
      if (jac)
        jac->row(k) = gaussian_model_gradient(params, x).transpose();
    }
  };
  lsq::Vector p0(4);
  p0 << hi - lo, static_cast<double>(hi_it - row.begin()), sigma0, lo;
  lsq::Options options;
  options.relative_tolerance = 1e-14;
  const lsq::Result lm = lsq::levenberg_marquardt(residuals, p0, n, options);

  fit.amplitude = lm.params[0];
  fit.center_um = lm.params[1] * pixel_pitch_um;
  fit.sigma_um = std::abs(lm.params[2]) * pixel_pitch_um;
  fit.offset = lm.params[3];
  fit.radius_1e2_um = 2.0 * fit.sigma_um;
  fit.converged = lm.converged;
  fit.center_constrained = std::abs(fit.amplitude) > 0.0 && std::isfinite(fit.center_um);
  return fit;
}

LinearFit fit_linear(std::span<const Point2> samples) {
  std::set<double> distinct;
  for (const auto &s : samples)
    distinct.insert(s.x);
  if (distinct.size() < 2)
    throw FitError("linear fit needs at least two distinct x values");
  const double n = static_cast<double>(samples.size());
  double sx = 0.0, sy = 0.0;
  for (const auto &s : samples) {
    sx += s.x;
    sy += s.y;
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto &s : samples) {
    sxx += (s.x - mx) * (s.x - mx);
    sxy += (s.x - mx) * (s.y - my);
  }
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (const auto &s : samples) {
    const double r = s.y - (fit.slope * s.x + fit.intercept);
    fit.max_abs_residual = std::max(fit.max_abs_residual, std::abs(r));
    ss += r * r;
  }
  fit.rms_residual = std::sqrt(ss / n);
  return fit;
}

// ---------------------------------------------------------------- spot finding

namespace {

struct Candidate {
  int ix;
  int iy;
  std::int64_t value;
};

// Axis-aligned 2D Gaussian on a pinned offset; params {A, x0, y0, sx, sy} in pixels.
Spot refine_spot(const CountImage &img, const Candidate &c, double background) {
  const int x_lo = std::max(0, c.ix - kSpotFitHalfWidth);
  const int x_hi = std::min(img.nx - 1, c.ix + kSpotFitHalfWidth);
  const int y_lo = std::max(0, c.iy - kSpotFitHalfWidth);
  const int y_hi = std::min(img.ny - 1, c.iy + kSpotFitHalfWidth);
  std::vector<std::array<double, 3>> pts;
  for (int iy = y_lo; iy <= y_hi; ++iy)
    for (int ix = x_lo; ix <= x_hi; ++ix)
      pts.push_back({static_cast<double>(ix), static_cast<double>(iy),
                     static_cast<double>(img.at(ix, iy)) - background});

  Spot spot;
  spot.center = {img.origin.x + c.ix * img.pitch.x, img.origin.y + c.iy * img.pitch.y};
  spot.peak_counts = static_cast<double>(c.value) - background;
  spot.sigma_x_um = img.pitch.x;
  spot.sigma_y_um = img.pitch.y;

  const auto residuals = [&](const lsq::Vector &p, lsq::Vector &r, lsq::Matrix *jac) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double dx = pts[i][0] - p[1];
      const double dy = pts[i][1] - p[2];
      const double ux = dx / p[3];
      const double uy = dy / p[4];
      const double e = std::exp(-0.5 * (ux * ux + uy * uy));
      r[k] = p[0] * e - pts[i][2];
      if (jac) {
        (*jac)(k, 0) = e;
        (*jac)(k, 1) = p[0] * e * dx / (p[3] * p[3]);
        (*jac)(k, 2) = p[0] * e * dy / (p[4] * p[4]);
        (*jac)(k, 3) = p[0] * e * dx * dx / (p[3] * p[3] * p[3]);
        (*jac)(k, 4) = p[0] * e * dy * dy / (p[4] * p[4] * p[4]);
      }
    }
  };
  lsq::Vector p0(5);
  p0 << spot.peak_counts, c.ix, c.iy, 1.5, 1.5;
  const lsq::Result lm = lsq::levenberg_marquardt(residuals, p0, pts.size());
  const auto &p = lm.params;
  const bool sane = p.allFinite() && p[0] > 0.0 && p[3] > 0.1 && p[4] > 0.1 &&
                    std::abs(p[1] - c.ix) <= kSpotFitHalfWidth &&
                    std::abs(p[2] - c.iy) <= kSpotFitHalfWidth && p[3] < 10.0 * img.nx &&
                    p[4] < 10.0 * img.ny;
  if (sane) {
    spot.center = {img.origin.x + p[1] * img.pitch.x, img.origin.y + p[2] * img.pitch.y};
    spot.peak_counts = p[0];
    spot.sigma_x_um = std::abs(p[3]) * img.pitch.x;
    spot.sigma_y_um = std::abs(p[4]) * img.pitch.y;
    spot.refined = true;
  }
  spot.ellipticity = std::max(spot.sigma_x_um, spot.sigma_y_um) /
                     std::min(spot.sigma_x_um, spot.sigma_y_um);
  spot.width_um = 2.0 * std::sqrt(spot.sigma_x_um * spot.sigma_y_um);
  return spot;
}

} // namespace

SpotList find_spots(const CountImage &img, double min_snr) {
  if (img.nx <= 0 || img.ny <= 0 ||
      img.counts.size() != static_cast<std::size_t>(img.nx) * static_cast<std::size_t>(img.ny))
    throw ValidationError("find_spots needs a non-empty image", "image");

  std::vector<double> values(img.counts.begin(), img.counts.end());
  SpotList result;
  result.background = median(values);
  for (double &v : values)
    v = std::abs(v - result.background);
  result.noise_sigma = std::max(1.4826 * median(std::move(values)), 1.0);
  const double threshold = result.background + min_snr * result.noise_sigma;

  std::vector<Candidate> candidates;
  for (int iy = 0; iy < img.ny; ++iy) {
    for (int ix = 0; ix < img.nx; ++ix) {
      const std::int64_t v = img.at(ix, iy);
      if (static_cast<double>(v) <= threshold)
        continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int jx = ix + dx, jy = iy + dy;
          if ((dx || dy) && jx >= 0 && jy >= 0 && jx < img.nx && jy < img.ny &&
              img.at(jx, jy) > v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max)
        candidates.push_back({ix, iy, v});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate &a, const Candidate &b) { return a.value > b.value; });

  for (const auto &c : candidates) {
    // a candidate already inside an accepted spot needs no fit
    const Vec2 at{img.origin.x + c.ix * img.pitch.x, img.origin.y + c.iy * img.pitch.y};
    const auto inside = [&](const Vec2 &p) {
      return std::any_of(result.spots.begin(), result.spots.end(), [&](const Spot &s) {
        return std::hypot(s.center.x - p.x, s.center.y - p.y) < s.width_um;
      });
    };
    if (inside(at))
      continue;
    Spot spot = refine_spot(img, c, result.background);
    if (inside(spot.center))
      continue;
    result.spots.push_back(spot);
  }
  return result;
}

nlohmann::json to_json(const G2Fit &fit) {
  nlohmann::json cov = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < 4; ++j)
      row.push_back(fit.covariance(i, j));
    cov.push_back(row);
  }
  return {{"schema", correlator::kSchema},
          {"kind", "g2_fit"},
          {"g2_zero", fit.g2_zero},
          {"g2_zero_sigma", fit.g2_zero_sigma},
          {"raw_zero_bin", fit.raw_zero_bin},
          {"tau_anti_ns", fit.tau_anti_ns},
          {"amplitude", fit.amplitude},
          {"baseline", fit.baseline},
          {"center_ns", fit.center_ns},
          {"covariance", cov},
          {"covariance_order", {"baseline", "amplitude", "tau_anti_ns", "center_ns"}},
          {"converged", fit.converged},
          {"iterations", fit.iterations},
          {"reduced_chi2", fit.reduced_chi2},
          {"message", fit.message},
          {"verdict", to_string(classify_single_emitter(fit))}};
}

nlohmann::json to_json(const BeamWaistFit &fit) {
  return {{"schema", correlator::kSchema},
          {"kind", "beam_waist_fit"},
          {"w0_um", fit.w0_um},
          {"z_focus_um", fit.z_focus_um},
          {"w0_uncertainty_um", fit.w0_uncertainty_um},
          {"z_focus_uncertainty_um", fit.z_focus_uncertainty_um},
          {"residual_rms_um", fit.residual_rms_um},
          {"converged", fit.converged}};
}

nlohmann::json to_json(const SpotList &list) {
  nlohmann::json spots = nlohmann::json::array();
  for (const auto &s : list.spots)
    spots.push_back({{"center_um", {s.center.x, s.center.y}},
                     {"peak_counts", s.peak_counts},
                     {"ellipticity", s.ellipticity},
                     {"width_um", s.width_um},
                     {"refined", s.refined}});
  return {{"background", list.background}, {"noise_sigma", list.noise_sigma}, {"spots", spots}};
}

} // namespace photonbench::analysis
