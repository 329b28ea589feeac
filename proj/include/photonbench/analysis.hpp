#pragma once

#include <photonbench/correlator.hpp>
#include <photonbench/types.hpp>

#include <Eigen/Dense>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace photonbench::analysis {

// ---------------------------------------------------------------- antibunching

/// g²(τ) = baseline - amplitude·exp(-|τ - center|/tau_anti), τ in ns.
struct G2Fit {
  double g2_zero = 1.0; ///< baseline - amplitude, the model at its dip center
  double g2_zero_sigma = 0.0;
  double tau_anti_ns = 0.0;
  double amplitude = 0.0;
  double baseline = 1.0;
  double center_ns = 0.0;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero(); ///< order: baseline, amplitude, tau, center
  bool converged = false;
  int iterations = 0;
  double reduced_chi2 = 0.0;
  double raw_zero_bin = 0.0; ///< normalized value of the bin covering τ = 0
  std::string message;
};

/// Model and analytic Jacobian, exposed for derivative checks.
/// params = {baseline, amplitude, tau_anti_ns, center_ns}.
double g2_model(const Eigen::Vector4d &params, double tau_ns);
Eigen::Vector4d g2_model_gradient(const Eigen::Vector4d &params, double tau_ns);

inline constexpr int kMinG2Bins = 20;

/// Poisson-weighted fit of a normalized histogram (σ_k² ∝ counts_k, floor 1).
G2Fit fit_g2(const correlator::CorrelationHistogram &histogram);

enum class Verdict { single, not_single, inconclusive };
std::string to_string(Verdict verdict);

/// single if g2_zero + 2σ < 0.5, not_single if g2_zero - 2σ ≥ 0.5, else inconclusive.
Verdict classify_single_emitter(const G2Fit &fit);

// ---------------------------------------------------------------- beam profiling

struct BeamSample {
  double z_um;
  double radius_um;
};

struct BeamWaistFit {
  double w0_um = 0.0;
  double z_focus_um = 0.0;
  double w0_uncertainty_um = 0.0;
  double z_focus_uncertainty_um = 0.0;
  double residual_rms_um = 0.0;
  bool converged = false;
};

/// params = {w0, z_focus}; radius of a Gaussian beam at z.
double beam_model(const Eigen::Vector2d &params, double z_um, double wavelength_nm,
                  double m_squared);
Eigen::Vector2d beam_model_gradient(const Eigen::Vector2d &params, double z_um,
                                    double wavelength_nm, double m_squared);

/// Throws FitError for fewer than 3 distinct z or degenerate data.
BeamWaistFit fit_beam_waist(std::span<const BeamSample> samples, double wavelength_nm = 532.0,
                            double m_squared = 1.0);

struct GaussianProfileFit {
  double center_um = 0.0;
  double sigma_um = 0.0;
  double amplitude = 0.0;
  double offset = 0.0;
  double radius_1e2_um = 0.0; ///< 2·sigma
  bool center_constrained = true;
  bool converged = false;
};

/// params = {amplitude, center, sigma, offset}.
double gaussian_model(const Eigen::Vector4d &params, double x);
Eigen::Vector4d gaussian_model_gradient(const Eigen::Vector4d &params, double x);

GaussianProfileFit fit_gaussian_cross_section(std::span<const double> row, double pixel_pitch_um);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double max_abs_residual = 0.0;
  double rms_residual = 0.0;
};

struct Point2 {
  double x;
  double y;
};

/// Ordinary least squares; throws FitError with fewer than two distinct x.
LinearFit fit_linear(std::span<const Point2> samples);

// ---------------------------------------------------------------- spot finding

/// Row-major count image; pixel (ix, iy) sits at origin + (ix·pitch.x, iy·pitch.y).
struct CountImage {
  int nx = 0;
  int ny = 0;
  std::vector<std::int64_t> counts;
  Vec2 origin;
  Vec2 pitch{0.2, 0.2};

  std::int64_t at(int ix, int iy) const { return counts[static_cast<std::size_t>(iy) * nx + ix]; }
};

struct Spot {
  Vec2 center;
  double peak_counts = 0.0; ///< fitted amplitude above background
  double ellipticity = 1.0; ///< major/minor width ratio, ≥ 1
  double width_um = 0.0;    ///< 1/e² radius, 2·sqrt(σx·σy)
  double sigma_x_um = 0.0;
  double sigma_y_um = 0.0;
  bool refined = false;
};

struct SpotList {
  std::vector<Spot> spots;
  double background = 0.0;
  double noise_sigma = 0.0;
};

inline constexpr int kSpotFitHalfWidth = 3; ///< 7×7 neighbourhood

/// Local maxima above median + min_snr·(1.4826·MAD), refined by an axis-aligned 2D
/// Gaussian over a 7×7 neighbourhood with the offset pinned to the median.
/// Spots closer than the brighter spot's width are merged.
SpotList find_spots(const CountImage &image, double min_snr);

nlohmann::json to_json(const G2Fit &fit);
nlohmann::json to_json(const BeamWaistFit &fit);
nlohmann::json to_json(const SpotList &spots);

} // namespace photonbench::analysis
