#pragma once

#include <photonbench/emitter.hpp>
#include <photonbench/types.hpp>

#include <json.hpp>
#include <utility>
#include <vector>

namespace photonbench::optics {

/// Gaussian excitation beam. Lengths in µm, wavelength in nm, power in mW.
struct BeamProfile {
  double w0_um = 0.35;
  double wavelength_nm = 532.0;
  double m_squared = 1.0;
  double power_mw = 10.0;
  double focus_z_um = 0.0;
};

/// Piecewise-linear transmission, constant beyond the first/last knot.
class TransmissionCurve {
public:
  TransmissionCurve() = default;
  explicit TransmissionCurve(std::vector<std::pair<double, double>> knots);

  double operator()(double wavelength_nm) const;
  const std::vector<std::pair<double, double>> &knots() const { return knots_; }

private:
  std::vector<std::pair<double, double>> knots_;
};

struct ObjectiveSpec {
  double numerical_aperture = 0.95;
  TransmissionCurve transmission;
  double autofluorescence_rate_per_mw = 0.0; ///< photons/s/mW arriving at the detectors
};

enum class FilterKind { longpass, shortpass, dichroic_reflectband };

struct FilterElement {
  FilterKind kind = FilterKind::longpass;
  double edge_nm = 550.0;     ///< longpass/shortpass edge, or band start
  double band_end_nm = 550.0; ///< band end for dichroic_reflectband
  double transmission_pass = 0.95;
  double transmission_stop = 0.95e-4;
};

struct FilterStack {
  std::vector<FilterElement> elements;
};

/// Scales the linear excitation model. The default emitter brightness is reached
/// on focus at `reference_power_mw` behind an optic of `reference_pump_transmission`.
struct ExcitationCalibration {
  double reference_power_mw = 10.0;
  double reference_pump_transmission = 0.90;
  double brightness_scale = 1.0;
};

void validate(const BeamProfile &beam);
void validate(const ObjectiveSpec &objective);

double rayleigh_range(const BeamProfile &beam);

/// 1/e² radius at axial offset z (µm).
double beam_radius(const BeamProfile &beam, double z_um);

/// Linear (unsaturated) excitation rate, 1/s, for an emitter at `emitter_position`
/// with the beam axis at `beam_center`.
double excitation_rate_at(const BeamProfile &beam, const ObjectiveSpec &objective,
                          const ExcitationCalibration &calibration, const Vec3 &emitter_position,
                          const Vec2 &beam_center, const emitter::EmitterSpec &emitter);

double solid_angle_fraction(double numerical_aperture);
double filter_transmission(const FilterStack &filters, double wavelength_nm);
double axial_acceptance(double axial_offset_um, double pinhole_axial_fwhm_um);

double collection_efficiency(const ObjectiveSpec &objective, const FilterStack &filters,
                             double wavelength_nm, double axial_offset_um,
                             double pinhole_axial_fwhm_um);

/// Collection efficiency averaged over the emitter's spectrum.
double spectral_collection_efficiency(const ObjectiveSpec &objective, const FilterStack &filters,
                                      const emitter::EmitterSpec &emitter, double axial_offset_um,
                                      double pinhole_axial_fwhm_um);

/// Autofluorescence photons/s reaching the detectors; position independent.
double background_rate(const ObjectiveSpec &objective, double power_mw);

std::string to_string(FilterKind kind);
FilterKind filter_kind_from_string(const std::string &name);

nlohmann::json to_json(const BeamProfile &beam);
BeamProfile beam_from_json(const nlohmann::json &j);
nlohmann::json to_json(const ObjectiveSpec &objective);
ObjectiveSpec objective_from_json(const nlohmann::json &j);
nlohmann::json to_json(const FilterStack &filters);
FilterStack filters_from_json(const nlohmann::json &j);

} // namespace photonbench::optics
