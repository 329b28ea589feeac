#include <photonbench/optics.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace photonbench::optics {

TransmissionCurve::TransmissionCurve(std::vector<std::pair<double, double>> knots)
    : knots_(std::move(knots)) {
  std::sort(knots_.begin(), knots_.end());
  for (const auto &[wavelength, t] : knots_) {
    if (!(t >= 0.0 && t <= 1.0))
      throw ValidationError("transmission values must lie in [0, 1]", "transmission_curve");
  }
}

double TransmissionCurve::operator()(double wavelength_nm) const {
  if (knots_.empty())
    return 1.0;
  if (wavelength_nm <= knots_.front().first)
    return knots_.front().second;
  if (wavelength_nm >= knots_.back().first)
    return knots_.back().second;
  const auto upper = std::upper_bound(
      knots_.begin(), knots_.end(), wavelength_nm,
      [](double w, const std::pair<double, double> &k) { return w < k.first; });
  const auto lower = upper - 1;
  const double f = (wavelength_nm - lower->first) / (upper->first - lower->first);
  return lower->second + f * (upper->second - lower->second);
}

void validate(const BeamProfile &beam) {
  if (!(beam.w0_um > 0.0))
    throw ValidationError("beam waist must be positive", "w0");
  if (!(beam.m_squared >= 1.0))
    throw ValidationError("beam quality M² must be at least 1", "m_squared");
  if (!(beam.wavelength_nm > 0.0))
    throw ValidationError("wavelength must be positive", "wavelength");
  if (!(beam.power_mw >= 0.0))
    throw ValidationError("laser power must be non-negative", "power");
}

void validate(const ObjectiveSpec &objective) {
  if (!(objective.numerical_aperture > 0.0 && objective.numerical_aperture < 1.0))
    throw ValidationError("numerical aperture must lie in (0, 1)", "numerical_aperture");
  if (!(objective.autofluorescence_rate_per_mw >= 0.0))
    throw ValidationError("autofluorescence rate must be non-negative",
                          "autofluorescence_rate_per_mw");
}

double rayleigh_range(const BeamProfile &beam) {
  const double lambda_um = beam.wavelength_nm * 1e-3;
  return std::numbers::pi * beam.w0_um * beam.w0_um / (beam.m_squared * lambda_um);
}

double beam_radius(const BeamProfile &beam, double z_um) {
  const double u = z_um / rayleigh_range(beam);
  return beam.w0_um * std::sqrt(1.0 + u * u);
}

double excitation_rate_at(const BeamProfile &beam, const ObjectiveSpec &objective,
                          const ExcitationCalibration &calibration, const Vec3 &emitter_position,
                          const Vec2 &beam_center, const emitter::EmitterSpec &emitter) {
  if (beam.power_mw <= 0.0 || emitter.saturation_rate <= 0.0)
    return 0.0;
  const double on_focus = emitter::excitation_for_emission_rate(
      emitter.saturation_rate * calibration.brightness_scale, emitter.decay_rate());
  const double pump = beam.power_mw * objective.transmission(beam.wavelength_nm) /
                      (calibration.reference_power_mw * calibration.reference_pump_transmission);
  const double w = beam_radius(beam, emitter_position.z - beam.focus_z_um);
  const double dx = emitter_position.x - beam_center.x;
  const double dy = emitter_position.y - beam_center.y;
  const double r2 = dx * dx + dy * dy;
  const double spread = (beam.w0_um / w) * (beam.w0_um / w);
  return on_focus * pump * spread * std::exp(-2.0 * r2 / (w * w));
}

double solid_angle_fraction(double numerical_aperture) {
  return (1.0 - std::sqrt(1.0 - numerical_aperture * numerical_aperture)) / 2.0;
}

double filter_transmission(const FilterStack &filters, double wavelength_nm) {
  double t = 1.0;
  for (const auto &f : filters.elements) {
    bool pass = true;
    switch (f.kind) {
    case FilterKind::longpass:
      pass = wavelength_nm >= f.edge_nm;
      break;
    case FilterKind::shortpass:
      pass = wavelength_nm <= f.edge_nm;
      break;
    case FilterKind::dichroic_reflectband:
      pass = wavelength_nm < f.edge_nm || wavelength_nm > f.band_end_nm;
      break;
    }
    t *= pass ? f.transmission_pass : f.transmission_stop;
  }
  return t;
}

double axial_acceptance(double axial_offset_um, double pinhole_axial_fwhm_um) {
  if (!(pinhole_axial_fwhm_um > 0.0))
    throw ValidationError("pinhole axial FWHM must be positive", "pinhole_axial_fwhm");
  const double u = axial_offset_um / pinhole_axial_fwhm_um;
  return std::exp(-4.0 * std::numbers::ln2 * u * u);
}

double collection_efficiency(const ObjectiveSpec &objective, const FilterStack &filters,
                             double wavelength_nm, double axial_offset_um,
                             double pinhole_axial_fwhm_um) {
  const double eta = solid_angle_fraction(objective.numerical_aperture) *
                     objective.transmission(wavelength_nm) *
                     filter_transmission(filters, wavelength_nm) *
                     axial_acceptance(axial_offset_um, pinhole_axial_fwhm_um);
  return std::clamp(eta, 0.0, 1.0);
}

double spectral_collection_efficiency(const ObjectiveSpec &objective, const FilterStack &filters,
                                      const emitter::EmitterSpec &emitter, double axial_offset_um,
                                      double pinhole_axial_fwhm_um) {
  double spectral = 0.0;
  for (const auto &node : emitter::spectral_quadrature(emitter))
    spectral += node.weight * objective.transmission(node.wavelength_nm) *
                filter_transmission(filters, node.wavelength_nm);
  const double eta = solid_angle_fraction(objective.numerical_aperture) * spectral *
                     axial_acceptance(axial_offset_um, pinhole_axial_fwhm_um);
  return std::clamp(eta, 0.0, 1.0);
}

double background_rate(const ObjectiveSpec &objective, double power_mw) {
  if (!(power_mw >= 0.0))
    throw ValidationError("laser power must be non-negative", "power");
  return objective.autofluorescence_rate_per_mw * power_mw;
}

std::string to_string(FilterKind kind) {
  switch (kind) {
  case FilterKind::longpass:
    return "longpass";
  case FilterKind::shortpass:
    return "shortpass";
  case FilterKind::dichroic_reflectband:
    return "dichroic_reflectband";
  }
  return "longpass";
}

FilterKind filter_kind_from_string(const std::string &name) {
  if (name == "longpass")
    return FilterKind::longpass;
  if (name == "shortpass")
    return FilterKind::shortpass;
  if (name == "dichroic_reflectband")
    return FilterKind::dichroic_reflectband;
  throw ValidationError("unknown filter kind '" + name + "'", "filters.kind");
}

nlohmann::json to_json(const BeamProfile &b) {
  return {{"w0_um", b.w0_um},
          {"wavelength_nm", b.wavelength_nm},
          {"m_squared", b.m_squared},
          {"power_mw", b.power_mw},
          {"focus_z_um", b.focus_z_um}};
}

BeamProfile beam_from_json(const nlohmann::json &j) {
  BeamProfile b;
  b.w0_um = j.value("w0_um", b.w0_um);
  b.wavelength_nm = j.value("wavelength_nm", b.wavelength_nm);
  b.m_squared = j.value("m_squared", b.m_squared);
  b.power_mw = j.value("power_mw", b.power_mw);
  b.focus_z_um = j.value("focus_z_um", b.focus_z_um);
  validate(b);
  return b;
}

nlohmann::json to_json(const ObjectiveSpec &o) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto &[w, t] : o.transmission.knots())
    curve.push_back({w, t});
  return {{"numerical_aperture", o.numerical_aperture},
          {"transmission_curve", std::move(curve)},
          {"autofluorescence_rate_per_mw", o.autofluorescence_rate_per_mw}};
}

ObjectiveSpec objective_from_json(const nlohmann::json &j) {
  ObjectiveSpec o;
  o.numerical_aperture = j.at("numerical_aperture").get<double>();
  std::vector<std::pair<double, double>> knots;
  for (const auto &k : j.at("transmission_curve"))
    knots.emplace_back(k.at(0).get<double>(), k.at(1).get<double>());
  o.transmission = TransmissionCurve(std::move(knots));
  o.autofluorescence_rate_per_mw = j.value("autofluorescence_rate_per_mw", 0.0);
  validate(o);
  return o;
}

nlohmann::json to_json(const FilterStack &filters) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto &f : filters.elements)
    out.push_back({{"kind", to_string(f.kind)},
                   {"edge_nm", f.edge_nm},
                   {"band_end_nm", f.band_end_nm},
                   {"transmission_pass", f.transmission_pass},
                   {"transmission_stop", f.transmission_stop}});
  return out;
}

FilterStack filters_from_json(const nlohmann::json &j) {
  FilterStack stack;
  for (const auto &e : j) {
    FilterElement f;
    f.kind = filter_kind_from_string(e.at("kind").get<std::string>());
    f.edge_nm = e.at("edge_nm").get<double>();
    f.band_end_nm = e.value("band_end_nm", f.edge_nm);
    f.transmission_pass = e.at("transmission_pass").get<double>();
    f.transmission_stop = e.at("transmission_stop").get<double>();
    if (!(f.transmission_pass >= 0.0 && f.transmission_pass <= 1.0 &&
          f.transmission_stop >= 0.0 && f.transmission_stop <= 1.0))
      throw ValidationError("filter transmissions must lie in [0, 1]", "filters");
    stack.elements.push_back(f);
  }
  return stack;
}

} // namespace photonbench::optics
