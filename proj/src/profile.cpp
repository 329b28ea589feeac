#include <photonbench/profile.hpp>

#include <fstream>

namespace photonbench::profile {

namespace {

optics::FilterStack detection_filters() {
  using optics::FilterKind;
  optics::FilterStack stack;
  // dichroic reflects the pump band, two 550 nm long-pass, one 750 nm short-pass
  stack.elements.push_back({FilterKind::dichroic_reflectband, 350.0, 550.0, 0.95, 0.95e-4});
  stack.elements.push_back({FilterKind::longpass, 550.0, 550.0, 0.95, 0.95e-4});
  stack.elements.push_back({FilterKind::longpass, 550.0, 550.0, 0.95, 0.95e-4});
  stack.elements.push_back({FilterKind::shortpass, 750.0, 750.0, 0.95, 0.95e-4});
  return stack;
}

} // namespace

InstrumentProfile reference_profile() {
  InstrumentProfile p;
  p.name = "reference";
  p.beam = {0.35, 532.0, 1.05, 10.0, 0.0};
  p.objective.numerical_aperture = 0.95;
  p.objective.transmission =
      optics::TransmissionCurve({{400.0, 0.80}, {532.0, 0.90}, {700.0, 0.90}, {900.0, 0.85}});
  p.objective.autofluorescence_rate_per_mw = 50.0;
  p.filters = detection_filters();
  p.pinhole_axial_fwhm_um = 1.5;

  actuation::AxisModel piezo;
  piezo.kind = actuation::AxisKind::piezo;
  piezo.virtual_ground = 5.0;
  piezo.gain = 10.0;
  piezo.calibrated_gain = 10.0;
  piezo.cubic_nonlinearity = 0.0;
  piezo.max_coil_voltage = 5.0;
  piezo.max_coil_current = 0.0;
  p.actuator.dac = {16, 0.0, 10.0};
  p.actuator.x = piezo;
  p.actuator.y = piezo;
  p.actuator.drift_rate_rms = 0.5;
  return p;
}

InstrumentProfile lowcost_profile() {
  InstrumentProfile p;
  p.name = "lowcost";
  p.beam = {1.66, 532.0, 1.05, 10.0, 0.0};
  p.objective.numerical_aperture = 0.6;
  p.objective.transmission = optics::TransmissionCurve({{400.0, 0.55},
                                                        {500.0, 0.62},
                                                        {532.0, 0.70},
                                                        {580.0, 0.95},
                                                        {600.0, 0.97},
                                                        {850.0, 0.97},
                                                        {900.0, 0.95}});
  p.filters = detection_filters();
  p.pinhole_axial_fwhm_um = 4.0;

  actuation::AxisModel coil; // defaults are the voice-coil axis
  p.actuator.dac = {16, 0.0, 10.0};
  p.actuator.x = coil;
  p.actuator.y = coil;
  p.actuator.y.gain = 13.5;
  p.actuator.drift_rate_rms = 0.1;

  p.objective.autofluorescence_rate_per_mw = autofluorescence_for_signal_fraction(
      p, emitter::make_emitter(emitter::ChargeState::NVminus), kLowcostSignalFraction);
  return p;
}

InstrumentProfile demo_fast(InstrumentProfile profile) {
  profile.name += "+demo-fast";
  profile.excitation.brightness_scale *= kDemoFastBrightness;
  profile.objective.autofluorescence_rate_per_mw *= kDemoFastBrightness;
  return profile;
}

InstrumentProfile load_profile(const std::string &name_or_path) {
  const std::string suffix = "+demo-fast";
  const bool fast = name_or_path.size() > suffix.size() &&
                    name_or_path.compare(name_or_path.size() - suffix.size(), suffix.size(),
                                         suffix) == 0;
  const std::string base = fast ? name_or_path.substr(0, name_or_path.size() - suffix.size())
                                : name_or_path;
  InstrumentProfile p;
  if (base == "reference") {
    p = reference_profile();
  } else if (base == "lowcost") {
    p = lowcost_profile();
  } else {
    std::ifstream in(base);
    if (!in)
      throw ValidationError("unknown profile '" + base +
                                "' (expected reference, lowcost or a config path)",
                            "profile");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
      throw ValidationError("profile config " + base + " is not valid JSON: " + e.what(),
                            "profile");
    }
    p = profile_from_json(j);
  }
  return fast ? demo_fast(std::move(p)) : p;
}

void validate(const InstrumentProfile &p) {
  optics::validate(p.beam);
  optics::validate(p.objective);
  detection::validate(p.spad);
  actuation::validate(p.actuator.dac);
  actuation::validate(p.actuator.x);
  actuation::validate(p.actuator.y);
  if (!(p.pinhole_axial_fwhm_um > 0.0))
    throw ValidationError("pinhole axial FWHM must be positive", "pinhole_axial_fwhm_um");
  if (!(p.excitation.reference_power_mw > 0.0 && p.excitation.reference_pump_transmission > 0.0 &&
        p.excitation.brightness_scale > 0.0))
    throw ValidationError("excitation calibration values must be positive", "excitation");
}

double detected_emitter_rate(const InstrumentProfile &p, const emitter::EmitterSpec &e,
                             const Vec2 &beam_center) {
  const double k_exc =
      optics::excitation_rate_at(p.beam, p.objective, p.excitation, e.position, beam_center, e);
  const double emitted = emitter::renewal_rate(k_exc, e.decay_rate());
  const double eta = optics::spectral_collection_efficiency(
      p.objective, p.filters, e, e.position.z - p.beam.focus_z_um, p.pinhole_axial_fwhm_um);
  return emitted * eta * p.spad.efficiency;
}

double detected_background_rate(const InstrumentProfile &p) {
  return optics::background_rate(p.objective, p.beam.power_mw) * p.spad.efficiency +
         2.0 * p.spad.dark_count_rate;
}

double autofluorescence_for_signal_fraction(const InstrumentProfile &p,
                                            const emitter::EmitterSpec &e, double rho) {
  if (!(rho > 0.0 && rho <= 1.0))
    throw ValidationError("signal fraction must lie in (0, 1]", "rho");
  const double signal = detected_emitter_rate(p, e, {e.position.x, e.position.y});
  const double allowed = signal * (1.0 / rho - 1.0);
  const double darks = 2.0 * p.spad.dark_count_rate;
  if (allowed < darks)
    throw ValidationError("dark counts alone exceed the background for this signal fraction",
                          "rho");
  return (allowed - darks) / (p.beam.power_mw * p.spad.efficiency);
}

nlohmann::json to_json(const InstrumentProfile &p) {
  return {{"schema", kProfileSchema},
          {"name", p.name},
          {"beam", optics::to_json(p.beam)},
          {"objective", optics::to_json(p.objective)},
          {"filters", optics::to_json(p.filters)},
          {"pinhole_axial_fwhm_um", p.pinhole_axial_fwhm_um},
          {"excitation",
           {{"reference_power_mw", p.excitation.reference_power_mw},
            {"reference_pump_transmission", p.excitation.reference_pump_transmission},
            {"brightness_scale", p.excitation.brightness_scale}}},
          {"actuator", actuation::to_json(p.actuator)},
          {"spad", detection::to_json(p.spad)},
          {"telescope",
           {{"magnification", p.telescope.magnification},
            {"input_diameter_mm", p.telescope.input_diameter_mm},
            {"output_diameter_mm", p.telescope.output_diameter_mm}}}};
}

InstrumentProfile profile_from_json(const nlohmann::json &j) {
  if (j.value("schema", std::string{}) != kProfileSchema)
    throw ValidationError(std::string("profile config must declare schema ") + kProfileSchema,
                          "schema");
  try {
    InstrumentProfile p;
    p.name = j.value("name", std::string("custom"));
    p.beam = optics::beam_from_json(j.at("beam"));
    p.objective = optics::objective_from_json(j.at("objective"));
    p.filters = optics::filters_from_json(j.at("filters"));
    p.pinhole_axial_fwhm_um = j.value("pinhole_axial_fwhm_um", p.pinhole_axial_fwhm_um);
    if (j.contains("excitation")) {
      const auto &x = j["excitation"];
      p.excitation.reference_power_mw =
          x.value("reference_power_mw", p.excitation.reference_power_mw);
      p.excitation.reference_pump_transmission =
          x.value("reference_pump_transmission", p.excitation.reference_pump_transmission);
      p.excitation.brightness_scale = x.value("brightness_scale", p.excitation.brightness_scale);
    }
    p.actuator = actuation::actuator_from_json(j.at("actuator"));
    p.spad = detection::spad_from_json(j.value("spad", nlohmann::json::object()));
    if (j.contains("telescope")) {
      const auto &t = j["telescope"];
      p.telescope.magnification = t.value("magnification", p.telescope.magnification);
      p.telescope.input_diameter_mm = t.value("input_diameter_mm", p.telescope.input_diameter_mm);
      p.telescope.output_diameter_mm =
          t.value("output_diameter_mm", p.telescope.output_diameter_mm);
    }
    validate(p);
    return p;
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("malformed profile config: ") + e.what(), "profile");
  }
}

} // namespace photonbench::profile
