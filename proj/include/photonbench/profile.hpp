#pragma once

#include <photonbench/actuation.hpp>
#include <photonbench/detection.hpp>
#include <photonbench/emitter.hpp>
#include <photonbench/optics.hpp>

#include <filesystem>
#include <json.hpp>
#include <string>

namespace photonbench::profile {

/// Galilean beam expander; recorded for documentation, no role in the Gaussian model.
struct Telescope {
  double magnification = 20.0 / 3.0;
  double input_diameter_mm = 0.6;
  double output_diameter_mm = 4.0;
};

/// Everything that distinguishes one setup: optics, positioning, detectors, background.
struct InstrumentProfile {
  std::string name;
  optics::BeamProfile beam;
  optics::ObjectiveSpec objective;
  optics::FilterStack filters;
  double pinhole_axial_fwhm_um = 1.5;
  optics::ExcitationCalibration excitation;
  actuation::ActuatorSpec actuator;
  detection::SpadSpec spad; ///< both HBT detectors
  Telescope telescope;
};

inline constexpr double kDemoFastBrightness = 20.0;
inline constexpr double kLowcostSignalFraction = 0.762;

/// High-NA objective on an open-loop piezo stage.
InstrumentProfile reference_profile();
/// Blu-ray pickup lens and voice-coil scanners; autofluorescence set for a signal
/// fraction of 0.762 on a default NV⁻ at 10 mW.
InstrumentProfile lowcost_profile();
/// Non-physical: multiplies emitter brightness and autofluorescence by 20 so that
/// long acquisitions converge in seconds. Signal fraction is preserved up to dark counts.
InstrumentProfile demo_fast(InstrumentProfile profile);

/// "reference", "lowcost" (optionally suffixed "+demo-fast"), or a path to a JSON config.
InstrumentProfile load_profile(const std::string &name_or_path);

void validate(const InstrumentProfile &profile);

/// Expected detected count rate (both detectors) from one emitter with the beam at
/// `beam_center`, excluding dead-time losses.
double detected_emitter_rate(const InstrumentProfile &profile, const emitter::EmitterSpec &emitter,
                             const Vec2 &beam_center);
/// Autofluorescence plus dark counts, both detectors.
double detected_background_rate(const InstrumentProfile &profile);

/// Autofluorescence per mW (photons/s/mW at the detectors) that makes
/// S/(S+B) = rho for `emitter` on focus at the profile's power. Throws when dark
/// counts alone already exceed the allowed background.
double autofluorescence_for_signal_fraction(const InstrumentProfile &profile,
                                            const emitter::EmitterSpec &emitter, double rho);

inline constexpr const char *kProfileSchema = "photonbench.profile/1";

nlohmann::json to_json(const InstrumentProfile &profile);
InstrumentProfile profile_from_json(const nlohmann::json &j);

} // namespace photonbench::profile
