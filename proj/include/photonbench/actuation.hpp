#pragma once

#include <photonbench/types.hpp>

#include <json.hpp>
#include <string>

namespace photonbench::actuation {

struct DacSpec {
  int bits = 16;
  double v_min = 0.0;
  double v_max = 10.0;
};

struct QuantizedVoltage {
  double volts = 0.0;
  bool clamped = false; ///< input was outside [v_min, v_max]
};

void validate(const DacSpec &dac);
double dac_step(const DacSpec &dac);

/// Nearest of the 2^bits uniformly spaced codes; out-of-range inputs are clamped and flagged.
QuantizedVoltage dac_quantize(double volts, const DacSpec &dac);

enum class AxisKind { voice_coil, piezo };

/// Voltage-to-displacement model of one positioning axis. For the voice coil the
/// control voltage is referenced to a virtual ground; the piezo uses the same form
/// centred on its driver mid-range.
struct AxisModel {
  AxisKind kind = AxisKind::voice_coil;
  double virtual_ground = 2.0;     ///< V
  double gain = 15.0;              ///< µm per volt of coil voltage (true device)
  double calibrated_gain = 15.0;   ///< µm/V assumed by the control software
  double cubic_nonlinearity = 0.02;
  double max_coil_voltage = 1.0;   ///< V
  double max_coil_current = 200.0; ///< mA

  double control_min() const { return virtual_ground - max_coil_voltage; }
  double control_max() const { return virtual_ground + max_coil_voltage; }
  double coil_current(double control_v) const {
    return (control_v - virtual_ground) / max_coil_voltage * max_coil_current;
  }
};

void validate(const AxisModel &axis);

/// Displacement (µm) for a control voltage. Throws RangeError outside the control range.
double deflection(const AxisModel &axis, double control_v);

/// Inverse of `deflection` by bisection on the monotone model. Throws RangeError
/// for unreachable targets.
double voltage_for_position(const AxisModel &axis, double target_um);

/// The axis as the control software believes it to be (calibrated gain).
AxisModel as_calibrated(const AxisModel &axis);

struct ActuatorSpec {
  DacSpec dac;
  AxisModel x;
  AxisModel y;
  double drift_rate_rms = 0.1; ///< µm/√hour per axis
};

struct ActuatorState {
  ActuatorSpec spec;
  Vec2 drift_offset;
  double elapsed_s = 0.0;
};

/// Gaussian random walk with per-axis σ = drift_rate_rms·sqrt(dt / 1 h).
ActuatorState advance_drift(const ActuatorState &state, double dt_s, Rng &rng);

std::string to_string(AxisKind kind);
AxisKind axis_kind_from_string(const std::string &name);

nlohmann::json to_json(const DacSpec &dac);
DacSpec dac_from_json(const nlohmann::json &j);
nlohmann::json to_json(const AxisModel &axis);
AxisModel axis_from_json(const nlohmann::json &j);
nlohmann::json to_json(const ActuatorSpec &spec);
ActuatorSpec actuator_from_json(const nlohmann::json &j);

} // namespace photonbench::actuation
