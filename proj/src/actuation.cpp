#include <photonbench/actuation.hpp>

#include <algorithm>
#include <cmath>

namespace photonbench::actuation {

void validate(const DacSpec &dac) {
  if (dac.bits < 8 || dac.bits > 24)
    throw ValidationError("DAC resolution must be 8..24 bits", "dac.bits");
  if (!(dac.v_max > dac.v_min))
    throw ValidationError("DAC v_max must exceed v_min", "dac.v_max");
}

double dac_step(const DacSpec &dac) {
  return (dac.v_max - dac.v_min) / static_cast<double>((std::int64_t{1} << dac.bits) - 1);
}

QuantizedVoltage dac_quantize(double volts, const DacSpec &dac) {
  validate(dac);
  QuantizedVoltage q;
  if (volts < dac.v_min || volts > dac.v_max) {
    q.clamped = true;
    volts = std::clamp(volts, dac.v_min, dac.v_max);
  }
  const double step = dac_step(dac);
  const double code = std::nearbyint((volts - dac.v_min) / step);
  q.volts = dac.v_min + code * step;
  return q;
}

void validate(const AxisModel &axis) {
  if (!(axis.max_coil_voltage > 0.0))
    throw ValidationError("max coil voltage must be positive", "max_coil_voltage");
  if (!(std::abs(axis.cubic_nonlinearity) < 1.0 / 3.0))
    throw ValidationError("|cubic_nonlinearity| must stay below 1/3 for a monotone axis",
                          "cubic_nonlinearity");
  if (!(axis.gain > 0.0) || !(axis.calibrated_gain > 0.0))
    throw ValidationError("axis gain must be positive", "gain");
}

double deflection(const AxisModel &axis, double control_v) {
  if (control_v < axis.control_min() || control_v > axis.control_max())
    throw RangeError("control voltage " + std::to_string(control_v) + " V outside [" +
                         std::to_string(axis.control_min()) + ", " +
                         std::to_string(axis.control_max()) + "] V",
                     "control_v");
  const double coil_v = control_v - axis.virtual_ground;
  const double u = coil_v / axis.max_coil_voltage;
  return axis.gain * coil_v * (1.0 + axis.cubic_nonlinearity * u * u);
}

double voltage_for_position(const AxisModel &axis, double target_um) {
  validate(axis);
  if (target_um == 0.0)
    return axis.virtual_ground;
  double lo = axis.control_min();
  double hi = axis.control_max();
  if (target_um < deflection(axis, lo) || target_um > deflection(axis, hi))
    throw RangeError("target " + std::to_string(target_um) + " µm unreachable (range " +
                         std::to_string(deflection(axis, lo)) + " .. " +
                         std::to_string(deflection(axis, hi)) + " µm)",
                     "target");
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (deflection(axis, mid) < target_um)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

AxisModel as_calibrated(const AxisModel &axis) {
  AxisModel assumed = axis;
  assumed.gain = axis.calibrated_gain;
  return assumed;
}

ActuatorState advance_drift(const ActuatorState &state, double dt_s, Rng &rng) {
  if (!(dt_s >= 0.0))
    throw ValidationError("drift step must be non-negative", "dt");
  ActuatorState next = state;
  if (dt_s == 0.0)
    return next;
  next.elapsed_s += dt_s;
  if (state.spec.drift_rate_rms > 0.0) {
    std::normal_distribution<double> step(0.0,
                                          state.spec.drift_rate_rms * std::sqrt(dt_s / 3600.0));
    next.drift_offset.x += step(rng);
    next.drift_offset.y += step(rng);
  }
  return next;
}

std::string to_string(AxisKind kind) { return kind == AxisKind::piezo ? "piezo" : "voice_coil"; }

AxisKind axis_kind_from_string(const std::string &name) {
  if (name == "piezo")
    return AxisKind::piezo;
  if (name == "voice_coil")
    return AxisKind::voice_coil;
  throw ValidationError("unknown axis kind '" + name + "'", "axis.kind");
}

nlohmann::json to_json(const DacSpec &d) {
  return {{"bits", d.bits}, {"v_min", d.v_min}, {"v_max", d.v_max}};
}

DacSpec dac_from_json(const nlohmann::json &j) {
  DacSpec d;
  d.bits = j.value("bits", d.bits);
  d.v_min = j.value("v_min", d.v_min);
  d.v_max = j.value("v_max", d.v_max);
  validate(d);
  return d;
}

nlohmann::json to_json(const AxisModel &a) {
  return {{"kind", to_string(a.kind)},
          {"virtual_ground", a.virtual_ground},
          {"gain", a.gain},
          {"calibrated_gain", a.calibrated_gain},
          {"cubic_nonlinearity", a.cubic_nonlinearity},
          {"max_coil_voltage", a.max_coil_voltage},
          {"max_coil_current", a.max_coil_current}};
}

AxisModel axis_from_json(const nlohmann::json &j) {
  AxisModel a;
  a.kind = axis_kind_from_string(j.value("kind", std::string("voice_coil")));
  a.virtual_ground = j.value("virtual_ground", a.virtual_ground);
  a.gain = j.value("gain", a.gain);
  a.calibrated_gain = j.value("calibrated_gain", a.gain);
  a.cubic_nonlinearity = j.value("cubic_nonlinearity", a.cubic_nonlinearity);
  a.max_coil_voltage = j.value("max_coil_voltage", a.max_coil_voltage);
  a.max_coil_current = j.value("max_coil_current", a.max_coil_current);
  validate(a);
  return a;
}

nlohmann::json to_json(const ActuatorSpec &s) {
  return {{"dac", to_json(s.dac)},
          {"x", to_json(s.x)},
          {"y", to_json(s.y)},
          {"drift_rate_rms", s.drift_rate_rms}};
}

ActuatorSpec actuator_from_json(const nlohmann::json &j) {
  ActuatorSpec s;
  s.dac = dac_from_json(j.at("dac"));
  s.x = axis_from_json(j.at("x"));
  s.y = axis_from_json(j.at("y"));
  s.drift_rate_rms = j.value("drift_rate_rms", s.drift_rate_rms);
  if (!(s.drift_rate_rms >= 0.0))
    throw ValidationError("drift rate must be non-negative", "drift_rate_rms");
  return s;
}

} // namespace photonbench::actuation
