#include <photonbench/actuation.hpp>
#include <photonbench/analysis.hpp>
#include <photonbench/profile.hpp>

#include <doctest.h>

#include <cmath>

using namespace photonbench;
using namespace photonbench::actuation;

TEST_SUITE("actuation") {

TEST_CASE("DAC quantization") {
  const DacSpec dac;
  CHECK(dac_step(dac) == doctest::Approx(10.0 / 65535.0));
  CHECK(dac_step(dac) == doctest::Approx(152.6e-6).epsilon(1e-3));
  CHECK(dac_quantize(0.0, dac).volts == 0.0);
  CHECK(dac_quantize(10.0, dac).volts == 10.0);
  Rng rng(2);
  std::uniform_real_distribution<double> v(0.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = v(rng);
    const auto q = dac_quantize(x, dac);
    CHECK_FALSE(q.clamped);
    CHECK(std::abs(q.volts - x) <= dac_step(dac) / 2 + 1e-12);
    CHECK(dac_quantize(q.volts, dac).volts == q.volts);
  }
  const auto hi = dac_quantize(12.0, dac);
  CHECK(hi.clamped);
  CHECK(hi.volts == 10.0);
  CHECK(dac_quantize(-1.0, dac).clamped);
  CHECK_THROWS_AS(validate(DacSpec{4, 0.0, 10.0}), ValidationError);
  CHECK_THROWS_AS(validate(DacSpec{16, 5.0, 5.0}), ValidationError);
}

TEST_CASE("voice-coil deflection") {
  const AxisModel axis;
  CHECK(deflection(axis, 2.0) == 0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double d = i / 1000.0;
    CHECK(deflection(axis, 2.0 + d) == doctest::Approx(-deflection(axis, 2.0 - d)).epsilon(1e-12));
  }
  CHECK(deflection(axis, 3.0) == doctest::Approx(15.0 * 1.02));
  CHECK_THROWS_AS(deflection(axis, 3.01), RangeError);
  CHECK_THROWS_AS(deflection(axis, 0.99), RangeError);
  CHECK(std::abs(axis.coil_current(3.0)) == doctest::Approx(200.0));
}

TEST_CASE("deflection is strictly monotone for small nonlinearity") {
  Rng rng(4);
  std::uniform_real_distribution<double> nl(-0.33, 0.33);
  std::uniform_real_distribution<double> gain(1.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    AxisModel axis;
    axis.cubic_nonlinearity = nl(rng);
    axis.gain = gain(rng);
    double prev = deflection(axis, 1.0);
    for (int i = 1; i <= 400; ++i) {
      const double d = deflection(axis, 1.0 + i * 2.0 / 400);
      REQUIRE(d > prev);
      prev = d;
    }
  }
}

TEST_CASE("linear fit residual of the default axis") {
  const AxisModel axis;
  std::vector<analysis::Point2> pts;
  for (int i = 0; i <= 200; ++i) {
    const double v = 1.0 + i * 0.01;
    pts.push_back({v, deflection(axis, v)});
  }
  const auto fit = analysis::fit_linear(pts);
  const double full_scale = deflection(axis, 3.0) - deflection(axis, 1.0);
  CHECK(fit.max_abs_residual <= 0.02 * full_scale);
  CHECK(fit.max_abs_residual > 0.0); // residuals are visible, as in the measured curve
}

TEST_CASE("inverse mapping") {
  AxisModel axis;
  CHECK(voltage_for_position(axis, 0.0) == doctest::Approx(2.0).epsilon(1e-12));
  axis.cubic_nonlinearity = 0.0;
  CHECK(voltage_for_position(axis, 7.5) == doctest::Approx(2.5).epsilon(1e-12));
  const AxisModel nl;
  const DacSpec dac;
  for (double target = -15.0; target <= 15.0; target += 0.37) {
    const double v = dac_quantize(voltage_for_position(nl, target), dac).volts;
    if (v < nl.control_min() || v > nl.control_max())
      continue;
    CHECK(std::abs(deflection(nl, v) - target) <= dac_step(dac) * nl.gain * 1.1);
  }
  CHECK_THROWS_AS(voltage_for_position(nl, 16.0), RangeError);
  CHECK_THROWS_AS(voltage_for_position(nl, -16.0), RangeError);
}

TEST_CASE("planned 20 µm span on the voice coil") {
  const AxisModel axis;
  const double lo = voltage_for_position(as_calibrated(axis), -10.0);
  const double hi = voltage_for_position(as_calibrated(axis), 10.0);
  // 20/15 V nominally; the cubic term shortens it slightly
  CHECK(hi - lo == doctest::Approx(20.0 / 15.0).epsilon(0.02));
  CHECK((hi + lo) / 2 == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(lo > 1.0);
  CHECK(hi < 3.0);
}

TEST_CASE("drift") {
  ActuatorState s;
  s.spec.drift_rate_rms = 0.5;
  Rng rng(1);
  const auto same = advance_drift(s, 0.0, rng);
  CHECK(same.drift_offset == s.drift_offset);
  CHECK(same.elapsed_s == 0.0);

  // variance grows linearly with dt at slope drift_rate²/hour
  const int trials = 4000;
  for (double dt : {600.0, 1800.0, 3600.0}) {
    double sum2 = 0.0;
    for (int t = 0; t < trials; ++t) {
      auto st = s;
      for (int k = 0; k < 10; ++k)
        st = advance_drift(st, dt / 10, rng);
      sum2 += st.drift_offset.x * st.drift_offset.x;
      CHECK(st.elapsed_s == doctest::Approx(dt));
    }
    const double slope = sum2 / trials / (dt / 3600.0);
    CHECK(slope == doctest::Approx(0.25).epsilon(0.10));
  }
}

TEST_CASE("presets: the voice coil drifts less than the piezo") {
  const auto ref = profile::reference_profile();
  const auto lc = profile::lowcost_profile();
  CHECK(lc.actuator.drift_rate_rms < ref.actuator.drift_rate_rms);
  CHECK(lc.actuator.y.gain / lc.actuator.x.gain == doctest::Approx(0.9));
  CHECK(ref.actuator.x.gain == ref.actuator.y.gain);
}

TEST_CASE("actuator JSON round trip") {
  const auto spec = profile::lowcost_profile().actuator;
  const auto j = to_json(spec);
  CHECK(to_json(actuator_from_json(j)) == j);
  CHECK(axis_kind_from_string("piezo") == AxisKind::piezo);
}

} // TEST_SUITE
