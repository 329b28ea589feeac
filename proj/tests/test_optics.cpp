#include <photonbench/optics.hpp>
#include <photonbench/profile.hpp>

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace photonbench;
using namespace photonbench::optics;

TEST_SUITE("optics") {

TEST_CASE("beam radius") {
  BeamProfile beam{1.66, 532.0, 1.0, 10.0, 0.0};
  CHECK(beam_radius(beam, 0.0) == doctest::Approx(1.66));
  const double zr = std::numbers::pi * 1.66 * 1.66 / 0.532;
  CHECK(rayleigh_range(beam) == doctest::Approx(zr));
  CHECK(beam_radius(beam, zr) == doctest::Approx(1.66 * std::sqrt(2.0)));
  double prev = beam_radius(beam, 0.0);
  for (int i = 1; i <= 50; ++i) {
    const double z = 0.3 * i;
    CHECK(beam_radius(beam, z) == beam_radius(beam, -z));
    CHECK(beam_radius(beam, z) > prev);
    prev = beam_radius(beam, z);
  }
  // M² shortens the Rayleigh range
  beam.m_squared = 2.0;
  CHECK(beam_radius(beam, zr / 2.0) == doctest::Approx(1.66 * std::sqrt(2.0)));
}

TEST_CASE("beam validation") {
  BeamProfile beam;
  beam.w0_um = 0.0;
  CHECK_THROWS_AS(validate(beam), ValidationError);
  beam = {};
  beam.m_squared = 0.9;
  CHECK_THROWS_AS(validate(beam), ValidationError);
}

TEST_CASE("excitation profile") {
  const auto p = profile::reference_profile();
  const auto e = emitter::make_emitter(emitter::ChargeState::NVminus, {5.0, 5.0, 0.0});
  auto rate = [&](Vec2 c, double focus = 0.0) {
    auto beam = p.beam;
    beam.focus_z_um = focus;
    return excitation_rate_at(beam, p.objective, p.excitation, e.position, c, e);
  };
  const double peak = rate({5.0, 5.0});
  CHECK(peak > 0.0);
  CHECK(rate({5.0 + p.beam.w0_um, 5.0}) == doctest::Approx(peak * std::exp(-2.0)));
  CHECK(rate({5.1, 5.0}) < peak);
  CHECK(rate({5.0, 5.0}, 0.5) < peak);
  const double w = beam_radius(p.beam, 0.5);
  CHECK(rate({5.0 + w, 5.0}, 0.5) == doctest::Approx(rate({5.0, 5.0}, 0.5) * std::exp(-2.0)));

  // the on-focus rate at the calibration point reproduces the emitter's nominal brightness
  const double emitted = emitter::renewal_rate(peak, e.decay_rate());
  CHECK(emitted == doctest::Approx(e.saturation_rate));

  // the lowcost pump optic transmits less, so the same power excites less
  const auto lc = profile::lowcost_profile();
  const double lc_rate = excitation_rate_at(lc.beam, lc.objective, lc.excitation, e.position,
                                            {5.0, 5.0}, e);
  CHECK(lc_rate < peak);
}

TEST_CASE("excitation profile central differences are consistent with the Gaussian") {
  // ∂/∂x of k·exp(-2r²/w²) = -4x/w² · k
  const auto p = profile::reference_profile();
  const auto e = emitter::make_emitter(emitter::ChargeState::NVminus, {0.0, 0.0, 0.0});
  const double x = 0.2;
  const double h = 1e-6;
  auto rate = [&](double cx) {
    return excitation_rate_at(p.beam, p.objective, p.excitation, e.position, {cx, 0.0}, e);
  };
  const double numeric = (rate(x + h) - rate(x - h)) / (2 * h);
  const double w = p.beam.w0_um;
  const double analytic = -4.0 * x / (w * w) * rate(x);
  CHECK(numeric == doctest::Approx(analytic).epsilon(1e-6));
}

TEST_CASE("collection efficiency") {
  CHECK(solid_angle_fraction(0.95) == doctest::Approx(0.34387).epsilon(1e-4));
  const auto p = profile::reference_profile();
  // pump light through the stack is blocked by the stop bands
  CHECK(filter_transmission(p.filters, 532.0) <= 1e-8 * 0.95 * 0.95);
  const double at700 = collection_efficiency(p.objective, p.filters, 700.0, 0.0, 1.5);
  CHECK(at700 == doctest::Approx(solid_angle_fraction(0.95) * p.objective.transmission(700.0) *
                                 std::pow(0.95, 4)));
  CHECK(axial_acceptance(0.75, 1.5) == doctest::Approx(0.5));
  CHECK_THROWS_AS(axial_acceptance(0.0, 0.0), ValidationError);

  photonbench::Rng rng(3);
  std::uniform_real_distribution<double> wl(300.0, 1000.0);
  std::uniform_real_distribution<double> dz(-20.0, 20.0);
  for (int i = 0; i < 2000; ++i) {
    const double c = collection_efficiency(p.objective, p.filters, wl(rng), dz(rng), 1.5);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("lower NA never collects more") {
  const auto ref = profile::reference_profile();
  auto narrow = ref.objective;
  narrow.numerical_aperture = 0.6;
  for (double wl = 560.0; wl < 760.0; wl += 10.0)
    CHECK(collection_efficiency(narrow, ref.filters, wl, 0.0, 1.5) <=
          collection_efficiency(ref.objective, ref.filters, wl, 0.0, 1.5));
}

TEST_CASE("transmission curve interpolation") {
  TransmissionCurve t({{500.0, 0.5}, {600.0, 0.9}});
  CHECK(t(400.0) == 0.5);
  CHECK(t(550.0) == doctest::Approx(0.7));
  CHECK(t(700.0) == 0.9);
  CHECK_THROWS_AS(TransmissionCurve({{500.0, 1.5}}), ValidationError);
}

TEST_CASE("background") {
  const auto ref = profile::reference_profile();
  CHECK(background_rate(ref.objective, 0.0) == 0.0);
  CHECK(background_rate(ref.objective, 10.0) == doctest::Approx(500.0));
  CHECK_THROWS_AS(background_rate(ref.objective, -1.0), ValidationError);

  const auto lc = profile::lowcost_profile();
  const auto e = emitter::make_emitter(emitter::ChargeState::NVminus);
  const double s = profile::detected_emitter_rate(lc, e, {0.0, 0.0});
  const double b = profile::detected_background_rate(lc);
  CHECK(s / (s + b) == doctest::Approx(0.762).epsilon(1e-9));
  CHECK(profile::detected_background_rate(lc) > profile::detected_background_rate(ref));
}

TEST_CASE("optics JSON round trip") {
  const auto p = profile::lowcost_profile();
  const auto j = to_json(p.objective);
  CHECK(to_json(objective_from_json(j)) == j);
  CHECK(to_json(filters_from_json(to_json(p.filters))) == to_json(p.filters));
  CHECK(to_json(beam_from_json(to_json(p.beam))) == to_json(p.beam));
}

TEST_CASE("profile presets and config files") {
  const auto ref = profile::load_profile("reference");
  CHECK(ref.objective.numerical_aperture == 0.95);
  const auto fast = profile::load_profile("lowcost+demo-fast");
  CHECK(fast.excitation.brightness_scale == 20.0);
  CHECK(fast.name == "lowcost+demo-fast");
  CHECK_THROWS_AS(profile::load_profile("nonexistent-profile"), ValidationError);
  const auto j = profile::to_json(fast);
  CHECK(profile::to_json(profile::profile_from_json(j)) == j);
  // dark counts are not scaled, so the demo-fast signal fraction only rises
  const auto e = emitter::make_emitter(emitter::ChargeState::NVminus);
  const double s = profile::detected_emitter_rate(fast, e, {0.0, 0.0});
  const double b = profile::detected_background_rate(fast);
  CHECK(s / (s + b) > 0.762);
  CHECK(s / (s + b) < 1.0);
}

} // TEST_SUITE
