#include <photonbench/analysis.hpp>
#include <photonbench/lsq.hpp>
#include <photonbench/optics.hpp>

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace photonbench;
using namespace photonbench::analysis;

namespace {

// Poisson-noised histogram drawn from the antibunching model.
correlator::CorrelationHistogram synthetic_g2(double baseline, double amplitude, double tau_ns,
                                              double center_ns, double peak_counts, Rng &rng,
                                              bool noise = true) {
  correlator::CorrelationHistogram h;
  h.spec = {};
  h.counts.resize(h.spec.bin_count);
  const Eigen::Vector4d p{baseline, amplitude, tau_ns, center_ns};
  for (int k = 0; k < h.spec.bin_count; ++k) {
    const double tau = (h.spec.bin_start(k) + 0.5 * h.spec.bin_width) / kPsPerNs;
    const double mean = peak_counts * g2_model(p, tau) / baseline;
    h.counts[k] = noise ? std::poisson_distribution<std::uint64_t>(std::max(mean, 0.0))(rng)
                        : static_cast<std::uint64_t>(std::llround(mean));
  }
  // choose totals so that g² = counts/peak_counts·baseline
  h.duration = 1'000'000'000'000;
  const double per_count = baseline / peak_counts;
  const double nanb = static_cast<double>(h.duration) / (per_count * h.spec.bin_width);
  h.n_a = static_cast<std::uint64_t>(std::sqrt(nanb));
  h.n_b = h.n_a;
  return correlator::normalize(h);
}

template <class F, class G>
void check_gradient(F model, G gradient, const Eigen::VectorXd &p, double x) {
  const Eigen::VectorXd g = gradient(p, x);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[i]));
    Eigen::VectorXd hi = p;
    Eigen::VectorXd lo = p;
    hi[i] += h;
    lo[i] -= h;
    const double numeric = (model(hi, x) - model(lo, x)) / (2 * h);
    CHECK(numeric == doctest::Approx(g[i]).epsilon(1e-5).scale(1.0));
  }
}

} // namespace

TEST_SUITE("analysis") {

TEST_CASE("Levenberg-Marquardt on the Rosenbrock problem") {
  const auto f = [](const lsq::Vector &p, lsq::Vector &r, lsq::Matrix *j) {
    r[0] = 10.0 * (p[1] - p[0] * p[0]);
    r[1] = 1.0 - p[0];
    if (j) {
      (*j)(0, 0) = -20.0 * p[0];
      (*j)(0, 1) = 10.0;
      (*j)(1, 0) = -1.0;
      (*j)(1, 1) = 0.0;
    }
  };
  lsq::Vector p0(2);
  p0 << -1.2, 1.0;
  const auto r = lsq::levenberg_marquardt(f, p0, 2);
  CHECK(r.converged);
  CHECK(r.params[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.params[1] == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t i = 1; i < r.cost_history.size(); ++i)
    CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
}

TEST_CASE("Levenberg-Marquardt reports the iteration limit") {
  const auto f = [](const lsq::Vector &p, lsq::Vector &r, lsq::Matrix *j) {
    r[0] = 10.0 * (p[1] - p[0] * p[0]);
    r[1] = 1.0 - p[0];
    if (j)
      *j << -20.0 * p[0], 10.0, -1.0, 0.0;
  };
  lsq::Vector p0(2);
  p0 << -1.2, 1.0;
  lsq::Options opt;
  opt.max_iterations = 2;
  const auto r = lsq::levenberg_marquardt(f, p0, 2, opt);
  CHECK_FALSE(r.converged);
  CHECK(r.iteration_limit);
}

TEST_CASE("analytic Jacobians match central differences") {
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd p(4);
    p << 1.0 + 0.2 * u(rng), 0.8 + 0.1 * u(rng), 12.0 + 5.0 * u(rng), 0.5 * u(rng);
    const double tau = 40.0 * u(rng);
    if (std::abs(tau - p[3]) < 1e-3)
      continue; // the cusp
    check_gradient([](const Eigen::VectorXd &q, double t) { return g2_model(q.head<4>(), t); },
                   [](const Eigen::VectorXd &q, double t) -> Eigen::VectorXd {
                     return g2_model_gradient(q.head<4>(), t);
                   },
                   p, tau);

    Eigen::VectorXd b(2);
    b << 1.66 + 0.5 * u(rng), 3.0 * u(rng);
    check_gradient(
        [](const Eigen::VectorXd &q, double z) { return beam_model(q.head<2>(), z, 532.0, 1.0); },
        [](const Eigen::VectorXd &q, double z) -> Eigen::VectorXd {
          return beam_model_gradient(q.head<2>(), z, 532.0, 1.0);
        },
        b, 10.0 * u(rng));

    Eigen::VectorXd gp(4);
    gp << 100.0 * (1.0 + 0.1 * u(rng)), 5.0 * u(rng), 1.0 + 0.2 * u(rng), 10.0 * u(rng);
    check_gradient(
        [](const Eigen::VectorXd &q, double x) { return gaussian_model(q.head<4>(), x); },
        [](const Eigen::VectorXd &q, double x) -> Eigen::VectorXd {
          return gaussian_model_gradient(q.head<4>(), x);
        },
        gp, 3.0 * u(rng));
  }
}

TEST_CASE("g2 fit recovers synthetic parameters") {
  Rng rng(11);
  const auto h = synthetic_g2(1.0, 1.0, 12.0, 0.0, 1e4, rng);
  const auto fit = fit_g2(h);
  CHECK(fit.converged);
  CHECK(fit.baseline == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.amplitude == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.tau_anti_ns == doctest::Approx(12.0).epsilon(0.05));
  CHECK(std::abs(fit.center_ns) < 0.5);
  CHECK(fit.g2_zero == doctest::Approx(fit.baseline - fit.amplitude));
  CHECK(fit.g2_zero_sigma > 0.0);
  CHECK(fit.reduced_chi2 == doctest::Approx(1.0).epsilon(0.15));
  CHECK(fit.raw_zero_bin == doctest::Approx((*h.normalized)[500]));
}

TEST_CASE("g2 fit with a shifted dip and partial contrast") {
  Rng rng(12);
  const auto h = synthetic_g2(1.0, 0.86, 10.0, 3.0, 400.0, rng);
  const auto fit = fit_g2(h);
  CHECK(fit.converged);
  CHECK(fit.center_ns == doctest::Approx(3.0).epsilon(0.2));
  CHECK(fit.g2_zero == doctest::Approx(0.14).epsilon(0.5));
  CHECK(std::abs(fit.g2_zero - 0.14) < 3.0 * fit.g2_zero_sigma + 1e-3);
  CHECK(classify_single_emitter(fit) == Verdict::single);
}

TEST_CASE("g2 fit is invariant to count rescaling") {
  Rng rng(13);
  const auto h = synthetic_g2(1.0, 0.7, 12.0, 0.0, 2000.0, rng);
  auto scaled = h;
  for (auto &c : scaled.counts)
    c *= 4;
  scaled.n_a *= 2;
  scaled.n_b *= 2;
  scaled = correlator::normalize(scaled);
  const auto a = fit_g2(h);
  const auto b = fit_g2(scaled);
  CHECK(b.g2_zero == doctest::Approx(a.g2_zero).epsilon(1e-6));
  CHECK(b.tau_anti_ns == doctest::Approx(a.tau_anti_ns).epsilon(1e-6));
  // doubling sqrt(counts) halves the relative noise
  CHECK(b.g2_zero_sigma == doctest::Approx(a.g2_zero_sigma / 2.0).epsilon(1e-4));
}

TEST_CASE("flat and degenerate histograms") {
  Rng rng(14);
  const auto flat = synthetic_g2(1.0, 0.0, 12.0, 0.0, 1e4, rng, false);
  const auto fit = fit_g2(flat);
  CHECK_FALSE(fit.converged);
  CHECK(fit.g2_zero == doctest::Approx(1.0));
  CHECK(fit.amplitude == doctest::Approx(0.0));
  CHECK(classify_single_emitter(fit) == Verdict::inconclusive);

  const auto noisy_flat = synthetic_g2(1.0, 0.0, 12.0, 0.0, 1e4, rng);
  const auto nf = fit_g2(noisy_flat);
  CHECK(nf.g2_zero == doctest::Approx(1.0).epsilon(0.05));
  CHECK(classify_single_emitter(nf) != Verdict::single);

  auto raw = flat;
  raw.normalized.reset();
  CHECK_THROWS_AS(fit_g2(raw), ValidationError);
  correlator::CorrelationHistogram tiny;
  tiny.spec = {200, 10};
  tiny.counts.assign(10, 1);
  tiny.normalized = std::vector<double>(10, 1.0);
  CHECK_THROWS_AS(fit_g2(tiny), ValidationError);
}

TEST_CASE("single-emitter verdict") {
  G2Fit f;
  f.converged = true;
  f.g2_zero = 0.14;
  f.g2_zero_sigma = 0.03;
  CHECK(classify_single_emitter(f) == Verdict::single);
  f.g2_zero = 0.42;
  CHECK(classify_single_emitter(f) == Verdict::single);
  f.g2_zero = 0.60;
  f.g2_zero_sigma = 0.02;
  CHECK(classify_single_emitter(f) == Verdict::not_single);
  f.g2_zero = 0.48;
  CHECK(classify_single_emitter(f) == Verdict::inconclusive);
  f.g2_zero = 0.14;
  f.converged = false;
  CHECK(classify_single_emitter(f) == Verdict::inconclusive);
}

TEST_CASE("beam waist fit") {
  const optics::BeamProfile beam{1.66, 532.0, 1.0, 10.0, 0.0};
  std::vector<BeamSample> samples;
  for (int i = -4; i <= 4; ++i) {
    const double z = 4.0 * i;
    samples.push_back({z, optics::beam_radius(beam, z - 1.0)});
  }
  const auto exact = fit_beam_waist(samples);
  CHECK(exact.converged);
  CHECK(std::abs(exact.w0_um - 1.66) < 1e-6);
  CHECK(std::abs(exact.z_focus_um - 1.0) < 1e-6);
  CHECK(exact.residual_rms_um < 1e-6);

  Rng rng(3);
  std::normal_distribution<double> noise(0.0, 0.10);
  int within = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto noisy = samples;
    for (auto &s : noisy)
      s.radius_um *= 1.0 + noise(rng);
    const auto f = fit_beam_waist(noisy);
    within += std::abs(f.w0_um - 1.66) <= 0.2;
    CHECK(f.w0_uncertainty_um > 0.0);
    CHECK(f.w0_uncertainty_um < 1.0);
  }
  CHECK(within >= 16);

  CHECK_THROWS_AS(fit_beam_waist(std::vector<BeamSample>{{0.0, 1.0}, {1.0, 1.2}}), FitError);
  CHECK_THROWS_AS(fit_beam_waist(std::vector<BeamSample>{{0.0, 1.0}, {0.0, 1.2}, {1.0, 1.3}}),
                  FitError);
}

TEST_CASE("Gaussian cross-section fit") {
  std::vector<double> row;
  for (int i = 0; i < 41; ++i) {
    const double x = i * 0.1;
    row.push_back(5.0 + 100.0 * std::exp(-0.5 * std::pow((x - 2.05) / 0.4, 2)));
  }
  const auto fit = fit_gaussian_cross_section(row, 0.1);
  CHECK(fit.converged);
  CHECK(fit.center_um == doctest::Approx(2.05).epsilon(1e-6));
  CHECK(fit.sigma_um == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(fit.amplitude == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(fit.offset == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(fit.radius_1e2_um == doctest::Approx(0.8).epsilon(1e-6));

  const auto flat = fit_gaussian_cross_section(std::vector<double>(20, 3.0), 0.1);
  CHECK_FALSE(flat.center_constrained);
  CHECK(flat.amplitude == doctest::Approx(0.0));

  CHECK_THROWS_AS(fit_gaussian_cross_section(std::vector<double>{1, 2, 3}, 0.1), ValidationError);
  CHECK_THROWS_AS(fit_gaussian_cross_section(std::vector<double>{1, 2, NAN, 3, 4}, 0.1),
                  ValidationError);
}

TEST_CASE("mode images through the beam-profiling pipeline") {
  // cross-sections of an intensity profile exp(-2x²/w²) at several z, then a waist fit
  const optics::BeamProfile beam{1.66, 532.0, 1.0, 10.0, 0.0};
  const double pitch = 0.25;
  std::vector<BeamSample> samples;
  for (int i = -4; i <= 4; ++i) {
    const double z = 5.0 * i;
    const double w = optics::beam_radius(beam, z);
    std::vector<double> row;
    for (int k = 0; k < 161; ++k) {
      const double x = k * pitch - 20.0;
      row.push_back(2.0 + 1000.0 * std::exp(-2.0 * x * x / (w * w)));
    }
    const auto g = fit_gaussian_cross_section(row, pitch);
    samples.push_back({z, g.radius_1e2_um});
  }
  const auto fit = fit_beam_waist(samples);
  CHECK(fit.w0_um == doctest::Approx(1.66).epsilon(0.05));
}

TEST_CASE("linear fit") {
  std::vector<Point2> pts;
  for (int i = 0; i < 10; ++i)
    pts.push_back({static_cast<double>(i), 3.0 * i + 1.0});
  const auto f = fit_linear(pts);
  CHECK(f.slope == doctest::Approx(3.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.max_abs_residual < 1e-12);
  CHECK_THROWS_AS(fit_linear(std::vector<Point2>{{1.0, 2.0}, {1.0, 3.0}}), FitError);
}

TEST_CASE("spot finding") {
  auto gaussian_image = [](std::vector<Vec2> centers, double sigma_px, double amp, double bg,
                           Rng *noise) {
    CountImage img;
    img.nx = 60;
    img.ny = 60;
    img.pitch = {0.2, 0.2};
    img.origin = {0.0, 0.0};
    img.counts.resize(60 * 60);
    for (int iy = 0; iy < 60; ++iy)
      for (int ix = 0; ix < 60; ++ix) {
        double v = bg;
        for (const auto &c : centers)
          v += amp * std::exp(-0.5 * (std::pow((ix - c.x) / sigma_px, 2) +
                                      std::pow((iy - c.y) / sigma_px, 2)));
        img.counts[iy * 60 + ix] =
            noise ? std::poisson_distribution<std::int64_t>(v)(*noise) : std::llround(v);
      }
    return img;
  };
  Rng rng(2);
  // SNR 20 relative to the Poisson noise of the background
  const auto one = gaussian_image({{30.3, 24.6}}, 2.0, 20.0 * std::sqrt(100.0), 100.0, &rng);
  const auto spots = find_spots(one, 5.0);
  REQUIRE(spots.spots.size() == 1);
  CHECK(std::abs(spots.spots[0].center.x - 30.3 * 0.2) < 0.5 * 0.2);
  CHECK(std::abs(spots.spots[0].center.y - 24.6 * 0.2) < 0.5 * 0.2);
  CHECK(spots.spots[0].ellipticity >= 1.0);
  CHECK(spots.spots[0].ellipticity < 1.2);

  const auto flat = gaussian_image({}, 2.0, 0.0, 100.0, &rng);
  CHECK(find_spots(flat, 5.0).spots.empty());

  // constant offset does not change the verdicts
  auto shifted = one;
  for (auto &c : shifted.counts)
    c += 1000;
  const auto s2 = find_spots(shifted, 5.0);
  REQUIRE(s2.spots.size() == 1);
  CHECK(s2.spots[0].center.x == doctest::Approx(spots.spots[0].center.x).epsilon(1e-6));

  // two separated spots, one elongated pair of maxima merged
  const auto two = gaussian_image({{15, 15}, {45, 40}}, 2.0, 500.0, 50.0, nullptr);
  CHECK(find_spots(two, 5.0).spots.size() == 2);

  // a spot stretched along y reports its aspect ratio
  CountImage oval;
  oval.nx = oval.ny = 40;
  oval.counts.resize(1600);
  for (int iy = 0; iy < 40; ++iy)
    for (int ix = 0; ix < 40; ++ix)
      oval.counts[iy * 40 + ix] = std::llround(
          10.0 + 1000.0 * std::exp(-0.5 * (std::pow((ix - 20.0) / 2.0, 2) +
                                           std::pow((iy - 20.0) / 2.22, 2))));
  const auto os = find_spots(oval, 5.0);
  REQUIRE(os.spots.size() == 1);
  CHECK(os.spots[0].ellipticity == doctest::Approx(1.11).epsilon(0.01));
}

TEST_CASE("fit reports serialize") {
  Rng rng(1);
  const auto fit = fit_g2(synthetic_g2(1.0, 0.9, 12.0, 0.0, 1000.0, rng));
  const auto j = to_json(fit);
  CHECK(j["schema"] == "photonbench/1");
  CHECK(j["g2_zero"].get<double>() == fit.g2_zero);
  CHECK(j["covariance"].size() == 4);
  CHECK(j.contains("raw_zero_bin"));
}

} // TEST_SUITE
