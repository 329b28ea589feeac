#include <photonbench/scan.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

namespace photonbench::scan {

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// A target on the edge of the range can quantize half a DAC step past the
// control limit; pull it back onto the nearest in-range code.
double quantize_in_range(double volts, const actuation::AxisModel &axis,
                         const actuation::DacSpec &dac) {
  double q = actuation::dac_quantize(volts, dac).volts;
  const double step = actuation::dac_step(dac);
  if (q > axis.control_max())
    q -= step;
  if (q < axis.control_min())
    q += step;
  return std::clamp(q, axis.control_min(), axis.control_max());
}

} // namespace

void validate(const ScanConfig &c) {
  if (c.nx < 2 || c.ny < 2)
    throw ValidationError("scan resolution must be at least 2x2", "resolution");
  if (!(c.extent.x > 0.0 && c.extent.y > 0.0))
    throw ValidationError("scan extent must be positive", "extent");
  if (!(c.integration_time_ms > 0.0))
    throw ValidationError("integration time must be positive", "integration_time_ms");
  if (!(c.laser_power_mw >= 0.0))
    throw ValidationError("laser power must be non-negative", "laser_power_mw");
  if (!std::isfinite(c.z_offset_um))
    throw ValidationError("z offset must be finite", "z_offset_um");
}

// ---------------------------------------------------------------- signal model

SignalModel::SignalModel(profile::InstrumentProfile profile,
                         std::vector<emitter::EmitterSpec> emitters)
    : profile_(std::move(profile)), emitters_(std::move(emitters)) {
  spectral_.reserve(emitters_.size());
  for (const auto &e : emitters_)
    spectral_.push_back(optics::spectral_collection_efficiency(
        profile_.objective, profile_.filters, e, 0.0, profile_.pinhole_axial_fwhm_um));
}

SignalModel::Terms SignalModel::terms(std::size_t i, const Vec2 &beam_center, double focus_z_um,
                                      double power_mw) const {
  const auto &e = emitters_.at(i);
  optics::BeamProfile beam = profile_.beam;
  beam.power_mw = power_mw;
  beam.focus_z_um = focus_z_um;
  const double k_exc = optics::excitation_rate_at(beam, profile_.objective, profile_.excitation,
                                                  e.position, beam_center, e);
  const double axial =
      optics::axial_acceptance(e.position.z - focus_z_um, profile_.pinhole_axial_fwhm_um);
  return {k_exc, spectral_[i] * axial};
}

double SignalModel::background_photon_rate(double power_mw) const {
  return optics::background_rate(profile_.objective, power_mw);
}

double SignalModel::expected_rate(const Vec2 &beam_center, double focus_z_um,
                                  double power_mw) const {
  double photons = background_photon_rate(power_mw);
  for (std::size_t i = 0; i < emitters_.size(); ++i) {
    const Terms t = terms(i, beam_center, focus_z_um, power_mw);
    photons += emitter::renewal_rate(t.excitation_rate, emitters_[i].decay_rate()) * t.collection;
  }
  return photons * profile_.spad.efficiency + 2.0 * profile_.spad.dark_count_rate;
}

// ---------------------------------------------------------------- session

std::string to_string(Activity a) {
  switch (a) {
  case Activity::idle:
    return "idle";
  case Activity::scanning:
    return "scanning";
  case Activity::hbt:
    return "hbt";
  }
  return "idle";
}

Session::Session(std::string id, profile::InstrumentProfile profile, emitter::SampleField sample)
    : id_(std::move(id)), sample_(std::move(sample)),
      signal_(std::move(profile), sample_.emitters) {
  actuator_.spec = signal_.profile().actuator;
}

actuation::ActuatorState Session::actuator() const {
  std::lock_guard lock(actuator_mutex_);
  return actuator_;
}

void Session::set_actuator(const actuation::ActuatorState &state) {
  std::lock_guard lock(actuator_mutex_);
  actuator_ = state;
}

ActivityGuard::ActivityGuard(Session &session, Activity activity) : session_(&session) {
  Activity expected = Activity::idle;
  if (activity == Activity::idle ||
      !session.activity_.compare_exchange_strong(expected, activity))
    throw BusyError("session " + session.id() + " is busy (" + to_string(expected) + ")");
  session.progress_.store(0.0);
}

ActivityGuard::ActivityGuard(ActivityGuard &&other) noexcept : session_(other.session_) {
  other.session_ = nullptr;
}

ActivityGuard::~ActivityGuard() {
  if (session_)
    session_->activity_.store(Activity::idle);
}

// ---------------------------------------------------------------- positioning

Vec2 command_voltages(const Vec2 &target, const Vec2 &center, const actuation::ActuatorSpec &spec) {
  const auto cx = actuation::as_calibrated(spec.x);
  const auto cy = actuation::as_calibrated(spec.y);
  double vx = 0.0;
  double vy = 0.0;
  try {
    vx = actuation::voltage_for_position(cx, target.x - center.x);
  } catch (const RangeError &e) {
    throw RangeError(std::string("x axis: ") + e.what(), "x");
  }
  try {
    vy = actuation::voltage_for_position(cy, target.y - center.y);
  } catch (const RangeError &e) {
    throw RangeError(std::string("y axis: ") + e.what(), "y");
  }
  return {quantize_in_range(vx, spec.x, spec.dac), quantize_in_range(vy, spec.y, spec.dac)};
}

Vec2 beam_position(const Vec2 &voltages, const Vec2 &center,
                   const actuation::ActuatorState &state) {
  return {center.x + actuation::deflection(state.spec.x, voltages.x) + state.drift_offset.x,
          center.y + actuation::deflection(state.spec.y, voltages.y) + state.drift_offset.y};
}

std::vector<RasterStep> plan_raster(const ScanConfig &config, const actuation::ActuatorSpec &spec) {
  validate(config);
  const Vec2 origin = config.origin();
  const Vec2 pitch = config.pixel_pitch();
  // check the extreme targets first so the error names the axis that limits
  const Vec2 far{origin.x + (config.nx - 1) * pitch.x, origin.y + (config.ny - 1) * pitch.y};
  for (const Vec2 &corner : {origin, far}) {
    try {
      command_voltages(corner, config.center, spec);
    } catch (const RangeError &e) {
      throw RangeError(std::string("scan extent exceeds the actuator range (") + e.what() + ")",
                       e.field());
    }
  }

  std::vector<RasterStep> plan;
  plan.reserve(static_cast<std::size_t>(config.nx) * config.ny);
  std::vector<double> vx(config.nx);
  for (int ix = 0; ix < config.nx; ++ix)
    vx[ix] = command_voltages({origin.x + ix * pitch.x, config.center.y}, config.center, spec).x;
  for (int iy = 0; iy < config.ny; ++iy) {
    const double y = origin.y + iy * pitch.y;
    const double vy = command_voltages({config.center.x, y}, config.center, spec).y;
    for (int ix = 0; ix < config.nx; ++ix)
      plan.push_back({ix, iy, {origin.x + ix * pitch.x, y}, {vx[ix], vy}});
  }
  return plan;
}

// ---------------------------------------------------------------- fast path

std::int64_t acquire_pixel(Session &session, const Vec2 &voltages, const Vec2 &center,
                           double dwell_ms, double power_mw, double focus_z_um, Rng &counts_rng,
                           Rng &drift_rng) {
  auto state = session.actuator();
  const Vec2 beam = beam_position(voltages, center, state);
  const double mean = session.signal().expected_rate(beam, focus_z_um, power_mw) * dwell_ms * 1e-3;
  std::poisson_distribution<std::int64_t> draw(mean);
  const std::int64_t counts = mean > 0.0 ? draw(counts_rng) : 0;
  session.set_actuator(actuation::advance_drift(state, dwell_ms * 1e-3, drift_rng));
  return counts;
}

ScanImage run_scan(ActivityGuard &guard, const ScanConfig &config, AcquisitionControl *control) {
  Session &session = guard.session();
  const auto plan = plan_raster(config, session.profile().actuator);
  const auto wall_start = std::chrono::steady_clock::now();

  ScanImage out;
  out.config = config;
  out.profile_name = session.profile().name;
  out.started_at = utc_timestamp();
  out.image.nx = config.nx;
  out.image.ny = config.ny;
  out.image.origin = config.origin();
  out.image.pitch = config.pixel_pitch();
  out.image.counts.assign(plan.size(), 0);

  Rng counts_rng(derive_seed(config.rng_seed, 1));
  Rng drift_rng(derive_seed(config.rng_seed, 2));
  const double total = static_cast<double>(plan.size());

  std::size_t done = 0;
  for (int iy = 0; iy < config.ny; ++iy) {
    for (int ix = 0; ix < config.nx; ++ix, ++done) {
      if (control && control->cancel.load()) {
        out.complete = false;
        out.rows_completed = iy;
        out.wall_duration_s = seconds_since(wall_start);
        return out;
      }
      const auto &step = plan[done];
      out.image.counts[done] =
          acquire_pixel(session, step.voltages, config.center, config.integration_time_ms,
                        config.laser_power_mw, config.z_offset_um, counts_rng, drift_rng);
      const double p = (done + 1) / total;
      session.set_progress(p);
      if (control)
        control->progress.store(p);
    }
    const auto state = session.actuator();
    out.drift_log.push_back({iy, state.elapsed_s, state.drift_offset});
    out.rows_completed = iy + 1;
    if (control && control->on_row) {
      const auto first = out.image.counts.begin() + static_cast<std::ptrdiff_t>(iy) * config.nx;
      control->on_row(iy, std::vector<std::int64_t>(first, first + config.nx));
    }
  }
  out.wall_duration_s = seconds_since(wall_start);
  return out;
}

ScanImage run_scan(Session &session, const ScanConfig &config, AcquisitionControl *control) {
  ActivityGuard guard(session, Activity::scanning);
  return run_scan(guard, config, control);
}

// ---------------------------------------------------------------- per-photon path

correlator::CorrelationHistogram run_hbt(ActivityGuard &guard, const HbtConfig &config,
                                         AcquisitionControl *control) {
  Session &session = guard.session();
  if (!(config.duration_s > 0.0))
    throw ValidationError("HBT duration must be positive", "duration_s");
  if (!(config.chunk_s > 0.0 && config.chunk_s <= kMaxHbtChunkS))
    throw ValidationError("HBT chunk must lie in (0, 1] s", "chunk_s");
  if (!(config.laser_power_mw >= 0.0))
    throw ValidationError("laser power must be non-negative", "laser_power_mw");
  correlator::validate(config.histogram);
  const Vec2 voltages = command_voltages(config.position, config.center, session.profile().actuator);

  const SignalModel &model = session.signal();
  const auto &emitters = model.emitters();
  const auto &spad = session.profile().spad;

  Rng emit_rng(derive_seed(config.rng_seed, 10));
  Rng background_rng(derive_seed(config.rng_seed, 11));
  Rng split_rng(derive_seed(config.rng_seed, 12));
  Rng det_a_rng(derive_seed(config.rng_seed, 13));
  Rng det_b_rng(derive_seed(config.rng_seed, 14));
  Rng drift_rng(derive_seed(config.rng_seed, 15));

  std::vector<emitter::RenewalEmitter> streams;
  streams.reserve(emitters.size());
  for (const auto &e : emitters)
    streams.emplace_back(0.0, e.decay_rate());

  detection::Detector det_a(spad);
  detection::Detector det_b(spad);
  correlator::Accumulator acc(config.histogram);
  const double background = model.background_photon_rate(config.laser_power_mw);

  const double total_ps = config.duration_s * kPsPerSecond;
  const double chunk_ps = config.chunk_s * kPsPerSecond;
  double begin = 0.0;
  bool complete = true;
  std::vector<double> photons;
  std::vector<double> emitted_rate_log;

  while (begin < total_ps) {
    if (control && control->cancel.load()) {
      complete = false;
      break;
    }
    const double end = std::min(begin + chunk_ps, total_ps);
    auto state = session.actuator();
    const Vec2 beam = beam_position(voltages, config.center, state);

    photons.clear();
    for (std::size_t i = 0; i < emitters.size(); ++i) {
      const auto t = model.terms(i, beam, config.z_offset_um, config.laser_power_mw);
      streams[i].set_excitation_rate(t.excitation_rate);
      streams[i].emit(begin, end, t.collection, emit_rng, photons);
    }
    if (background > 0.0) {
      std::poisson_distribution<long long> n_bg(background * (end - begin) / kPsPerSecond);
      std::uniform_real_distribution<double> when(begin, end);
      const long long n = n_bg(background_rng);
      for (long long k = 0; k < n; ++k)
        photons.push_back(when(background_rng));
    }
    std::sort(photons.begin(), photons.end());

    const auto arms = detection::split_hbt(photons, split_rng);
    const auto tags_a = det_a.process(arms.a, begin, end, det_a_rng);
    const auto tags_b = det_b.process(arms.b, begin, end, det_b_rng);
    acc.accumulate(tags_a, tags_b);

    session.set_actuator(actuation::advance_drift(state, (end - begin) / kPsPerSecond, drift_rng));
    begin = end;
    const double p = begin / total_ps;
    session.set_progress(p);
    if (control) {
      control->progress.store(p);
      if (control->on_chunk) {
        auto snap = acc.snapshot(static_cast<Picoseconds>(std::llround(begin)));
        if (snap.n_a > 0 && snap.n_b > 0 && snap.duration > 0)
          snap = correlator::normalize(snap);
        control->on_chunk(snap, begin / kPsPerSecond);
      }
    }
  }

  const auto achieved = static_cast<Picoseconds>(std::llround(begin));
  acc.accumulate(det_a.flush(achieved), det_b.flush(achieved));
  auto hist = acc.finalize(achieved);
  if (hist.n_a > 0 && hist.n_b > 0 && hist.duration > 0)
    hist = correlator::normalize(hist);
  hist.metadata = {{"source", "hbt"},
                   {"profile", session.profile().name},
                   {"position_um", {config.position.x, config.position.y}},
                   {"requested_duration_s", config.duration_s},
                   {"achieved_duration_s", begin / kPsPerSecond},
                   {"laser_power_mw", config.laser_power_mw},
                   {"z_offset_um", config.z_offset_um},
                   {"rng_seed", config.rng_seed},
                   {"complete", complete}};
  return hist;
}

correlator::CorrelationHistogram run_hbt(Session &session, const HbtConfig &config,
                                         AcquisitionControl *control) {
  ActivityGuard guard(session, Activity::hbt);
  return run_hbt(guard, config, control);
}

// ---------------------------------------------------------------- autofocus

std::optional<double> parabola_vertex(std::span<const double> z, std::span<const double> values) {
  if (z.size() != values.size() || z.size() < 3)
    throw ValidationError("parabola fit needs at least three matching samples", "z");
  const auto n = static_cast<Eigen::Index>(z.size());
  // centre the abscissa for conditioning
  double mean = 0.0;
  for (double v : z)
    mean += v;
  mean /= static_cast<double>(z.size());
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = z[static_cast<std::size_t>(i)] - mean;
    a(i, 0) = u * u;
    a(i, 1) = u;
    a(i, 2) = 1.0;
    b(i) = values[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector3d c = a.colPivHouseholderQr().solve(b);
  if (!(c(0) < 0.0) || !std::isfinite(c(0)) || !std::isfinite(c(1)))
    return std::nullopt;
  return mean - c(1) / (2.0 * c(0));
}

AutofocusResult autofocus(Session &session, const Vec2 &position, const Vec2 &center,
                          double z_range_um, int steps, double dwell_ms, double power_mw,
                          std::uint64_t seed) {
  if (steps < 3)
    throw ValidationError("autofocus needs at least 3 steps", "steps");
  if (!(z_range_um > 0.0))
    throw ValidationError("autofocus range must be positive", "z_range_um");
  if (!(dwell_ms > 0.0))
    throw ValidationError("dwell must be positive", "dwell_ms");
  ActivityGuard guard(session, Activity::scanning);
  const Vec2 voltages = command_voltages(position, center, session.profile().actuator);
  Rng counts_rng(derive_seed(seed, 20));
  Rng drift_rng(derive_seed(seed, 21));

  AutofocusResult r;
  for (int i = 0; i < steps; ++i) {
    const double z = -z_range_um + 2.0 * z_range_um * i / (steps - 1);
    r.z_samples.push_back(z);
    r.counts.push_back(
        acquire_pixel(session, voltages, center, dwell_ms, power_mw, z, counts_rng, drift_rng));
    session.set_progress((i + 1.0) / steps);
  }

  const auto peak = std::max_element(r.counts.begin(), r.counts.end()) - r.counts.begin();
  std::vector<std::int64_t> sorted = r.counts;
  std::sort(sorted.begin(), sorted.end());
  const double floor = static_cast<double>(sorted.front());
  const double top = static_cast<double>(sorted.back());
  // no focus dependence beyond shot noise: nothing bright under the beam
  if (top - floor <= 5.0 * std::sqrt(std::max(floor, 1.0)))
    throw ValidationError("no focus-dependent signal at this position; select a bright spot "
                          "before running autofocus",
                          "position");

  if (peak == 0 || peak == steps - 1) {
    r.z_um = r.z_samples[static_cast<std::size_t>(peak)];
    r.boundary = true;
    return r;
  }
  const auto lo = std::max<std::ptrdiff_t>(0, peak - 2);
  const auto hi = std::min<std::ptrdiff_t>(steps - 1, peak + 2);
  std::vector<double> zs;
  std::vector<double> logs;
  for (auto i = lo; i <= hi; ++i) {
    zs.push_back(r.z_samples[static_cast<std::size_t>(i)]);
    logs.push_back(std::log(static_cast<double>(r.counts[static_cast<std::size_t>(i)]) + 1.0));
  }
  const auto vertex = parabola_vertex(zs, logs);
  if (!vertex) {
    r.z_um = r.z_samples[static_cast<std::size_t>(peak)];
    r.parabola_fallback = true;
    return r;
  }
  r.z_um = std::clamp(*vertex, r.z_samples[static_cast<std::size_t>(peak - 1)],
                      r.z_samples[static_cast<std::size_t>(peak + 1)]);
  return r;
}

// ---------------------------------------------------------------- serialization

nlohmann::json to_json(const ScanConfig &c) {
  return {{"extent_um", {c.extent.x, c.extent.y}},
          {"center_um", {c.center.x, c.center.y}},
          {"resolution", {c.nx, c.ny}},
          {"integration_time_ms", c.integration_time_ms},
          {"laser_power_mw", c.laser_power_mw},
          {"z_offset_um", c.z_offset_um},
          {"profile", c.profile},
          {"rng_seed", c.rng_seed}};
}

ScanConfig scan_config_from_json(const nlohmann::json &j) {
  ScanConfig c;
  try {
    if (j.contains("extent_um")) {
      c.extent = {j["extent_um"].at(0).get<double>(), j["extent_um"].at(1).get<double>()};
    }
    if (j.contains("center_um"))
      c.center = {j["center_um"].at(0).get<double>(), j["center_um"].at(1).get<double>()};
    if (j.contains("resolution")) {
      if (j["resolution"].is_number()) {
        c.nx = c.ny = j["resolution"].get<int>();
      } else {
        c.nx = j["resolution"].at(0).get<int>();
        c.ny = j["resolution"].at(1).get<int>();
      }
    }
    c.integration_time_ms = j.value("integration_time_ms", c.integration_time_ms);
    c.laser_power_mw = j.value("laser_power_mw", c.laser_power_mw);
    c.z_offset_um = j.value("z_offset_um", c.z_offset_um);
    c.profile = j.value("profile", c.profile);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("malformed scan config: ") + e.what(), "config");
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const HbtConfig &c) {
  return {{"position_um", {c.position.x, c.position.y}},
          {"center_um", {c.center.x, c.center.y}},
          {"duration_s", c.duration_s},
          {"laser_power_mw", c.laser_power_mw},
          {"z_offset_um", c.z_offset_um},
          {"chunk_s", c.chunk_s},
          {"histogram", correlator::to_json(c.histogram)},
          {"rng_seed", c.rng_seed}};
}

HbtConfig hbt_config_from_json(const nlohmann::json &j) {
  HbtConfig c;
  try {
    if (j.contains("position_um"))
      c.position = {j["position_um"].at(0).get<double>(), j["position_um"].at(1).get<double>()};
    else
      c.position = {j.at("x").get<double>(), j.at("y").get<double>()};
    if (j.contains("center_um"))
      c.center = {j["center_um"].at(0).get<double>(), j["center_um"].at(1).get<double>()};
    c.duration_s = j.value("duration_s", c.duration_s);
    c.laser_power_mw = j.value("laser_power_mw", c.laser_power_mw);
    c.z_offset_um = j.value("z_offset_um", c.z_offset_um);
    c.chunk_s = j.value("chunk_s", c.chunk_s);
    if (j.contains("histogram"))
      c.histogram = correlator::histogram_spec_from_json(j["histogram"]);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("malformed HBT request: ") + e.what(), "position_um");
  }
  if (!(c.duration_s > 0.0))
    throw ValidationError("HBT duration must be positive", "duration_s");
  return c;
}

nlohmann::json metadata_json(const ScanImage &s) {
  nlohmann::json drift = nlohmann::json::array();
  for (const auto &d : s.drift_log)
    drift.push_back({{"row", d.row}, {"elapsed_s", d.elapsed_s}, {"offset_um", {d.offset.x, d.offset.y}}});
  return {{"schema", correlator::kSchema},
          {"kind", "scan_image"},
          {"config", to_json(s.config)},
          {"profile", s.profile_name},
          {"resolution", {s.image.nx, s.image.ny}},
          {"pixel_pitch_um", {s.image.pitch.x, s.image.pitch.y}},
          {"origin_um", {s.image.origin.x, s.image.origin.y}},
          {"started_at", s.started_at},
          {"wall_duration_s", s.wall_duration_s},
          {"complete", s.complete},
          {"rows_completed", s.rows_completed},
          {"drift_log", drift}};
}

void write_counts_csv(std::ostream &out, const ScanImage &s) {
  for (int iy = 0; iy < s.image.ny; ++iy) {
    for (int ix = 0; ix < s.image.nx; ++ix) {
      if (ix)
        out << ',';
      out << s.image.at(ix, iy);
    }
    out << '\n';
  }
}

ScanImage scan_from_files(const nlohmann::json &m, std::istream &csv) {
  if (m.value("kind", std::string{}) != "scan_image")
    throw ValidationError("metadata is not a scan image sidecar", "kind");
  ScanImage s;
  try {
    s.config = scan_config_from_json(m.at("config"));
    s.profile_name = m.value("profile", std::string{});
    s.image.nx = m.at("resolution").at(0).get<int>();
    s.image.ny = m.at("resolution").at(1).get<int>();
    s.image.pitch = {m.at("pixel_pitch_um").at(0).get<double>(),
                     m.at("pixel_pitch_um").at(1).get<double>()};
    s.image.origin = {m.at("origin_um").at(0).get<double>(), m.at("origin_um").at(1).get<double>()};
    s.started_at = m.value("started_at", std::string{});
    s.wall_duration_s = m.value("wall_duration_s", 0.0);
    s.complete = m.value("complete", true);
    s.rows_completed = m.value("rows_completed", s.image.ny);
    for (const auto &d : m.value("drift_log", nlohmann::json::array()))
      s.drift_log.push_back({d.at("row").get<int>(), d.at("elapsed_s").get<double>(),
                             {d.at("offset_um").at(0).get<double>(),
                              d.at("offset_um").at(1).get<double>()}});
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("malformed scan sidecar: ") + e.what(), "metadata");
  }

  std::string line;
  while (std::getline(csv, line)) {
    if (line.empty())
      continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t cells = 0;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(cell, &used);
        if (used != cell.size())
          throw std::invalid_argument(cell);
        s.image.counts.push_back(v);
      } catch (const std::exception &) {
        throw ValidationError("scan CSV holds a non-integer count '" + cell + "'", "counts");
      }
      ++cells;
    }
    if (cells != static_cast<std::size_t>(s.image.nx))
      throw ValidationError("scan CSV row width does not match the resolution", "counts");
  }
  if (s.image.counts.size() != static_cast<std::size_t>(s.image.nx) * s.image.ny)
    throw ValidationError("scan CSV row count does not match the resolution", "counts");
  return s;
}

std::filesystem::path sidecar_path(const std::filesystem::path &csv_path) {
  auto p = csv_path;
  return p.replace_extension(".json");
}

void save_scan(const std::filesystem::path &path, const ScanImage &s) {
  auto csv_path = path;
  csv_path.replace_extension(".csv");
  std::ofstream csv(csv_path);
  std::ofstream meta(sidecar_path(csv_path));
  if (!csv || !meta)
    throw std::runtime_error("cannot write scan to " + csv_path.string());
  write_counts_csv(csv, s);
  meta << metadata_json(s).dump(2) << '\n';
}

ScanImage load_scan(const std::filesystem::path &path) {
  auto csv_path = path;
  csv_path.replace_extension(".csv");
  std::ifstream csv(csv_path);
  std::ifstream meta(sidecar_path(csv_path));
  if (!csv || !meta)
    throw ValidationError("cannot open scan " + csv_path.string() + " and its JSON sidecar",
                          "path");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("scan sidecar is not valid JSON: ") + e.what(), "metadata");
  }
  return scan_from_files(m, csv);
}

} // namespace photonbench::scan
