#pragma once

#include <photonbench/actuation.hpp>
#include <photonbench/analysis.hpp>
#include <photonbench/correlator.hpp>
#include <photonbench/emitter.hpp>
#include <photonbench/profile.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace photonbench::scan {

struct ScanConfig {
  Vec2 extent{20.0, 20.0};   ///< µm
  Vec2 center{10.0, 10.0};   ///< µm, sample coordinate at zero deflection
  int nx = 100;
  int ny = 100;
  double integration_time_ms = 40.0;
  double laser_power_mw = 10.0;
  double z_offset_um = 0.0;
  std::string profile = "reference";
  std::uint64_t rng_seed = 1;

  Vec2 pixel_pitch() const { return {extent.x / nx, extent.y / ny}; }
  Vec2 origin() const { return {center.x - extent.x / 2.0, center.y - extent.y / 2.0}; }
};

void validate(const ScanConfig &config);

/// Expected-rate model of one (profile, sample) pair. Spectral collection factors
/// are computed once per emitter.
class SignalModel {
public:
  SignalModel(profile::InstrumentProfile profile, std::vector<emitter::EmitterSpec> emitters);

  struct Terms {
    double excitation_rate; ///< 1/s
    double collection;      ///< photons reaching the detectors per emitted photon
  };
  Terms terms(std::size_t emitter, const Vec2 &beam_center, double focus_z_um,
              double power_mw) const;

  /// Detected counts/s summed over both detectors: emitters + autofluorescence + darks.
  double expected_rate(const Vec2 &beam_center, double focus_z_um, double power_mw) const;
  /// Autofluorescence photons/s reaching the detectors.
  double background_photon_rate(double power_mw) const;

  const profile::InstrumentProfile &profile() const { return profile_; }
  const std::vector<emitter::EmitterSpec> &emitters() const { return emitters_; }

private:
  profile::InstrumentProfile profile_;
  std::vector<emitter::EmitterSpec> emitters_;
  std::vector<double> spectral_; ///< solid angle x objective x filters, spectrally averaged
};

enum class Activity { idle, scanning, hbt };
std::string to_string(Activity activity);

/// Thrown when a session already runs an acquisition.
class BusyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class Session;

/// Exclusive right to run one acquisition on a session; released on destruction.
class ActivityGuard {
public:
  ActivityGuard(Session &session, Activity activity);
  ActivityGuard(ActivityGuard &&other) noexcept;
  ActivityGuard &operator=(ActivityGuard &&) = delete;
  ActivityGuard(const ActivityGuard &) = delete;
  ~ActivityGuard();

  Session &session() const { return *session_; }

private:
  Session *session_;
};

/// One virtual microscope: profile, ground-truth sample, actuator state. At most one
/// acquisition runs at a time; progress can be read from any thread.
class Session {
public:
  Session(std::string id, profile::InstrumentProfile profile, emitter::SampleField sample);

  const std::string &id() const { return id_; }
  const profile::InstrumentProfile &profile() const { return signal_.profile(); }
  const emitter::SampleField &sample() const { return sample_; }
  const SignalModel &signal() const { return signal_; }

  Activity activity() const { return activity_.load(); }
  double progress() const { return progress_.load(); }
  void set_progress(double p) { progress_.store(p); }

  actuation::ActuatorState actuator() const;
  void set_actuator(const actuation::ActuatorState &state);

private:
  friend class ActivityGuard;

  std::string id_;
  emitter::SampleField sample_;
  SignalModel signal_;
  std::atomic<Activity> activity_{Activity::idle};
  std::atomic<double> progress_{0.0};
  mutable std::mutex actuator_mutex_;
  actuation::ActuatorState actuator_;
};

/// Cancellation flag and live-update hooks for long acquisitions.
struct AcquisitionControl {
  std::atomic<bool> cancel{false};
  std::atomic<double> progress{0.0};
  std::function<void(int row, const std::vector<std::int64_t> &counts)> on_row;
  std::function<void(const correlator::CorrelationHistogram &snapshot, double elapsed_s)> on_chunk;
};

struct RasterStep {
  int ix;
  int iy;
  Vec2 target;    ///< commanded sample position, µm
  Vec2 voltages;  ///< DAC-quantized control voltages
};

/// Row-major raster, left to right on every row. Voltages come from the calibrated
/// axis inverse, then DAC quantization. Throws RangeError naming the limiting axis.
std::vector<RasterStep> plan_raster(const ScanConfig &config, const actuation::ActuatorSpec &spec);

/// Control voltages for a commanded sample position.
Vec2 command_voltages(const Vec2 &target, const Vec2 &center, const actuation::ActuatorSpec &spec);
/// Where the beam actually lands for given control voltages (true gains + drift).
Vec2 beam_position(const Vec2 &voltages, const Vec2 &center, const actuation::ActuatorState &state);

struct DriftSample {
  int row;
  double elapsed_s;
  Vec2 offset;
};

struct ScanImage {
  analysis::CountImage image;
  ScanConfig config;
  std::string profile_name;
  std::string started_at;
  double wall_duration_s = 0.0;
  std::vector<DriftSample> drift_log;
  bool complete = true;
  int rows_completed = 0;
};

/// Poisson draw of the expected detected counts over `dwell_ms`; advances drift.
std::int64_t acquire_pixel(Session &session, const Vec2 &voltages, const Vec2 &center,
                           double dwell_ms, double power_mw, double focus_z_um, Rng &counts_rng,
                           Rng &drift_rng);

ScanImage run_scan(ActivityGuard &guard, const ScanConfig &config,
                   AcquisitionControl *control = nullptr);
ScanImage run_scan(Session &session, const ScanConfig &config,
                   AcquisitionControl *control = nullptr);

struct HbtConfig {
  Vec2 position;          ///< commanded sample position, µm
  Vec2 center{10.0, 10.0};
  double duration_s = 10.0;
  double laser_power_mw = 10.0;
  double z_offset_um = 0.0;
  double chunk_s = 1.0;
  correlator::HistogramSpec histogram;
  std::uint64_t rng_seed = 1;
};

inline constexpr double kMaxHbtChunkS = 1.0;

/// Per-photon acquisition at a fixed position: emitter renewal streams plus
/// autofluorescence, HBT split, two detectors, incremental correlation in chunks of
/// at most 1 s. Returns the raw histogram with g² attached when both channels saw tags.
correlator::CorrelationHistogram run_hbt(ActivityGuard &guard, const HbtConfig &config,
                                         AcquisitionControl *control = nullptr);
correlator::CorrelationHistogram run_hbt(Session &session, const HbtConfig &config,
                                         AcquisitionControl *control = nullptr);

struct AutofocusResult {
  double z_um = 0.0;
  bool boundary = false;        ///< maximum at the edge of the range
  bool parabola_fallback = false;
  std::vector<double> z_samples;
  std::vector<std::int64_t> counts;
};

/// Vertex of the least-squares parabola through (z, value); nullopt unless concave-down.
std::optional<double> parabola_vertex(std::span<const double> z, std::span<const double> values);

/// Focus search at a bright position. Throws ValidationError when there is no signal.
AutofocusResult autofocus(Session &session, const Vec2 &position, const Vec2 &center,
                          double z_range_um, int steps, double dwell_ms, double power_mw,
                          std::uint64_t seed);

nlohmann::json to_json(const ScanConfig &config);
ScanConfig scan_config_from_json(const nlohmann::json &j);
nlohmann::json to_json(const HbtConfig &config);
HbtConfig hbt_config_from_json(const nlohmann::json &j);

/// Metadata sidecar of a scan (everything except the count matrix).
nlohmann::json metadata_json(const ScanImage &image);
void write_counts_csv(std::ostream &out, const ScanImage &image);
ScanImage scan_from_files(const nlohmann::json &metadata, std::istream &counts_csv);

void save_scan(const std::filesystem::path &csv_path, const ScanImage &image);
ScanImage load_scan(const std::filesystem::path &csv_path);
/// Sidecar path for a CSV count matrix: "scan.csv" -> "scan.json".
std::filesystem::path sidecar_path(const std::filesystem::path &csv_path);

} // namespace photonbench::scan
