#pragma once

#include <photonbench/types.hpp>

#include <limits>
#include <json.hpp>
#include <string>
#include <vector>

namespace photonbench::emitter {

enum class ChargeState { NVminus, NVzero };

std::string to_string(ChargeState state);
ChargeState charge_state_from_string(const std::string &name);

/// One NV center. Positions in µm, wavelengths in nm.
struct EmitterSpec {
  Vec3 position;
  ChargeState charge_state = ChargeState::NVminus;
  double lifetime_ns = 12.0;
  /// Emitted photon rate (counts/s) at the calibration pump point (focus, reference power).
  double saturation_rate = 150e3;
  double zpl_wavelength_nm = 638.0;
  double sideband_center_nm = 700.0;
  double sideband_width_nm = 35.0;
  double zpl_weight = 0.04;

  double decay_rate() const { return kNsPerSecond / lifetime_ns; } ///< 1/s
};

/// Emitter with the charge-state defaults for lifetime and zero-phonon line.
EmitterSpec make_emitter(ChargeState state, Vec3 position = {});

void validate(const EmitterSpec &emitter);

struct SampleSpec {
  Vec2 field_size{20.0, 20.0};
  double target_density = 3.0; ///< diamonds per 100 µm²
  double min_spacing = 3.32;   ///< µm, between distinct diamonds
  double fraction_single = 0.9;
  double charge_state_mix = 0.8; ///< fraction NVminus
  std::uint64_t rng_seed = 42;
};

struct SampleField {
  std::vector<EmitterSpec> emitters;
  SampleSpec spec;
  double achieved_density = 0.0; ///< diamonds per 100 µm²
};

inline constexpr int kPlacementRetries = 10000;
inline constexpr double kMinFillFraction = 0.7;

/// Dart-throwing placement of diamonds with rejection on min_spacing.
/// Throws InfeasibleError when fewer than 70% of the requested diamonds fit.
SampleField generate_sample(const SampleSpec &spec);

/// Distinct XY sites (diamonds) in a field; co-located emitters share a site.
std::vector<Vec2> distinct_sites(const SampleField &field);

/// Sum of an exponential excitation wait and an exponential radiative decay, in ns.
/// Returns +infinity when the excitation rate is zero.
double next_emission_interval(const EmitterSpec &emitter, double excitation_rate, Rng &rng);

/// Long-run photon rate of the renewal process, 1/s.
double renewal_rate(double excitation_rate, double decay_rate);

/// Excitation rate (1/s) at which the renewal process emits `emission_rate`.
double excitation_for_emission_rate(double emission_rate, double decay_rate);

inline constexpr double kSpectrumMinNm = 550.0;
inline constexpr double kSpectrumMaxNm = 850.0;
inline constexpr double kZplSigmaNm = 1.0;
inline constexpr double kZplTruncationNm = 4.0;

double sample_wavelength(const EmitterSpec &emitter, Rng &rng);

/// Quadrature of the emission spectrum: the zero-phonon line as a point node plus
/// 64 midpoint nodes over the truncated sideband. Weights sum to 1.
struct SpectralNode {
  double wavelength_nm;
  double weight;
};
inline constexpr int kSidebandNodes = 64;
std::vector<SpectralNode> spectral_quadrature(const EmitterSpec &emitter);

/// Continuous-time emission stream of one emitter. Holds the pending emission time
/// so a stream can be generated chunk by chunk.
class RenewalEmitter {
public:
  RenewalEmitter(double excitation_rate, double decay_rate);

  void set_excitation_rate(double excitation_rate) { excitation_rate_ = excitation_rate; }

  /// Appends emission times (ps) in [begin, end) to `out`, each kept with
  /// probability `keep_probability`.
  void emit(double begin_ps, double end_ps, double keep_probability, Rng &rng,
            std::vector<double> &out);

private:
  double draw_interval_ps(Rng &rng);

  double excitation_rate_;
  double decay_rate_;
  double next_ps_ = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char *kSampleSchema = "photonbench.sample/1";

nlohmann::json to_json(const EmitterSpec &emitter);
EmitterSpec emitter_from_json(const nlohmann::json &j);
nlohmann::json to_json(const SampleSpec &spec);
SampleSpec sample_spec_from_json(const nlohmann::json &j);
nlohmann::json to_json(const SampleField &field);
SampleField sample_field_from_json(const nlohmann::json &j);

} // namespace photonbench::emitter
