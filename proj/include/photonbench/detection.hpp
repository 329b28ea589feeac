#pragma once

#include <photonbench/types.hpp>

#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

namespace photonbench::detection {

struct SpadSpec {
  double efficiency = 0.6;
  double dead_time_ns = 45.0;
  double jitter_sigma_ps = 350.0;
  double dark_count_rate = 250.0; ///< counts/s
};

void validate(const SpadSpec &spad);

/// Detection timestamps of one channel, integer picoseconds since acquisition start.
struct TagStream {
  std::uint16_t channel = 0;
  std::vector<Picoseconds> timestamps;
  Picoseconds duration = 0;
};

/// Throws ValidationError unless timestamps are non-decreasing and inside [0, duration].
void validate(const TagStream &stream);
bool is_ordered(std::span<const Picoseconds> timestamps);

struct HbtArms {
  std::vector<double> a;
  std::vector<double> b;
};

/// Routes every photon (emission time, ps) to one of two arms with probability 1/2.
HbtArms split_hbt(std::span<const double> photons, Rng &rng);

/// Streaming single-photon detector: efficiency thinning, Poisson dark counts,
/// Gaussian jitter rounded to integer ps (ties to even) and non-paralyzable dead
/// time. Chunks must be fed in time order; tags that could still be overtaken by
/// jitter from the next chunk are held back until `flush`.
class Detector {
public:
  explicit Detector(SpadSpec spad);

  /// Processes photons (ps, ordered) arriving in [begin_ps, end_ps) and returns
  /// the tags that are final.
  std::vector<Picoseconds> process(std::span<const double> photons, double begin_ps,
                                   double end_ps, Rng &rng);

  /// Releases the held-back tags, clamped to [0, duration].
  std::vector<Picoseconds> flush(Picoseconds duration);

  const SpadSpec &spec() const { return spad_; }

private:
  void release(std::vector<Picoseconds> &out, double limit, Picoseconds clamp_max);

  SpadSpec spad_;
  std::vector<Picoseconds> pending_;
  std::optional<Picoseconds> last_kept_;
};

/// One-shot detection of a whole arm over [0, duration].
TagStream apply_detector(std::span<const double> arm, const SpadSpec &spad, Picoseconds duration,
                         Rng &rng, std::uint16_t channel = 0);

nlohmann::json to_json(const SpadSpec &spad);
SpadSpec spad_from_json(const nlohmann::json &j);

} // namespace photonbench::detection
