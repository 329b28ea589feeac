#include <photonbench/detection.hpp>

#include <algorithm>
#include <cmath>

namespace photonbench::detection {

void validate(const SpadSpec &spad) {
  if (!(spad.efficiency >= 0.0 && spad.efficiency <= 1.0))
    throw ValidationError("detector efficiency must lie in [0, 1]", "efficiency");
  if (!(spad.dead_time_ns >= 0.0))
    throw ValidationError("dead time must be non-negative", "dead_time");
  if (!(spad.jitter_sigma_ps >= 0.0))
    throw ValidationError("jitter must be non-negative", "jitter_sigma");
  if (!(spad.dark_count_rate >= 0.0))
    throw ValidationError("dark count rate must be non-negative", "dark_count_rate");
}

bool is_ordered(std::span<const Picoseconds> timestamps) {
  return std::is_sorted(timestamps.begin(), timestamps.end());
}

void validate(const TagStream &stream) {
  if (!is_ordered(stream.timestamps))
    throw ValidationError("tag stream on channel " + std::to_string(stream.channel) +
                              " is not ordered",
                          "timestamps");
  if (!stream.timestamps.empty() &&
      (stream.timestamps.front() < 0 || stream.timestamps.back() > stream.duration))
    throw ValidationError("tag stream on channel " + std::to_string(stream.channel) +
                              " has timestamps outside [0, duration]",
                          "duration");
}

HbtArms split_hbt(std::span<const double> photons, Rng &rng) {
  HbtArms arms;
  arms.a.reserve(photons.size() / 2 + 16);
  arms.b.reserve(photons.size() / 2 + 16);
  std::bernoulli_distribution coin(0.5);
  for (double t : photons)
    (coin(rng) ? arms.a : arms.b).push_back(t);
  return arms;
}

Detector::Detector(SpadSpec spad) : spad_(spad) { validate(spad_); }

std::vector<Picoseconds> Detector::process(std::span<const double> photons, double begin_ps,
                                           double end_ps, Rng &rng) {
  std::vector<double> kept;
  kept.reserve(static_cast<std::size_t>(photons.size() * spad_.efficiency) + 16);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double t : photons) {
    if (spad_.efficiency >= 1.0 || unit(rng) < spad_.efficiency)
      kept.push_back(t);
  }

  if (spad_.dark_count_rate > 0.0 && end_ps > begin_ps) {
    std::poisson_distribution<long long> n_dark(spad_.dark_count_rate * (end_ps - begin_ps) /
                                                kPsPerSecond);
    std::uniform_real_distribution<double> when(begin_ps, end_ps);
    std::vector<double> darks(static_cast<std::size_t>(n_dark(rng)));
    for (double &t : darks)
      t = when(rng);
    std::sort(darks.begin(), darks.end());
    std::vector<double> merged(kept.size() + darks.size());
    std::merge(kept.begin(), kept.end(), darks.begin(), darks.end(), merged.begin());
    kept.swap(merged);
  }

  const std::size_t first_new = pending_.size();
  std::normal_distribution<double> jitter(0.0, spad_.jitter_sigma_ps);
  for (double t : kept) {
    const double smeared = spad_.jitter_sigma_ps > 0.0 ? t + jitter(rng) : t;
    pending_.push_back(static_cast<Picoseconds>(std::nearbyint(smeared)));
  }
  std::sort(pending_.begin() + static_cast<std::ptrdiff_t>(first_new), pending_.end());
  std::inplace_merge(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(first_new),
                     pending_.end());

  std::vector<Picoseconds> out;
  const double guard = 10.0 * spad_.jitter_sigma_ps + 1.0;
  release(out, end_ps - guard, std::numeric_limits<Picoseconds>::max());
  return out;
}

std::vector<Picoseconds> Detector::flush(Picoseconds duration) {
  std::vector<Picoseconds> out;
  release(out, std::numeric_limits<double>::infinity(), duration);
  return out;
}

void Detector::release(std::vector<Picoseconds> &out, double limit, Picoseconds clamp_max) {
  const double dead_ps = spad_.dead_time_ns * kPsPerNs;
  std::size_t n = 0;
  for (; n < pending_.size() && static_cast<double>(pending_[n]) < limit; ++n) {
    const Picoseconds t = std::clamp<Picoseconds>(pending_[n], 0, clamp_max);
    if (!last_kept_ || static_cast<double>(t - *last_kept_) > dead_ps) {
      out.push_back(t);
      last_kept_ = t;
    }
  }
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(n));
}

TagStream apply_detector(std::span<const double> arm, const SpadSpec &spad, Picoseconds duration,
                         Rng &rng, std::uint16_t channel) {
  if (!std::is_sorted(arm.begin(), arm.end()))
    throw ValidationError("detector input must be ordered", "arm");
  Detector detector(spad);
  TagStream stream;
  stream.channel = channel;
  stream.duration = duration;
  stream.timestamps = detector.process(arm, 0.0, static_cast<double>(duration), rng);
  const auto tail = detector.flush(duration);
  stream.timestamps.insert(stream.timestamps.end(), tail.begin(), tail.end());
  return stream;
}

nlohmann::json to_json(const SpadSpec &s) {
  return {{"efficiency", s.efficiency},
          {"dead_time_ns", s.dead_time_ns},
          {"jitter_sigma_ps", s.jitter_sigma_ps},
          {"dark_count_rate", s.dark_count_rate}};
}

SpadSpec spad_from_json(const nlohmann::json &j) {
  SpadSpec s;
  s.efficiency = j.value("efficiency", s.efficiency);
  s.dead_time_ns = j.value("dead_time_ns", s.dead_time_ns);
  s.jitter_sigma_ps = j.value("jitter_sigma_ps", s.jitter_sigma_ps);
  s.dark_count_rate = j.value("dark_count_rate", s.dark_count_rate);
  validate(s);
  return s;
}

} // namespace photonbench::detection
