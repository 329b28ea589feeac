#include <photonbench/correlator.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

namespace photonbench::correlator {

void validate(const HistogramSpec &spec) {
  if (spec.bin_width <= 0)
    throw ValidationError("bin width must be positive", "bin_width");
  if (spec.bin_count < 2 || spec.bin_count % 2 != 0)
    throw ValidationError("bin count must be even and at least 2", "bin_count");
}

namespace {

void check_inputs(const detection::TagStream &a, const detection::TagStream &b,
                  const HistogramSpec &spec) {
  validate(spec);
  detection::validate(a);
  detection::validate(b);
  if (a.duration != b.duration)
    throw ValidationError("channels must share one acquisition duration", "duration");
}

CorrelationHistogram empty_histogram(const detection::TagStream &a, const detection::TagStream &b,
                                     const HistogramSpec &spec) {
  CorrelationHistogram h;
  h.spec = spec;
  h.counts.assign(static_cast<std::size_t>(spec.bin_count), 0);
  h.n_a = a.timestamps.size();
  h.n_b = b.timestamps.size();
  h.duration = a.duration;
  return h;
}

// Counts pairs (t_a, t_b) with t_b - t_a in [-half, half). `b` is swept by a
// pointer that only moves forward because `a` is ordered.
void sweep(std::span<const Picoseconds> a, std::span<const Picoseconds> b,
           const HistogramSpec &spec, std::vector<std::uint64_t> &counts) {
  const Picoseconds half = spec.half_window();
  const Picoseconds width = spec.bin_width;
  std::uint64_t *bins = counts.data();
  const Picoseconds *bp = b.data();
  const std::size_t nb = b.size();
  std::size_t lo = 0;
  for (const Picoseconds ta : a) {
    const Picoseconds start = ta - half;
    const Picoseconds stop = ta + half;
    while (lo < nb && bp[lo] < start)
      ++lo;
    for (std::size_t j = lo; j < nb && bp[j] < stop; ++j)
      ++bins[(bp[j] - start) / width];
  }
}

} // namespace

CorrelationHistogram correlate(const detection::TagStream &a, const detection::TagStream &b,
                               const HistogramSpec &spec) {
  check_inputs(a, b, spec);
  CorrelationHistogram h = empty_histogram(a, b, spec);
  sweep(a.timestamps, b.timestamps, spec, h.counts);
  return h;
}

CorrelationHistogram correlate_bruteforce(const detection::TagStream &a,
                                          const detection::TagStream &b,
                                          const HistogramSpec &spec) {
  check_inputs(a, b, spec);
  CorrelationHistogram h = empty_histogram(a, b, spec);
  const Picoseconds lo = -spec.half_window();
  const Picoseconds hi = spec.half_window();
  for (const Picoseconds ta : a.timestamps) {
    for (const Picoseconds tb : b.timestamps) {
      const Picoseconds tau = tb - ta;
      if (tau < lo || tau >= hi)
        continue;
      // floor division, valid for negative delays
      Picoseconds q = tau / spec.bin_width;
      if (tau % spec.bin_width != 0 && tau < 0)
        --q;
      ++h.counts[static_cast<std::size_t>(q + spec.bin_count / 2)];
    }
  }
  return h;
}

Accumulator::Accumulator(HistogramSpec spec) : spec_(spec) {
  validate(spec_);
  counts_.assign(static_cast<std::size_t>(spec_.bin_count), 0);
}

void Accumulator::accumulate(std::span<const Picoseconds> new_a,
                             std::span<const Picoseconds> new_b) {
  auto check = [](std::span<const Picoseconds> chunk, const std::optional<Picoseconds> &last,
                  const char *name) {
    if (!detection::is_ordered(chunk) || (!chunk.empty() && last && chunk.front() < *last))
      throw ValidationError(std::string("non-monotone append on channel ") + name, name);
  };
  check(new_a, last_a_, "a");
  check(new_b, last_b_, "b");

  // old a x new b, then new a x (retained b + new b)
  sweep(buffer_a_, new_b, spec_, counts_);
  buffer_b_.insert(buffer_b_.end(), new_b.begin(), new_b.end());
  sweep(new_a, buffer_b_, spec_, counts_);
  buffer_a_.insert(buffer_a_.end(), new_a.begin(), new_a.end());

  n_a_ += new_a.size();
  n_b_ += new_b.size();
  if (!new_a.empty())
    last_a_ = new_a.back();
  if (!new_b.empty())
    last_b_ = new_b.back();
  high_water_ = std::max(high_water_, retained());

  const Picoseconds half = spec_.half_window();
  // future a >= last_a pairs only with b >= last_a - half
  if (last_a_) {
    const auto keep = std::lower_bound(buffer_b_.begin(), buffer_b_.end(), *last_a_ - half);
    buffer_b_.erase(buffer_b_.begin(), keep);
  }
  // future b >= last_b pairs only with a > last_b - half
  if (last_b_) {
    const auto keep = std::upper_bound(buffer_a_.begin(), buffer_a_.end(), *last_b_ - half);
    buffer_a_.erase(buffer_a_.begin(), keep);
  }
}

CorrelationHistogram Accumulator::snapshot(Picoseconds duration) const {
  CorrelationHistogram h;
  h.spec = spec_;
  h.counts = counts_;
  h.n_a = n_a_;
  h.n_b = n_b_;
  h.duration = duration;
  return h;
}

std::uint64_t Accumulator::total_counts() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

CorrelationHistogram normalize(const CorrelationHistogram &h) {
  if (h.duration <= 0)
    throw ValidationError("cannot normalize: duration must be positive", "duration");
  if (h.n_a == 0)
    throw ValidationError("cannot normalize: channel a has no tags", "n_a");
  if (h.n_b == 0)
    throw ValidationError("cannot normalize: channel b has no tags", "n_b");
  CorrelationHistogram out = h;
  const double scale = static_cast<double>(h.duration) /
                       (static_cast<double>(h.n_a) * static_cast<double>(h.n_b) *
                        static_cast<double>(h.spec.bin_width));
  std::vector<double> g2(h.counts.size());
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    g2[k] = static_cast<double>(h.counts[k]) * scale;
  out.normalized = std::move(g2);
  return out;
}

CorrelationHistogram correlate_loaded(detection::TagStream a, detection::TagStream b,
                                      const HistogramSpec &spec) {
  const Picoseconds duration = std::max(a.duration, b.duration);
  a.duration = duration;
  b.duration = duration;
  auto h = correlate(a, b, spec);
  if (h.n_a > 0 && h.n_b > 0 && h.duration > 0)
    h = normalize(h);
  h.metadata = {{"source", "correlate"}, {"channel_a", a.channel}, {"channel_b", b.channel}};
  return h;
}

nlohmann::json to_json(const HistogramSpec &spec) {
  return {{"bin_width_ps", spec.bin_width}, {"bin_count", spec.bin_count}};
}

HistogramSpec histogram_spec_from_json(const nlohmann::json &j) {
  HistogramSpec spec;
  spec.bin_width = j.value("bin_width_ps", spec.bin_width);
  spec.bin_count = j.value("bin_count", spec.bin_count);
  validate(spec);
  return spec;
}

nlohmann::json to_json(const CorrelationHistogram &h) {
  nlohmann::json j{{"schema", kSchema},
                   {"kind", "correlation_histogram"},
                   {"spec", to_json(h.spec)},
                   {"n_a", h.n_a},
                   {"n_b", h.n_b},
                   {"duration_ps", h.duration},
                   {"counts", h.counts}};
  j["g2"] = h.normalized ? nlohmann::json(*h.normalized) : nlohmann::json(nullptr);
  j["metadata"] = h.metadata;
  return j;
}

CorrelationHistogram histogram_from_json(const nlohmann::json &j) {
  if (j.value("schema", std::string{}) != kSchema ||
      j.value("kind", std::string{}) != "correlation_histogram")
    throw ValidationError("not a photonbench correlation histogram document", "schema");
  CorrelationHistogram h;
  h.spec = histogram_spec_from_json(j.at("spec"));
  h.n_a = j.at("n_a").get<std::uint64_t>();
  h.n_b = j.at("n_b").get<std::uint64_t>();
  h.duration = j.at("duration_ps").get<Picoseconds>();
  h.counts = j.at("counts").get<std::vector<std::uint64_t>>();
  if (h.counts.size() != static_cast<std::size_t>(h.spec.bin_count))
    throw ValidationError("counts length does not match bin_count", "counts");
  if (j.contains("g2") && !j["g2"].is_null()) {
    h.normalized = j["g2"].get<std::vector<double>>();
    if (h.normalized->size() != h.counts.size())
      throw ValidationError("g2 length does not match bin_count", "g2");
  }
  h.metadata = j.value("metadata", nlohmann::json::object());
  return h;
}

void write_csv(std::ostream &out, const CorrelationHistogram &h) {
  out << "tau_ps,counts,g2\n";
  char buf[64];
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    out << h.spec.bin_start(static_cast<int>(k)) << ',' << h.counts[k] << ',';
    if (h.normalized) {
      std::snprintf(buf, sizeof(buf), "%.17g", (*h.normalized)[k]);
      out << buf;
    }
    out << '\n';
  }
}

CorrelationHistogram read_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line) || line != "tau_ps,counts,g2")
    throw ValidationError("histogram CSV must start with header 'tau_ps,counts,g2'", "header");
  std::vector<Picoseconds> taus;
  std::vector<std::uint64_t> counts;
  std::vector<double> g2;
  bool any_g2 = false;
  bool all_g2 = true;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty())
      continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
      throw ValidationError("malformed histogram CSV row " + std::to_string(row), "row");
    Picoseconds tau = 0;
    std::uint64_t count = 0;
    const char *s = line.data();
    if (std::from_chars(s, s + c1, tau).ec != std::errc{} ||
        std::from_chars(s + c1 + 1, s + c2, count).ec != std::errc{})
      throw ValidationError("malformed histogram CSV row " + std::to_string(row), "row");
    taus.push_back(tau);
    counts.push_back(count);
    const std::string g = line.substr(c2 + 1);
    if (g.empty()) {
      all_g2 = false;
      g2.push_back(0.0);
    } else {
      any_g2 = true;
      try {
        g2.push_back(std::stod(g));
      } catch (const std::exception &) {
        throw ValidationError("malformed g2 value in row " + std::to_string(row), "g2");
      }
    }
  }
  if (taus.size() < 2)
    throw ValidationError("histogram CSV needs at least two bins", "bin_count");
  if (any_g2 && !all_g2)
    throw ValidationError("g2 column must be filled for all rows or none", "g2");
  CorrelationHistogram h;
  h.spec.bin_width = taus[1] - taus[0];
  h.spec.bin_count = static_cast<int>(taus.size());
  validate(h.spec);
  for (std::size_t k = 0; k < taus.size(); ++k) {
    if (taus[k] != h.spec.bin_start(static_cast<int>(k)))
      throw ValidationError("tau_ps column is not a centred uniform bin grid", "tau_ps");
  }
  h.counts = std::move(counts);
  if (any_g2)
    h.normalized = std::move(g2);
  return h;
}

} // namespace photonbench::correlator
