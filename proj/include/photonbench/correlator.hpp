#pragma once

#include <photonbench/detection.hpp>
#include <photonbench/types.hpp>

#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

namespace photonbench::correlator {

/// Delay binning. Bin k covers [(k - bin_count/2)·bin_width, (k + 1 - bin_count/2)·bin_width),
/// with delay τ = t_b - t_a.
struct HistogramSpec {
  Picoseconds bin_width = 200;
  int bin_count = 1000;

  Picoseconds half_window() const { return bin_width * (bin_count / 2); }
  Picoseconds bin_start(int k) const { return (k - bin_count / 2) * bin_width; }
};

void validate(const HistogramSpec &spec);

struct CorrelationHistogram {
  HistogramSpec spec;
  std::vector<std::uint64_t> counts;
  std::uint64_t n_a = 0;
  std::uint64_t n_b = 0;
  Picoseconds duration = 0;
  std::optional<std::vector<double>> normalized;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Full pairwise cross-correlation by a two-pointer sweep over the ordered streams.
/// Throws ValidationError for unordered input or mismatched durations.
CorrelationHistogram correlate(const detection::TagStream &a, const detection::TagStream &b,
                               const HistogramSpec &spec);

/// Literal double loop over all pairs; the ground truth for `correlate`.
CorrelationHistogram correlate_bruteforce(const detection::TagStream &a,
                                          const detection::TagStream &b,
                                          const HistogramSpec &spec);

/// Incremental correlation for chunked acquisitions. A pair is counted in the call
/// where its later member arrives; only tags that can still pair with future tags
/// are retained.
class Accumulator {
public:
  explicit Accumulator(HistogramSpec spec);

  void accumulate(std::span<const Picoseconds> new_a, std::span<const Picoseconds> new_b);

  /// Histogram of everything accumulated so far.
  CorrelationHistogram snapshot(Picoseconds duration) const;
  CorrelationHistogram finalize(Picoseconds duration) const { return snapshot(duration); }

  std::size_t retained() const { return buffer_a_.size() + buffer_b_.size(); }
  std::size_t retained_high_water() const { return high_water_; }
  std::uint64_t total_counts() const;

private:
  HistogramSpec spec_;
  std::vector<std::uint64_t> counts_;
  std::vector<Picoseconds> buffer_a_;
  std::vector<Picoseconds> buffer_b_;
  std::optional<Picoseconds> last_a_;
  std::optional<Picoseconds> last_b_;
  std::uint64_t n_a_ = 0;
  std::uint64_t n_b_ = 0;
  std::size_t high_water_ = 0;
};

/// g²[k] = counts[k]·duration / (n_a·n_b·bin_width).
CorrelationHistogram normalize(const CorrelationHistogram &h);

/// Correlates two separately stored streams. Both take the longer of the two
/// durations; g² is attached when both channels hold tags.
CorrelationHistogram correlate_loaded(detection::TagStream a, detection::TagStream b,
                                      const HistogramSpec &spec);

inline constexpr const char *kSchema = "photonbench/1";

nlohmann::json to_json(const HistogramSpec &spec);
HistogramSpec histogram_spec_from_json(const nlohmann::json &j);
nlohmann::json to_json(const CorrelationHistogram &h);
CorrelationHistogram histogram_from_json(const nlohmann::json &j);

/// CSV "tau_ps,counts,g2"; tau_ps is the bin start, g2 is empty when not normalized.
void write_csv(std::ostream &out, const CorrelationHistogram &h);
/// Recovers spec, counts and g² from the CSV; channel totals and duration are not stored.
CorrelationHistogram read_csv(std::istream &in);

} // namespace photonbench::correlator
