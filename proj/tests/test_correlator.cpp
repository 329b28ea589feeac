#include <photonbench/correlator.hpp>

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace photonbench;
using namespace photonbench::correlator;
using detection::TagStream;

namespace {

TagStream stream(std::vector<Picoseconds> t, Picoseconds duration) {
  TagStream s;
  s.timestamps = std::move(t);
  s.duration = duration;
  return s;
}

// Independent oracle: explicit interval test for every pair and every bin.
std::vector<std::uint64_t> naive(const TagStream &a, const TagStream &b, const HistogramSpec &spec) {
  std::vector<std::uint64_t> counts(spec.bin_count, 0);
  for (auto ta : a.timestamps)
    for (auto tb : b.timestamps) {
      const Picoseconds tau = tb - ta;
      for (int k = 0; k < spec.bin_count; ++k)
        if (tau >= spec.bin_start(k) && tau < spec.bin_start(k) + spec.bin_width) {
          ++counts[k];
          break;
        }
    }
  return counts;
}

// Random instance: mixtures of uniform tags, bursts and exact cross-channel ties.
std::pair<TagStream, TagStream> random_instance(Rng &rng, const HistogramSpec &spec) {
  std::uniform_int_distribution<int> size(100, 10000);
  std::uniform_int_distribution<int> kind(0, 4);
  const Picoseconds duration = std::uniform_int_distribution<Picoseconds>(
      spec.half_window(), 200 * spec.half_window())(rng);
  std::uniform_int_distribution<Picoseconds> when(0, duration);
  auto make = [&](int n) {
    std::vector<Picoseconds> t;
    const int mode = kind(rng);
    for (int i = 0; i < n; ++i) {
      if (mode == 1 && !t.empty() && i % 7) {
        t.push_back(std::min(duration, t.back() + std::uniform_int_distribution<int>(0, 3)(rng)));
      } else if (mode == 2) {
        t.push_back(std::uniform_int_distribution<Picoseconds>(0, 2 * spec.bin_width)(rng));
      } else {
        t.push_back(when(rng));
      }
    }
    std::sort(t.begin(), t.end());
    return t;
  };
  auto a = make(size(rng));
  auto b = make(size(rng));
  if (kind(rng) == 0) // ties across channels, including exact bin edges
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); i += 3)
      b[i] = a[i] + (i % 2 ? spec.bin_width : 0);
  std::sort(b.begin(), b.end());
  if (kind(rng) == 4)
    a.clear();
  for (auto &x : b)
    x = std::min(x, duration);
  return {stream(a, duration), stream(b, duration)};
}

} // namespace

TEST_SUITE("correlator") {

TEST_CASE("bin convention") {
  const HistogramSpec spec;
  CHECK(spec.bin_start(500) == 0);
  auto h = correlate(stream({0}, 1000), stream({100}, 1000), spec);
  CHECK(h.counts[500] == 1);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), 0ull) == 1);
  h = correlate(stream({1000}, 1000), stream({900}, 1000), spec);
  CHECK(h.counts[499] == 1);
  // half-open edges: τ = 200 ps belongs to bin 501, τ = -200 ps to bin 499
  h = correlate(stream({0, 400}, 1000), stream({200}, 1000), spec);
  CHECK(h.counts[501] == 1);
  CHECK(h.counts[499] == 1);
  // the window is [-100 ns, +100 ns)
  h = correlate(stream({100000}, 300000), stream({0, 200000}, 300000), spec);
  CHECK(h.counts[0] == 1);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), 0ull) == 1);
}

TEST_CASE("oracle sanity on literal cases") {
  HistogramSpec spec{200, 1000};
  const auto e = correlate_bruteforce(stream({}, 10), stream({1, 2}, 10), spec);
  CHECK(std::all_of(e.counts.begin(), e.counts.end(), [](auto c) { return c == 0; }));
  const auto h = correlate_bruteforce(stream({0, 1000000}, 1000000),
                                      stream({0, 1000000}, 1000000), spec);
  CHECK(h.counts[500] == 2);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), 0ull) == 2);

  Rng rng(1);
  const HistogramSpec small{50, 20};
  for (int i = 0; i < 30; ++i) {
    std::vector<Picoseconds> a;
    std::vector<Picoseconds> b;
    std::uniform_int_distribution<Picoseconds> t(0, 2000);
    for (int k = 0; k < 40; ++k) {
      a.push_back(t(rng));
      b.push_back(t(rng));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const auto sa = stream(a, 2000);
    const auto sb = stream(b, 2000);
    CHECK(correlate_bruteforce(sa, sb, small).counts == naive(sa, sb, small));
  }
}

TEST_CASE("two-pointer sweep equals the oracle on randomized instances") {
  Rng rng(20240607);
  int checked = 0;
  for (int i = 0; i < 220; ++i) {
    HistogramSpec spec;
    if (i % 3 == 1)
      spec = {std::uniform_int_distribution<Picoseconds>(1, 500)(rng),
              2 * std::uniform_int_distribution<int>(1, 600)(rng)};
    auto [a, b] = random_instance(rng, spec);
    const auto fast = correlate(a, b, spec);
    const auto slow = correlate_bruteforce(a, b, spec);
    REQUIRE(fast.counts == slow.counts);
    CHECK(fast.n_a == a.timestamps.size());
    CHECK(fast.n_b == b.timestamps.size());
    ++checked;
  }
  CHECK(checked >= 200);
}

TEST_CASE("time reversal") {
  Rng rng(5);
  const HistogramSpec spec;
  // even a and odd b never produce delays on a bin edge, so reversal is exact
  std::vector<Picoseconds> a;
  std::vector<Picoseconds> b;
  std::uniform_int_distribution<Picoseconds> t(0, 5'000'000);
  for (int i = 0; i < 5000; ++i) {
    a.push_back(2 * t(rng));
    b.push_back(2 * t(rng) + 1);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto ab = correlate(stream(a, 10'000'002), stream(b, 10'000'002), spec);
  const auto ba = correlate(stream(b, 10'000'002), stream(a, 10'000'002), spec);
  auto reversed = ba.counts;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(ab.counts == reversed);

  // on an edge the half-open convention breaks the symmetry by one bin, as the oracle says
  const auto edge_ab = correlate(stream({0}, 1000), stream({200}, 1000), spec);
  const auto edge_ba = correlate(stream({200}, 1000), stream({0}, 1000), spec);
  CHECK(edge_ab.counts[501] == 1);
  CHECK(edge_ba.counts[499] == 1);
  CHECK(edge_ab.counts ==
        correlate_bruteforce(stream({0}, 1000), stream({200}, 1000), spec).counts);
}

TEST_CASE("input validation") {
  const HistogramSpec spec;
  CHECK_THROWS_AS(correlate(stream({5, 1}, 10), stream({1}, 10), spec), ValidationError);
  CHECK_THROWS_AS(correlate(stream({1}, 10), stream({1}, 20), spec), ValidationError);
  CHECK_THROWS_AS(validate(HistogramSpec{0, 10}), ValidationError);
  CHECK_THROWS_AS(validate(HistogramSpec{200, 7}), ValidationError);
  CHECK_THROWS_AS(validate(HistogramSpec{200, 0}), ValidationError);
}

TEST_CASE("incremental accumulation") {
  Rng rng(12);
  const HistogramSpec spec;
  std::vector<Picoseconds> a;
  std::vector<Picoseconds> b;
  std::exponential_distribution<double> gap(1.0 / 2000.0);
  double ta = 0.0;
  double tb = 0.0;
  for (int i = 0; i < 50000; ++i) {
    ta += gap(rng);
    tb += gap(rng);
    a.push_back(static_cast<Picoseconds>(ta));
    b.push_back(static_cast<Picoseconds>(tb));
  }
  const Picoseconds duration = std::max(a.back(), b.back());
  const auto full = correlate(stream(a, duration), stream(b, duration), spec);

  SUBCASE("single chunk") {
    Accumulator acc(spec);
    acc.accumulate(a, b);
    CHECK(acc.finalize(duration).counts == full.counts);
  }
  SUBCASE("100 random chunks") {
    Accumulator acc(spec);
    std::vector<std::size_t> cuts_a{0, a.size()};
    std::vector<std::size_t> cuts_b{0, b.size()};
    std::uniform_int_distribution<std::size_t> ca(0, a.size());
    std::uniform_int_distribution<std::size_t> cb(0, b.size());
    for (int i = 0; i < 99; ++i) {
      cuts_a.push_back(ca(rng));
      cuts_b.push_back(cb(rng));
    }
    std::sort(cuts_a.begin(), cuts_a.end());
    std::sort(cuts_b.begin(), cuts_b.end());
    for (std::size_t c = 0; c + 1 < cuts_a.size(); ++c) {
      acc.accumulate(std::span(a).subspan(cuts_a[c], cuts_a[c + 1] - cuts_a[c]),
                     std::span(b).subspan(cuts_b[c], cuts_b[c + 1] - cuts_b[c]));
      const auto snap = acc.snapshot(duration);
      CHECK(std::accumulate(snap.counts.begin(), snap.counts.end(), 0ull) == acc.total_counts());
    }
    const auto h = acc.finalize(duration);
    CHECK(h.counts == full.counts);
    CHECK(h.n_a == a.size());
    CHECK(h.n_b == b.size());
  }
  SUBCASE("time-ordered chunks keep memory bounded") {
    auto run = [&](std::size_t n) {
      Accumulator acc(spec);
      std::size_t ia = 0;
      std::size_t ib = 0;
      for (Picoseconds edge = 1'000'000; ia < n || ib < n; edge += 1'000'000) {
        const std::size_t ea = std::lower_bound(a.begin() + ia, a.begin() + n, edge) - a.begin();
        const std::size_t eb = std::lower_bound(b.begin() + ib, b.begin() + n, edge) - b.begin();
        acc.accumulate(std::span(a).subspan(ia, ea - ia), std::span(b).subspan(ib, eb - ib));
        ia = ea;
        ib = eb;
      }
      return acc.retained_high_water();
    };
    const auto small = run(10000);
    const auto large = run(50000);
    CHECK(large <= small + small / 2);
    CHECK(large < 2000); // a window plus one chunk at these rates
  }
  SUBCASE("non-monotone append is rejected") {
    Accumulator acc(spec);
    acc.accumulate(std::vector<Picoseconds>{100, 200}, std::vector<Picoseconds>{});
    CHECK_THROWS_AS(acc.accumulate(std::vector<Picoseconds>{150}, std::vector<Picoseconds>{}),
                    ValidationError);
  }
}

TEST_CASE("normalization") {
  Rng rng(33);
  auto poisson_stream = [&](double rate, Picoseconds duration) {
    std::vector<Picoseconds> t;
    std::exponential_distribution<double> gap(rate / kPsPerSecond);
    for (double x = gap(rng); x < static_cast<double>(duration); x += gap(rng))
      t.push_back(static_cast<Picoseconds>(x));
    return stream(t, duration);
  };
  const HistogramSpec spec;
  auto mean_g2 = [&](Picoseconds duration) {
    const auto h = normalize(
        correlate(poisson_stream(1e5, duration), poisson_stream(1e5, duration), spec));
    double sum = 0.0;
    for (double g : *h.normalized)
      sum += g;
    return sum / spec.bin_count;
  };
  const double m10 = mean_g2(10 * static_cast<Picoseconds>(kPsPerSecond));
  CHECK(m10 >= 0.97);
  CHECK(m10 <= 1.03);
  const double m20 = mean_g2(20 * static_cast<Picoseconds>(kPsPerSecond));
  CHECK(m20 == doctest::Approx(m10).epsilon(0.02));

  CorrelationHistogram zero;
  zero.spec = spec;
  zero.counts.assign(spec.bin_count, 0);
  zero.n_a = 3;
  zero.n_b = 4;
  zero.duration = 100;
  const auto z = normalize(zero);
  CHECK(std::all_of(z.normalized->begin(), z.normalized->end(), [](double g) { return g == 0; }));

  zero.n_a = 0;
  try {
    normalize(zero);
    FAIL("expected an error");
  } catch (const ValidationError &e) {
    CHECK(e.field() == "n_a");
  }
  zero.n_a = 1;
  zero.duration = 0;
  try {
    normalize(zero);
    FAIL("expected an error");
  } catch (const ValidationError &e) {
    CHECK(e.field() == "duration");
  }
}

TEST_CASE("histogram exports re-import byte-identically") {
  Rng rng(3);
  std::vector<Picoseconds> a;
  std::vector<Picoseconds> b;
  std::uniform_int_distribution<Picoseconds> t(0, 100'000'000);
  for (int i = 0; i < 3000; ++i) {
    a.push_back(t(rng));
    b.push_back(t(rng));
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto h = normalize(correlate(stream(a, 100'000'000), stream(b, 100'000'000), {}));
  h.metadata = {{"note", "test"}};

  const std::string j1 = to_json(h).dump(2);
  const std::string j2 = to_json(histogram_from_json(nlohmann::json::parse(j1))).dump(2);
  CHECK(j1 == j2);

  std::ostringstream c1;
  write_csv(c1, h);
  CHECK(c1.str().rfind("tau_ps,counts,g2\n", 0) == 0);
  std::istringstream in(c1.str());
  const auto back = read_csv(in);
  CHECK(back.counts == h.counts);
  std::ostringstream c2;
  write_csv(c2, back);
  CHECK(c1.str() == c2.str());

  auto raw = h;
  raw.normalized.reset();
  CHECK(to_json(raw)["g2"].is_null());
}

} // TEST_SUITE
