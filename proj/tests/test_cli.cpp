#include <photonbench/cli.hpp>
#include <photonbench/correlator.hpp>

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "photonbench");
  std::vector<const char *> argv;
  for (const auto &a : args)
    argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = photonbench::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  const auto dir = fs::temp_directory_path() / "photonbench-test-cli";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path fixtures = PB_FIXTURES;

} // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"correlate", "--bogus"}).code == 2);
  CHECK(cli({"no-such-command"}).code == 2);
  // validation errors are usage errors
  const auto bad = cli({"simulate", "scan", "--resolution", "0", "--out",
                        (scratch() / "bad.json").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("error") != std::string::npos);
  // a file that is not there is a runtime failure
  CHECK(cli({"fit", "g2", "--in", (scratch() / "missing.json").string()}).code == 1);
}

TEST_CASE("seeded scans write identical files") {
  const auto dir = scratch();
  const auto a = dir / "a.json";
  const auto b = dir / "b.json";
  for (const auto &p : {a, b}) {
    const auto r = cli({"--seed", "7", "--profile", "lowcost", "simulate", "scan", "--resolution",
                        "40", "--out", p.string()});
    REQUIRE(r.code == 0);
  }
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  auto ma = json::parse(slurp(a));
  auto mb = json::parse(slurp(b));
  // wall-clock fields differ between runs
  for (auto *m : {&ma, &mb}) {
    m->erase("started_at");
    m->erase("wall_duration_s");
  }
  CHECK(ma == mb);
  CHECK(ma["schema"] == "photonbench/1");

  const auto r = cli({"--seed", "8", "--profile", "lowcost", "simulate", "scan", "--resolution",
                      "40", "--out", (dir / "c.json").string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "c.csv") != slurp(dir / "a.csv"));
}

TEST_CASE("json summaries on stdout") {
  const auto dir = scratch();
  const auto r = cli({"--json", "--demo-fast", "simulate", "scan", "--resolution", "50", "--out",
                      (dir / "s.json").string()});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["kind"] == "scan_summary");
  CHECK(j["spots"]["spots"].is_array());
}

TEST_CASE("correlate matches the golden histogram") {
  const auto r = cli({"correlate", "--a", (fixtures / "tags_a.pbtg").string(), "--b",
                      (fixtures / "tags_b.pbtg").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == slurp(fixtures / "golden_hist.json"));
  const auto csv = cli({"correlate", "--a", (fixtures / "tags_a.pbtg").string(), "--b",
                        (fixtures / "tags_b.pbtg").string(), "--format", "csv"});
  CHECK(csv.out == slurp(fixtures / "golden_hist.csv"));
}

TEST_CASE("fit g2 on the golden histogram") {
  const auto meta = json::parse(slurp(fixtures / "fixture.json"));
  for (const char *name : {"golden_hist.json", "golden_hist.csv"}) {
    const auto r = cli({"--json", "fit", "g2", "--in", (fixtures / name).string()});
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["converged"] == true);
    CHECK(std::abs(j["g2_zero"].get<double>() - meta["expected_g2_zero"].get<double>()) <=
          meta["g2_zero_tolerance"].get<double>());
    CHECK(std::abs(j["tau_anti_ns"].get<double>() - meta["expected_tau_ns"].get<double>()) <=
          meta["tau_tolerance_ns"].get<double>());
    CHECK(j["verdict"] == "single");
  }
}

TEST_CASE("fit beam from a CSV") {
  const auto dir = scratch();
  {
    std::ofstream f(dir / "beam.csv");
    f << "z_um,radius_um\n";
    const double w0 = 1.66;
    const double zr = 3.14159265358979 * w0 * w0 / 0.532;
    for (int i = -4; i <= 4; ++i) {
      const double z = 4.0 * i;
      f << z << ',' << w0 * std::sqrt(1.0 + (z / zr) * (z / zr)) << '\n';
    }
  }
  const auto r = cli({"--json", "fit", "beam", "--in", (dir / "beam.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["w0_um"].get<double>() == doctest::Approx(1.66).epsilon(1e-6));
}

TEST_CASE("sample generate and simulate hbt") {
  const auto dir = scratch();
  const auto r = cli({"--seed", "3", "sample", "generate", "--density", "2"});
  REQUIRE(r.code == 0);
  const auto sample = json::parse(r.out);
  CHECK(sample["emitters"].size() >= 4);

  const auto h = cli({"--json", "--demo-fast", "simulate", "hbt", "--isolated", "--x", "10",
                      "--y", "10", "--duration", "1", "--out", (dir / "h.json").string()});
  REQUIRE(h.code == 0);
  const auto j = json::parse(h.out);
  CHECK(j["n_a"].get<int>() > 0);
  CHECK(j.contains("verdict"));
  const auto hist = photonbench::correlator::histogram_from_json(json::parse(slurp(dir / "h.json")));
  CHECK(hist.normalized.has_value());

  CHECK(cli({"simulate", "hbt", "--x", "10", "--y", "10", "--duration", "-1"}).code == 2);
}

} // TEST_SUITE
