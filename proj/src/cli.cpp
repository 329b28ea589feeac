#include <photonbench/cli.hpp>

#include <photonbench/analysis.hpp>
#include <photonbench/correlator.hpp>
#include <photonbench/profile.hpp>
#include <photonbench/scan.hpp>
#include <photonbench/service.hpp>
#include <photonbench/tag_io.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace photonbench::cli {

using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string profile = "reference";
  std::string out;
  bool json = false;
  bool demo_fast = false;
};

std::string extension(const std::string &path) {
  return std::filesystem::path(path).extension().string();
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot write " + path);
  f << text;
}

std::string read_text(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

json parse_json_file(const std::string &path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error &e) {
    throw ValidationError(path + " is not valid JSON: " + e.what(), "in");
  }
}

profile::InstrumentProfile load_profile(const Globals &g, bool no_drift) {
  auto p = profile::load_profile(g.profile);
  if (g.demo_fast && p.name.find("+demo-fast") == std::string::npos)
    p = profile::demo_fast(std::move(p));
  if (no_drift)
    p.actuator.drift_rate_rms = 0.0;
  return p;
}

emitter::SampleField load_or_generate_sample(const std::string &path, std::uint64_t seed) {
  if (!path.empty())
    return emitter::sample_field_from_json(parse_json_file(path));
  emitter::SampleSpec spec;
  spec.rng_seed = seed;
  return emitter::generate_sample(spec);
}

correlator::CorrelationHistogram load_histogram(const std::string &path) {
  if (extension(path) == ".csv") {
    std::ifstream in(path);
    if (!in)
      throw std::runtime_error("cannot open " + path);
    return correlator::read_csv(in);
  }
  return correlator::histogram_from_json(parse_json_file(path));
}

std::vector<analysis::BeamSample> load_beam_samples(const std::string &path) {
  std::istringstream in(read_text(path));
  std::vector<analysis::BeamSample> samples;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#')
      continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected z_um,radius_um",
                            "in");
    try {
      samples.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    } catch (const std::invalid_argument &) {
      if (lineno == 1)
        continue; // header
      throw ValidationError(path + ":" + std::to_string(lineno) + ": not a number", "in");
    }
  }
  return samples;
}

void emit(std::ostream &out, const Globals &g, const json &summary, const std::string &text) {
  if (g.json)
    out << summary.dump(2) << '\n';
  else
    out << text << '\n';
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

service::Server *g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server)
    g_server->stop();
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"photonbench: virtual confocal microscope and photon-correlation toolkit",
               "photonbench"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master random seed");
  app.add_option("--profile", g.profile, "reference | lowcost | path to a profile JSON")
      ->capture_default_str();
  app.add_option("--out", g.out, "output file");
  app.add_flag("--json", g.json, "machine-readable output on stdout");
  app.add_flag("--demo-fast", g.demo_fast, "scale brightness and background by 20 (non-physical)");

  // simulate -----------------------------------------------------------------
  auto *simulate = app.add_subcommand("simulate", "run an acquisition on a simulated sample");
  simulate->require_subcommand(1);
  simulate->fallthrough();

  struct {
    double extent = 20.0;
    int resolution = 100;
    double integration_ms = 40.0;
    double power_mw = 10.0;
    double z_offset = 0.0;
    std::string sample;
    bool no_drift = false;
  } scan_opt;
  auto *sim_scan = simulate->add_subcommand("scan", "raster scan, writes CSV counts + JSON sidecar");
  sim_scan->fallthrough();
  sim_scan->add_option("--extent", scan_opt.extent, "square field, µm")->capture_default_str();
  sim_scan->add_option("--resolution", scan_opt.resolution, "pixels per side")
      ->capture_default_str();
  sim_scan->add_option("--integration-ms", scan_opt.integration_ms)->capture_default_str();
  sim_scan->add_option("--power-mw", scan_opt.power_mw)->capture_default_str();
  sim_scan->add_option("--z-offset", scan_opt.z_offset, "µm")->capture_default_str();
  sim_scan->add_option("--sample", scan_opt.sample, "sample JSON (default: generated from --seed)");
  sim_scan->add_flag("--no-drift", scan_opt.no_drift, "disable actuator drift");

  struct {
    double x = 10.0;
    double y = 10.0;
    double duration = 10.0;
    Picoseconds bin_width = 200;
    int bins = 1000;
    double power_mw = 10.0;
    double z_offset = 0.0;
    std::string sample;
    bool isolated = false;
    bool no_drift = false;
  } hbt_opt;
  auto *sim_hbt = simulate->add_subcommand("hbt", "per-photon HBT acquisition at one position");
  sim_hbt->fallthrough();
  sim_hbt->add_option("--x", hbt_opt.x, "µm")->capture_default_str();
  sim_hbt->add_option("--y", hbt_opt.y, "µm")->capture_default_str();
  sim_hbt->add_option("--duration", hbt_opt.duration, "simulated seconds")->capture_default_str();
  sim_hbt->add_option("--bin-width-ps", hbt_opt.bin_width)->capture_default_str();
  sim_hbt->add_option("--bins", hbt_opt.bins)->capture_default_str();
  sim_hbt->add_option("--power-mw", hbt_opt.power_mw)->capture_default_str();
  sim_hbt->add_option("--z-offset", hbt_opt.z_offset, "µm")->capture_default_str();
  sim_hbt->add_option("--sample", hbt_opt.sample, "sample JSON (default: generated from --seed)");
  sim_hbt->add_flag("--isolated", hbt_opt.isolated, "replace the sample by one NV- at (x, y)");
  sim_hbt->add_flag("--no-drift", hbt_opt.no_drift, "disable actuator drift");

  // correlate ----------------------------------------------------------------
  struct {
    std::string a;
    std::string b;
    Picoseconds bin_width = 200;
    int bins = 1000;
    std::string format;
  } corr_opt;
  auto *correlate = app.add_subcommand("correlate", "cross-correlate two tag files");
  correlate->fallthrough();
  correlate->add_option("--a", corr_opt.a, "tag file, channel a (PBTG or CSV)")->required();
  correlate->add_option("--b", corr_opt.b, "tag file, channel b (PBTG or CSV)")->required();
  correlate->add_option("--bin-width-ps", corr_opt.bin_width)->capture_default_str();
  correlate->add_option("--bins", corr_opt.bins)->capture_default_str();
  correlate->add_option("--format", corr_opt.format, "json | csv (default from --out extension)")
      ->check(CLI::IsMember({"json", "csv"}));

  // fit ----------------------------------------------------------------------
  auto *fit = app.add_subcommand("fit", "fit a model to measured data");
  fit->require_subcommand(1);
  fit->fallthrough();
  std::string fit_in;
  double wavelength_nm = 532.0;
  double m_squared = 1.0;
  auto *fit_g2 = fit->add_subcommand("g2", "antibunching fit of a histogram (JSON or CSV)");
  fit_g2->fallthrough();
  fit_g2->add_option("--in", fit_in, "histogram file")->required();
  auto *fit_beam = fit->add_subcommand("beam", "beam-waist fit of z,radius samples (CSV)");
  fit_beam->fallthrough();
  fit_beam->add_option("--in", fit_in, "CSV with z_um,radius_um")->required();
  fit_beam->add_option("--wavelength-nm", wavelength_nm)->capture_default_str();
  fit_beam->add_option("--m2", m_squared)->capture_default_str();

  // sample -------------------------------------------------------------------
  auto *sample = app.add_subcommand("sample", "sample fields");
  sample->require_subcommand(1);
  sample->fallthrough();
  emitter::SampleSpec sample_spec;
  double field = 20.0;
  auto *sample_gen = sample->add_subcommand("generate", "place emitters on a field");
  sample_gen->fallthrough();
  sample_gen->add_option("--density", sample_spec.target_density, "diamonds per 100 µm²")
      ->capture_default_str();
  sample_gen->add_option("--field", field, "square field, µm")->capture_default_str();
  sample_gen->add_option("--min-spacing", sample_spec.min_spacing, "µm")->capture_default_str();
  sample_gen->add_option("--fraction-single", sample_spec.fraction_single)->capture_default_str();
  sample_gen->add_option("--nv-minus-fraction", sample_spec.charge_state_mix)
      ->capture_default_str();

  // serve --------------------------------------------------------------------
  service::ServerConfig server_cfg;
  std::string workspace;
  std::string static_dir;
  auto *serve = app.add_subcommand("serve", "local HTTP API");
  serve->fallthrough();
  serve->add_option("--port", server_cfg.port)->capture_default_str();
  serve->add_option("--bind", server_cfg.bind)->capture_default_str();
  serve->add_option("--workspace", workspace, "data directory (default $PHOTONBENCH_WORKSPACE)");
  serve->add_option("--static", static_dir, "directory of UI assets served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError &e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (sim_scan->parsed()) {
      auto prof = load_profile(g, scan_opt.no_drift);
      auto field_ = load_or_generate_sample(scan_opt.sample, g.seed);
      scan::ScanConfig cfg;
      cfg.extent = {scan_opt.extent, scan_opt.extent};
      cfg.nx = cfg.ny = scan_opt.resolution;
      cfg.integration_time_ms = scan_opt.integration_ms;
      cfg.laser_power_mw = scan_opt.power_mw;
      cfg.z_offset_um = scan_opt.z_offset;
      cfg.profile = prof.name;
      cfg.rng_seed = g.seed;
      scan::Session session("cli", prof, field_);
      const auto image = scan::run_scan(session, cfg);
      const std::string target = g.out.empty() ? "scan.json" : g.out;
      scan::save_scan(target, image);
      const auto spots = analysis::find_spots(image.image, 5.0);
      std::filesystem::path csv = target;
      csv.replace_extension(".csv");
      json summary{{"schema", correlator::kSchema},
                   {"kind", "scan_summary"},
                   {"counts_csv", csv.string()},
                   {"metadata", scan::sidecar_path(csv).string()},
                   {"spots", analysis::to_json(spots)}};
      emit(out, g, summary,
           "scan " + std::to_string(cfg.nx) + "x" + std::to_string(cfg.ny) + " written to " +
               csv.string() + " (+ " + scan::sidecar_path(csv).string() + "), " +
               std::to_string(spots.spots.size()) + " spots above SNR 5");
      return 0;
    }

    if (sim_hbt->parsed()) {
      auto prof = load_profile(g, hbt_opt.no_drift);
      emitter::SampleField field_;
      if (hbt_opt.isolated)
        field_.emitters.push_back(
            emitter::make_emitter(emitter::ChargeState::NVminus, {hbt_opt.x, hbt_opt.y, 0.0}));
      else
        field_ = load_or_generate_sample(hbt_opt.sample, g.seed);
      scan::HbtConfig cfg;
      cfg.position = {hbt_opt.x, hbt_opt.y};
      cfg.duration_s = hbt_opt.duration;
      cfg.laser_power_mw = hbt_opt.power_mw;
      cfg.z_offset_um = hbt_opt.z_offset;
      cfg.histogram = {hbt_opt.bin_width, hbt_opt.bins};
      cfg.rng_seed = g.seed;
      scan::Session session("cli", prof, field_);
      const auto hist = scan::run_hbt(session, cfg);
      const std::string target = g.out.empty() ? "hist.json" : g.out;
      if (extension(target) == ".csv") {
        std::ofstream f(target);
        correlator::write_csv(f, hist);
      } else {
        write_text(target, correlator::to_json(hist).dump(2) + "\n");
      }
      json summary{{"schema", correlator::kSchema},
                   {"kind", "hbt_summary"},
                   {"histogram", target},
                   {"n_a", hist.n_a},
                   {"n_b", hist.n_b}};
      std::string text = "histogram written to " + target + " (n_a=" + std::to_string(hist.n_a) +
                         ", n_b=" + std::to_string(hist.n_b) + ")";
      try {
        const auto f = analysis::fit_g2(hist);
        const auto verdict = analysis::to_string(analysis::classify_single_emitter(f));
        summary["fit"] = analysis::to_json(f);
        summary["verdict"] = verdict;
        text += "\ng2(0) = " + fmt(f.g2_zero) + " +/- " + fmt(f.g2_zero_sigma, 2) +
                ", verdict: " + verdict;
      } catch (const std::exception &e) {
        summary["fit"] = nullptr;
        summary["fit_error"] = e.what();
        text += "\nno fit: " + std::string(e.what());
      }
      emit(out, g, summary, text);
      return 0;
    }

    if (correlate->parsed()) {
      const correlator::HistogramSpec spec{corr_opt.bin_width, corr_opt.bins};
      correlator::validate(spec);
      const auto hist =
          correlator::correlate_loaded(tag_io::load(corr_opt.a), tag_io::load(corr_opt.b), spec);
      std::string format = corr_opt.format;
      if (format.empty())
        format = extension(g.out) == ".csv" ? "csv" : "json";
      std::ostringstream body;
      if (format == "csv")
        correlator::write_csv(body, hist);
      else
        body << correlator::to_json(hist).dump(2) << '\n';
      if (g.out.empty()) {
        out << body.str();
      } else {
        write_text(g.out, body.str());
        emit(out, g,
             {{"schema", correlator::kSchema}, {"histogram", g.out}, {"n_a", hist.n_a},
              {"n_b", hist.n_b}},
             "histogram written to " + g.out);
      }
      return 0;
    }

    if (fit_g2->parsed()) {
      const auto f = analysis::fit_g2(load_histogram(fit_in));
      json j = analysis::to_json(f);
      j["verdict"] = analysis::to_string(analysis::classify_single_emitter(f));
      if (!g.out.empty())
        write_text(g.out, j.dump(2) + "\n");
      emit(out, g, j,
           "g2(0) = " + fmt(f.g2_zero) + " +/- " + fmt(f.g2_zero_sigma, 2) +
               ", tau = " + fmt(f.tau_anti_ns) + " ns, verdict: " + j["verdict"].get<std::string>() +
               (f.converged ? "" : " (" + f.message + ")"));
      return 0;
    }

    if (fit_beam->parsed()) {
      const auto samples = load_beam_samples(fit_in);
      const auto f = analysis::fit_beam_waist(samples, wavelength_nm, m_squared);
      const json j = analysis::to_json(f);
      if (!g.out.empty())
        write_text(g.out, j.dump(2) + "\n");
      emit(out, g, j,
           "w0 = " + fmt(f.w0_um) + " +/- " + fmt(f.w0_uncertainty_um, 2) + " um, focus at z = " +
               fmt(f.z_focus_um) + " um");
      return 0;
    }

    if (sample_gen->parsed()) {
      sample_spec.field_size = {field, field};
      sample_spec.rng_seed = g.seed;
      const auto s = emitter::generate_sample(sample_spec);
      const std::string body = emitter::to_json(s).dump(2) + "\n";
      if (g.out.empty()) {
        out << body;
      } else {
        write_text(g.out, body);
        emit(out, g,
             {{"schema", correlator::kSchema}, {"sample", g.out},
              {"emitters", s.emitters.size()}, {"achieved_density", s.achieved_density}},
             std::to_string(s.emitters.size()) + " emitters written to " + g.out);
      }
      return 0;
    }

    if (serve->parsed()) {
      server_cfg.workspace =
          workspace.empty() ? service::default_workspace() : std::filesystem::path(workspace);
      server_cfg.static_dir = static_dir;
      service::Server server(server_cfg);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      err << "photonbench serving on http://" << server_cfg.bind << ":" << server_cfg.port
          << " (workspace " << server_cfg.workspace.string() << ")\n";
      const bool ok = server.run();
      g_server = nullptr;
      if (!ok) {
        err << "error: cannot listen on " << server_cfg.bind << ":" << server_cfg.port << '\n';
        return 1;
      }
      return 0;
    }
  } catch (const ValidationError &e) {
    err << "error: " << e.what() << (e.field().empty() ? "" : " [" + e.field() + "]") << '\n';
    return 2;
  } catch (const RangeError &e) {
    err << "error: " << e.what() << (e.field().empty() ? "" : " [" + e.field() + "]") << '\n';
    return 2;
  } catch (const json::exception &e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

} // namespace photonbench::cli
