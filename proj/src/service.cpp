#include <photonbench/service.hpp>

#include <photonbench/analysis.hpp>
#include <photonbench/correlator.hpp>
#include <photonbench/profile.hpp>
#include <photonbench/scan.hpp>
#include <photonbench/tag_io.hpp>

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

namespace photonbench::service {

using nlohmann::json;

namespace {

class NotFound : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Event {
  std::uint64_t seq;
  std::string name;
  json data;
  bool droppable;
};

// Bounded fan-out buffer. When full, the oldest droppable snapshot goes first;
// terminal events are never dropped.
class EventQueue {
public:
  explicit EventQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(std::string name, json data, bool droppable) {
    {
      std::lock_guard lock(m_);
      if (events_.size() >= capacity_) {
        auto it = std::find_if(events_.begin(), events_.end(),
                               [](const Event &e) { return e.droppable; });
        if (it != events_.end()) {
          events_.erase(it);
          ++dropped_;
        }
      }
      events_.push_back({next_seq_++, std::move(name), std::move(data), droppable});
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lock(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  /// Events with seq > after, waiting up to `timeout` for the first one. `finished`
  /// is set once the queue is closed and nothing newer remains.
  std::vector<Event> wait_after(std::uint64_t after, std::chrono::milliseconds timeout,
                                bool &finished) {
    std::unique_lock lock(m_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || next_seq_ - 1 > after; });
    std::vector<Event> out;
    for (const auto &e : events_)
      if (e.seq > after)
        out.push_back(e);
    finished = closed_;
    return out;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(m_);
    return dropped_;
  }

private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<Event> events_;
  std::size_t capacity_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

struct SessionEntry {
  std::unique_ptr<scan::Session> session;
  std::string profile_label;
  std::uint64_t sample_seed = 0;
  std::string created_at;
  std::filesystem::path dir;

  std::mutex m;
  std::vector<std::string> jobs;
  std::string active_job;
};

struct Job {
  explicit Job(std::size_t capacity) : events(capacity) {}

  std::string id;
  std::string kind; ///< "scan" | "hbt"
  std::shared_ptr<SessionEntry> entry;
  scan::AcquisitionControl control;
  EventQueue events;
  std::thread worker;

  std::mutex m;
  std::string status = "running"; ///< running | completed | cancelled | failed
  std::vector<std::vector<std::int64_t>> rows;
  json snapshot;
  json result;
  json error;
};

json error_body(const std::string &code, const std::string &message, const std::string &field) {
  json e{{"code", code}, {"message", message}};
  e["field"] = field.empty() ? json(nullptr) : json(field);
  return {{"schema", correlator::kSchema}, {"error", e}};
}

void send_json(httplib::Response &res, int status, json body) {
  if (!body.contains("schema"))
    body["schema"] = correlator::kSchema;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request &req) {
  if (req.body.empty())
    return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object())
      throw ValidationError("request body must be a JSON object", "body");
    return j;
  } catch (const json::parse_error &e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what(), "body");
  }
}

std::string random_suffix() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(rng() & 0xffffffffULL));
  return buf;
}

void write_file(const std::filesystem::path &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << content;
}

} // namespace

std::filesystem::path default_workspace() {
  if (const char *env = std::getenv("PHOTONBENCH_WORKSPACE"); env && *env)
    return env;
  return std::filesystem::current_path() / "photonbench-workspace";
}

struct Server::Impl {
  ServerConfig config;
  httplib::Server http;
  std::thread listener;
  int bound_port = 0;

  std::mutex m;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::uint64_t session_counter = 0;
  std::uint64_t job_counter = 0;
  bool stopping = false;

  explicit Impl(ServerConfig c) : config(std::move(c)) {
    if (config.workspace.empty())
      config.workspace = default_workspace();
    routes();
  }

  // ------------------------------------------------------------ helpers

  template <class F> auto guarded(F f) {
    return [this, f](const httplib::Request &req, httplib::Response &res) {
      try {
        f(req, res);
      } catch (const ValidationError &e) {
        send_json(res, 400, error_body("validation_error", e.what(), e.field()));
      } catch (const RangeError &e) {
        send_json(res, 400, error_body("out_of_range", e.what(), e.field()));
      } catch (const NotFound &e) {
        send_json(res, 404, error_body("not_found", e.what(), {}));
      } catch (const InfeasibleError &e) {
        send_json(res, 422, error_body("infeasible", e.what(), "sample"));
      } catch (const FitError &e) {
        send_json(res, 422, error_body("fit_failed", e.what(), {}));
      } catch (const json::exception &e) {
        send_json(res, 400, error_body("validation_error", e.what(), "body"));
      } catch (const std::exception &e) {
        send_json(res, 500, error_body("internal", e.what(), {}));
      }
    };
  }

  std::shared_ptr<SessionEntry> find_session(const std::string &id) {
    std::lock_guard lock(m);
    auto it = sessions.find(id);
    if (it == sessions.end())
      throw NotFound("no session '" + id + "'");
    return it->second;
  }

  std::shared_ptr<Job> find_job(const std::string &id) {
    std::lock_guard lock(m);
    auto it = jobs.find(id);
    if (it == jobs.end())
      throw NotFound("no job '" + id + "'");
    return it->second;
  }

  json descriptor(SessionEntry &e) {
    std::lock_guard lock(e.m);
    return {{"schema", correlator::kSchema},
            {"id", e.session->id()},
            {"profile", e.profile_label},
            {"sample_seed", e.sample_seed},
            {"emitter_count", e.session->sample().emitters.size()},
            {"activity", scan::to_string(e.session->activity())},
            {"progress", e.session->progress()},
            {"active_job", e.active_job.empty() ? json(nullptr) : json(e.active_job)},
            {"jobs", e.jobs},
            {"created_at", e.created_at}};
  }

  json job_json(Job &job, bool include_rows) {
    std::lock_guard lock(job.m);
    json j{{"schema", correlator::kSchema},
           {"id", job.id},
           {"kind", job.kind},
           {"session", job.entry->session->id()},
           {"status", job.status},
           {"progress", job.control.progress.load()},
           {"dropped_events", job.events.dropped()}};
    if (job.kind == "scan") {
      j["rows_completed"] = job.rows.size();
      if (include_rows)
        j["rows"] = job.rows;
    } else if (!job.snapshot.is_null()) {
      j["snapshot"] = job.snapshot;
    }
    j["result"] = job.result;
    j["error"] = job.error;
    return j;
  }

  void busy_response(httplib::Response &res, SessionEntry &e, const std::string &message) {
    json body = error_body("busy", message, "session");
    std::string active;
    {
      std::lock_guard lock(e.m);
      active = e.active_job;
    }
    body["error"]["active_job"] = active.empty() ? json(nullptr) : json(active);
    body["error"]["progress"] = e.session->progress();
    send_json(res, 409, body);
  }

  std::shared_ptr<Job> new_job(const std::shared_ptr<SessionEntry> &entry, const std::string &kind) {
    auto job = std::make_shared<Job>(kEventQueueCapacity);
    job->kind = kind;
    job->entry = entry;
    std::lock_guard lock(m);
    job->id = "j" + std::to_string(++job_counter) + "-" + random_suffix();
    jobs[job->id] = job;
    {
      std::lock_guard elock(entry->m);
      entry->jobs.push_back(job->id);
      entry->active_job = job->id;
    }
    return job;
  }

  static void finish(Job &job, const std::string &status, json result, json error) {
    {
      std::lock_guard lock(job.m);
      job.status = status;
      job.result = std::move(result);
      job.error = std::move(error);
    }
    {
      std::lock_guard elock(job.entry->m);
      if (job.entry->active_job == job.id)
        job.entry->active_job.clear();
    }
    json payload{{"status", status}};
    {
      std::lock_guard lock(job.m);
      payload["result"] = job.result;
      payload["error"] = job.error;
    }
    job.events.push(status, std::move(payload), false);
    job.events.close();
  }

  static json error_json(const std::exception &e) {
    std::string field;
    if (auto *v = dynamic_cast<const ValidationError *>(&e))
      field = v->field();
    else if (auto *r = dynamic_cast<const RangeError *>(&e))
      field = r->field();
    return error_body("acquisition_failed", e.what(), field)["error"];
  }

  // ------------------------------------------------------------ routes

  void routes() {
    http.Post("/sessions", guarded([this](const auto &req, auto &res) { create_session(req, res); }));
    http.Get(R"(/sessions/([^/]+))", guarded([this](const auto &req, auto &res) {
               send_json(res, 200, descriptor(*find_session(req.matches[1])));
             }));
    http.Post(R"(/sessions/([^/]+)/scan)",
              guarded([this](const auto &req, auto &res) { start_scan(req, res); }));
    http.Post(R"(/sessions/([^/]+)/hbt)",
              guarded([this](const auto &req, auto &res) { start_hbt(req, res); }));
    http.Get(R"(/sessions/([^/]+)/export/([^/]+))",
             guarded([this](const auto &req, auto &res) { export_artifact(req, res); }));
    http.Get(R"(/jobs/([^/]+))", guarded([this](const auto &req, auto &res) {
               const bool rows = req.get_param_value("rows") != "false";
               send_json(res, 200, job_json(*find_job(req.matches[1]), rows));
             }));
    http.Post(R"(/jobs/([^/]+)/cancel)", guarded([this](const auto &req, auto &res) {
                auto job = find_job(req.matches[1]);
                job->control.cancel.store(true);
                send_json(res, 202, job_json(*job, false));
              }));
    http.Get(R"(/jobs/([^/]+)/events)",
             guarded([this](const auto &req, auto &res) { stream_events(req, res); }));
    http.Post("/correlate", guarded([](const auto &req, auto &res) { correlate(req, res); }));

    if (!config.static_dir.empty() && std::filesystem::is_directory(config.static_dir)) {
      http.set_mount_point("/", config.static_dir.string());
    } else {
      http.Get("/", [](const httplib::Request &, httplib::Response &res) {
        send_json(res, 200,
                  {{"service", "photonbench"},
                   {"endpoints",
                    {"POST /sessions", "GET /sessions/{id}", "POST /sessions/{id}/scan",
                     "POST /sessions/{id}/hbt", "GET /sessions/{id}/export/{artifact}",
                     "GET /jobs/{id}", "GET /jobs/{id}/events", "POST /jobs/{id}/cancel",
                     "POST /correlate"}}});
      });
    }
  }

  void create_session(const httplib::Request &req, httplib::Response &res) {
    const json body = parse_body(req);
    std::string label = body.value("profile", std::string("reference"));
    if (body.value("demo_fast", false) && label.find("+demo-fast") == std::string::npos)
      label += "+demo-fast";
    auto profile = profile::load_profile(label);

    emitter::SampleField sample;
    std::uint64_t seed = 42;
    if (body.contains("emitters")) {
      for (const auto &e : body["emitters"])
        sample.emitters.push_back(emitter::emitter_from_json(e));
      for (const auto &e : sample.emitters)
        emitter::validate(e);
      sample.spec.rng_seed = 0;
      seed = 0;
    } else {
      emitter::SampleSpec spec =
          emitter::sample_spec_from_json(body.value("sample", json::object()));
      if (body.contains("seed"))
        spec.rng_seed = body["seed"].get<std::uint64_t>();
      seed = spec.rng_seed;
      sample = emitter::generate_sample(spec);
    }

    auto entry = std::make_shared<SessionEntry>();
    std::string id;
    {
      std::lock_guard lock(m);
      id = "s" + std::to_string(++session_counter) + "-" + random_suffix();
    }
    entry->session = std::make_unique<scan::Session>(id, profile, sample);
    entry->profile_label = profile.name;
    entry->sample_seed = seed;
    entry->created_at = utc_now();
    entry->dir = config.workspace / "sessions" / id;
    std::filesystem::create_directories(entry->dir);
    write_file(entry->dir / "sample.json", emitter::to_json(sample).dump(2) + "\n");
    write_file(entry->dir / "profile.json", profile::to_json(profile).dump(2) + "\n");
    {
      std::lock_guard lock(m);
      sessions[id] = entry;
    }
    const json d = descriptor(*entry);
    write_file(entry->dir / "session.json", d.dump(2) + "\n");
    send_json(res, 201, d);
  }

  void start_scan(const httplib::Request &req, httplib::Response &res) {
    auto entry = find_session(req.matches[1]);
    json body = parse_body(req);
    body["profile"] = entry->profile_label;
    const scan::ScanConfig cfg = scan::scan_config_from_json(body);
    scan::plan_raster(cfg, entry->session->profile().actuator); // range errors surface as 400

    std::unique_ptr<scan::ActivityGuard> guard;
    try {
      guard = std::make_unique<scan::ActivityGuard>(*entry->session, scan::Activity::scanning);
    } catch (const scan::BusyError &e) {
      busy_response(res, *entry, e.what());
      return;
    }
    auto job = new_job(entry, "scan");
    job->control.on_row = [raw = job.get()](int row, const std::vector<std::int64_t> &counts) {
      {
        std::lock_guard lock(raw->m);
        raw->rows.push_back(counts);
      }
      raw->events.push("row", {{"row", row}, {"counts", counts}, {"progress", raw->control.progress.load()}},
                       true);
    };
    job->worker = std::thread([job, cfg, g = std::move(guard)]() mutable {
      try {
        auto image = scan::run_scan(*g, cfg, &job->control);
        g.reset();
        const auto &dir = job->entry->dir;
        scan::save_scan(dir / "scan.csv", image);
        json result = scan::metadata_json(image);
        result["spots"] = analysis::to_json(analysis::find_spots(image.image, 5.0));
        result["artifacts"] = {"scan.csv", "scan.json"};
        finish(*job, image.complete ? "completed" : "cancelled", std::move(result), nullptr);
      } catch (const std::exception &e) {
        g.reset();
        finish(*job, "failed", nullptr, error_json(e));
      }
    });
    send_json(res, 202, {{"job", job->id}, {"kind", "scan"}, {"session", entry->session->id()}});
  }

  void start_hbt(const httplib::Request &req, httplib::Response &res) {
    auto entry = find_session(req.matches[1]);
    const scan::HbtConfig cfg = scan::hbt_config_from_json(parse_body(req));
    scan::command_voltages(cfg.position, cfg.center, entry->session->profile().actuator);

    std::unique_ptr<scan::ActivityGuard> guard;
    try {
      guard = std::make_unique<scan::ActivityGuard>(*entry->session, scan::Activity::hbt);
    } catch (const scan::BusyError &e) {
      busy_response(res, *entry, e.what());
      return;
    }
    auto job = new_job(entry, "hbt");
    job->control.on_chunk = [raw = job.get()](const correlator::CorrelationHistogram &h,
                                              double elapsed_s) {
      json snap = correlator::to_json(h);
      snap["elapsed_s"] = elapsed_s;
      {
        std::lock_guard lock(raw->m);
        raw->snapshot = snap;
      }
      raw->events.push("snapshot", std::move(snap), true);
    };
    job->worker = std::thread([job, cfg, g = std::move(guard)]() mutable {
      try {
        auto hist = scan::run_hbt(*g, cfg, &job->control);
        g.reset();
        const auto &dir = job->entry->dir;
        write_file(dir / "hbt.json", correlator::to_json(hist).dump(2) + "\n");
        {
          std::ofstream csv(dir / "hbt.csv");
          correlator::write_csv(csv, hist);
        }
        json result{{"histogram", correlator::to_json(hist)},
                     {"artifacts", {"hbt.json", "hbt.csv"}}};
        try {
          const auto fit = analysis::fit_g2(hist);
          json fj = analysis::to_json(fit);
          fj["verdict"] = analysis::to_string(analysis::classify_single_emitter(fit));
          write_file(dir / "fit.json", fj.dump(2) + "\n");
          result["fit"] = fj;
          result["artifacts"].push_back("fit.json");
        } catch (const std::exception &e) {
          result["fit"] = nullptr;
          result["fit_error"] = e.what();
        }
        const bool complete = hist.metadata.value("complete", true);
        finish(*job, complete ? "completed" : "cancelled", std::move(result), nullptr);
      } catch (const std::exception &e) {
        g.reset();
        finish(*job, "failed", nullptr, error_json(e));
      }
    });
    send_json(res, 202, {{"job", job->id}, {"kind", "hbt"}, {"session", entry->session->id()}});
  }

  void export_artifact(const httplib::Request &req, httplib::Response &res) {
    auto entry = find_session(req.matches[1]);
    const std::string name = req.matches[2];
    static const std::regex allowed(R"([A-Za-z0-9_-]+(\.[A-Za-z0-9]+)?)");
    if (!std::regex_match(name, allowed))
      throw ValidationError("invalid artifact name '" + name + "'", "artifact");
    const auto path = entry->dir / name;
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw NotFound("session " + entry->session->id() + " has no artifact '" + name + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const auto ext = path.extension().string();
    const char *type = ext == ".json"  ? "application/json"
                       : ext == ".csv" ? "text/csv"
                                       : "application/octet-stream";
    res.set_header("Content-Disposition", "attachment; filename=\"" + name + "\"");
    res.set_content(buf.str(), type);
  }

  void stream_events(const httplib::Request &req, httplib::Response &res) {
    auto job = find_job(req.matches[1]);
    std::uint64_t since = 0;
    if (req.has_param("since")) {
      try {
        since = std::stoull(req.get_param_value("since"));
      } catch (const std::exception &) {
        throw ValidationError("since must be a non-negative integer", "since");
      }
    }
    res.set_chunked_content_provider(
        "application/x-ndjson", [job, last = since](std::size_t, httplib::DataSink &sink) mutable {
          bool finished = false;
          const auto events = job->events.wait_after(last, std::chrono::milliseconds(250), finished);
          for (const auto &e : events) {
            const std::string line =
                json{{"seq", e.seq}, {"event", e.name}, {"data", e.data}}.dump() + "\n";
            if (!sink.write(line.data(), line.size()))
              return false;
            last = e.seq;
          }
          if (finished)
            sink.done();
          return true;
        });
  }

  static void correlate(const httplib::Request &req, httplib::Response &res) {
    if (!req.is_multipart_form_data())
      throw ValidationError("expected multipart/form-data with tag files 'a' and 'b'", "body");
    for (const char *key : {"a", "b"})
      if (!req.has_file(key))
        throw ValidationError(std::string("missing tag file '") + key + "'", key);
    correlator::HistogramSpec spec;
    auto field = [&](const char *key) -> std::optional<std::string> {
      if (!req.has_file(key))
        return std::nullopt;
      return req.get_file_value(key).content;
    };
    try {
      if (auto v = field("bin_width_ps"))
        spec.bin_width = std::stoll(*v);
      if (auto v = field("bins"))
        spec.bin_count = std::stoi(*v);
    } catch (const std::exception &) {
      throw ValidationError("bin_width_ps and bins must be integers", "bins");
    }
    correlator::validate(spec);
    auto a = tag_io::from_binary_string(req.get_file_value("a").content);
    auto b = tag_io::from_binary_string(req.get_file_value("b").content);
    const auto hist = correlator::correlate_loaded(std::move(a), std::move(b), spec);
    const std::string format = field("format").value_or("json");
    if (format == "csv") {
      std::ostringstream out;
      correlator::write_csv(out, hist);
      res.set_content(out.str(), "text/csv");
    } else if (format == "json") {
      res.set_content(correlator::to_json(hist).dump(2) + "\n", "application/json");
    } else {
      throw ValidationError("format must be json or csv", "format");
    }
  }

  void shutdown() {
    std::vector<std::shared_ptr<Job>> all;
    {
      std::lock_guard lock(m);
      if (stopping)
        return;
      stopping = true;
      for (auto &[id, job] : jobs)
        all.push_back(job);
    }
    for (auto &job : all)
      job->control.cancel.store(true);
    for (auto &job : all)
      if (job->worker.joinable())
        job->worker.join();
    http.stop();
    if (listener.joinable())
      listener.join();
  }
};

Server::Server(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Server::~Server() { stop(); }

int Server::start() {
  const int port = impl_->config.port == 0
                       ? impl_->http.bind_to_any_port(impl_->config.bind)
                       : (impl_->http.bind_to_port(impl_->config.bind, impl_->config.port)
                              ? impl_->config.port
                              : -1);
  if (port < 0)
    throw std::runtime_error("cannot bind " + impl_->config.bind + ":" +
                             std::to_string(impl_->config.port));
  impl_->bound_port = port;
  impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

bool Server::run() {
  if (impl_->config.port == 0) {
    impl_->bound_port = impl_->http.bind_to_any_port(impl_->config.bind);
    return impl_->bound_port > 0 && impl_->http.listen_after_bind();
  }
  impl_->bound_port = impl_->config.port;
  return impl_->http.listen(impl_->config.bind, impl_->config.port);
}

void Server::stop() { impl_->shutdown(); }

int Server::port() const { return impl_->bound_port; }

} // namespace photonbench::service
