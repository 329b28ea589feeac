#pragma once

#include <filesystem>
#include <memory>
#include <string>

namespace photonbench::service {

inline constexpr int kDefaultPort = 8077;
inline constexpr std::size_t kEventQueueCapacity = 64;

struct ServerConfig {
  std::string bind = "127.0.0.1";
  int port = kDefaultPort; ///< 0 picks a free port
  std::filesystem::path workspace;   ///< sessions/{id}/... live here
  std::filesystem::path static_dir;  ///< served at "/" when it exists
};

/// $PHOTONBENCH_WORKSPACE, else ./photonbench-workspace.
std::filesystem::path default_workspace();

/// Local HTTP+JSON front end over sessions, jobs and the correlator.
class Server {
public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server &) = delete;
  Server &operator=(const Server &) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until `stop`.
  bool run();
  /// Stops listening, cancels running jobs and joins their threads.
  void stop();

  int port() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace photonbench::service
