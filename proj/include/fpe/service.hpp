#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "fpe/runtime.hpp"

namespace fpe::service {

inline constexpr const char* kVersion = "0.3.0";

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;  // built review UI bundle, mounted at /
  bool run_loop = false;  // drive the engine in the background; reviews arrive over HTTP
  int max_iter = 10;
};

// HTTP surface over one runtime. JSON in, JSON out; errors come back as
// {"error": message} with 400 (validation), 404, 409, 415 (not JSON) or 502 (client).
class Service {
 public:
  Service(Runtime& rt, ServiceOptions opts);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the socket and returns the bound port. Throws ClientError when the port is taken.
  int bind();
  // Serves until stop(). bind() must have succeeded.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fpe::service
