#include "fpe/service.hpp"

#include <atomic>
#include <charconv>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/prototype_miner.hpp"

namespace fs = std::filesystem;

namespace fpe::service {

namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, {{"error", msg}}, status);
}

std::optional<std::int64_t> int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const auto v = req.get_param_value(name);
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || out < 0) {
    throw ValidationError(std::string("bad integer for ") + name + ": " + v);
  }
  return out;
}

// Wraps a handler with the error-to-status mapping.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFound& e) {
      send_error(res, 404, e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const ClientError& e) {
      send_error(res, 502, e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

// Highest t with iter-<t>/<file> present.
std::optional<int> latest_with(const fs::path& artifacts, const std::string& file) {
  std::optional<int> best;
  if (!fs::is_directory(artifacts)) return best;
  for (const auto& entry : fs::directory_iterator(artifacts)) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("iter-") || !fs::exists(entry.path() / file)) continue;
    int t = 0;
    const auto [p, ec] = std::from_chars(name.data() + 5, name.data() + name.size(), t);
    if (ec == std::errc() && p == name.data() + name.size() && (!best || t > *best)) best = t;
  }
  return best;
}

int iteration_for(const httplib::Request& req, const fs::path& artifacts, const std::string& file) {
  if (auto t = int_param(req, "iteration")) return static_cast<int>(*t);
  const auto t = latest_with(artifacts, file);
  if (!t) throw NotFound("no iteration has produced " + file + " yet");
  return *t;
}

}  // namespace

struct Service::Impl {
  Runtime& rt;
  ServiceOptions opts;
  httplib::Server server;
  int port = -1;
  std::thread loop_thread;
  std::atomic<bool> stopping{false};
  std::mutex listen_mu;
  bool listening = false;  // listen() got past its stop check

  Impl(Runtime& r, ServiceOptions o) : rt(r), opts(std::move(o)) {
    // No SO_REUSEPORT: a second instance on the same port must fail to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    routes();
  }

  fs::path artifacts() const { return rt.config.artifacts; }

  void routes() {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"status", "ok"}, {"version", kVersion}});
    });

    server.Get("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
      annotate::QueueFilter f;
      if (req.has_param("modality")) f.modality = parse_modality(req.get_param_value("modality"));
      if (auto t = int_param(req, "iteration")) f.iteration = static_cast<int>(*t);
      if (req.has_param("route")) f.route = annotate::parse_route(req.get_param_value("route"));
      const auto cursor = int_param(req, "cursor").value_or(0);
      const auto limit = int_param(req, "limit").value_or(50);
      if (limit < 1 || limit > 1000) throw ValidationError("limit must be in [1, 1000]");
      const auto page = rt.queue.queue(f, static_cast<std::size_t>(cursor), static_cast<std::size_t>(limit));
      Json items = Json::array();
      for (const auto& r : page.items) items.push_back(annotate::to_json(r));
      send_json(res, {{"items", items},
                      {"total", page.total},
                      {"next_cursor", page.next_cursor ? Json(*page.next_cursor) : Json(nullptr)}});
    }));

    server.Get(R"(/api/record/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.matches[1].str();
      const auto r = rt.queue.get(id);
      if (!r) throw NotFound("no record " + id);
      send_json(res, annotate::to_json(*r));
    }));

    server.Post(R"(/api/record/([^/]+)/review)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.get_header_value("Content-Type").starts_with("application/json")) {
        send_error(res, 415, "expected application/json");
        return;
      }
      const auto body = Json::parse(req.body);
      if (!body.is_object()) throw ValidationError("review body must be an object");
      const auto action = annotate::parse_action(body.at("action").get<std::string>());
      const auto edited = body.value("edited_text", std::string());
      const auto reviewer = body.value("reviewer", std::string());
      if (reviewer.empty()) throw ValidationError("reviewer is required");
      const auto r = rt.queue.submit_review(req.matches[1].str(), action, edited, reviewer);
      send_json(res, annotate::to_json(r));
    }));

    server.Get("/api/stats", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<int> t;
      if (auto v = int_param(req, "iteration")) t = static_cast<int>(*v);
      send_json(res, annotate::to_json(rt.queue.stats(t)));
    }));

    server.Get("/api/iteration", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto path = artifacts() / "state.json";
      if (!fs::exists(path)) throw NotFound("the loop has not started");
      send_json(res, Json::parse(jsonl::read_file(path)));
    }));

    server.Get("/api/error-distribution", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const int t = iteration_for(req, artifacts(), "error_distribution.json");
      const auto path = rt.engine->iteration_dir(t) / "error_distribution.json";
      if (!fs::exists(path)) throw NotFound("no error distribution for iteration " + std::to_string(t));
      auto body = Json::parse(jsonl::read_file(path));
      body["iteration"] = t;
      send_json(res, body);
    }));

    server.Get("/api/prototypes", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const int t = iteration_for(req, artifacts(), "prototypes.jsonl");
      const auto path = rt.engine->iteration_dir(t) / "prototypes.jsonl";
      if (!fs::exists(path)) throw NotFound("no prototypes for iteration " + std::to_string(t));
      const auto set = proto::read_prototypes(path);
      Json items = Json::array();
      for (const auto& p : set.prototypes) {
        items.push_back({{"prototype_id", p.prototype_id},
                         {"visual_anchor", p.visual_anchor},
                         {"member_count", p.member_ids.size()},
                         {"dominant_capabilities", p.dominant_capabilities}});
      }
      send_json(res, {{"iteration", t}, {"N_c", set.prototypes.size()}, {"prototypes", items}});
    }));

    if (opts.static_dir) {
      if (!server.set_mount_point("/", opts.static_dir->string())) {
        throw ValidationError("static directory does not exist: " + opts.static_dir->string());
      }
    }
  }

  void drive_loop() {
    int done = 0;
    while (!stopping && done < opts.max_iter) {
      loop::IterationState s;
      try {
        s = rt.engine->run_iteration();
      } catch (const std::exception& e) {
        spdlog::error("background loop stopped: {}", e.what());
        return;
      }
      if (s.status == loop::LoopStatus::Halted && s.halt_reason == "awaiting review") {
        rt.queue.wait_until_drained(s.t, std::chrono::milliseconds(500));
        continue;
      }
      if (s.status != loop::LoopStatus::Running) {
        spdlog::info("background loop finished: {}", to_string(s.status));
        return;
      }
      ++done;
    }
  }
};

Service::Service(Runtime& rt, ServiceOptions opts) : impl_(std::make_unique<Impl>(rt, std::move(opts))) {}

Service::~Service() {
  stop();
  if (impl_->loop_thread.joinable()) impl_->loop_thread.join();
}

int Service::bind() {
  auto& s = impl_->server;
  if (impl_->opts.port == 0) {
    impl_->port = s.bind_to_any_port(impl_->opts.host);
  } else {
    impl_->port = s.bind_to_port(impl_->opts.host, impl_->opts.port) ? impl_->opts.port : -1;
  }
  if (impl_->port < 0) {
    throw ClientError("cannot bind " + impl_->opts.host + ":" + std::to_string(impl_->opts.port) + " (port in use?)");
  }
  return impl_->port;
}

void Service::listen() {
  if (impl_->port < 0) throw ValidationError("listen() before bind()");
  if (impl_->opts.run_loop && !impl_->loop_thread.joinable()) {
    impl_->loop_thread = std::thread([this] { impl_->drive_loop(); });
  }
  {
    std::lock_guard lock(impl_->listen_mu);
    if (impl_->stopping) return;
    impl_->listening = true;
  }
  spdlog::info("serving on http://{}:{}", impl_->opts.host, impl_->port);
  impl_->server.listen_after_bind();
}

void Service::stop() {
  bool listening = false;
  {
    std::lock_guard lock(impl_->listen_mu);
    impl_->stopping = true;
    listening = impl_->listening;
  }
  // A stop racing a fresh listen() would otherwise be lost before the accept loop starts.
  if (listening) impl_->server.wait_until_ready();
  impl_->server.stop();
}

}  // namespace fpe::service
