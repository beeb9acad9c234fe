#include <atomic>
#include <chrono>
#include <iostream>
#include <thread>

#include <httplib.h>

#include "sni/service.hpp"

namespace sni {

bool serve_http(EditService& service, const HttpOptions& options, std::stop_token stop) {
  httplib::Server server;
  auto handle = [&service, &options](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.dispatch(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
    if (options.cors) res.set_header("Access-Control-Allow-Origin", "*");
  };
  server.Get(R"(/.*)", handle);
  server.Post(R"(/.*)", handle);
  server.Options(R"(/.*)", [&options](const httplib::Request&, httplib::Response& res) {
    if (options.cors) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
    res.status = 204;
  });
  int port = options.port;
  if (port == 0) {
    port = server.bind_to_any_port(options.host);
    if (port < 0) return false;
  } else if (!server.bind_to_port(options.host, port)) {
    return false;
  }
  std::cerr << "listening on http://" << options.host << ":" << port << "\n";
  if (options.on_listening) options.on_listening(port);

  std::atomic<bool> finished{false};
  std::thread watcher;
  if (stop.stop_possible()) {
    watcher = std::thread([&] {
      while (!finished) {
        if (stop.stop_requested()) {
          server.wait_until_ready();
          server.stop();
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    });
  }
  const bool ok = server.listen_after_bind();
  finished = true;
  if (watcher.joinable()) watcher.join();
  return ok;
}

}  // namespace sni
