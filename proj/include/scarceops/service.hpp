#pragma once

#include <memory>

#include "scarceops/monitor.hpp"

namespace scarceops {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  // feedback-driven alerts trigger continuous training automatically
  bool auto_ct = true;
  size_t ct_k = 1;
  SearchSpace ct_space;
};

// JSON-over-HTTP surface for the whole pipeline. One instance serves one
// store root; stores are opened per request (files are the source of truth),
// CT cycles run on the embedded CtManager, one in flight per task.
class Service {
public:
  Service(fs::path store_root, ServiceConfig config);
  ~Service();

  // Binds and serves on a background thread; returns false when the port is
  // taken.
  bool start();
  void stop();
  int port() const { return config_.port; }
  CtManager& ct();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  ServiceConfig config_;
};

}  // namespace scarceops
