#include "scarceops/service.hpp"

#include <thread>

#include "httplib.h"
#include "scarceops/classifier.hpp"

namespace scarceops {

namespace {

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

void reply_json(httplib::Response& res, int status, const json& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

// Error -> HTTP status mapping shared by every endpoint.
void reply_error(httplib::Response& res, const std::exception& e) {
  if (const auto* err = dynamic_cast<const NotFoundError*>(&e)) {
    reply_json(res, 404, error_body("not_found", err->what()));
  } else if (const auto* verr = dynamic_cast<const ValidationError*>(&e)) {
    reply_json(res, 400, error_body("validation", verr->what()));
  } else if (const auto* uerr = dynamic_cast<const UsageError*>(&e)) {
    reply_json(res, 400, error_body("validation", uerr->what()));
  } else {
    reply_json(res, 500, error_body("internal", e.what()));
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

// Raw image payload: 3072 bytes u8 CHW, or 1024 bytes grayscale replicated.
nn::TensorPtr image_from_bytes(const std::string& body) {
  constexpr size_t kRgb = 3 * 32 * 32;
  constexpr size_t kGray = 32 * 32;
  if (body.empty()) throw ValidationError("empty image payload");
  if (body.size() != kRgb && body.size() != kGray)
    throw ValidationError("image payload must be " + std::to_string(kRgb) +
                          " (u8 CHW) or " + std::to_string(kGray) +
                          " (u8 gray) bytes, got " +
                          std::to_string(body.size()));
  auto t = nn::Tensor::zeros({1, 3, 32, 32});
  const auto* p = reinterpret_cast<const uint8_t*>(body.data());
  if (body.size() == kRgb) {
    for (size_t i = 0; i < kRgb; ++i)
      t->data[i] = static_cast<float>(p[i]) / 255.0f;
  } else {
    for (size_t i = 0; i < kGray; ++i) {
      const float v = static_cast<float>(p[i]) / 255.0f;
      t->data[i] = v;
      t->data[kGray + i] = v;
      t->data[2 * kGray + i] = v;
    }
  }
  return t;
}

uint16_t resolve_label(const Stores& stores, const TaskSpec& task,
                       const json& label) {
  const DatasetRecord record =
      stores.datasets.get(task.dataset_id, task.dataset_version);
  if (label.is_number_integer()) {
    const long v = label.get<long>();
    if (v < 0 || v >= static_cast<long>(record.class_labels.size()))
      throw ValidationError("label index out of range");
    return static_cast<uint16_t>(v);
  }
  const std::string name = label.get<std::string>();
  for (size_t i = 0; i < record.class_labels.size(); ++i)
    if (record.class_labels[i] == name) return static_cast<uint16_t>(i);
  throw ValidationError("unknown class label: " + name);
}

}  // namespace

struct Service::Impl {
  fs::path root;
  ServiceConfig config;
  httplib::Server server;
  std::thread thread;
  CtManager ct;

  Impl(fs::path r, ServiceConfig c)
      : root(std::move(r)), config(std::move(c)), ct(root) {}

  template <typename Fn>
  void handle(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      reply_error(res, e);
    }
  }

  void routes() {
    server.Get("/v1/health",
               [](const httplib::Request&, httplib::Response& res) {
                 reply_json(res, 200, {{"status", "ok"}});
               });

    server.Post("/v1/datasets", [this](const httplib::Request& req,
                                       httplib::Response& res) {
      handle(res, [&]() {
        if (!req.is_multipart_form_data())
          throw ValidationError(
              "POST /v1/datasets expects a multipart container "
              "(manifest, data, labels files + name/task_kind fields)");
        auto field = [&](const char* k) -> std::string {
          if (!req.has_file(k))
            throw ValidationError(std::string("missing multipart part: ") + k);
          return req.get_file_value(k).content;
        };
        const json manifest = json::parse(field("manifest"));
        const std::string data = field("data");
        const std::string labels = field("labels");
        ImageContainer c = ImageContainer::from_manifest(
            manifest, std::vector<uint8_t>(data.begin(), data.end()),
            std::vector<uint8_t>(labels.begin(), labels.end()));
        const std::string name =
            req.has_file("name") ? req.get_file_value("name").content : c.name;
        const std::string kind = req.has_file("task_kind")
                                     ? req.get_file_value("task_kind").content
                                     : "classification";
        Stores stores(root);
        const DatasetRecord r = stores.datasets.register_container(
            c, name, kind, "uploaded via POST /v1/datasets");
        reply_json(res, 200, {{"dataset_id", r.dataset_id},
                              {"version", r.version},
                              {"content_hash", r.content_hash}});
      });
    });

    server.Get(R"(/v1/datasets/([^/]+)/similar)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&]() {
                   const std::string id = req.matches[1];
                   size_t k = 5;
                   if (req.has_param("k")) k = std::stoul(req.get_param_value("k"));
                   Stores stores(root);
                   auto emb = stores.datasets.load_embedding(id, -1);
                   if (!emb)
                     throw ValidationError("dataset " + id +
                                           " has no fingerprints attached");
                   json results = json::array();
                   for (const auto& [record, distance] :
                        stores.datasets.nearest_datasets(*emb, k))
                     results.push_back({{"dataset_id", record.dataset_id},
                                        {"version", record.version},
                                        {"distance", distance}});
                   reply_json(res, 200, {{"results", results}});
                 });
               });

    server.Post("/v1/tasks", [this](const httplib::Request& req,
                                    httplib::Response& res) {
      handle(res, [&]() {
        const json body = parse_body(req);
        const std::string dataset_id = body.at("dataset_id").get<std::string>();
        const std::string metric = body.at("metric").get<std::string>();
        const std::string kind = body.at("task_kind").get<std::string>();
        Stores stores(root);
        int version = body.value("version", -1);
        if (version < 0) version = stores.datasets.latest_version(dataset_id);
        stores.datasets.get(dataset_id, version);  // must exist
        if (!metric_supported(metric, kind))
          throw ValidationError("metric " + metric +
                                " unsupported for task kind " + kind);
        const TaskSpec t = stores.tasks.create(dataset_id, version, metric, kind);
        reply_json(res, 200, {{"task_id", t.task_id}});
      });
    });

    server.Post(R"(/v1/tasks/([^/]+)/develop)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle(res, [&]() {
                    const std::string task_id = req.matches[1];
                    const json body = parse_body(req);
                    SearchSpace space = config.ct_space;
                    space.trials = body.value("trials", space.trials);
                    space.seed = body.value("seed", space.seed);
                    const size_t k = body.value("k", size_t{1});
                    Stores stores(root);
                    auto result = develop(stores.datasets, stores.models,
                                          stores.tasks, task_id, k, space);
                    reply_json(res, 200,
                               {{"run_ids", result.run_ids},
                                {"best_model_id", result.best_model.model_id},
                                {"A_t", result.best_metric}});
                  });
                });

    server.Post(R"(/v1/tasks/([^/]+)/deploy)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle(res, [&]() {
                    const std::string task_id = req.matches[1];
                    const json body = parse_body(req);
                    Stores stores(root);
                    const Deployment d = deploy(
                        stores, task_id, body.at("model_id").get<std::string>());
                    reply_json(res, 200, d.to_json());
                  });
                });

    server.Post(R"(/v1/tasks/([^/]+)/predict)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle(res, [&]() {
                    const std::string task_id = req.matches[1];
                    Stores stores(root);
                    const PredictResult p =
                        predict(stores, task_id, image_from_bytes(req.body));
                    reply_json(res, 200,
                               {{"prediction",
                                 {{"class_index", p.class_index},
                                  {"class_label", p.class_label},
                                  {"scores", p.scores}}},
                                {"fingerprint", p.fingerprint}});
                  });
                });

    server.Post(R"(/v1/tasks/([^/]+)/feedback)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle(res, [&]() {
                    const std::string task_id = req.matches[1];
                    const json body = parse_body(req);
                    Stores stores(root);
                    const TaskSpec task = stores.tasks.get(task_id);
                    const uint16_t label =
                        body.contains("label")
                            ? resolve_label(stores, task, body.at("label"))
                            : 0;
                    MetricPoint point;
                    if (body.contains("image_b64")) {
                      const auto bytes =
                          base64_decode(body.at("image_b64").get<std::string>());
                      point = feedback(
                          stores, task_id,
                          image_from_bytes(std::string(bytes.begin(), bytes.end())),
                          label);
                    } else if (body.contains("image_id")) {
                      const json& ref = body.at("image_id");
                      point = feedback_by_ref(
                          stores, task_id,
                          ref.at("dataset_id").get<std::string>(),
                          ref.value("version", -1),
                          ref.at("index").get<size_t>(), label);
                    } else {
                      throw ValidationError(
                          "feedback needs image_b64 or image_id");
                    }
                    auto alerts = check_drift_for_task(stores, task_id);
                    if (!alerts.empty() && config.auto_ct)
                      ct.trigger(task_id, alerts.front(), config.ct_k,
                                 config.ct_space);
                    json alerts_j = json::array();
                    for (const auto& a : alerts) alerts_j.push_back(a.to_json());
                    reply_json(res, 200,
                               {{"A_t", point.value},
                                {"window", point.window},
                                {"alerts", alerts_j}});
                  });
                });

    server.Get(R"(/v1/tasks/([^/]+)/metrics)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&]() {
                   Stores stores(root);
                   stores.tasks.get(req.matches[1]);  // 404 on unknown task
                   json points = json::array();
                   for (const auto& p : metric_points(stores, req.matches[1]))
                     points.push_back(p.to_json());
                   reply_json(res, 200, {{"points", points}});
                 });
               });

    server.Get(R"(/v1/tasks/([^/]+)/alerts)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&]() {
                   Stores stores(root);
                   stores.tasks.get(req.matches[1]);
                   json alerts = json::array();
                   for (const auto& a : alert_log(stores, req.matches[1]))
                     alerts.push_back(a.to_json());
                   reply_json(res, 200, {{"alerts", alerts}});
                 });
               });
  }
};

Service::Service(fs::path store_root, ServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(store_root), config)),
      config_(std::move(config)) {
  impl_->routes();
}

Service::~Service() { stop(); }

bool Service::start() {
  if (!impl_->server.bind_to_port(config_.host, config_.port)) return false;
  impl_->thread = std::thread([this]() { impl_->server.listen_after_bind(); });
  // wait until the server accepts connections
  for (int i = 0; i < 100 && !impl_->server.is_running(); ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  return true;
}

void Service::stop() {
  if (!impl_) return;
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->ct.wait_idle();
}

CtManager& Service::ct() { return impl_->ct; }

}  // namespace scarceops
