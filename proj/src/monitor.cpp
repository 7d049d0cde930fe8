#include "scarceops/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "scarceops/classifier.hpp"

namespace scarceops {

json Deployment::to_json() const {
  return {{"task_id", task_id},
          {"model_id", model_id},
          {"deployed_at", deployed_at},
          {"status", status}};
}

Deployment Deployment::from_json(const json& j) {
  return {j.at("task_id").get<std::string>(),
          j.at("model_id").get<std::string>(),
          j.at("deployed_at").get<std::string>(),
          j.at("status").get<std::string>()};
}

json Alert::to_json() const {
  return {{"kind", kind},         {"task_id", task_id},
          {"value", value},       {"threshold", threshold},
          {"window_seq", window_seq}, {"created_at", created_at}};
}

Alert Alert::from_json(const json& j) {
  Alert a;
  a.kind = j.at("kind").get<std::string>();
  a.task_id = j.at("task_id").get<std::string>();
  a.value = j.at("value").get<double>();
  a.threshold = j.at("threshold").get<double>();
  a.window_seq = j.at("window_seq").get<long>();
  a.created_at = j.value("created_at", "");
  return a;
}

json MetricPoint::to_json() const {
  return {{"timestamp", timestamp}, {"value", value}, {"window", window}};
}

MetricPoint MetricPoint::from_json(const json& j) {
  return {j.at("timestamp").get<std::string>(), j.at("value").get<double>(),
          j.at("window").get<size_t>()};
}

json MonitorState::to_json() const {
  json samples = json::array();
  for (const auto& s : window)
    samples.push_back({{"fingerprint", s.fingerprint},
                       {"score", s.score},
                       {"label", s.label},
                       {"image_offset", s.image_offset}});
  json fired = json::object();
  for (const auto& [k, v] : fired_at) fired[k] = v;
  return {{"task_id", task_id},
          {"model_id", model_id},
          {"embedder_version", embedder_version},
          {"mu_ref", mu_ref},
          {"sigma_ref", sigma_ref},
          {"a_base", a_base},
          {"window_size", window_size},
          {"metric_drop_delta", metric_drop_delta},
          {"z_threshold", z_threshold},
          {"window", samples},
          {"seq", seq},
          {"fired_at", fired}};
}

MonitorState MonitorState::from_json(const json& j) {
  MonitorState s;
  s.task_id = j.at("task_id").get<std::string>();
  s.model_id = j.at("model_id").get<std::string>();
  s.embedder_version = j.at("embedder_version").get<std::string>();
  s.mu_ref = j.at("mu_ref").get<std::vector<float>>();
  s.sigma_ref = j.at("sigma_ref").get<std::vector<float>>();
  s.a_base = j.at("a_base").get<double>();
  s.window_size = j.at("window_size").get<size_t>();
  s.metric_drop_delta = j.at("metric_drop_delta").get<double>();
  s.z_threshold = j.at("z_threshold").get<double>();
  for (const auto& e : j.at("window")) {
    FeedbackSample fs;
    fs.fingerprint = e.at("fingerprint").get<std::vector<float>>();
    fs.score = e.at("score").get<double>();
    fs.label = e.at("label").get<uint16_t>();
    fs.image_offset = e.at("image_offset").get<long>();
    s.window.push_back(std::move(fs));
  }
  s.seq = j.at("seq").get<long>();
  for (const auto& [k, v] : j.at("fired_at").items())
    s.fired_at[k] = v.get<long>();
  return s;
}

double windowed_metric(const MonitorState& state) {
  if (state.window.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : state.window) acc += s.score;
  return acc / static_cast<double>(state.window.size());
}

std::vector<Alert> check_drift(MonitorState& state) {
  std::vector<Alert> fired;
  if (state.window.size() < state.window_size) return fired;

  auto can_fire = [&](const std::string& kind) {
    auto it = state.fired_at.find(kind);
    return it == state.fired_at.end() ||
           state.seq >= it->second + static_cast<long>(state.window_size);
  };
  auto fire = [&](const std::string& kind, double value, double threshold) {
    Alert a;
    a.kind = kind;
    a.task_id = state.task_id;
    a.value = value;
    a.threshold = threshold;
    a.window_seq = state.seq;
    a.created_at = iso_timestamp_utc();
    state.fired_at[kind] = state.seq;
    fired.push_back(std::move(a));
  };

  const double a_t = windowed_metric(state);
  if (a_t < state.a_base - state.metric_drop_delta &&
      can_fire("PERFORMANCE_DROP"))
    fire("PERFORMANCE_DROP", a_t, state.a_base - state.metric_drop_delta);

  const size_t dim = state.mu_ref.size();
  std::vector<double> mu_win(dim, 0.0);
  for (const auto& s : state.window)
    for (size_t d = 0; d < dim; ++d) mu_win[d] += s.fingerprint[d];
  double shift_sq = 0.0, sigma_sq = 0.0;
  for (size_t d = 0; d < dim; ++d) {
    mu_win[d] /= static_cast<double>(state.window.size());
    const double delta = mu_win[d] - static_cast<double>(state.mu_ref[d]);
    shift_sq += delta * delta;
    sigma_sq += static_cast<double>(state.sigma_ref[d]) *
                static_cast<double>(state.sigma_ref[d]);
  }
  const double z =
      std::sqrt(shift_sq) /
      (std::sqrt(sigma_sq) / std::sqrt(static_cast<double>(state.window_size)) +
       1e-12);
  if (z > state.z_threshold && can_fire("EMBEDDING_DRIFT"))
    fire("EMBEDDING_DRIFT", z, state.z_threshold);

  return fired;
}

Stores::Stores(fs::path root_arg)
    : root(std::move(root_arg)),
      datasets(root),
      models(root),
      tasks(root) {}

Autoencoder Stores::load_embedder() const {
  if (!has_embedder())
    throw NotFoundError("no embedder checkpoint at " +
                        embedder_path().string() +
                        " (train one with `embedder train`)");
  return Autoencoder::from_checkpoint(Checkpoint::load(embedder_path()));
}

std::string Stores::save_embedder(const Autoencoder& ae) {
  Checkpoint c = ae.to_checkpoint();
  const std::string bytes = c.serialize();
  atomic_write_file(embedder_path(), bytes);
  return c.content_hash;
}

namespace {

fs::path deployments_path(const Stores& s) { return s.root / "deployments.json"; }
fs::path monitor_dir(const Stores& s) { return s.root / "monitor"; }
fs::path state_path(const Stores& s, const std::string& task_id) {
  return monitor_dir(s) / (task_id + ".json");
}
fs::path metrics_path(const Stores& s, const std::string& task_id) {
  return monitor_dir(s) / (task_id + ".metrics.ndjson");
}
fs::path alerts_path(const Stores& s, const std::string& task_id) {
  return monitor_dir(s) / (task_id + ".alerts.ndjson");
}
fs::path feedback_images_path(const Stores& s, const std::string& task_id) {
  return monitor_dir(s) / (task_id + ".feedback.bin");
}

std::vector<json> read_ndjson_file(const fs::path& p) {
  std::vector<json> out;
  if (!fs::exists(p)) return out;
  std::ifstream f(p);
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

// reference stats and baseline metric come from the validation split (test
// when no val split exists)
const SplitRange& reference_split(const ImageContainer& c) {
  if (auto it = c.splits.find("val"); it != c.splits.end() && it->second.count())
    return it->second;
  if (auto it = c.splits.find("test"); it != c.splits.end() && it->second.count())
    return it->second;
  throw ValidationError("dataset has no val or test split for monitoring");
}

}  // namespace

Deployment deploy(Stores& stores, const std::string& task_id,
                  const std::string& model_id, const MonitorOptions& opts) {
  TaskSpec task = stores.tasks.get(task_id);
  ModelRecord model = stores.models.get_model(model_id);  // throws if unknown
  Autoencoder embedder = stores.load_embedder();

  const ImageContainer data =
      stores.datasets.load_container(task.dataset_id, task.dataset_version);
  const SplitRange& ref = reference_split(data);
  auto ref_images = data.to_tensor(&ref);
  auto fps = embedder.fingerprint_images(ref_images);

  const size_t dim = fps[0].vector.size();
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const auto& fp : fps)
    for (size_t d = 0; d < dim; ++d) mean[d] += fp.vector[d];
  for (size_t d = 0; d < dim; ++d) mean[d] /= static_cast<double>(fps.size());
  for (const auto& fp : fps)
    for (size_t d = 0; d < dim; ++d) {
      const double delta = fp.vector[d] - mean[d];
      var[d] += delta * delta;
    }
  for (size_t d = 0; d < dim; ++d) var[d] /= static_cast<double>(fps.size());

  MonitorState state;
  state.task_id = task_id;
  state.model_id = model_id;
  state.embedder_version = fps[0].embedder_version;
  state.mu_ref.resize(dim);
  state.sigma_ref.resize(dim);
  for (size_t d = 0; d < dim; ++d) {
    state.mu_ref[d] = static_cast<float>(mean[d]);
    state.sigma_ref[d] = static_cast<float>(std::sqrt(var[d]));
  }
  state.a_base = evaluate_model(stores.models, model, task.metric_name,
                                task.task_kind, data, ref);
  state.window_size = opts.window_size;
  state.metric_drop_delta = opts.metric_drop_delta;
  state.z_threshold = opts.z_threshold;

  StoreLock lock(stores.root);
  json db = fs::exists(deployments_path(stores))
                ? read_json(deployments_path(stores))
                : json{{"deployments", json::array()}};
  for (auto& d : db["deployments"])
    if (d.at("task_id") == task_id && d.at("status") == "live")
      d["status"] = "superseded";
  Deployment dep{task_id, model_id, iso_timestamp_utc(), "live"};
  db["deployments"].push_back(dep.to_json());
  atomic_write_json(deployments_path(stores), db);
  save_monitor_state(stores, state);
  return dep;
}

std::optional<Deployment> live_deployment(const Stores& stores,
                                          const std::string& task_id) {
  if (!fs::exists(deployments_path(stores))) return std::nullopt;
  for (const auto& d : read_json(deployments_path(stores)).at("deployments"))
    if (d.at("task_id") == task_id && d.at("status") == "live")
      return Deployment::from_json(d);
  return std::nullopt;
}

std::vector<Deployment> deployment_history(const Stores& stores,
                                           const std::string& task_id) {
  std::vector<Deployment> out;
  if (!fs::exists(deployments_path(stores))) return out;
  for (const auto& d : read_json(deployments_path(stores)).at("deployments"))
    if (d.at("task_id") == task_id) out.push_back(Deployment::from_json(d));
  return out;
}

MonitorState load_monitor_state(const Stores& stores,
                                const std::string& task_id) {
  const fs::path p = state_path(stores, task_id);
  if (!fs::exists(p))
    throw NotFoundError("no monitor state for " + task_id +
                        " (deploy a model first)");
  return MonitorState::from_json(read_json(p));
}

void save_monitor_state(const Stores& stores, const MonitorState& state) {
  atomic_write_json(state_path(stores, state.task_id), state.to_json());
}

std::vector<MetricPoint> metric_points(const Stores& stores,
                                       const std::string& task_id) {
  std::vector<MetricPoint> out;
  for (const auto& j : read_ndjson_file(metrics_path(stores, task_id)))
    out.push_back(MetricPoint::from_json(j));
  return out;
}

std::vector<Alert> alert_log(const Stores& stores,
                             const std::string& task_id) {
  std::vector<Alert> out;
  for (const auto& j : read_ndjson_file(alerts_path(stores, task_id)))
    out.push_back(Alert::from_json(j));
  return out;
}

PredictResult predict(Stores& stores, const std::string& task_id,
                      const nn::TensorPtr& image) {
  if (!image || image->ndim() != 4 || image->dim(0) != 1 ||
      image->dim(1) != 3 || image->dim(2) != 32 || image->dim(3) != 32)
    throw ValidationError("predict expects one [1,3,32,32] image");
  TaskSpec task = stores.tasks.get(task_id);
  auto dep = live_deployment(stores, task_id);
  if (!dep) throw NotFoundError("no live deployment for " + task_id);
  ModelRecord model = stores.models.get_model(dep->model_id);
  Checkpoint ckpt = stores.models.load_checkpoint(model.checkpoint_hash);

  PredictResult result;
  Autoencoder embedder = stores.load_embedder();
  result.fingerprint = embedder.fingerprint_images(image)[0].vector;

  if (task.task_kind == "reconstruction") {
    Autoencoder ae = Autoencoder::from_checkpoint(ckpt);
    nn::ForwardCtx ctx;
    auto recon = ae.decode(ae.encode(image, ctx), ctx);
    auto loss = nn::mse_loss(recon, image, nullptr);
    result.scores = {-loss->data[0]};
    return result;
  }

  Classifier clf = Classifier::from_checkpoint(ckpt);
  nn::ForwardCtx ctx;
  auto scores = clf.forward(image, ctx);
  result.scores = scores->data;
  result.class_index = clf.predict(image)[0];
  const auto& names = clf.config().class_labels;
  if (result.class_index >= 0 &&
      result.class_index < static_cast<int>(names.size()))
    result.class_label = names[static_cast<size_t>(result.class_index)];
  return result;
}

namespace {

MetricPoint feedback_impl(Stores& stores, const std::string& task_id,
                          const nn::TensorPtr& image, uint16_t label_index) {
  TaskSpec task = stores.tasks.get(task_id);
  MonitorState state = load_monitor_state(stores, task_id);
  PredictResult pred = predict(stores, task_id, image);

  double score;
  if (task.task_kind == "reconstruction") {
    score = pred.scores.empty() ? 0.0 : pred.scores[0];
  } else {
    const DatasetRecord record =
        stores.datasets.get(task.dataset_id, task.dataset_version);
    if (label_index >= record.class_labels.size())
      throw ValidationError("feedback label index " +
                            std::to_string(label_index) + " out of range");
    const std::string truth = record.class_labels[label_index];
    score = (pred.class_label == truth) ? 1.0 : 0.0;
  }

  // retain the image; CT cycles turn the feedback window into training data
  long image_offset = -1;
  {
    const fs::path p = feedback_images_path(stores, task_id);
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::app);
    std::vector<uint8_t> px(ImageContainer::kImageBytes);
    for (size_t i = 0; i < px.size(); ++i)
      px[i] = static_cast<uint8_t>(
          std::lround(std::clamp(image->data[i], 0.0f, 1.0f) * 255.0f));
    image_offset = state.seq;
    f.write(reinterpret_cast<const char*>(px.data()),
            static_cast<std::streamsize>(px.size()));
  }

  FeedbackSample sample;
  sample.fingerprint = pred.fingerprint;
  sample.score = score;
  sample.label = label_index;
  sample.image_offset = image_offset;
  state.window.push_back(std::move(sample));
  while (state.window.size() > state.window_size) state.window.pop_front();
  state.seq += 1;

  MetricPoint point{iso_timestamp_utc(), windowed_metric(state),
                    state.window.size()};
  save_monitor_state(stores, state);
  append_line(metrics_path(stores, task_id), point.to_json().dump());
  return point;
}

}  // namespace

MetricPoint feedback(Stores& stores, const std::string& task_id,
                     const nn::TensorPtr& image, uint16_t label_index) {
  return feedback_impl(stores, task_id, image, label_index);
}

MetricPoint feedback_by_ref(Stores& stores, const std::string& task_id,
                            const std::string& dataset_id, int version,
                            size_t image_index, uint16_t label_index) {
  const ImageContainer c = stores.datasets.load_container(dataset_id, version);
  if (image_index >= c.count())
    throw NotFoundError("image index out of range for " + dataset_id);
  const SplitRange one{image_index, image_index + 1};
  return feedback_impl(stores, task_id, c.to_tensor(&one), label_index);
}

std::vector<Alert> check_drift_for_task(Stores& stores,
                                        const std::string& task_id) {
  MonitorState state = load_monitor_state(stores, task_id);
  auto fired = check_drift(state);
  save_monitor_state(stores, state);
  for (const auto& a : fired)
    append_line(alerts_path(stores, task_id), a.to_json().dump());
  return fired;
}

json CtCycle::to_json() const {
  return {{"cycle_id", cycle_id},
          {"task_id", task_id},
          {"alert", alert},
          {"status", status},
          {"new_dataset_version", new_dataset_version},
          {"best_model_id", best_model_id},
          {"error", error},
          {"started_at", started_at},
          {"ended_at", ended_at}};
}

CtCycle CtCycle::from_json(const json& j) {
  CtCycle c;
  c.cycle_id = j.at("cycle_id").get<std::string>();
  c.task_id = j.at("task_id").get<std::string>();
  c.alert = j.value("alert", json::object());
  c.status = j.at("status").get<std::string>();
  c.new_dataset_version = j.value("new_dataset_version", 0);
  c.best_model_id = j.value("best_model_id", "");
  c.error = j.value("error", "");
  c.started_at = j.value("started_at", "");
  c.ended_at = j.value("ended_at", "");
  return c;
}

CtManager::CtManager(fs::path store_root) : root_(std::move(store_root)) {}

CtManager::~CtManager() { wait_idle(); }

bool CtManager::in_flight(const std::string& task_id) const {
  std::lock_guard<std::mutex> g(mu_);
  return running_.count(task_id) > 0;
}

void CtManager::wait_idle() {
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> g(mu_);
    workers.swap(workers_);
  }
  for (auto& w : workers)
    if (w.joinable()) w.join();
}

std::vector<CtCycle> CtManager::cycles(const std::string& task_id) const {
  std::vector<CtCycle> out;
  for (const auto& j : read_ndjson_file(root_ / "ct_cycles.ndjson")) {
    CtCycle c = CtCycle::from_json(j);
    if (c.task_id == task_id) {
      // latest line per cycle wins
      auto it = std::find_if(out.begin(), out.end(), [&](const CtCycle& x) {
        return x.cycle_id == c.cycle_id;
      });
      if (it != out.end())
        *it = c;
      else
        out.push_back(c);
    }
  }
  return out;
}

std::string CtManager::trigger(const std::string& task_id, const Alert& alert,
                               size_t k, const SearchSpace& space,
                               bool synchronous) {
  std::string cycle_id;
  {
    std::lock_guard<std::mutex> g(mu_);
    auto it = running_.find(task_id);
    if (it != running_.end()) return it->second;  // coalesced
    cycle_id = "ct-" + task_id + "-" + std::to_string(alert.window_seq) + "-" +
               std::to_string(reinterpret_cast<uintptr_t>(this) & 0xffff);
    running_[task_id] = cycle_id;
  }

  CtCycle cycle;
  cycle.cycle_id = cycle_id;
  cycle.task_id = task_id;
  cycle.alert = alert.to_json();
  cycle.status = "running";
  cycle.started_at = iso_timestamp_utc();
  append_line(root_ / "ct_cycles.ndjson", cycle.to_json().dump());

  if (synchronous) {
    run_cycle(cycle_id, task_id, alert, k, space);
  } else {
    std::lock_guard<std::mutex> g(mu_);
    workers_.emplace_back([this, cycle_id, task_id, alert, k, space]() {
      run_cycle(cycle_id, task_id, alert, k, space);
    });
  }
  return cycle_id;
}

void CtManager::run_cycle(const std::string& cycle_id,
                          const std::string& task_id, const Alert& alert,
                          size_t k, SearchSpace space) {
  CtCycle cycle;
  cycle.cycle_id = cycle_id;
  cycle.task_id = task_id;
  cycle.alert = alert.to_json();
  cycle.started_at = iso_timestamp_utc();
  try {
    Stores stores(root_);
    TaskSpec task = stores.tasks.get(task_id);
    MonitorState state = load_monitor_state(stores, task_id);

    // new dataset version: previous content + the feedback window's images
    // appended to the train split
    ImageContainer base =
        stores.datasets.load_container(task.dataset_id, task.dataset_version);
    ImageContainer next;
    next.name = base.name;
    next.classes = base.classes;
    const auto tr = base.splits.count("train") ? base.splits.at("train")
                                               : SplitRange{0, 0};
    auto copy_range = [&](const SplitRange& r) {
      next.pixels.insert(
          next.pixels.end(),
          base.pixels.begin() +
              static_cast<long>(r.begin * ImageContainer::kImageBytes),
          base.pixels.begin() +
              static_cast<long>(r.end * ImageContainer::kImageBytes));
      for (size_t i = r.begin; i < r.end; ++i)
        next.labels.push_back(base.labels[i]);
    };
    copy_range(tr);

    const fs::path fb = root_ / "monitor" / (task_id + ".feedback.bin");
    std::ifstream fbf(fb, std::ios::binary);
    size_t appended = 0;
    for (const auto& s : state.window) {
      if (s.image_offset < 0) continue;
      std::vector<uint8_t> px(ImageContainer::kImageBytes);
      fbf.seekg(static_cast<std::streamoff>(s.image_offset *
                                            ImageContainer::kImageBytes));
      if (!fbf.read(reinterpret_cast<char*>(px.data()),
                    static_cast<std::streamsize>(px.size())))
        continue;
      next.pixels.insert(next.pixels.end(), px.begin(), px.end());
      next.labels.push_back(s.label);
      ++appended;
    }
    next.splits["train"] = SplitRange{0, tr.count() + appended};
    size_t offset = tr.count() + appended;
    for (const std::string split : {"val", "test"}) {
      if (!base.splits.count(split)) continue;
      const auto& r = base.splits.at(split);
      copy_range(r);
      next.splits[split] = SplitRange{offset, offset + r.count()};
      offset += r.count();
    }

    const DatasetRecord reg = stores.datasets.register_container(
        next, base.name, task.task_kind,
        "continuous training after " + alert.kind + " (cycle " + cycle_id +
            ")");
    // fingerprint the new version so strategy ranking stays latent-based
    if (stores.has_embedder()) {
      Autoencoder embedder = stores.load_embedder();
      auto fps = embedder.fingerprint_images(
          stores.datasets.load_container(reg.dataset_id, reg.version)
              .to_tensor());
      std::vector<std::string> split_names(fps.size());
      for (const auto& [split, r] : reg.split_index)
        for (size_t i = r.begin; i < r.end; ++i) split_names[i] = split;
      stores.datasets.attach_fingerprints(reg.dataset_id, reg.version, fps,
                                          dataset_embedding(fps, split_names));
    }

    task.dataset_version = reg.version;
    stores.tasks.update(task);
    cycle.new_dataset_version = reg.version;

    auto result = develop(stores.datasets, stores.models, stores.tasks,
                          task_id, k, space);
    cycle.best_model_id = result.best_model.model_id;

    auto dep = live_deployment(stores, task_id);
    if (!dep || dep->model_id != result.best_model.model_id) {
      MonitorOptions opts;
      MonitorState prev = load_monitor_state(stores, task_id);
      opts.window_size = prev.window_size;
      opts.metric_drop_delta = prev.metric_drop_delta;
      opts.z_threshold = prev.z_threshold;
      deploy(stores, task_id, result.best_model.model_id, opts);
    }
    cycle.status = "done";
  } catch (const std::exception& e) {
    cycle.status = "failed";
    cycle.error = e.what();
  }
  cycle.ended_at = iso_timestamp_utc();
  append_line(root_ / "ct_cycles.ndjson", cycle.to_json().dump());
  std::lock_guard<std::mutex> g(mu_);
  running_.erase(task_id);
}

}  // namespace scarceops
