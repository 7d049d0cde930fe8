#include "scarceops/model_store.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "scarceops/classifier.hpp"

namespace scarceops {

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::pending: return "pending";
    case RunStatus::running: return "running";
    case RunStatus::failed: return "failed";
    case RunStatus::succeeded: return "succeeded";
  }
  return "unknown";
}

RunStatus run_status_from_string(const std::string& s) {
  if (s == "pending") return RunStatus::pending;
  if (s == "running") return RunStatus::running;
  if (s == "failed") return RunStatus::failed;
  if (s == "succeeded") return RunStatus::succeeded;
  throw ValidationError("unknown run status: " + s);
}

json RunRecord::to_json() const {
  json j{{"run_id", run_id},
         {"task_id", task_id},
         {"strategy_plan", strategy_plan},
         {"hyperparameters", hyperparameters},
         {"status", scarceops::to_string(status)},
         {"metric_name", metric_name},
         {"loss_history", loss_history},
         {"checkpoint_hash", checkpoint_hash},
         {"started_at", started_at},
         {"ended_at", ended_at},
         {"failure_reason", failure_reason},
         {"epochs", epochs},
         {"seq", seq}};
  // JSON has no -inf literal; null is the "no metric yet" sentinel
  if (std::isfinite(metric_value))
    j["metric_value"] = metric_value;
  else
    j["metric_value"] = nullptr;
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.task_id = j.at("task_id").get<std::string>();
  r.strategy_plan = j.value("strategy_plan", json::object());
  r.hyperparameters = j.value("hyperparameters", json::object());
  r.status = run_status_from_string(j.at("status").get<std::string>());
  r.metric_name = j.value("metric_name", "");
  if (j.contains("metric_value") && !j["metric_value"].is_null())
    r.metric_value = j["metric_value"].get<double>();
  r.loss_history = j.value("loss_history", std::vector<double>{});
  r.checkpoint_hash = j.value("checkpoint_hash", "");
  r.started_at = j.value("started_at", "");
  r.ended_at = j.value("ended_at", "");
  r.failure_reason = j.value("failure_reason", "");
  r.epochs = j.value("epochs", 0);
  r.seq = j.value("seq", 0L);
  return r;
}

json ModelRecord::to_json() const {
  json perfs = json::array();
  for (const auto& p : performances)
    perfs.push_back({{"dataset_id", p.dataset_id},
                     {"version", p.version},
                     {"metric_name", p.metric_name},
                     {"value", p.value}});
  return {{"model_id", model_id},
          {"architecture", architecture},
          {"checkpoint_hash", checkpoint_hash},
          {"run_id", run_id},
          {"performances", perfs}};
}

ModelRecord ModelRecord::from_json(const json& j) {
  ModelRecord m;
  m.model_id = j.at("model_id").get<std::string>();
  m.architecture = j.value("architecture", json::object());
  m.checkpoint_hash = j.value("checkpoint_hash", "");
  m.run_id = j.value("run_id", "");
  for (const auto& p : j.value("performances", json::array()))
    m.performances.push_back({p.at("dataset_id").get<std::string>(),
                              p.at("version").get<int>(),
                              p.at("metric_name").get<std::string>(),
                              p.at("value").get<double>()});
  return m;
}

ModelStore::ModelStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "checkpoints");
}

namespace {

std::vector<json> read_ndjson(const fs::path& p) {
  std::vector<json> out;
  if (!fs::exists(p)) return out;
  std::ifstream f(p);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

bool legal_transition(RunStatus from, RunStatus to) {
  if (from == RunStatus::pending && to == RunStatus::running) return true;
  if (from == RunStatus::running &&
      (to == RunStatus::failed || to == RunStatus::succeeded))
    return true;
  return false;
}

}  // namespace

std::string ModelStore::record_run(RunRecord run) {
  StoreLock lock(root_);
  auto lines = read_ndjson(runs_path());
  std::map<std::string, RunRecord> latest;
  long max_seq = 0;
  for (const auto& l : lines) {
    RunRecord r = RunRecord::from_json(l);
    max_seq = std::max(max_seq, r.seq);
    latest[r.run_id] = std::move(r);
  }

  if (run.run_id.empty()) {
    run.run_id = "run-" + std::to_string(max_seq + 1);
    run.seq = max_seq + 1;
  } else if (auto it = latest.find(run.run_id); it != latest.end()) {
    if (!legal_transition(it->second.status, run.status))
      throw IllegalTransitionError(
          "run " + run.run_id + ": illegal status transition " +
          scarceops::to_string(it->second.status) + " -> " +
          scarceops::to_string(run.status));
    run.seq = it->second.seq;
  } else {
    run.seq = max_seq + 1;
  }

  if (run.status == RunStatus::succeeded) {
    if (run.checkpoint_hash.empty())
      throw ValidationError("succeeded run " + run.run_id +
                            " must carry a checkpoint hash");
    if (!std::isfinite(run.metric_value))
      throw ValidationError("succeeded run " + run.run_id +
                            " must carry a finite metric value");
  }
  if (run.status == RunStatus::failed && run.failure_reason.empty())
    throw ValidationError("failed run " + run.run_id + " needs a reason");

  append_line(runs_path(), run.to_json().dump());
  return run.run_id;
}

RunRecord ModelStore::get_run(const std::string& run_id) const {
  std::optional<RunRecord> found;
  for (const auto& l : read_ndjson(runs_path())) {
    RunRecord r = RunRecord::from_json(l);
    if (r.run_id == run_id) found = std::move(r);
  }
  if (!found) throw NotFoundError("unknown run " + run_id);
  return *found;
}

std::vector<RunRecord> ModelStore::all_runs() const {
  std::map<std::string, RunRecord> latest;
  std::vector<std::string> order;
  for (const auto& l : read_ndjson(runs_path())) {
    RunRecord r = RunRecord::from_json(l);
    if (!latest.count(r.run_id)) order.push_back(r.run_id);
    latest[r.run_id] = std::move(r);
  }
  std::vector<RunRecord> out;
  for (const auto& id : order) out.push_back(latest[id]);
  return out;
}

std::vector<RunRecord> ModelStore::runs_for_task(
    const std::string& task_id) const {
  std::vector<RunRecord> out;
  for (auto& r : all_runs())
    if (r.task_id == task_id) out.push_back(std::move(r));
  return out;
}

size_t ModelStore::run_count() const { return all_runs().size(); }

std::string ModelStore::save_checkpoint(Checkpoint& c) {
  const std::string bytes = c.serialize();
  const fs::path p = root_ / "checkpoints" / (c.content_hash + ".ckpt");
  if (!fs::exists(p)) atomic_write_file(p, bytes);
  return c.content_hash;
}

bool ModelStore::has_checkpoint(const std::string& hash) const {
  return fs::exists(root_ / "checkpoints" / (hash + ".ckpt"));
}

Checkpoint ModelStore::load_checkpoint(const std::string& hash) const {
  const fs::path p = root_ / "checkpoints" / (hash + ".ckpt");
  if (!fs::exists(p)) throw NotFoundError("unknown checkpoint " + hash);
  Checkpoint c = Checkpoint::load(p);  // verifies the stored hash
  if (c.content_hash != hash)
    throw NumericError("checkpoint file " + p.string() +
                       " hashes to a different id");
  return c;
}

std::string ModelStore::record_model(ModelRecord m) {
  StoreLock lock(root_);
  auto lines = read_ndjson(models_path());
  if (m.model_id.empty())
    m.model_id = "model-" + std::to_string(lines.size() + 1);
  append_line(models_path(), m.to_json().dump());
  return m.model_id;
}

ModelRecord ModelStore::get_model(const std::string& model_id) const {
  std::optional<ModelRecord> found;
  for (const auto& l : read_ndjson(models_path())) {
    ModelRecord m = ModelRecord::from_json(l);
    if (m.model_id == model_id) found = std::move(m);
  }
  if (!found) throw NotFoundError("unknown model " + model_id);
  return *found;
}

std::optional<ModelRecord> ModelStore::model_for_run(
    const std::string& run_id) const {
  std::optional<ModelRecord> found;
  for (const auto& l : read_ndjson(models_path())) {
    ModelRecord m = ModelRecord::from_json(l);
    if (m.run_id == run_id) found = std::move(m);
  }
  return found;
}

void ModelStore::add_model_performance(const std::string& model_id,
                                       const ModelPerformance& perf) {
  ModelRecord m = get_model(model_id);
  for (auto& p : m.performances) {
    if (p.dataset_id == perf.dataset_id && p.version == perf.version &&
        p.metric_name == perf.metric_name) {
      p.value = perf.value;
      StoreLock lock(root_);
      append_line(models_path(), m.to_json().dump());
      return;
    }
  }
  m.performances.push_back(perf);
  StoreLock lock(root_);
  append_line(models_path(), m.to_json().dump());
}

RunRecord ModelStore::best_run(const std::string& task_id) const {
  std::optional<RunRecord> best;
  for (auto& r : runs_for_task(task_id)) {
    if (r.status != RunStatus::succeeded) continue;
    if (!best) {
      best = r;
      continue;
    }
    bool better = false;
    if (r.metric_value != best->metric_value) {
      better = r.metric_value > best->metric_value;
    } else if (r.epochs != best->epochs) {
      better = r.epochs < best->epochs;
    } else if (r.ended_at != best->ended_at) {
      better = r.ended_at < best->ended_at;
    } else {
      better = r.seq < best->seq;
    }
    if (better) best = r;
  }
  if (!best)
    throw NoModelError("no succeeded runs for task " + task_id +
                       " (metric stays -inf)");
  return *best;
}

ModelRecord ModelStore::select_best(const std::string& task_id) const {
  const RunRecord winner = best_run(task_id);
  auto model = model_for_run(winner.run_id);
  if (!model)
    throw NotFoundError("winning run " + winner.run_id +
                        " has no model record");
  return *model;
}

double metric_accuracy(const std::vector<int>& predictions,
                       const std::vector<int>& truth) {
  if (predictions.size() != truth.size() || truth.empty())
    throw ValidationError("accuracy: prediction/label size mismatch");
  size_t ok = 0;
  for (size_t i = 0; i < truth.size(); ++i)
    if (predictions[i] == truth[i]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

double metric_macro_f1(const std::vector<int>& predictions,
                       const std::vector<int>& truth, int num_classes) {
  if (predictions.size() != truth.size() || truth.empty())
    throw ValidationError("macro_f1: prediction/label size mismatch");
  double sum_f1 = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
      if (predictions[i] == c && truth[i] == c) ++tp;
      if (predictions[i] == c && truth[i] != c) ++fp;
      if (predictions[i] != c && truth[i] == c) ++fn;
    }
    const double denom = 2.0 * tp + fp + fn;
    sum_f1 += denom > 0 ? (2.0 * tp) / denom : 0.0;
  }
  return sum_f1 / std::max(num_classes, 1);
}

bool metric_supported(const std::string& metric_name,
                      const std::string& task_kind) {
  if (task_kind == "classification")
    return metric_name == "accuracy" || metric_name == "macro_f1";
  if (task_kind == "reconstruction") return metric_name == "neg_mse";
  return false;
}

double evaluate_model(const ModelStore& models, const ModelRecord& model,
                      const std::string& metric_name,
                      const std::string& task_kind, const ImageContainer& data,
                      const SplitRange& split) {
  if (!metric_supported(metric_name, task_kind))
    throw ValidationError("metric " + metric_name +
                          " is not supported for task kind " + task_kind);
  if (split.count() == 0)
    throw ValidationError("evaluate: empty evaluation split");
  Checkpoint ckpt = models.load_checkpoint(model.checkpoint_hash);
  auto images = data.to_tensor(&split);

  if (task_kind == "reconstruction") {
    Autoencoder ae = Autoencoder::from_checkpoint(ckpt);
    nn::ForwardCtx ctx;
    auto recon = ae.decode(ae.encode(images, ctx), ctx);
    auto loss = nn::mse_loss(recon, images, nullptr);
    return -static_cast<double>(loss->data[0]);
  }

  Classifier clf = Classifier::from_checkpoint(ckpt);
  const auto raw_pred = clf.predict(images);
  // map model output indices -> class names -> dataset label indices
  std::map<std::string, int> dataset_class_index;
  for (size_t i = 0; i < data.classes.size(); ++i)
    dataset_class_index[data.classes[i]] = static_cast<int>(i);
  const auto& model_classes = clf.config().class_labels;
  std::vector<int> predictions(raw_pred.size(), -1);
  for (size_t i = 0; i < raw_pred.size(); ++i) {
    if (model_classes.empty()) {
      predictions[i] = raw_pred[i];  // same index space by construction
    } else if (raw_pred[i] < static_cast<int>(model_classes.size())) {
      auto it = dataset_class_index.find(model_classes[raw_pred[i]]);
      predictions[i] = it == dataset_class_index.end() ? -1 : it->second;
    }
  }
  const auto labels16 = data.labels_in(split);
  std::vector<int> truth(labels16.begin(), labels16.end());
  if (metric_name == "accuracy") return metric_accuracy(predictions, truth);
  return metric_macro_f1(predictions, truth,
                         static_cast<int>(data.classes.size()));
}

}  // namespace scarceops
