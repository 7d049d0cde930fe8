#include "scarceops/task.hpp"

#include <cmath>

namespace scarceops {

json TaskSpec::to_json() const {
  json j{{"task_id", task_id},
         {"dataset_id", dataset_id},
         {"dataset_version", dataset_version},
         {"metric_name", metric_name},
         {"task_kind", task_kind},
         {"created_at", created_at}};
  if (std::isfinite(best_metric))
    j["best_metric"] = best_metric;
  else
    j["best_metric"] = nullptr;  // A_t = -inf
  return j;
}

TaskSpec TaskSpec::from_json(const json& j) {
  TaskSpec t;
  t.task_id = j.at("task_id").get<std::string>();
  t.dataset_id = j.at("dataset_id").get<std::string>();
  t.dataset_version = j.at("dataset_version").get<int>();
  t.metric_name = j.at("metric_name").get<std::string>();
  t.task_kind = j.at("task_kind").get<std::string>();
  if (j.contains("best_metric") && !j["best_metric"].is_null())
    t.best_metric = j["best_metric"].get<double>();
  t.created_at = j.value("created_at", "");
  return t;
}

TaskStore::TaskStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
}

TaskSpec TaskStore::create(const std::string& dataset_id, int dataset_version,
                           const std::string& metric_name,
                           const std::string& task_kind) {
  StoreLock lock(root_);
  json db = fs::exists(path()) ? read_json(path())
                               : json{{"tasks", json::array()}, {"next", 1}};
  TaskSpec t;
  t.task_id = "task-" + std::to_string(db.at("next").get<int>());
  t.dataset_id = dataset_id;
  t.dataset_version = dataset_version;
  t.metric_name = metric_name;
  t.task_kind = task_kind;
  t.created_at = iso_timestamp_utc();
  db["next"] = db.at("next").get<int>() + 1;
  db["tasks"].push_back(t.to_json());
  atomic_write_json(path(), db);
  return t;
}

TaskSpec TaskStore::get(const std::string& task_id) const {
  if (fs::exists(path())) {
    for (const auto& j : read_json(path()).at("tasks"))
      if (j.at("task_id").get<std::string>() == task_id)
        return TaskSpec::from_json(j);
  }
  throw NotFoundError("unknown task " + task_id);
}

std::vector<TaskSpec> TaskStore::list() const {
  std::vector<TaskSpec> out;
  if (!fs::exists(path())) return out;
  for (const auto& j : read_json(path()).at("tasks"))
    out.push_back(TaskSpec::from_json(j));
  return out;
}

void TaskStore::update(const TaskSpec& task) {
  StoreLock lock(root_);
  if (!fs::exists(path())) throw NotFoundError("unknown task " + task.task_id);
  json db = read_json(path());
  for (auto& j : db.at("tasks")) {
    if (j.at("task_id").get<std::string>() == task.task_id) {
      j = task.to_json();
      atomic_write_json(path(), db);
      return;
    }
  }
  throw NotFoundError("unknown task " + task.task_id);
}

}  // namespace scarceops
