#pragma once

#include <limits>

#include "scarceops/util.hpp"

namespace scarceops {

// The scientist's triple (I, A, T_a) plus the running metric A_t, which stays
// -inf until a run succeeds.
struct TaskSpec {
  std::string task_id;
  std::string dataset_id;
  int dataset_version = 1;
  std::string metric_name;  // A
  std::string task_kind;    // T_a
  double best_metric = -std::numeric_limits<double>::infinity();  // A_t
  std::string created_at;

  json to_json() const;
  static TaskSpec from_json(const json& j);
};

class TaskStore {
public:
  explicit TaskStore(fs::path root);

  TaskSpec create(const std::string& dataset_id, int dataset_version,
                  const std::string& metric_name,
                  const std::string& task_kind);
  TaskSpec get(const std::string& task_id) const;
  std::vector<TaskSpec> list() const;
  void update(const TaskSpec& task);

private:
  fs::path root_;
  fs::path path() const { return root_ / "tasks.json"; }
};

}  // namespace scarceops
