#pragma once

#include <limits>
#include <optional>

#include "scarceops/dataset_store.hpp"

namespace scarceops {

enum class RunStatus { pending, running, failed, succeeded };

std::string to_string(RunStatus s);
RunStatus run_status_from_string(const std::string& s);

struct RunRecord {
  std::string run_id;
  std::string task_id;
  json strategy_plan = json::object();
  json hyperparameters = json::object();
  RunStatus status = RunStatus::pending;
  std::string metric_name;
  double metric_value = -std::numeric_limits<double>::infinity();
  std::vector<double> loss_history;
  std::string checkpoint_hash;
  std::string started_at;
  std::string ended_at;
  std::string failure_reason;
  int epochs = 0;   // training cost, the first tie-break key
  long seq = 0;     // store-assigned monotone sequence

  json to_json() const;
  static RunRecord from_json(const json& j);
};

struct ModelPerformance {
  std::string dataset_id;
  int version = 0;
  std::string metric_name;
  double value = 0.0;
};

struct ModelRecord {
  std::string model_id;
  json architecture = json::object();
  std::string checkpoint_hash;
  std::string run_id;
  std::vector<ModelPerformance> performances;

  json to_json() const;
  static ModelRecord from_json(const json& j);
};

// The model database: an append-only NDJSON run log (one JSON object per
// line; the latest line per run_id is its current state), model records, and
// content-addressed checkpoints.
class ModelStore {
public:
  explicit ModelStore(fs::path root);

  // Assigns run_id/seq on first record; later records for the same run_id
  // must follow pending -> running -> {failed, succeeded}.
  std::string record_run(RunRecord run);
  RunRecord get_run(const std::string& run_id) const;
  std::vector<RunRecord> runs_for_task(const std::string& task_id) const;
  std::vector<RunRecord> all_runs() const;
  size_t run_count() const;

  std::string save_checkpoint(Checkpoint& c);  // returns content hash
  Checkpoint load_checkpoint(const std::string& hash) const;
  bool has_checkpoint(const std::string& hash) const;

  std::string record_model(ModelRecord m);  // assigns model_id
  ModelRecord get_model(const std::string& model_id) const;
  std::optional<ModelRecord> model_for_run(const std::string& run_id) const;
  void add_model_performance(const std::string& model_id,
                             const ModelPerformance& perf);

  // argmax of metric_value over succeeded runs; ties by (lower epochs,
  // earlier ended_at, lower seq). Throws NoModelError when no run succeeded.
  RunRecord best_run(const std::string& task_id) const;
  ModelRecord select_best(const std::string& task_id) const;

private:
  fs::path root_;
  fs::path runs_path() const { return root_ / "runs.ndjson"; }
  fs::path models_path() const { return root_ / "models.ndjson"; }
};

// --- metrics (all normalized so that higher is better) ---

double metric_accuracy(const std::vector<int>& predictions,
                       const std::vector<int>& truth);
double metric_macro_f1(const std::vector<int>& predictions,
                       const std::vector<int>& truth, int num_classes);

bool metric_supported(const std::string& metric_name,
                      const std::string& task_kind);

// Applies the model to the dataset split and computes the named metric.
// Classification predictions map through class *names*, so a model trained
// on another dataset's label space is scored fairly.
double evaluate_model(const ModelStore& models, const ModelRecord& model,
                      const std::string& metric_name,
                      const std::string& task_kind,
                      const ImageContainer& data, const SplitRange& split);

}  // namespace scarceops
