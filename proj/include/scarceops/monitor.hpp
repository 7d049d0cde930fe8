#pragma once

#include <atomic>
#include <deque>
#include <mutex>
#include <thread>

#include "scarceops/automl.hpp"

namespace scarceops {

struct Deployment {
  std::string task_id;
  std::string model_id;
  std::string deployed_at;
  std::string status;  // "live" | "superseded"

  json to_json() const;
  static Deployment from_json(const json& j);
};

struct Alert {
  std::string kind;  // "PERFORMANCE_DROP" | "EMBEDDING_DRIFT"
  std::string task_id;
  double value = 0.0;      // observed statistic (windowed A_t or z)
  double threshold = 0.0;  // bound it crossed
  long window_seq = 0;     // newest feedback seq in the firing window
  std::string created_at;

  json to_json() const;
  static Alert from_json(const json& j);
};

struct MetricPoint {
  std::string timestamp;
  double value = 0.0;
  size_t window = 0;  // samples the value was computed over

  json to_json() const;
  static MetricPoint from_json(const json& j);
};

struct FeedbackSample {
  std::vector<float> fingerprint;
  double score = 0.0;  // 1/0 correctness, or -mse for reconstruction
  uint16_t label = 0;
  long image_offset = -1;  // index into the retained feedback image log
};

// Per-task monitoring state. The reference statistics are frozen at
// deployment time from the task's validation split.
struct MonitorState {
  std::string task_id;
  std::string model_id;
  std::string embedder_version;
  std::vector<float> mu_ref;
  std::vector<float> sigma_ref;
  double a_base = 0.0;
  size_t window_size = 100;
  double metric_drop_delta = 0.05;  // absolute drop that alerts
  double z_threshold = 3.0;
  std::deque<FeedbackSample> window;  // at most window_size entries
  long seq = 0;                       // total feedback count
  std::map<std::string, long> fired_at;  // alert kind -> seq when last fired

  json to_json() const;
  static MonitorState from_json(const json& j);
};

// Evaluates both detectors on the current window (only once it is full):
//   PERFORMANCE_DROP: windowed A_t < A_base - delta
//   EMBEDDING_DRIFT:  z = ||mu_win - mu_ref|| / (||sigma_ref||/sqrt(W) + eps)
//                     exceeds the z threshold
// Alerts are idempotent per window state: a kind re-fires only after the
// window content has fully turned over (window_size new samples).
std::vector<Alert> check_drift(MonitorState& state);

// Windowed metric over the current window contents.
double windowed_metric(const MonitorState& state);

struct MonitorOptions {
  size_t window_size = 100;
  double metric_drop_delta = 0.05;
  double z_threshold = 3.0;
};

// All stores of one pipeline root, plus the current embedder checkpoint.
struct Stores {
  explicit Stores(fs::path root_);

  fs::path root;
  DatasetStore datasets;
  ModelStore models;
  TaskStore tasks;

  fs::path embedder_path() const { return root / "embedder" / "current.ckpt"; }
  bool has_embedder() const { return fs::exists(embedder_path()); }
  Autoencoder load_embedder() const;
  std::string save_embedder(const Autoencoder& ae);
};

// --- deployment + serving + monitoring operations ---

Deployment deploy(Stores& stores, const std::string& task_id,
                  const std::string& model_id, const MonitorOptions& opts = {});
std::optional<Deployment> live_deployment(const Stores& stores,
                                          const std::string& task_id);
std::vector<Deployment> deployment_history(const Stores& stores,
                                           const std::string& task_id);

struct PredictResult {
  int class_index = -1;
  std::string class_label;
  std::vector<float> fingerprint;
  std::vector<float> scores;
};

// Runs the live model in eval mode on one [1,3,32,32] image.
PredictResult predict(Stores& stores, const std::string& task_id,
                      const nn::TensorPtr& image);

MetricPoint feedback(Stores& stores, const std::string& task_id,
                     const nn::TensorPtr& image, uint16_t label_index);
MetricPoint feedback_by_ref(Stores& stores, const std::string& task_id,
                            const std::string& dataset_id, int version,
                            size_t image_index, uint16_t label_index);

// Loads state, runs the detectors, persists fired alerts, returns the new
// ones.
std::vector<Alert> check_drift_for_task(Stores& stores,
                                        const std::string& task_id);

MonitorState load_monitor_state(const Stores& stores,
                                const std::string& task_id);
void save_monitor_state(const Stores& stores, const MonitorState& state);
std::vector<MetricPoint> metric_points(const Stores& stores,
                                       const std::string& task_id);
std::vector<Alert> alert_log(const Stores& stores, const std::string& task_id);

// Continuous-training cycles: alert -> new dataset version from the feedback
// window -> develop -> redeploy when a better model appears. At most one
// cycle in flight per task; triggers during a running cycle coalesce.
struct CtCycle {
  std::string cycle_id;
  std::string task_id;
  json alert;
  std::string status;  // "running" | "done" | "failed"
  int new_dataset_version = 0;
  std::string best_model_id;
  std::string error;
  std::string started_at;
  std::string ended_at;

  json to_json() const;
  static CtCycle from_json(const json& j);
};

class CtManager {
public:
  explicit CtManager(fs::path store_root);
  ~CtManager();

  // Returns the cycle id; a trigger while a cycle runs returns the running
  // cycle's id without queueing a second one.
  std::string trigger(const std::string& task_id, const Alert& alert,
                      size_t k, const SearchSpace& space,
                      bool synchronous = false);
  bool in_flight(const std::string& task_id) const;
  void wait_idle();
  std::vector<CtCycle> cycles(const std::string& task_id) const;

private:
  void run_cycle(const std::string& cycle_id, const std::string& task_id,
                 const Alert& alert, size_t k, SearchSpace space);

  fs::path root_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> running_;  // task_id -> cycle id
  std::vector<std::thread> workers_;
};

}  // namespace scarceops
