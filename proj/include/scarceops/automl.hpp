#pragma once

#include "scarceops/strategy.hpp"

namespace scarceops {

struct SearchSpace {
  double lr_min = 1e-4;  // log-uniform range
  double lr_max = 1e-2;
  std::vector<int> batch_sizes = {16, 32, 64};
  int fine_tune_epochs = 5;   // fixed per plan kind
  int retrain_epochs = 30;
  size_t trials = 8;
  uint64_t seed = 0;
  size_t conception_images = 256;  // nearest images materialized per plan

  void validate() const;
};

struct DevelopmentOutcome {
  std::vector<std::string> run_ids;  // every trial, including failures
  std::optional<RunRecord> best;     // best succeeded run of this execution
  double wall_time_seconds = 0.0;
  StrategyPlan plan;
};

struct DevelopResult {
  ModelRecord best_model;
  double best_metric = 0.0;
  std::vector<std::string> run_ids;
  std::vector<StrategyPlan> executed_plans;
};

// Executes one StrategyPlan with seeded random search. Every trial is
// recorded in the model store before this returns; trial crashes become
// failed runs, never aborts.
DevelopmentOutcome execute(DatasetStore& datasets, ModelStore& models,
                           const StrategyPlan& plan, const TaskSpec& task,
                           const SearchSpace& space);

// Full development stage: rank strategies (fingerprints when attached,
// metadata-only fallback otherwise), execute the top-k plans, select the
// best model over all succeeded runs and update the task's metric.
DevelopResult develop(DatasetStore& datasets, ModelStore& models,
                      TaskStore& tasks, const std::string& task_id, size_t k,
                      const SearchSpace& space,
                      const StrategyConfig& strategy_cfg = {});

}  // namespace scarceops
