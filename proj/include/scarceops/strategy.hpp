#pragma once

#include "scarceops/model_store.hpp"
#include "scarceops/task.hpp"

namespace scarceops {

enum class PlanKind { reuse, fine_tune, retrain, dataset_conception };

std::string to_string(PlanKind k);
PlanKind plan_kind_from_string(const std::string& s);

// One ranked model-development approach.
struct StrategyPlan {
  PlanKind kind = PlanKind::retrain;
  std::string source_model_id;  // reuse / fine_tune
  std::vector<std::pair<std::string, int>> source_datasets;  // (id, version)
  int estimated_cost = 0;  // epochs-equivalent
  double score = 0.0;
  std::string rationale;
  bool fingerprint_based = false;

  json to_json() const;
  static StrategyPlan from_json(const json& j);
};

struct StrategyConfig {
  size_t neighbor_count = 5;      // m nearest datasets feeding candidates
  double tau = 0.0;               // 0 = derive from store statistics
  double retrain_prior = 0.5;
  int fine_tune_epochs = 5;
  int full_epochs = 30;
  size_t min_conception_pool = 32;  // nearest-image pool size gate
};

// similarity_weight = exp(-d / tau). tau defaults to the median pairwise
// distance among stored dataset embeddings (1.0 when fewer than two exist or
// the median is zero).
double similarity_weight(double distance, double tau);

double default_tau(const DatasetStore& datasets,
                   const std::string& embedder_version);

// Metadata affinity in [0,1]: mean of task-kind match, Jaccard overlap of the
// class-label sets, and 1 - total-variation distance between the (train)
// class distributions.
double metadata_affinity(const DatasetRecord& a, const DatasetRecord& b);

// Top-k development approaches for the task, scored from latent similarity
// and known performances. Candidates: reuse + fine-tune of each of the m
// nearest datasets' best known models, always retrain-from-scratch, and
// dataset conception once the fingerprinted image pool is large enough.
std::vector<StrategyPlan> rank_strategies(const DatasetStore& datasets,
                                          const TaskSpec& task, size_t k,
                                          bool use_fingerprints,
                                          const StrategyConfig& cfg = {});

// Fallback when fingerprinting is not trusted: candidate similarity comes
// from metadata affinity only; no conception candidates (conception needs
// the latent nearest-image search).
std::vector<StrategyPlan> rank_strategies_metadata_only(
    const DatasetStore& datasets, const TaskSpec& task, size_t k,
    const StrategyConfig& cfg = {});

// Materializes the n nearest images into a freshly registered dataset whose
// source note names every contributing dataset/version.
DatasetRecord conceive_dataset(DatasetStore& datasets, const TaskSpec& task,
                               size_t n, bool stratify);

}  // namespace scarceops
