#include "scarceops/automl.hpp"

#include <chrono>
#include <cmath>

#include "scarceops/classifier.hpp"

namespace scarceops {

void SearchSpace::validate() const {
  if (!(lr_min > 0.0) || !(lr_max >= lr_min))
    throw ValidationError("search space: bad learning-rate range");
  if (batch_sizes.empty())
    throw ValidationError("search space: empty batch size choices");
  if (trials < 1) throw ValidationError("search space: trials must be >= 1");
}

namespace {

uint64_t trial_seed(uint64_t base, PlanKind kind, size_t trial) {
  uint64_t x = base ^ (0x9E3779B97F4A7C15ULL * (trial + 1));
  x ^= static_cast<uint64_t>(kind) << 32;
  x ^= x >> 29;
  return x;
}

const SplitRange& eval_split(const ImageContainer& c) {
  if (auto it = c.splits.find("test"); it != c.splits.end() && it->second.count())
    return it->second;
  if (auto it = c.splits.find("val"); it != c.splits.end() && it->second.count())
    return it->second;
  throw ValidationError("task dataset has no test or val split to evaluate on");
}

const SplitRange& train_split(const ImageContainer& c) {
  auto it = c.splits.find("train");
  if (it == c.splits.end() || it->second.count() == 0)
    throw ValidationError("dataset has no train split");
  return it->second;
}

struct TrialSetup {
  double learning_rate;
  int batch_size;
  int epochs;
  uint64_t model_seed;
};

// One training+evaluation trial; returns a succeeded RunRecord body (without
// store bookkeeping). Classification tasks train the tiny classifier,
// reconstruction tasks the tiny autoencoder.
RunRecord run_trial(DatasetStore& datasets, ModelStore& models,
                    const StrategyPlan& plan, const TaskSpec& task,
                    const ImageContainer& train_data,
                    const ImageContainer& eval_data, const TrialSetup& setup) {
  RunRecord run;
  run.epochs = setup.epochs;
  const auto& tr = train_split(train_data);
  auto train_images = train_data.to_tensor(&tr);

  Checkpoint ckpt;
  json architecture;
  if (task.task_kind == "reconstruction") {
    AutoencoderConfig cfg;
    cfg.preset = "tiny";
    cfg.learning_rate = static_cast<float>(setup.learning_rate);
    cfg.batch_size = setup.batch_size;
    cfg.epochs = setup.epochs;
    cfg.seed = setup.model_seed;
    Autoencoder ae = Autoencoder::build(cfg);
    if (plan.kind == PlanKind::fine_tune) {
      const ModelRecord src = models.get_model(plan.source_model_id);
      ae = Autoencoder::from_checkpoint(
          models.load_checkpoint(src.checkpoint_hash));
    }
    auto report = ae.train(train_images, nullptr);
    run.loss_history = report.train_loss;
    ckpt = ae.to_checkpoint();
    architecture = ckpt.config;
  } else {
    ClassifierConfig cfg;
    cfg.num_classes = static_cast<int>(train_data.classes.size());
    cfg.class_labels = train_data.classes;
    cfg.seed = setup.model_seed;
    Classifier clf = Classifier::build(cfg);
    if (plan.kind == PlanKind::fine_tune) {
      const ModelRecord src = models.get_model(plan.source_model_id);
      clf = Classifier::from_checkpoint(
          models.load_checkpoint(src.checkpoint_hash));
      if (clf.config().class_labels != train_data.classes)
        clf.reset_head(static_cast<int>(train_data.classes.size()),
                       train_data.classes, setup.model_seed);
    }
    FitOptions fit;
    fit.learning_rate = static_cast<float>(setup.learning_rate);
    fit.batch_size = setup.batch_size;
    fit.epochs = setup.epochs;
    fit.seed = setup.model_seed;
    auto report = clf.fit(train_images, train_data.labels_in(tr), fit);
    run.loss_history = report.train_loss;
    ckpt = clf.to_checkpoint();
    architecture = ckpt.config;
  }

  run.checkpoint_hash = models.save_checkpoint(ckpt);
  ModelRecord model;
  model.architecture = architecture;
  model.checkpoint_hash = run.checkpoint_hash;
  run.metric_value =
      evaluate_model(models, model, task.metric_name, task.task_kind,
                     eval_data, eval_split(eval_data));
  (void)datasets;
  return run;
}

}  // namespace

DevelopmentOutcome execute(DatasetStore& datasets, ModelStore& models,
                           const StrategyPlan& plan, const TaskSpec& task,
                           const SearchSpace& space) {
  space.validate();
  const auto t0 = std::chrono::steady_clock::now();
  DevelopmentOutcome outcome;
  outcome.plan = plan;

  const ImageContainer task_data =
      datasets.load_container(task.dataset_id, task.dataset_version);

  // conception materializes its training set first; a failure here fails the
  // whole plan with a single recorded run
  std::optional<ImageContainer> conceived;
  std::string conception_error;
  if (plan.kind == PlanKind::dataset_conception) {
    try {
      const DatasetRecord r = conceive_dataset(
          datasets, task, space.conception_images, /*stratify=*/true);
      conceived = datasets.load_container(r.dataset_id, r.version);
    } catch (const std::exception& e) {
      conception_error = e.what();
    }
  }

  nn::Pcg32 search_rng(space.seed, nn::kStreamSearch);
  const size_t trial_count = plan.kind == PlanKind::reuse ? 1 : space.trials;

  for (size_t t = 0; t < trial_count; ++t) {
    TrialSetup setup;
    setup.learning_rate = search_rng.log_uniform(space.lr_min, space.lr_max);
    setup.batch_size = space.batch_sizes[static_cast<size_t>(
        search_rng.below(space.batch_sizes.size()))];
    setup.epochs = plan.kind == PlanKind::fine_tune ? space.fine_tune_epochs
                                                    : space.retrain_epochs;
    setup.model_seed = trial_seed(space.seed, plan.kind, t);

    RunRecord run;
    run.task_id = task.task_id;
    run.strategy_plan = plan.to_json();
    run.metric_name = task.metric_name;
    run.status = RunStatus::pending;
    run.started_at = iso_timestamp_utc();
    if (plan.kind == PlanKind::reuse) {
      run.hyperparameters = {{"trial", t}, {"epochs", 0}};
      run.epochs = 0;
    } else {
      run.hyperparameters = {{"trial", t},
                             {"learning_rate", setup.learning_rate},
                             {"batch_size", setup.batch_size},
                             {"epochs", setup.epochs}};
      run.epochs = setup.epochs;
    }
    run.run_id = models.record_run(run);
    run.status = RunStatus::running;
    models.record_run(run);

    try {
      json architecture;
      if (plan.kind == PlanKind::reuse) {
        const ModelRecord src = models.get_model(plan.source_model_id);
        run.checkpoint_hash = src.checkpoint_hash;
        run.metric_value =
            evaluate_model(models, src, task.metric_name, task.task_kind,
                           task_data, eval_split(task_data));
        architecture = src.architecture;
      } else if (plan.kind == PlanKind::dataset_conception) {
        if (!conceived)
          throw ValidationError("dataset conception failed: " +
                                conception_error);
        RunRecord body = run_trial(datasets, models, plan, task, *conceived,
                                   task_data, setup);
        run.checkpoint_hash = body.checkpoint_hash;
        run.metric_value = body.metric_value;
        run.loss_history = body.loss_history;
        architecture =
            models.load_checkpoint(run.checkpoint_hash).config;
      } else {
        RunRecord body = run_trial(datasets, models, plan, task, task_data,
                                   task_data, setup);
        run.checkpoint_hash = body.checkpoint_hash;
        run.metric_value = body.metric_value;
        run.loss_history = body.loss_history;
        architecture =
            models.load_checkpoint(run.checkpoint_hash).config;
      }
      run.status = RunStatus::succeeded;
      run.ended_at = iso_timestamp_utc();
      models.record_run(run);

      ModelRecord model;
      model.architecture = architecture;
      model.checkpoint_hash = run.checkpoint_hash;
      model.run_id = run.run_id;
      model.performances.push_back({task.dataset_id, task.dataset_version,
                                    task.metric_name, run.metric_value});
      models.record_model(model);
    } catch (const std::exception& e) {
      run.status = RunStatus::failed;
      run.failure_reason = e.what();
      run.ended_at = iso_timestamp_utc();
      run.metric_value = -std::numeric_limits<double>::infinity();
      models.record_run(run);
    }

    outcome.run_ids.push_back(run.run_id);
    if (run.status == RunStatus::succeeded &&
        (!outcome.best || run.metric_value > outcome.best->metric_value))
      outcome.best = run;
  }

  outcome.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return outcome;
}

DevelopResult develop(DatasetStore& datasets, ModelStore& models,
                      TaskStore& tasks, const std::string& task_id, size_t k,
                      const SearchSpace& space,
                      const StrategyConfig& strategy_cfg) {
  TaskSpec task = tasks.get(task_id);
  StrategyConfig cfg = strategy_cfg;
  cfg.fine_tune_epochs = space.fine_tune_epochs;
  cfg.full_epochs = space.retrain_epochs;

  const bool fingerprinted =
      datasets.load_embedding(task.dataset_id, task.dataset_version)
          .has_value();
  const auto plans = fingerprinted
                         ? rank_strategies(datasets, task, k, true, cfg)
                         : rank_strategies_metadata_only(datasets, task, k, cfg);

  DevelopResult result;
  std::vector<std::string> failure_reasons;
  for (const auto& plan : plans) {
    auto outcome = execute(datasets, models, plan, task, space);
    result.executed_plans.push_back(plan);
    result.run_ids.insert(result.run_ids.end(), outcome.run_ids.begin(),
                          outcome.run_ids.end());
    for (const auto& rid : outcome.run_ids) {
      const RunRecord r = models.get_run(rid);
      if (r.status == RunStatus::failed)
        failure_reasons.push_back(rid + ": " + r.failure_reason);
    }
  }

  RunRecord winner;
  try {
    winner = models.best_run(task_id);
  } catch (const NoModelError&) {
    std::string msg = "develop " + task_id + ": all runs failed";
    for (const auto& r : failure_reasons) msg += "; " + r;
    throw NoModelError(msg);
  }
  result.best_model = models.select_best(task_id);
  result.best_metric = winner.metric_value;

  task.best_metric = winner.metric_value;
  tasks.update(task);
  datasets.add_known_performance(
      task.dataset_id, task.dataset_version,
      {result.best_model.model_id, task.metric_name, winner.metric_value});
  return result;
}

}  // namespace scarceops
