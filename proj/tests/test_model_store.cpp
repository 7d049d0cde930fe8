#include <algorithm>

#include "doctest.h"
#include "scarceops/model_store.hpp"
#include "testutil.hpp"

using namespace scarceops;
namespace tu = testutil;

TEST_SUITE_BEGIN("model-store");

namespace {

RunRecord make_run(const std::string& task, RunStatus status, double metric,
                   int epochs, const std::string& ended) {
  RunRecord r;
  r.task_id = task;
  r.status = status;
  r.metric_name = "accuracy";
  r.metric_value = metric;
  r.epochs = epochs;
  r.ended_at = ended;
  if (status == RunStatus::succeeded) r.checkpoint_hash = "h";
  if (status == RunStatus::failed) r.failure_reason = "synthetic failure";
  return r;
}

}  // namespace

TEST_CASE("run status transitions: the legal chain and nothing else") {
  tu::TmpDir tmp;
  ModelStore store(tmp.path);

  RunRecord r;
  r.task_id = "t";
  r.metric_name = "accuracy";
  r.status = RunStatus::pending;
  r.run_id = store.record_run(r);

  r.status = RunStatus::running;
  store.record_run(r);
  r.status = RunStatus::succeeded;
  r.metric_value = 0.5;
  r.checkpoint_hash = "abc";
  store.record_run(r);
  CHECK(store.get_run(r.run_id).status == RunStatus::succeeded);

  // succeeded -> running is rejected
  r.status = RunStatus::running;
  CHECK_THROWS_AS(store.record_run(r), IllegalTransitionError);

  // a failed run stays queryable with its reason
  RunRecord f;
  f.task_id = "t";
  f.metric_name = "accuracy";
  f.status = RunStatus::pending;
  f.run_id = store.record_run(f);
  f.status = RunStatus::running;
  store.record_run(f);
  f.status = RunStatus::failed;
  f.failure_reason = "exploded on batch 3";
  store.record_run(f);
  auto back = store.get_run(f.run_id);
  CHECK(back.status == RunStatus::failed);
  CHECK(back.failure_reason == "exploded on batch 3");

  // pending -> succeeded skips running: rejected
  RunRecord s;
  s.task_id = "t";
  s.status = RunStatus::pending;
  s.run_id = store.record_run(s);
  s.status = RunStatus::succeeded;
  s.metric_value = 1.0;
  s.checkpoint_hash = "x";
  CHECK_THROWS_AS(store.record_run(s), IllegalTransitionError);
}

TEST_CASE("succeeded runs must carry checkpoint and finite metric") {
  tu::TmpDir tmp;
  ModelStore store(tmp.path);
  RunRecord r;
  r.task_id = "t";
  r.status = RunStatus::succeeded;  // fresh record directly at succeeded
  r.metric_value = 0.9;
  CHECK_THROWS_AS(store.record_run(r), ValidationError);  // no checkpoint
  r.checkpoint_hash = "h";
  r.metric_value = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(store.record_run(r), ValidationError);  // metric not finite
}

TEST_CASE("accuracy and macro-F1 metrics") {
  // perfect and all-wrong predictions on a 4-image fixture
  CHECK(metric_accuracy({0, 1, 1, 0}, {0, 1, 1, 0}) == 1.0);
  CHECK(metric_accuracy({1, 0, 0, 1}, {0, 1, 1, 0}) == 0.0);

  // confusion counts TP=1, FP=1, FN=1 per class:
  // per-class F1 = 2*1 / (2*1 + 1 + 1) = 0.5, macro = 0.5
  const std::vector<int> truth{0, 0, 1, 1};
  const std::vector<int> pred{0, 1, 0, 1};
  CHECK(metric_macro_f1(pred, truth, 2) == doctest::Approx(0.5));

  // hand-computed asymmetric case: truth {0,0,0,1}, pred {0,1,1,1}
  //  class0: TP=1 FP=0 FN=2 -> F1 = 2/(2+0+2) = 0.5
  //  class1: TP=1 FP=2 FN=0 -> F1 = 2/(2+2+0) = 0.5
  CHECK(metric_macro_f1({0, 1, 1, 1}, {0, 0, 0, 1}, 2) ==
        doctest::Approx(0.5));

  CHECK(metric_supported("accuracy", "classification"));
  CHECK(metric_supported("macro_f1", "classification"));
  CHECK(metric_supported("neg_mse", "reconstruction"));
  CHECK(!metric_supported("neg_mse", "classification"));
  CHECK(!metric_supported("accuracy", "reconstruction"));
}

TEST_CASE("select_best is the argmax with (epochs, ended_at) tie-breaks") {
  tu::TmpDir tmp;
  ModelStore store(tmp.path);

  std::vector<double> metrics{0.7, 0.9, 0.8};
  std::vector<std::string> run_ids;
  for (size_t i = 0; i < metrics.size(); ++i) {
    auto rid = store.record_run(make_run("t", RunStatus::succeeded, metrics[i],
                                         10, "2026-01-01T00:00:0" +
                                             std::to_string(i) + "Z"));
    run_ids.push_back(rid);
    ModelRecord m;
    m.run_id = rid;
    m.checkpoint_hash = "h";
    store.record_model(m);
  }
  CHECK(store.best_run("t").metric_value == 0.9);
  CHECK(store.select_best("t").run_id == run_ids[1]);

  // single succeeded run
  ModelStore single(tmp.path / "single");
  auto only = single.record_run(
      make_run("t", RunStatus::succeeded, 0.1, 3, "2026-01-01T00:00:00Z"));
  CHECK(single.best_run("t").run_id == only);

  // no succeeded runs: the task metric stays -inf
  ModelStore empty(tmp.path / "none");
  empty.record_run(make_run("t", RunStatus::failed, 0, 0, ""));
  CHECK_THROWS_AS(empty.best_run("t"), NoModelError);
}

TEST_CASE("select_best matches an exhaustive-scan oracle on random runs") {
  tu::TmpDir tmp;
  nn::Pcg32 rng(17);
  for (int round = 0; round < 8; ++round) {
    ModelStore store(tmp.path / ("round-" + std::to_string(round)));
    struct Entry {
      std::string run_id;
      double metric;
      int epochs;
      std::string ended;
      long seq;
    };
    std::vector<Entry> entries;
    for (int i = 0; i < 50; ++i) {
      // coarse metric grid to force plenty of ties
      const double metric = static_cast<double>(rng.below(5)) / 4.0;
      const int epochs = static_cast<int>(rng.below(3)) * 5;
      const std::string ended =
          "2026-01-0" + std::to_string(1 + rng.below(3)) + "T00:00:00Z";
      const bool failed = rng.next_float() < 0.2f;
      auto r = make_run("t", failed ? RunStatus::failed : RunStatus::succeeded,
                        failed ? 0.0 : metric, epochs, ended);
      const std::string rid = store.record_run(r);
      if (!failed)
        entries.push_back({rid, metric, epochs, ended, static_cast<long>(i)});
    }
    if (entries.empty()) continue;

    const Entry* best = &entries[0];
    for (const auto& e : entries) {
      if (e.metric > best->metric ||
          (e.metric == best->metric && e.epochs < best->epochs) ||
          (e.metric == best->metric && e.epochs == best->epochs &&
           e.ended < best->ended) ||
          (e.metric == best->metric && e.epochs == best->epochs &&
           e.ended == best->ended && e.seq < best->seq))
        best = &e;
    }
    CHECK(store.best_run("t").run_id == best->run_id);
  }
}

TEST_CASE("argmax is invariant under strictly increasing metric transforms") {
  tu::TmpDir tmp;
  nn::Pcg32 rng(23);
  for (int round = 0; round < 5; ++round) {
    ModelStore store(tmp.path / ("inv-" + std::to_string(round)));
    std::vector<double> metrics;
    for (int i = 0; i < 20; ++i)
      metrics.push_back(static_cast<double>(rng.below(8)) / 8.0);
    for (int i = 0; i < 20; ++i) {
      auto r = make_run("orig", RunStatus::succeeded, metrics[i], i % 4,
                        "2026-01-01T00:00:00Z");
      r.hyperparameters = {{"index", i}};
      store.record_run(r);
      auto r2 = make_run("scaled", RunStatus::succeeded,
                         std::exp(2.0 * metrics[i]) + 5.0, i % 4,
                         "2026-01-01T00:00:00Z");
      r2.hyperparameters = {{"index", i}};
      store.record_run(r2);
    }
    CHECK(store.best_run("orig").hyperparameters.at("index") ==
          store.best_run("scaled").hyperparameters.at("index"));
  }
}

TEST_CASE("the run log is append-only: updates never shrink it") {
  tu::TmpDir tmp;
  ModelStore store(tmp.path);
  auto r = make_run("t", RunStatus::pending, 0, 0, "");
  r.run_id = store.record_run(r);
  const size_t after_create = store.run_count();
  r.status = RunStatus::running;
  store.record_run(r);
  r.status = RunStatus::failed;
  r.failure_reason = "x";
  store.record_run(r);
  CHECK(store.run_count() == after_create);  // same run, still one record
  store.record_run(make_run("t", RunStatus::pending, 0, 0, ""));
  CHECK(store.run_count() == after_create + 1);
}

TEST_CASE("checkpoints are content-addressed and verified on load") {
  tu::TmpDir tmp;
  ModelStore store(tmp.path);
  nn::Pcg32 rng(9);
  Checkpoint c;
  c.kind = "classifier";
  c.preset = "tiny_classifier";
  c.config = {{"num_classes", 2}};
  auto t = tu::random_tensor({4, 3}, rng);
  t->name = "head.weight";
  c.add(t);
  const std::string hash = store.save_checkpoint(c);
  CHECK(store.has_checkpoint(hash));
  auto loaded = store.load_checkpoint(hash);
  CHECK(loaded.tensor("head.weight")->data == t->data);

  // corrupt the stored file: load must fail
  const fs::path p = tmp.path / "checkpoints" / (hash + ".ckpt");
  std::string bytes = read_file(p);
  bytes[bytes.size() - 1] = static_cast<char>(bytes[bytes.size() - 1] ^ 1);
  atomic_write_file(p, bytes);
  CHECK_THROWS_AS(store.load_checkpoint(hash), NumericError);
}

TEST_CASE("model records and per-dataset performances") {
  tu::TmpDir tmp;
  ModelStore store(tmp.path);
  ModelRecord m;
  m.checkpoint_hash = "h";
  m.run_id = "run-77";
  const std::string id = store.record_model(m);
  store.add_model_performance(id, {"ds", 1, "accuracy", 0.75});
  store.add_model_performance(id, {"ds", 1, "accuracy", 0.8});  // update
  store.add_model_performance(id, {"ds2", 1, "accuracy", 0.4});
  auto back = store.get_model(id);
  REQUIRE(back.performances.size() == 2);
  CHECK(back.performances[0].value == 0.8);
  CHECK(store.model_for_run("run-77").has_value());
  CHECK(!store.model_for_run("run-unknown").has_value());
}

TEST_SUITE_END();
