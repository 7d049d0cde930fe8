#include <cmath>

#include "doctest.h"
#include "scarceops/automl.hpp"
#include "scarceops/classifier.hpp"
#include "scarceops/monitor.hpp"
#include "testutil.hpp"

using namespace scarceops;
namespace tu = testutil;

TEST_SUITE_BEGIN("monitor");

namespace {

MonitorState base_state(size_t window_size = 10) {
  MonitorState s;
  s.task_id = "t";
  s.model_id = "m";
  s.embedder_version = "v";
  s.mu_ref = {0.0f, 0.0f};
  s.sigma_ref = {1.0f, 1.0f};
  s.a_base = 0.9;
  s.window_size = window_size;
  return s;
}

void push(MonitorState& s, double score, std::vector<float> fp) {
  FeedbackSample sample;
  sample.score = score;
  sample.fingerprint = std::move(fp);
  s.window.push_back(std::move(sample));
  while (s.window.size() > s.window_size) s.window.pop_front();
  s.seq += 1;
}

// gaussian via Box-Muller, for in-distribution window sampling
float gauss(nn::Pcg32& rng, float mu, float sigma) {
  const float u1 = std::max(rng.next_float(), 1e-7f);
  const float u2 = rng.next_float();
  return mu + sigma * std::sqrt(-2.0f * std::log(u1)) *
                  std::cos(6.2831853f * u2);
}

}  // namespace

TEST_CASE("windowed metric: all-correct is 1.0, alternating is 0.5") {
  auto s = base_state(4);
  for (int i = 0; i < 4; ++i) push(s, 1.0, {0, 0});
  CHECK(windowed_metric(s) == doctest::Approx(1.0));
  for (int i = 0; i < 4; ++i) push(s, i % 2 ? 1.0 : 0.0, {0, 0});
  CHECK(windowed_metric(s) == doctest::Approx(0.5));
}

TEST_CASE("no alerts before the window fills") {
  auto s = base_state(10);
  for (int i = 0; i < 9; ++i) push(s, 0.0, {50.0f, 50.0f});
  CHECK(check_drift(s).empty());
  push(s, 0.0, {50.0f, 50.0f});
  CHECK(!check_drift(s).empty());
}

TEST_CASE("all-wrong feedback with a_base 0.9 fires PERFORMANCE_DROP") {
  auto s = base_state(10);
  for (int i = 0; i < 10; ++i) push(s, 0.0, {0, 0});
  auto alerts = check_drift(s);
  REQUIRE(alerts.size() == 1);
  CHECK(alerts[0].kind == "PERFORMANCE_DROP");
  CHECK(alerts[0].value == doctest::Approx(0.0));
  CHECK(alerts[0].threshold == doctest::Approx(0.85));
}

TEST_CASE("a mean shift in latent space fires EMBEDDING_DRIFT") {
  auto s = base_state(100);
  // shifted to (1,1): z = sqrt(2) / (sqrt(2)/10) = 10 > 3
  for (int i = 0; i < 100; ++i) push(s, 1.0, {1.0f, 1.0f});
  auto alerts = check_drift(s);
  REQUIRE(alerts.size() == 1);
  CHECK(alerts[0].kind == "EMBEDDING_DRIFT");
  CHECK(alerts[0].value == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("alerts are idempotent per window state and re-fire after turnover") {
  auto s = base_state(10);
  for (int i = 0; i < 10; ++i) push(s, 0.0, {0, 0});
  CHECK(check_drift(s).size() == 1);
  CHECK(check_drift(s).empty());  // unchanged window: no duplicate
  push(s, 0.0, {0, 0});
  CHECK(check_drift(s).empty());  // window only partially turned over
  for (int i = 0; i < 9; ++i) push(s, 0.0, {0, 0});
  CHECK(check_drift(s).size() == 1);  // full turnover: fire again
}

TEST_CASE("in-distribution windows rarely alert at z-threshold 3") {
  int false_alerts = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    nn::Pcg32 rng(seed, 12345);
    auto s = base_state(100);
    s.a_base = 0.0;  // performance detector disabled for this check
    for (int i = 0; i < 100; ++i)
      push(s, 1.0, {gauss(rng, 0.0f, 1.0f), gauss(rng, 0.0f, 1.0f)});
    for (const auto& a : check_drift(s))
      if (a.kind == "EMBEDDING_DRIFT") ++false_alerts;
  }
  CHECK(false_alerts <= 5);
}

TEST_CASE("deploy/predict/feedback against real stores") {
  tu::TmpDir tmp;
  Stores stores(tmp.path);

  // corpus + task
  auto c = tu::brightness_container("bright", 24, 8, 8, 3);
  auto r = stores.datasets.register_container(c, "bright", "classification");
  auto task =
      stores.tasks.create(r.dataset_id, r.version, "accuracy", "classification");

  // a tiny trained embedder
  AutoencoderConfig ecfg;
  ecfg.preset = "tiny";
  ecfg.epochs = 2;
  ecfg.batch_size = 16;
  ecfg.seed = 1;
  auto embedder = Autoencoder::build(ecfg);
  embedder.train(c.to_tensor(), nullptr);
  stores.save_embedder(embedder);

  // develop one model
  SearchSpace space;
  space.trials = 1;
  space.retrain_epochs = 3;
  space.seed = 7;
  auto result = develop(stores.datasets, stores.models, stores.tasks,
                        task.task_id, 1, space);

  // deploy: unknown model rejected, first deploy live, second supersedes
  CHECK_THROWS_AS(deploy(stores, task.task_id, "model-unknown"), NotFoundError);
  MonitorOptions opts;
  opts.window_size = 10;
  auto dep1 = deploy(stores, task.task_id, result.best_model.model_id, opts);
  CHECK(dep1.status == "live");
  auto dep2 = deploy(stores, task.task_id, result.best_model.model_id, opts);
  CHECK(dep2.status == "live");
  auto history = deployment_history(stores, task.task_id);
  REQUIRE(history.size() == 2);
  CHECK(history[0].status == "superseded");
  CHECK(history[1].status == "live");

  // predict: deterministic, matches the offline evaluation path
  const auto& test_split = c.splits.at("test");
  const SplitRange one{test_split.begin, test_split.begin + 1};
  auto image = c.to_tensor(&one);
  auto p1 = predict(stores, task.task_id, image);
  auto p2 = predict(stores, task.task_id, image);
  CHECK(p1.class_index == p2.class_index);
  CHECK(p1.fingerprint == p2.fingerprint);
  // offline path: load the checkpoint directly and predict
  auto model = stores.models.get_model(result.best_model.model_id);
  auto clf = Classifier::from_checkpoint(
      stores.models.load_checkpoint(model.checkpoint_hash));
  CHECK(clf.predict(image)[0] == p1.class_index);

  // feedback: windowed accuracy matches a full recount oracle
  nn::Pcg32 rng(5, 17);
  std::deque<double> oracle_window;
  size_t feedbacks = 0;
  for (int i = 0; i < 60; ++i) {
    const size_t idx = rng.below(c.count());
    const SplitRange ri{idx, idx + 1};
    auto img = c.to_tensor(&ri);
    const uint16_t truth = static_cast<uint16_t>(rng.below(2));
    auto pred = predict(stores, task.task_id, img);
    auto point = feedback(stores, task.task_id, img, truth);
    ++feedbacks;
    oracle_window.push_back(
        pred.class_label == c.classes[truth] ? 1.0 : 0.0);
    while (oracle_window.size() > opts.window_size) oracle_window.pop_front();
    double acc = 0;
    for (double v : oracle_window) acc += v;
    acc /= static_cast<double>(oracle_window.size());
    CHECK(point.value == doctest::Approx(acc));
    CHECK(point.window == oracle_window.size());
  }
  // monitor conservation: one MetricPoint per feedback call
  CHECK(metric_points(stores, task.task_id).size() == feedbacks);
}

TEST_CASE("ct trigger is single-flight and coalesces repeat alerts") {
  tu::TmpDir tmp;
  // a store where develop will fail fast (no datasets): the cycle still
  // exercises the single-flight bookkeeping
  CtManager ct(tmp.path);
  Alert alert;
  alert.kind = "PERFORMANCE_DROP";
  alert.task_id = "task-1";
  alert.window_seq = 10;
  SearchSpace space;
  space.trials = 1;
  auto c1 = ct.trigger("task-1", alert, 1, space, /*synchronous=*/true);
  CHECK(!c1.empty());
  auto cycles = ct.cycles("task-1");
  REQUIRE(cycles.size() == 1);
  CHECK(cycles[0].status == "failed");  // empty store: develop cannot run
  CHECK(!ct.in_flight("task-1"));
}

TEST_SUITE_END();
