#include <algorithm>
#include <set>

#include "doctest.h"
#include "scarceops/strategy.hpp"
#include "testutil.hpp"

using namespace scarceops;
namespace tu = testutil;

TEST_SUITE_BEGIN("strategy");

namespace {

// registers a dataset with a fixed 2-D embedding and optional best-known
// performance, all under embedder version "v1"
DatasetRecord add_dataset(DatasetStore& store, const std::string& name,
                          std::vector<float> mean, size_t images = 4,
                          double known_perf = -1,
                          const std::string& model_id = "",
                          const std::string& task_kind = "classification") {
  ImageContainer c;
  c.name = name;
  c.classes = {"a", "b"};
  c.pixels.assign(images * ImageContainer::kImageBytes,
                  static_cast<uint8_t>(name.size()));
  for (size_t i = 0; i < images; ++i)
    c.labels.push_back(static_cast<uint16_t>(i % 2));
  c.splits["train"] = SplitRange{0, images};
  auto r = store.register_container(c, name, task_kind);

  std::vector<Fingerprint> fps;
  for (size_t i = 0; i < images; ++i)
    fps.push_back({mean, name + "#" + std::to_string(i), "v1"});
  store.attach_fingerprints(r.dataset_id, r.version, fps,
                            dataset_embedding(fps));
  if (known_perf >= 0)
    store.add_known_performance(r.dataset_id, r.version,
                                {model_id, "accuracy", known_perf});
  return store.get(r.dataset_id, r.version);
}

TaskSpec task_on(const DatasetRecord& r) {
  TaskSpec t;
  t.task_id = "task-1";
  t.dataset_id = r.dataset_id;
  t.dataset_version = r.version;
  t.metric_name = "accuracy";
  t.task_kind = "classification";
  return t;
}

}  // namespace

TEST_CASE("identical dataset with a strong model makes reuse rank first") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  auto own = add_dataset(store, "own", {0.0f, 0.0f});
  auto same = add_dataset(store, "same", {0.0f, 0.0f}, 4, 0.9, "model-great");
  add_dataset(store, "far", {9.0f, 9.0f}, 4, 0.95, "model-far");
  auto task = task_on(own);

  auto plans = rank_strategies(store, task, 5, true);
  REQUIRE(!plans.empty());
  CHECK(plans[0].kind == PlanKind::reuse);
  CHECK(plans[0].source_model_id == "model-great");
  CHECK(plans[0].estimated_cost == 0);
  // exp(0) * 0.9 beats the distant 0.95 and the retrain prior
  CHECK(plans[0].score == doctest::Approx(0.9));
}

TEST_CASE("a registry without models or pool yields the single retrain plan") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  auto own = add_dataset(store, "own", {0.5f, 0.5f});  // 4 images < pool gate
  auto task = task_on(own);

  auto plans = rank_strategies(store, task, 10, true);
  REQUIRE(plans.size() == 1);
  CHECK(plans[0].kind == PlanKind::retrain);
  CHECK(plans[0].score == doctest::Approx(0.5));

  auto metadata_plans = rank_strategies_metadata_only(store, task, 10);
  REQUIRE(metadata_plans.size() == 1);
  CHECK(metadata_plans[0].kind == PlanKind::retrain);
  CHECK_FALSE(metadata_plans[0].fingerprint_based);
}

TEST_CASE("k is respected and k=1 equals the head of the full ranking") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  auto own = add_dataset(store, "own", {0.0f, 0.0f}, 40);
  add_dataset(store, "n1", {0.5f, 0.0f}, 40, 0.8, "m1");
  add_dataset(store, "n2", {1.5f, 0.5f}, 40, 0.7, "m2");
  auto task = task_on(own);

  auto all = rank_strategies(store, task, 100, true);
  auto top1 = rank_strategies(store, task, 1, true);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].kind == all[0].kind);
  CHECK(top1[0].source_model_id == all[0].source_model_id);
  auto top3 = rank_strategies(store, task, 3, true);
  CHECK(top3.size() == 3);
  CHECK_THROWS_AS(rank_strategies(store, task, 0, true), ValidationError);
}

TEST_CASE("rank_strategies matches a brute-force enumerate-and-sort oracle") {
  nn::Pcg32 rng(31);
  for (int round = 0; round < 10; ++round) {
    tu::TmpDir tmp;
    DatasetStore store(tmp.path);
    StrategyConfig cfg;

    struct Ds {
      std::string id;
      std::vector<float> mean;
      double perf = -1;
      std::string model;
    };
    std::vector<Ds> sets;
    auto own = add_dataset(store, "own", {0.0f, 0.0f}, 8);
    sets.push_back({"own", {0.0f, 0.0f}, -1, ""});
    for (int i = 0; i < 9; ++i) {
      Ds d;
      d.id = "ds" + std::to_string(i);
      d.mean = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
      if (rng.next_float() < 0.8f) {
        d.perf = rng.uniform(0.0f, 1.0f);
        d.model = "m" + std::to_string(i);
      }
      add_dataset(store, d.id, d.mean, 8, d.perf, d.model);
      sets.push_back(d);
    }
    auto task = task_on(own);
    auto got = rank_strategies(store, task, 100, true, cfg);

    // --- independent oracle ---
    // tau = median pairwise distance among all stored embeddings
    std::vector<double> dists;
    for (size_t i = 0; i < sets.size(); ++i)
      for (size_t j = i + 1; j < sets.size(); ++j)
        dists.push_back(euclidean(sets[i].mean, sets[j].mean));
    std::sort(dists.begin(), dists.end());
    const double tau =
        dists.size() % 2 ? dists[dists.size() / 2]
                         : 0.5 * (dists[dists.size() / 2 - 1] +
                                  dists[dists.size() / 2]);
    // m nearest datasets to the task's embedding (own mean = origin)
    std::vector<std::pair<double, const Ds*>> by_dist;
    for (const auto& d : sets)
      by_dist.push_back({euclidean({0.0f, 0.0f}, d.mean), &d});
    std::stable_sort(by_dist.begin(), by_dist.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first < b.first;
                       return a.second->id < b.second->id;
                     });
    if (by_dist.size() > cfg.neighbor_count)
      by_dist.resize(cfg.neighbor_count);

    struct Cand {
      double score;
      int cost;
      int kind_order;
      std::string model;
    };
    std::vector<Cand> cands;
    double max_w = 0;
    size_t pool = 0;
    for (const auto& d : sets) pool += 8;
    for (auto& [dist, d] : by_dist) {
      const double w = std::exp(-dist / tau);
      max_w = std::max(max_w, w);
      if (d->perf >= 0) {
        cands.push_back({w * d->perf, 0, 0, d->model});
        cands.push_back({w * d->perf, cfg.fine_tune_epochs, 1, d->model});
      }
    }
    cands.push_back({cfg.retrain_prior, cfg.full_epochs, 3, ""});
    if (pool >= cfg.min_conception_pool)
      cands.push_back({cfg.retrain_prior * max_w, cfg.full_epochs, 2, ""});
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.cost != b.cost) return a.cost < b.cost;
      if (a.kind_order != b.kind_order) return a.kind_order < b.kind_order;
      return a.model < b.model;
    });

    REQUIRE(got.size() == cands.size());
    for (size_t i = 0; i < got.size(); ++i) {
      INFO("round " << round << " position " << i);
      CHECK(got[i].score == doctest::Approx(cands[i].score).epsilon(1e-12));
      CHECK(got[i].source_model_id == cands[i].model);
      CHECK(got[i].estimated_cost == cands[i].cost);
    }

    // determinism for fixed store state
    auto again = rank_strategies(store, task, 100, true, cfg);
    REQUIRE(again.size() == got.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(again[i].kind == got[i].kind);
      CHECK(again[i].score == got[i].score);
    }
  }
}

TEST_CASE("ranking is invariant under joint power-of-two (d, tau) scaling") {
  for (const float scale : {0.5f, 2.0f, 1024.0f}) {
    tu::TmpDir tmp_a, tmp_b;
    DatasetStore base(tmp_a.path), scaled(tmp_b.path);
    nn::Pcg32 rng(5);
    std::vector<std::vector<float>> means;
    for (int i = 0; i < 8; ++i)
      means.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2)});

    DatasetRecord own_a, own_b;
    for (int i = 0; i < 8; ++i) {
      const std::string name = i == 0 ? "own" : "ds" + std::to_string(i);
      const double perf = 0.1 + 0.1 * i;
      const std::string model = i == 0 ? "" : "m" + std::to_string(i);
      auto ra = add_dataset(base, name, means[i], 8, i == 0 ? -1 : perf, model);
      std::vector<float> s{means[i][0] * scale, means[i][1] * scale};
      auto rb = add_dataset(scaled, name, s, 8, i == 0 ? -1 : perf, model);
      if (i == 0) {
        own_a = ra;
        own_b = rb;
      }
    }
    auto plans_a = rank_strategies(base, task_on(own_a), 100, true);
    auto plans_b = rank_strategies(scaled, task_on(own_b), 100, true);
    REQUIRE(plans_a.size() == plans_b.size());
    for (size_t i = 0; i < plans_a.size(); ++i) {
      CHECK(plans_a[i].kind == plans_b[i].kind);
      CHECK(plans_a[i].source_model_id == plans_b[i].source_model_id);
      CHECK(plans_a[i].score == plans_b[i].score);  // exact: d/tau unchanged
    }
  }
}

TEST_CASE("raising a candidate's known performance never lowers its rank") {
  tu::TmpDir tmp;
  nn::Pcg32 rng(13);
  DatasetStore store(tmp.path);
  auto own = add_dataset(store, "own", {0.0f, 0.0f}, 8);
  add_dataset(store, "d1", {1.0f, 0.0f}, 8, 0.4, "m1");
  add_dataset(store, "d2", {0.5f, 0.5f}, 8, 0.6, "m2");
  add_dataset(store, "d3", {2.0f, 1.0f}, 8, 0.7, "m3");
  auto task = task_on(own);

  auto rank_of = [&](const std::vector<StrategyPlan>& plans,
                     const std::string& model) {
    for (size_t i = 0; i < plans.size(); ++i)
      if (plans[i].source_model_id == model &&
          plans[i].kind == PlanKind::reuse)
        return static_cast<int>(i);
    return static_cast<int>(plans.size());
  };
  auto before = rank_strategies(store, task, 100, true);
  const int r_before = rank_of(before, "m1");
  store.add_known_performance("d1", 1, {"m1", "accuracy", 0.95});
  auto after = rank_strategies(store, task, 100, true);
  CHECK(rank_of(after, "m1") <= r_before);
}

TEST_CASE("metadata affinity: identical is 1, fully disjoint is 0") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);

  ImageContainer a;
  a.name = "alpha";
  a.classes = {"cat", "dog"};
  a.pixels.assign(4 * ImageContainer::kImageBytes, 1);
  a.labels = {0, 0, 1, 1};
  a.splits["train"] = SplitRange{0, 4};
  auto ra = store.register_container(a, "alpha", "classification");

  auto rb = store.register_container(a, "beta", "classification");
  CHECK(metadata_affinity(store.get("alpha", 1), store.get("beta", 1)) ==
        doctest::Approx(1.0));

  ImageContainer c;
  c.name = "gamma";
  c.classes = {"mitosis", "necrosis"};
  c.pixels.assign(2 * ImageContainer::kImageBytes, 3);
  c.labels = {0, 1};
  c.splits["train"] = SplitRange{0, 2};
  store.register_container(c, "gamma", "reconstruction");
  CHECK(metadata_affinity(store.get("alpha", 1), store.get("gamma", 1)) ==
        doctest::Approx(0.0));
}

TEST_CASE("metadata-only ranking: identical first, affinity-zero loses to retrain") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);

  ImageContainer base;
  base.name = "own";
  base.classes = {"cat", "dog"};
  base.pixels.assign(4 * ImageContainer::kImageBytes, 1);
  base.labels = {0, 0, 1, 1};
  base.splits["train"] = SplitRange{0, 4};
  auto own = store.register_container(base, "own", "classification");

  auto twin = store.register_container(base, "twin", "classification");
  store.add_known_performance("twin", 1, {"m-twin", "accuracy", 0.8});

  ImageContainer alien;
  alien.name = "alien";
  alien.classes = {"x", "y"};
  alien.pixels.assign(4 * ImageContainer::kImageBytes, 9);
  alien.labels = {0, 1, 1, 1};
  alien.splits["train"] = SplitRange{0, 4};
  store.register_container(alien, "alien", "reconstruction");
  store.add_known_performance("alien", 1, {"m-alien", "accuracy", 0.99});

  TaskSpec task;
  task.task_id = "task-1";
  task.dataset_id = own.dataset_id;
  task.dataset_version = own.version;
  task.metric_name = "accuracy";
  task.task_kind = "classification";

  auto plans = rank_strategies_metadata_only(store, task, 100);
  REQUIRE(plans.size() >= 2);
  CHECK(plans[0].kind == PlanKind::reuse);
  CHECK(plans[0].source_model_id == "m-twin");
  CHECK(plans[0].score == doctest::Approx(0.8));  // affinity 1 * perf
  for (const auto& p : plans) CHECK_FALSE(p.fingerprint_based);

  // the affinity-0 candidate scores 0: retrain (0.5) must outrank it
  int rank_alien = -1, rank_retrain = -1;
  for (size_t i = 0; i < plans.size(); ++i) {
    if (plans[i].source_model_id == "m-alien" &&
        plans[i].kind == PlanKind::reuse)
      rank_alien = static_cast<int>(i);
    if (plans[i].kind == PlanKind::retrain) rank_retrain = static_cast<int>(i);
  }
  REQUIRE(rank_alien >= 0);
  REQUIRE(rank_retrain >= 0);
  CHECK(rank_retrain < rank_alien);
}

TEST_CASE("metadata-only ranking matches its oracle on random registries") {
  nn::Pcg32 rng(47);
  for (int round = 0; round < 6; ++round) {
    tu::TmpDir tmp;
    DatasetStore store(tmp.path);
    const std::vector<std::string> vocab{"cat", "dog", "cell", "tissue", "x"};

    struct Ds {
      std::string id;
      DatasetRecord record;
      double perf = -1;
      std::string model;
    };
    std::vector<Ds> sets;
    for (int i = 0; i < 8; ++i) {
      ImageContainer c;
      c.name = i == 0 ? "own" : "ds" + std::to_string(i);
      const size_t n_classes = 1 + rng.below(3);
      std::set<std::string> chosen;
      while (chosen.size() < n_classes)
        chosen.insert(vocab[rng.below(vocab.size())]);
      c.classes.assign(chosen.begin(), chosen.end());
      const size_t n = 4 + rng.below(4);
      c.pixels.assign(n * ImageContainer::kImageBytes,
                      static_cast<uint8_t>(i));
      for (size_t j = 0; j < n; ++j)
        c.labels.push_back(static_cast<uint16_t>(rng.below(c.classes.size())));
      c.splits["train"] = SplitRange{0, n};
      const std::string kind =
          rng.next_float() < 0.7f ? "classification" : "reconstruction";
      auto r = store.register_container(c, c.name, kind);
      Ds d{c.name, r, -1, ""};
      if (i > 0 && rng.next_float() < 0.8f) {
        d.perf = rng.uniform(0.0f, 1.0f);
        d.model = "m" + std::to_string(i);
        store.add_known_performance(c.name, 1, {d.model, "accuracy", d.perf});
      }
      d.record = store.get(c.name, 1);
      sets.push_back(d);
    }

    TaskSpec task;
    task.task_id = "task-1";
    task.dataset_id = "own";
    task.dataset_version = 1;
    task.metric_name = "accuracy";
    task.task_kind = sets[0].record.task_kind;

    StrategyConfig cfg;
    auto got = rank_strategies_metadata_only(store, task, 100, cfg);

    // oracle: top-m by affinity, then candidate scoring + sorting
    std::vector<std::pair<double, const Ds*>> by_aff;
    for (const auto& d : sets)
      by_aff.push_back({metadata_affinity(sets[0].record, d.record), &d});
    std::stable_sort(by_aff.begin(), by_aff.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first > b.first;
                       return a.second->id < b.second->id;
                     });
    if (by_aff.size() > cfg.neighbor_count) by_aff.resize(cfg.neighbor_count);
    struct Cand {
      double score;
      int cost;
      int kind_order;
      std::string model;
    };
    std::vector<Cand> cands;
    for (auto& [aff, d] : by_aff) {
      if (d->perf < 0) continue;
      cands.push_back({aff * d->perf, 0, 0, d->model});
      cands.push_back({aff * d->perf, cfg.fine_tune_epochs, 1, d->model});
    }
    cands.push_back({cfg.retrain_prior, cfg.full_epochs, 3, ""});
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.cost != b.cost) return a.cost < b.cost;
      if (a.kind_order != b.kind_order) return a.kind_order < b.kind_order;
      return a.model < b.model;
    });
    REQUIRE(got.size() == cands.size());
    for (size_t i = 0; i < got.size(); ++i) {
      INFO("round " << round << " position " << i);
      CHECK(got[i].score == doctest::Approx(cands[i].score).epsilon(1e-12));
      CHECK(got[i].source_model_id == cands[i].model);
    }
  }
}

TEST_CASE("conceive_dataset reproduces a lone source dataset up to ordering") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  nn::Pcg32 rng(3);

  ImageContainer c;
  c.name = "solo";
  c.classes = {"a", "b"};
  const size_t n = 6;
  c.pixels.resize(n * ImageContainer::kImageBytes);
  for (auto& v : c.pixels) v = static_cast<uint8_t>(rng.below(256));
  for (size_t i = 0; i < n; ++i)
    c.labels.push_back(static_cast<uint16_t>(i % 2));
  c.splits["train"] = SplitRange{0, n};
  auto r = store.register_container(c, "solo", "classification");
  std::vector<Fingerprint> fps;
  for (size_t i = 0; i < n; ++i)
    fps.push_back({{static_cast<float>(i), 0.0f}, "", "v1"});
  store.attach_fingerprints("solo", 1, fps, dataset_embedding(fps));

  TaskSpec task;
  task.task_id = "task-9";
  task.dataset_id = "solo";
  task.dataset_version = 1;
  task.task_kind = "classification";
  task.metric_name = "accuracy";

  auto conceived = conceive_dataset(store, task, n, false);
  CHECK(conceived.image_count() == n);
  CHECK(conceived.source_note.find("solo@v1(6)") != std::string::npos);

  // multiset equality of (image bytes, label) pairs
  auto materialized = store.load_container(conceived.dataset_id, conceived.version);
  auto keyify = [](const ImageContainer& ic) {
    std::multiset<std::string> keys;
    for (size_t i = 0; i < ic.count(); ++i) {
      std::string k(reinterpret_cast<const char*>(
                        ic.pixels.data() + i * ImageContainer::kImageBytes),
                    ImageContainer::kImageBytes);
      k += "|" + ic.classes[ic.labels[i]];
      keys.insert(std::move(k));
    }
    return keys;
  };
  CHECK(keyify(materialized) == keyify(c));

  // n=1 returns the single nearest image to the mean embedding
  auto one = conceive_dataset(store, task, 1, false);
  auto one_c = store.load_container(one.dataset_id, one.version);
  REQUIRE(one_c.count() == 1);
  // mean of fingerprints (0..5, 0) is (2.5, 0); nearest are indices 2 and 3
  // (tie broken by index): expect image 2's bytes
  std::string got(reinterpret_cast<const char*>(one_c.pixels.data()),
                  ImageContainer::kImageBytes);
  std::string expect(reinterpret_cast<const char*>(
                         c.pixels.data() + 2 * ImageContainer::kImageBytes),
                     ImageContainer::kImageBytes);
  CHECK(got == expect);
}

TEST_CASE("stratified conception draws from tied sources in round-robin") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);

  for (const std::string name : {"left", "right"}) {
    ImageContainer c;
    c.name = name;
    c.classes = {"k"};
    c.pixels.assign(4 * ImageContainer::kImageBytes,
                    name == "left" ? 10 : 200);
    c.labels = {0, 0, 0, 0};
    c.splits["train"] = SplitRange{0, 4};
    store.register_container(c, name, "classification");
    // identical fingerprints: a constructed tie between two sources
    std::vector<Fingerprint> fps(4, Fingerprint{{1.0f, 1.0f}, "", "v1"});
    store.attach_fingerprints(name, 1, fps, dataset_embedding(fps));
  }

  TaskSpec task;
  task.task_id = "task-strat";
  task.dataset_id = "left";
  task.dataset_version = 1;
  task.task_kind = "classification";
  task.metric_name = "accuracy";

  auto conceived = conceive_dataset(store, task, 4, true);
  auto materialized =
      store.load_container(conceived.dataset_id, conceived.version);
  std::set<uint8_t> firsts;
  for (size_t i = 0; i < materialized.count(); ++i)
    firsts.insert(materialized.pixels[i * ImageContainer::kImageBytes]);
  CHECK(firsts.size() == 2);  // both sources contributed
  CHECK(conceived.source_note.find("left@v1") != std::string::npos);
  CHECK(conceived.source_note.find("right@v1") != std::string::npos);
}

TEST_SUITE_END();
