#include <algorithm>
#include <set>

#include "doctest.h"
#include "scarceops/dataset_store.hpp"
#include "testutil.hpp"

using namespace scarceops;
namespace tu = testutil;

TEST_SUITE_BEGIN("dataset-store");

namespace {

ImageContainer tiny_container(const std::string& name,
                              std::vector<uint16_t> labels, uint8_t fill) {
  ImageContainer c;
  c.name = name;
  uint16_t max_label = 0;
  for (auto l : labels) max_label = std::max(max_label, l);
  for (int i = 0; i <= max_label; ++i)
    c.classes.push_back("class-" + std::to_string(i));
  c.pixels.assign(labels.size() * ImageContainer::kImageBytes, fill);
  c.labels = std::move(labels);
  c.splits["train"] = SplitRange{0, c.labels.size()};
  c.validate();
  return c;
}

std::vector<Fingerprint> make_fps(size_t n, const std::string& version,
                                  nn::Pcg32& rng) {
  std::vector<Fingerprint> out;
  for (size_t i = 0; i < n; ++i)
    out.push_back({{rng.uniform(-3, 3), rng.uniform(-3, 3)},
                   "img-" + std::to_string(i), version});
  return out;
}

}  // namespace

TEST_CASE("register is idempotent and versions bump on content change") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);

  auto c = tiny_container("demo", {0, 0, 1}, 42);
  auto r1 = store.register_container(c, "demo", "classification");
  CHECK(r1.version == 1);
  CHECK(r1.dataset_id == "demo");

  auto r2 = store.register_container(c, "demo", "classification");
  CHECK(r2.version == 1);
  CHECK(r2.content_hash == r1.content_hash);
  CHECK(store.list().size() == 1);

  // modified labels -> new hash, version 2
  auto modified = tiny_container("demo", {0, 1, 1}, 42);
  auto r3 = store.register_container(modified, "demo", "classification");
  CHECK(r3.version == 2);
  CHECK(r3.content_hash != r1.content_hash);
  CHECK(store.latest_version("demo") == 2);

  // class_distribution counts labels per split
  CHECK(r1.class_distribution.at("train").at("class-0") == 2);
  CHECK(r1.class_distribution.at("train").at("class-1") == 1);

  // containers round-trip through the store byte-exactly
  auto loaded = store.load_container("demo", 1);
  CHECK(loaded.pixels == c.pixels);
  CHECK(loaded.labels == c.labels);
  CHECK(loaded.content_hash() == r1.content_hash);
}

TEST_CASE("content hash is a pure function of bytes+labels+splits") {
  auto a = tiny_container("x", {0, 1}, 7);
  auto b = tiny_container("completely-different-name", {0, 1}, 7);
  CHECK(a.content_hash() == b.content_hash());  // name not hashed
  auto c = tiny_container("x", {0, 1}, 8);
  CHECK(a.content_hash() != c.content_hash());
  auto d = tiny_container("x", {1, 0}, 7);
  CHECK(a.content_hash() != d.content_hash());
}

TEST_CASE("attach_fingerprints validates counts and keeps history") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  auto r = store.register_container(tiny_container("fp", {0, 1, 0, 1}, 9),
                                    "fp", "classification");
  nn::Pcg32 rng(1);

  // wrong count errors
  auto three = make_fps(3, "v-a", rng);
  CHECK_THROWS_AS(store.attach_fingerprints("fp", 1, three,
                                            dataset_embedding(three)),
                  ValidationError);

  // correct count attaches
  auto four = make_fps(4, "v-a", rng);
  auto updated =
      store.attach_fingerprints("fp", 1, four, dataset_embedding(four));
  CHECK(updated.has_fingerprints);
  CHECK(updated.embedder_version == "v-a");
  CHECK(store.load_fingerprints("fp", 1).size() == 4);

  // re-attach with a new embedder version replaces and records history
  auto four_b = make_fps(4, "v-b", rng);
  auto updated2 =
      store.attach_fingerprints("fp", 1, four_b, dataset_embedding(four_b));
  CHECK(updated2.embedder_version == "v-b");
  auto history = store.fingerprint_history("fp", 1);
  REQUIRE(history.size() == 2);
  CHECK(history[0].at("embedder_version") == "v-a");
  CHECK(history[1].at("embedder_version") == "v-b");

  CHECK_THROWS_AS(store.attach_fingerprints("nope", 1, four,
                                            dataset_embedding(four)),
                  NotFoundError);
}

TEST_CASE("nearest_datasets: exact match first, k overflow, sort oracle") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  nn::Pcg32 rng(7);

  std::vector<DatasetEmbedding> embeddings;
  for (int i = 0; i < 20; ++i) {
    const std::string name = "ds-" + std::to_string(i);
    auto r = store.register_container(
        tiny_container(name, {0, 1}, static_cast<uint8_t>(i)), name,
        "classification");
    auto fps = make_fps(2, "v1", rng);
    auto emb = dataset_embedding(fps);
    store.attach_fingerprints(name, 1, fps, emb);
    embeddings.push_back(emb);
  }

  // query equal to a stored mean: that dataset first at distance 0
  auto hits = store.nearest_datasets(embeddings[7], 3);
  REQUIRE(!hits.empty());
  CHECK(hits[0].first.dataset_id == "ds-7");
  CHECK(hits[0].second == doctest::Approx(0.0));

  // k larger than the store returns everything
  CHECK(store.nearest_datasets(embeddings[0], 100).size() == 20);

  // full-sort oracle equivalence
  DatasetEmbedding query;
  query.mean_vector = {0.3f, -0.1f};
  query.embedder_version = "v1";
  query.count = 1;
  auto got = store.nearest_datasets(query, 20);
  std::vector<std::pair<double, std::string>> oracle;
  for (int i = 0; i < 20; ++i)
    oracle.emplace_back(euclidean(query.mean_vector, embeddings[i].mean_vector),
                        "ds-" + std::to_string(i));
  std::sort(oracle.begin(), oracle.end());
  REQUIRE(got.size() == oracle.size());
  for (size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].first.dataset_id == oracle[i].second);
    CHECK(got[i].second == doctest::Approx(oracle[i].first));
  }

  // version mismatch excludes records
  DatasetEmbedding other;
  other.mean_vector = {0.0f, 0.0f};
  other.embedder_version = "v2";
  other.count = 1;
  CHECK(store.nearest_datasets(other, 5).empty());
}

TEST_CASE("nearest_images: exact match, overflow, brute-force oracle") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  nn::Pcg32 rng(3);

  struct Entry {
    std::string id;
    size_t index;
    std::vector<float> vec;
  };
  std::vector<Entry> all;
  for (int d = 0; d < 5; ++d) {
    const std::string name = "src-" + std::to_string(d);
    std::vector<uint16_t> labels(100, 0);
    store.register_container(tiny_container(name, labels,
                                            static_cast<uint8_t>(d)),
                             name, "classification");
    auto fps = make_fps(100, "v1", rng);
    store.attach_fingerprints(name, 1, fps, dataset_embedding(fps));
    for (size_t i = 0; i < fps.size(); ++i)
      all.push_back({name, i, fps[i].vector});
  }

  // exact-match image comes back first
  auto first = store.nearest_images(all[123].vec, "v1", 5, false);
  REQUIRE(!first.empty());
  CHECK(first[0].dataset_id == all[123].id);
  CHECK(first[0].index == all[123].index);
  CHECK(first[0].distance == doctest::Approx(0.0));

  // n >= corpus returns every image
  CHECK(store.nearest_images({0.0f, 0.0f}, "v1", 10000, false).size() == 500);

  // brute-force oracle over the 500-image corpus
  const std::vector<float> q{0.25f, -1.5f};
  auto got = store.nearest_images(q, "v1", 40, false);
  std::vector<std::pair<double, std::pair<std::string, size_t>>> oracle;
  for (const auto& e : all)
    oracle.push_back({euclidean(q, e.vec), {e.id, e.index}});
  std::sort(oracle.begin(), oracle.end());
  REQUIRE(got.size() == 40);
  for (size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].dataset_id == oracle[i].second.first);
    CHECK(got[i].index == oracle[i].second.second);
  }

  // stratified mode draws from every dataset
  auto strat = store.nearest_images(q, "v1", 10, true);
  std::set<std::string> sources;
  for (const auto& ref : strat) sources.insert(ref.dataset_id);
  CHECK(sources.size() == 5);
}

TEST_CASE("crash injection never leaves a record readable without blobs") {
  tu::TmpDir tmp;
  for (const std::string step : {"after_blobs", "after_manifest"}) {
    DatasetStore store(tmp.path / step);
    store.fault_hook = [&](const std::string& at) {
      if (at == step) throw InternalError("injected crash at " + at);
    };
    auto c = tiny_container("crashy", {0, 1, 1}, 5);
    CHECK_THROWS_AS(store.register_container(c, "crashy", "classification"),
                    InternalError);

    // the record must not be visible: the index was never updated
    DatasetStore reopened(tmp.path / step);
    CHECK(reopened.list().empty());
    CHECK_THROWS_AS(reopened.get("crashy"), NotFoundError);

    // a clean retry fully recovers (every listed record has its blobs)
    reopened.fault_hook = nullptr;
    auto r = reopened.register_container(c, "crashy", "classification");
    CHECK(r.version == 1);
    auto loaded = reopened.load_container("crashy", 1);
    CHECK(loaded.pixels == c.pixels);
  }
}

TEST_CASE("known performances accumulate and update per model+metric") {
  tu::TmpDir tmp;
  DatasetStore store(tmp.path);
  store.register_container(tiny_container("kp", {0}, 1), "kp",
                           "classification");
  store.add_known_performance("kp", 1, {"model-1", "accuracy", 0.8});
  store.add_known_performance("kp", 1, {"model-2", "accuracy", 0.6});
  store.add_known_performance("kp", 1, {"model-1", "accuracy", 0.9});
  auto r = store.get("kp", 1);
  REQUIRE(r.known_performances.size() == 2);
  CHECK(r.known_performances[0].value == 0.9);
}

TEST_SUITE_END();
