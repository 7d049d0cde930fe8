#include "scarceops/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace scarceops {

std::string to_string(PlanKind k) {
  switch (k) {
    case PlanKind::reuse: return "reuse";
    case PlanKind::fine_tune: return "fine_tune";
    case PlanKind::retrain: return "retrain";
    case PlanKind::dataset_conception: return "dataset_conception";
  }
  return "unknown";
}

PlanKind plan_kind_from_string(const std::string& s) {
  if (s == "reuse") return PlanKind::reuse;
  if (s == "fine_tune") return PlanKind::fine_tune;
  if (s == "retrain") return PlanKind::retrain;
  if (s == "dataset_conception") return PlanKind::dataset_conception;
  throw ValidationError("unknown plan kind: " + s);
}

json StrategyPlan::to_json() const {
  json srcs = json::array();
  for (const auto& [id, v] : source_datasets)
    srcs.push_back({{"dataset_id", id}, {"version", v}});
  return {{"kind", scarceops::to_string(kind)},
          {"source_model_id", source_model_id},
          {"source_datasets", srcs},
          {"estimated_cost", estimated_cost},
          {"score", score},
          {"rationale", rationale},
          {"fingerprint_based", fingerprint_based}};
}

StrategyPlan StrategyPlan::from_json(const json& j) {
  StrategyPlan p;
  p.kind = plan_kind_from_string(j.at("kind").get<std::string>());
  p.source_model_id = j.value("source_model_id", "");
  for (const auto& s : j.value("source_datasets", json::array()))
    p.source_datasets.emplace_back(s.at("dataset_id").get<std::string>(),
                                   s.at("version").get<int>());
  p.estimated_cost = j.value("estimated_cost", 0);
  p.score = j.value("score", 0.0);
  p.rationale = j.value("rationale", "");
  p.fingerprint_based = j.value("fingerprint_based", false);
  return p;
}

double similarity_weight(double distance, double tau) {
  if (tau <= 0.0) throw ValidationError("similarity_weight: tau must be > 0");
  return std::exp(-distance / tau);
}

double default_tau(const DatasetStore& datasets,
                   const std::string& embedder_version) {
  std::vector<std::vector<float>> means;
  for (const auto& r : datasets.list()) {
    if (!r.has_fingerprints || r.embedder_version != embedder_version) continue;
    if (auto e = datasets.load_embedding(r.dataset_id, r.version))
      means.push_back(e->mean_vector);
  }
  std::vector<double> dists;
  for (size_t i = 0; i < means.size(); ++i)
    for (size_t j = i + 1; j < means.size(); ++j)
      dists.push_back(euclidean(means[i], means[j]));
  if (dists.empty()) return 1.0;
  std::sort(dists.begin(), dists.end());
  const double median = dists.size() % 2 == 1
                            ? dists[dists.size() / 2]
                            : 0.5 * (dists[dists.size() / 2 - 1] +
                                     dists[dists.size() / 2]);
  return median > 0.0 ? median : 1.0;
}

double metadata_affinity(const DatasetRecord& a, const DatasetRecord& b) {
  const double kind_match = a.task_kind == b.task_kind ? 1.0 : 0.0;

  std::set<std::string> sa(a.class_labels.begin(), a.class_labels.end());
  std::set<std::string> sb(b.class_labels.begin(), b.class_labels.end());
  std::vector<std::string> inter, uni;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                        std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(),
                 std::back_inserter(uni));
  const double jaccard =
      uni.empty() ? 1.0
                  : static_cast<double>(inter.size()) /
                        static_cast<double>(uni.size());

  // total counts per class across splits, normalized
  auto totals = [](const DatasetRecord& r) {
    std::map<std::string, double> t;
    double sum = 0.0;
    for (const auto& [split, counts] : r.class_distribution)
      for (const auto& [cls, n] : counts) {
        t[cls] += static_cast<double>(n);
        sum += static_cast<double>(n);
      }
    if (sum > 0)
      for (auto& [_, v] : t) v /= sum;
    return t;
  };
  const auto pa = totals(a);
  const auto pb = totals(b);
  double tv = 0.0;
  std::set<std::string> support;
  for (const auto& [c, _] : pa) support.insert(c);
  for (const auto& [c, _] : pb) support.insert(c);
  for (const auto& c : support) {
    const double x = pa.count(c) ? pa.at(c) : 0.0;
    const double y = pb.count(c) ? pb.at(c) : 0.0;
    tv += std::abs(x - y);
  }
  tv *= 0.5;

  return (kind_match + jaccard + (1.0 - tv)) / 3.0;
}

namespace {

int kind_order(PlanKind k) {
  switch (k) {
    case PlanKind::reuse: return 0;
    case PlanKind::fine_tune: return 1;
    case PlanKind::dataset_conception: return 2;
    case PlanKind::retrain: return 3;
  }
  return 4;
}

void sort_plans(std::vector<StrategyPlan>& plans) {
  std::sort(plans.begin(), plans.end(),
            [](const StrategyPlan& a, const StrategyPlan& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.estimated_cost != b.estimated_cost)
                return a.estimated_cost < b.estimated_cost;
              if (kind_order(a.kind) != kind_order(b.kind))
                return kind_order(a.kind) < kind_order(b.kind);
              return a.source_model_id < b.source_model_id;
            });
}

// Best known performance for the task's metric, if any.
const KnownPerformance* best_known(const DatasetRecord& r,
                                   const std::string& metric_name) {
  const KnownPerformance* best = nullptr;
  for (const auto& p : r.known_performances) {
    if (p.metric_name != metric_name) continue;
    if (!best || p.value > best->value ||
        (p.value == best->value && p.model_id < best->model_id))
      best = &p;
  }
  return best;
}

// Builds reuse/fine-tune candidates from scored neighbor datasets plus the
// unconditional retrain plan; the caller appends conception when eligible.
std::vector<StrategyPlan> build_candidates(
    const std::vector<std::pair<DatasetRecord, double>>& weighted_neighbors,
    const TaskSpec& task, bool fingerprint_based, const StrategyConfig& cfg) {
  std::vector<StrategyPlan> plans;
  std::set<std::pair<int, std::string>> seen;  // (kind order, model id)
  for (const auto& [record, weight] : weighted_neighbors) {
    const KnownPerformance* perf = best_known(record, task.metric_name);
    if (!perf) continue;
    const double score = weight * perf->value;
    for (PlanKind kind : {PlanKind::reuse, PlanKind::fine_tune}) {
      if (!seen.insert({kind_order(kind), perf->model_id}).second) continue;
      StrategyPlan p;
      p.kind = kind;
      p.source_model_id = perf->model_id;
      p.source_datasets = {{record.dataset_id, record.version}};
      p.estimated_cost = kind == PlanKind::reuse ? 0 : cfg.fine_tune_epochs;
      p.score = score;
      p.fingerprint_based = fingerprint_based;
      p.rationale = scarceops::to_string(kind) + " of " + perf->model_id +
                    " (best " + perf->metric_name + "=" +
                    std::to_string(perf->value) + " on " + record.dataset_id +
                    "@v" + std::to_string(record.version) + ", weight " +
                    std::to_string(weight) + ")";
      plans.push_back(std::move(p));
    }
  }
  StrategyPlan retrain;
  retrain.kind = PlanKind::retrain;
  retrain.estimated_cost = cfg.full_epochs;
  retrain.score = cfg.retrain_prior;
  retrain.fingerprint_based = fingerprint_based;
  retrain.rationale = "retrain from scratch (prior " +
                      std::to_string(cfg.retrain_prior) + ")";
  plans.push_back(std::move(retrain));
  return plans;
}

}  // namespace

std::vector<StrategyPlan> rank_strategies(const DatasetStore& datasets,
                                          const TaskSpec& task, size_t k,
                                          bool use_fingerprints,
                                          const StrategyConfig& cfg) {
  if (k < 1) throw ValidationError("rank_strategies: k must be >= 1");
  if (!use_fingerprints)
    return rank_strategies_metadata_only(datasets, task, k, cfg);

  auto embedding =
      datasets.load_embedding(task.dataset_id, task.dataset_version);
  if (!embedding)
    throw ValidationError("task dataset " + task.dataset_id + "@v" +
                          std::to_string(task.dataset_version) +
                          " has no attached fingerprints");
  const double tau = cfg.tau > 0.0
                         ? cfg.tau
                         : default_tau(datasets, embedding->embedder_version);

  auto neighbors = datasets.nearest_datasets(*embedding, cfg.neighbor_count);
  std::vector<std::pair<DatasetRecord, double>> weighted;
  double max_weight = 0.0;
  for (auto& [record, distance] : neighbors) {
    const double w = similarity_weight(distance, tau);
    max_weight = std::max(max_weight, w);
    weighted.emplace_back(record, w);
  }

  auto plans = build_candidates(weighted, task, /*fingerprint_based=*/true, cfg);

  // conception: fresh model trained on the nearest-image pool, worth the
  // retrain prior discounted by how close that pool actually is
  size_t pool = 0;
  for (const auto& r : datasets.list())
    if (r.has_fingerprints &&
        r.embedder_version == embedding->embedder_version)
      pool += r.image_count();
  if (pool >= cfg.min_conception_pool && !neighbors.empty()) {
    StrategyPlan p;
    p.kind = PlanKind::dataset_conception;
    for (auto& [record, _] : neighbors)
      p.source_datasets.emplace_back(record.dataset_id, record.version);
    p.estimated_cost = cfg.full_epochs;
    p.score = cfg.retrain_prior * max_weight;
    p.fingerprint_based = true;
    p.rationale = "conceive a training set from the " +
                  std::to_string(pool) + "-image nearest pool";
    plans.push_back(std::move(p));
  }

  sort_plans(plans);
  if (plans.size() > k) plans.resize(k);
  return plans;
}

std::vector<StrategyPlan> rank_strategies_metadata_only(
    const DatasetStore& datasets, const TaskSpec& task, size_t k,
    const StrategyConfig& cfg) {
  if (k < 1) throw ValidationError("rank_strategies: k must be >= 1");
  const DatasetRecord own = datasets.get(task.dataset_id, task.dataset_version);

  std::vector<std::pair<DatasetRecord, double>> weighted;
  for (auto& r : datasets.list())
    weighted.emplace_back(r, metadata_affinity(own, r));
  std::sort(weighted.begin(), weighted.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second > b.second;
              if (a.first.version != b.first.version)
                return a.first.version < b.first.version;
              return a.first.dataset_id < b.first.dataset_id;
            });
  if (weighted.size() > cfg.neighbor_count)
    weighted.resize(cfg.neighbor_count);

  auto plans = build_candidates(weighted, task, /*fingerprint_based=*/false, cfg);
  sort_plans(plans);
  if (plans.size() > k) plans.resize(k);
  return plans;
}

DatasetRecord conceive_dataset(DatasetStore& datasets, const TaskSpec& task,
                               size_t n, bool stratify) {
  if (n < 1) throw ValidationError("conceive_dataset: n must be >= 1");
  auto embedding =
      datasets.load_embedding(task.dataset_id, task.dataset_version);
  if (!embedding)
    throw ValidationError("conceive_dataset: task dataset has no fingerprints");
  auto refs = datasets.nearest_images(embedding->mean_vector,
                                      embedding->embedder_version, n, stratify);
  if (refs.empty())
    throw ValidationError("conceive_dataset: no fingerprinted images in store");

  // load each contributing container once
  std::map<std::string, ImageContainer> sources;
  std::map<std::string, size_t> contribution;
  for (const auto& ref : refs) {
    const std::string key = ref.dataset_id + "@v" + std::to_string(ref.version);
    if (!sources.count(key))
      sources[key] = datasets.load_container(ref.dataset_id, ref.version);
    contribution[key] += 1;
  }

  // union class list (sorted for determinism), labels remapped by name
  std::set<std::string> class_union;
  for (const auto& [_, c] : sources)
    class_union.insert(c.classes.begin(), c.classes.end());
  ImageContainer out;
  out.name = task.task_id + "-conceived";
  out.classes.assign(class_union.begin(), class_union.end());
  std::map<std::string, uint16_t> class_index;
  for (size_t i = 0; i < out.classes.size(); ++i)
    class_index[out.classes[i]] = static_cast<uint16_t>(i);

  for (const auto& ref : refs) {
    const std::string key = ref.dataset_id + "@v" + std::to_string(ref.version);
    const ImageContainer& src = sources[key];
    const uint8_t* px =
        src.pixels.data() + ref.index * ImageContainer::kImageBytes;
    out.pixels.insert(out.pixels.end(), px, px + ImageContainer::kImageBytes);
    out.labels.push_back(class_index.at(src.classes[src.labels[ref.index]]));
  }
  out.splits["train"] = SplitRange{0, out.count()};

  std::string note = "conceived for " + task.task_id + " from";
  for (const auto& [key, cnt] : contribution)
    note += " " + key + "(" + std::to_string(cnt) + ")";
  return datasets.register_container(out, out.name, task.task_kind, note);
}

}  // namespace scarceops
