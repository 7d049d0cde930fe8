#include "scarceops/dataset_store.hpp"

#include <algorithm>
#include <cstring>

namespace scarceops {

void ImageContainer::validate() const {
  if (pixels.size() != count() * kImageBytes)
    throw ValidationError("container: pixel blob length " +
                          std::to_string(pixels.size()) +
                          " does not match image count " +
                          std::to_string(count()));
  for (uint16_t l : labels)
    if (l >= classes.size())
      throw ValidationError("container: label " + std::to_string(l) +
                            " out of range for " +
                            std::to_string(classes.size()) + " classes");
  for (const auto& [split, r] : splits) {
    if (r.begin > r.end || r.end > count())
      throw ValidationError("container: split " + split + " range invalid");
  }
}

std::string ImageContainer::content_hash() const {
  Sha256 h;
  h.update("scarceops-container-v1");
  const uint64_t n = count();
  h.update(&n, sizeof(n));
  for (const auto& [split, r] : splits) {  // std::map: deterministic order
    h.update(split);
    const uint64_t be[2] = {r.begin, r.end};
    h.update(be, sizeof(be));
  }
  h.update(pixels.data(), pixels.size());
  h.update(labels.data(), labels.size() * sizeof(uint16_t));
  return h.hex();
}

json ImageContainer::manifest_json() const {
  json splits_j = json::object();
  for (const auto& [k, r] : splits) splits_j[k] = {r.begin, r.end};
  return {{"name", name},
          {"shape", {count(), 3, 32, 32}},
          {"dtype", "u8"},
          {"splits", splits_j},
          {"classes", classes}};
}

ImageContainer ImageContainer::from_manifest(const json& manifest,
                                             std::vector<uint8_t> pixels_,
                                             std::vector<uint8_t> label_bytes) {
  ImageContainer c;
  c.name = manifest.at("name").get<std::string>();
  c.classes = manifest.at("classes").get<std::vector<std::string>>();
  for (auto& [k, v] : manifest.at("splits").items())
    c.splits[k] = SplitRange{v.at(0).get<size_t>(), v.at(1).get<size_t>()};
  c.pixels = std::move(pixels_);
  if (label_bytes.size() % 2 != 0)
    throw ValidationError("container: odd label blob size");
  c.labels.resize(label_bytes.size() / 2);
  std::memcpy(c.labels.data(), label_bytes.data(), label_bytes.size());
  c.validate();
  return c;
}

ImageContainer ImageContainer::load_dir(const fs::path& dir) {
  return from_manifest(read_json(dir / "manifest.json"),
                       read_file_bytes(dir / "data.bin"),
                       read_file_bytes(dir / "labels.bin"));
}

nn::TensorPtr ImageContainer::to_tensor(const SplitRange* range) const {
  const SplitRange all{0, count()};
  const SplitRange& r = range ? *range : all;
  auto t = nn::Tensor::zeros({static_cast<int>(r.count()), 3, 32, 32});
  const uint8_t* src = pixels.data() + r.begin * kImageBytes;
  for (size_t i = 0; i < r.count() * kImageBytes; ++i)
    t->data[i] = static_cast<float>(src[i]) / 255.0f;
  return t;
}

std::vector<uint16_t> ImageContainer::labels_in(const SplitRange& range) const {
  return std::vector<uint16_t>(labels.begin() + static_cast<long>(range.begin),
                               labels.begin() + static_cast<long>(range.end));
}

namespace {

std::vector<uint8_t> resize_nearest(const std::vector<uint8_t>& chw, size_t c,
                                    size_t h, size_t w) {
  std::vector<uint8_t> out(c * 32 * 32);
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t y = 0; y < 32; ++y)
      for (size_t x = 0; x < 32; ++x) {
        const size_t sy = y * h / 32;
        const size_t sx = x * w / 32;
        out[(ch * 32 + y) * 32 + x] = chw[(ch * h + sy) * w + sx];
      }
  return out;
}

// Appends one image array as [count, 3*32*32] u8 CHW rows.
void append_images(const NpyArray& a, const std::string& key,
                   bool allow_resize, std::vector<uint8_t>& pixels,
                   size_t& appended) {
  if (a.descr != "|u1")
    throw ValidationError("npz " + key + ": images must be u8, got " + a.descr);
  size_t n = 0, h = 0, w = 0;
  enum { GRAY, HWC, CHW } layout;
  if (a.shape.size() == 3) {
    n = a.shape[0], h = a.shape[1], w = a.shape[2];
    layout = GRAY;
  } else if (a.shape.size() == 4 && a.shape[3] == 3) {
    n = a.shape[0], h = a.shape[1], w = a.shape[2];
    layout = HWC;
  } else if (a.shape.size() == 4 && a.shape[1] == 3) {
    n = a.shape[0], h = a.shape[2], w = a.shape[3];
    layout = CHW;
  } else {
    throw ValidationError("npz " + key + ": unsupported image shape");
  }
  if ((h != 32 || w != 32) && !allow_resize)
    throw ValidationError("npz " + key + ": expected 32x32 images, got " +
                          std::to_string(h) + "x" + std::to_string(w) +
                          " (enable resize to resample)");

  for (size_t i = 0; i < n; ++i) {
    std::vector<uint8_t> chw(3 * h * w);
    const uint8_t* src = a.raw.data();
    switch (layout) {
      case GRAY:
        for (size_t p = 0; p < h * w; ++p) {
          const uint8_t v = src[i * h * w + p];
          chw[p] = v;
          chw[h * w + p] = v;
          chw[2 * h * w + p] = v;
        }
        break;
      case HWC:
        for (size_t y = 0; y < h; ++y)
          for (size_t x = 0; x < w; ++x)
            for (size_t c = 0; c < 3; ++c)
              chw[(c * h + y) * w + x] = src[((i * h + y) * w + x) * 3 + c];
        break;
      case CHW:
        std::memcpy(chw.data(), src + i * 3 * h * w, 3 * h * w);
        break;
    }
    if (h != 32 || w != 32) chw = resize_nearest(chw, 3, h, w);
    pixels.insert(pixels.end(), chw.begin(), chw.end());
    ++appended;
  }
}

}  // namespace

ImageContainer import_npz(const fs::path& path, const NpzImportOptions& opts) {
  const auto entries = read_zip(path);
  auto lookup = [&](const std::string& key) -> const std::vector<uint8_t>* {
    auto it = entries.find(key + ".npy");
    if (it != entries.end()) return &it->second;
    it = entries.find(key);
    return it != entries.end() ? &it->second : nullptr;
  };

  ImageContainer c;
  c.name = path.stem().string();
  int64_t max_label = -1;
  size_t offset = 0;
  // fixed split order so the container layout is deterministic
  for (const std::string split : {"train", "val", "test"}) {
    auto naming = opts.split_naming.find(split);
    if (naming == opts.split_naming.end()) continue;
    const auto* img = lookup(naming->second + "_images");
    const auto* lab = lookup(naming->second + "_labels");
    if (!img && !lab) continue;
    if (!img || !lab)
      throw ValidationError("npz: missing split keys for '" + split +
                            "' (need both " + naming->second + "_images and " +
                            naming->second + "_labels)");
    const auto images =
        parse_npy(img->data(), img->size(), naming->second + "_images");
    const auto labels_arr =
        parse_npy(lab->data(), lab->size(), naming->second + "_labels");

    size_t added = 0;
    std::vector<uint8_t> px;
    append_images(images, naming->second + "_images", opts.allow_resize, px,
                  added);
    const size_t label_count =
        labels_arr.shape.empty() ? 1 : labels_arr.shape[0];
    if (label_count != added)
      throw ValidationError("npz: " + std::to_string(added) + " images vs " +
                            std::to_string(label_count) + " labels in split " +
                            split);
    c.pixels.insert(c.pixels.end(), px.begin(), px.end());
    const size_t stride = labels_arr.count() / label_count;  // [N] or [N,1]
    for (size_t i = 0; i < label_count; ++i) {
      const int64_t v = labels_arr.int_at(i * stride);
      if (v < 0 || v > 0xffff)
        throw ValidationError("npz: label value out of u16 range");
      c.labels.push_back(static_cast<uint16_t>(v));
      max_label = std::max(max_label, v);
    }
    c.splits[split] = SplitRange{offset, offset + added};
    offset += added;
  }
  if (c.count() == 0)
    throw ValidationError("npz: no recognized split keys in " + path.string());
  for (int64_t i = 0; i <= std::max<int64_t>(max_label, 0); ++i)
    c.classes.push_back("class-" + std::to_string(i));
  c.validate();
  return c;
}

void export_npz(const ImageContainer& c, const fs::path& path) {
  c.validate();
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [split, r] : c.splits) {
    NpyArray img;
    img.descr = "|u1";
    img.shape = {r.count(), 3, 32, 32};
    img.raw.assign(
        c.pixels.begin() + static_cast<long>(r.begin * ImageContainer::kImageBytes),
        c.pixels.begin() + static_cast<long>(r.end * ImageContainer::kImageBytes));
    NpyArray lab;
    lab.descr = "<u2";
    lab.shape = {r.count()};
    lab.raw.resize(r.count() * 2);
    std::memcpy(lab.raw.data(), c.labels.data() + r.begin, r.count() * 2);
    entries.emplace_back(split + "_images.npy", write_npy(img));
    entries.emplace_back(split + "_labels.npy", write_npy(lab));
  }
  write_zip_stored(path, entries);
}

size_t DatasetRecord::image_count() const {
  size_t n = 0;
  for (auto& [_, r] : split_index) n = std::max(n, r.end);
  return n;
}

json DatasetRecord::to_json() const {
  json splits_j = json::object();
  for (const auto& [k, r] : split_index) splits_j[k] = {r.begin, r.end};
  json dist = json::object();
  for (const auto& [split, counts] : class_distribution) {
    json cj = json::object();
    for (const auto& [cls, n] : counts) cj[cls] = n;
    dist[split] = cj;
  }
  json perfs = json::array();
  for (const auto& p : known_performances)
    perfs.push_back({{"model_id", p.model_id},
                     {"metric_name", p.metric_name},
                     {"value", p.value}});
  return {{"dataset_id", dataset_id},
          {"version", version},
          {"content_hash", content_hash},
          {"name", name},
          {"task_kind", task_kind},
          {"class_labels", class_labels},
          {"class_distribution", dist},
          {"split_index", splits_j},
          {"has_fingerprints", has_fingerprints},
          {"embedder_version", embedder_version},
          {"known_performances", perfs},
          {"created_at", created_at},
          {"source_note", source_note}};
}

DatasetRecord DatasetRecord::from_json(const json& j) {
  DatasetRecord r;
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.version = j.at("version").get<int>();
  r.content_hash = j.at("content_hash").get<std::string>();
  r.name = j.at("name").get<std::string>();
  r.task_kind = j.at("task_kind").get<std::string>();
  r.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  for (auto& [split, counts] : j.at("class_distribution").items())
    for (auto& [cls, n] : counts.items())
      r.class_distribution[split][cls] = n.get<size_t>();
  for (auto& [k, v] : j.at("split_index").items())
    r.split_index[k] = SplitRange{v.at(0).get<size_t>(), v.at(1).get<size_t>()};
  r.has_fingerprints = j.value("has_fingerprints", false);
  r.embedder_version = j.value("embedder_version", "");
  for (auto& p : j.value("known_performances", json::array()))
    r.known_performances.push_back({p.at("model_id").get<std::string>(),
                                    p.at("metric_name").get<std::string>(),
                                    p.at("value").get<double>()});
  r.created_at = j.value("created_at", "");
  r.source_note = j.value("source_note", "");
  return r;
}

DatasetStore::DatasetStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "datasets");
}

fs::path DatasetStore::dataset_dir(const std::string& id, int version) const {
  return root_ / "datasets" / id / ("v" + std::to_string(version));
}

void DatasetStore::write_record(const DatasetRecord& r) const {
  const fs::path p = dataset_dir(r.dataset_id, r.version) / "manifest.json";
  json manifest = read_json(p);  // keep the container section
  json updated = r.to_json();
  updated["container"] = manifest.at("container");
  atomic_write_json(p, updated);
}

static std::map<std::string, std::map<std::string, size_t>> distribution_of(
    const ImageContainer& c) {
  std::map<std::string, std::map<std::string, size_t>> dist;
  for (const auto& [split, r] : c.splits) {
    auto& counts = dist[split];
    for (size_t i = r.begin; i < r.end; ++i)
      counts[c.classes[c.labels[i]]] += 1;
  }
  return dist;
}

DatasetRecord DatasetStore::register_container(const ImageContainer& c,
                                               const std::string& name,
                                               const std::string& task_kind,
                                               const std::string& source_note) {
  c.validate();
  const std::string id = sanitize_id(name);
  const std::string hash = c.content_hash();

  StoreLock lock(root_);
  const fs::path index_path = root_ / "datasets" / "index.json";
  json index = fs::exists(index_path) ? read_json(index_path)
                                      : json{{"datasets", json::object()}};
  auto& datasets = index["datasets"];

  int version = 1;
  if (datasets.contains(id)) {
    const int latest = datasets[id].at("latest").get<int>();
    DatasetRecord prev = get(id, latest);
    if (prev.content_hash == hash) return prev;  // idempotent
    version = latest + 1;
  }

  DatasetRecord r;
  r.dataset_id = id;
  r.version = version;
  r.content_hash = hash;
  r.name = name;
  r.task_kind = task_kind;
  r.class_labels = c.classes;
  r.class_distribution = distribution_of(c);
  r.split_index = c.splits;
  r.created_at = iso_timestamp_utc();
  r.source_note = source_note;

  const fs::path dir = dataset_dir(id, version);
  fs::create_directories(dir);
  atomic_write_file(dir / "data.bin", c.pixels.data(), c.pixels.size());
  atomic_write_file(dir / "labels.bin", c.labels.data(),
                    c.labels.size() * sizeof(uint16_t));
  if (fault_hook) fault_hook("after_blobs");
  json manifest = r.to_json();
  manifest["container"] = c.manifest_json();
  atomic_write_json(dir / "manifest.json", manifest);
  if (fault_hook) fault_hook("after_manifest");

  if (!datasets.contains(id)) datasets[id] = {{"versions", json::array()}};
  datasets[id]["versions"].push_back(version);
  datasets[id]["latest"] = version;
  atomic_write_json(index_path, index);
  return r;
}

int DatasetStore::latest_version(const std::string& dataset_id) const {
  const fs::path idx = root_ / "datasets" / "index.json";
  if (!fs::exists(idx)) throw NotFoundError("unknown dataset " + dataset_id);
  json index = read_json(idx);
  if (!index.at("datasets").contains(dataset_id))
    throw NotFoundError("unknown dataset " + dataset_id);
  return index["datasets"][dataset_id].at("latest").get<int>();
}

DatasetRecord DatasetStore::get(const std::string& dataset_id,
                                int version) const {
  if (version < 0) version = latest_version(dataset_id);
  const fs::path p = dataset_dir(dataset_id, version) / "manifest.json";
  if (!fs::exists(p))
    throw NotFoundError("unknown dataset " + dataset_id + "@v" +
                        std::to_string(version));
  return DatasetRecord::from_json(read_json(p));
}

std::vector<DatasetRecord> DatasetStore::list() const {
  std::vector<DatasetRecord> out;
  const fs::path idx = root_ / "datasets" / "index.json";
  if (!fs::exists(idx)) return out;
  json index = read_json(idx);
  for (auto& [id, meta] : index.at("datasets").items())
    for (auto& v : meta.at("versions")) out.push_back(get(id, v.get<int>()));
  return out;
}

ImageContainer DatasetStore::load_container(const std::string& dataset_id,
                                            int version) const {
  if (version < 0) version = latest_version(dataset_id);
  const fs::path dir = dataset_dir(dataset_id, version);
  if (!fs::exists(dir / "manifest.json"))
    throw NotFoundError("unknown dataset " + dataset_id + "@v" +
                        std::to_string(version));
  const json manifest = read_json(dir / "manifest.json");
  return ImageContainer::from_manifest(manifest.at("container"),
                                       read_file_bytes(dir / "data.bin"),
                                       read_file_bytes(dir / "labels.bin"));
}

DatasetRecord DatasetStore::attach_fingerprints(
    const std::string& dataset_id, int version,
    const std::vector<Fingerprint>& fps, const DatasetEmbedding& embedding) {
  StoreLock lock(root_);
  DatasetRecord r = get(dataset_id, version);
  if (fps.size() != r.image_count())
    throw ValidationError(
        "fingerprint count " + std::to_string(fps.size()) +
        " does not match image count " + std::to_string(r.image_count()) +
        " of " + dataset_id + "@v" + std::to_string(version));
  for (const auto& fp : fps)
    if (fp.embedder_version != embedding.embedder_version)
      throw IncompatibleFingerprintsError(
          "attach_fingerprints: fingerprint/embedding version mismatch");

  const fs::path fpath = dataset_dir(dataset_id, version) / "fingerprints.json";
  json history = json::array();
  if (fs::exists(fpath)) history = read_json(fpath).value("history", json::array());
  history.push_back({{"embedder_version", embedding.embedder_version},
                     {"attached_at", iso_timestamp_utc()}});

  json vecs = json::array();
  for (const auto& fp : fps) vecs.push_back(fp.vector);
  atomic_write_json(fpath, {{"embedder_version", embedding.embedder_version},
                            {"embedding", embedding.to_json()},
                            {"fingerprints", vecs},
                            {"history", history}});

  r.has_fingerprints = true;
  r.embedder_version = embedding.embedder_version;
  write_record(r);
  return r;
}

std::optional<DatasetEmbedding> DatasetStore::load_embedding(
    const std::string& dataset_id, int version) const {
  if (version < 0) version = latest_version(dataset_id);
  const fs::path fpath = dataset_dir(dataset_id, version) / "fingerprints.json";
  if (!fs::exists(fpath)) return std::nullopt;
  return DatasetEmbedding::from_json(read_json(fpath).at("embedding"));
}

std::vector<Fingerprint> DatasetStore::load_fingerprints(
    const std::string& dataset_id, int version) const {
  if (version < 0) version = latest_version(dataset_id);
  const fs::path fpath = dataset_dir(dataset_id, version) / "fingerprints.json";
  if (!fs::exists(fpath))
    throw NotFoundError("no fingerprints attached to " + dataset_id + "@v" +
                        std::to_string(version));
  const json j = read_json(fpath);
  const std::string version_hash = j.at("embedder_version").get<std::string>();
  std::vector<Fingerprint> out;
  size_t i = 0;
  for (const auto& v : j.at("fingerprints")) {
    Fingerprint fp;
    fp.vector = v.get<std::vector<float>>();
    fp.source_image_id = dataset_id + "@v" + std::to_string(version) + "#" +
                         std::to_string(i++);
    fp.embedder_version = version_hash;
    out.push_back(std::move(fp));
  }
  return out;
}

json DatasetStore::fingerprint_history(const std::string& dataset_id,
                                       int version) const {
  if (version < 0) version = latest_version(dataset_id);
  const fs::path fpath = dataset_dir(dataset_id, version) / "fingerprints.json";
  if (!fs::exists(fpath)) return json::array();
  return read_json(fpath).value("history", json::array());
}

std::vector<std::pair<DatasetRecord, double>> DatasetStore::nearest_datasets(
    const DatasetEmbedding& query, size_t k) const {
  std::vector<std::pair<DatasetRecord, double>> scored;
  for (auto& r : list()) {
    if (!r.has_fingerprints || r.embedder_version != query.embedder_version)
      continue;
    auto emb = load_embedding(r.dataset_id, r.version);
    if (!emb) continue;
    scored.emplace_back(r, similarity_distance(query, *emb));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    if (a.first.version != b.first.version)
      return a.first.version < b.first.version;
    return a.first.dataset_id < b.first.dataset_id;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::vector<ImageRef> DatasetStore::nearest_images(
    const std::vector<float>& query, const std::string& embedder_version,
    size_t n, bool stratify) const {
  struct Scored {
    ImageRef ref;
    std::string dataset_key;
  };
  std::vector<Scored> all;
  for (auto& r : list()) {
    if (!r.has_fingerprints || r.embedder_version != embedder_version) continue;
    auto fps = load_fingerprints(r.dataset_id, r.version);
    for (size_t i = 0; i < fps.size(); ++i) {
      ImageRef ref{r.dataset_id, r.version, i, euclidean(query, fps[i].vector)};
      all.push_back({ref, r.dataset_id + "@v" + std::to_string(r.version)});
    }
  }
  auto by_distance = [](const Scored& a, const Scored& b) {
    if (a.ref.distance != b.ref.distance)
      return a.ref.distance < b.ref.distance;
    if (a.dataset_key != b.dataset_key) return a.dataset_key < b.dataset_key;
    return a.ref.index < b.ref.index;
  };
  std::sort(all.begin(), all.end(), by_distance);
  if (n > all.size()) n = all.size();

  std::vector<ImageRef> out;
  if (!stratify) {
    for (size_t i = 0; i < n; ++i) out.push_back(all[i].ref);
    return out;
  }
  // round-robin across datasets, each dataset's images staying
  // distance-ordered; dataset turn order = order of first appearance
  std::vector<std::string> turn_order;
  std::map<std::string, std::vector<ImageRef>> per_dataset;
  for (auto& s : all) {
    if (!per_dataset.count(s.dataset_key)) turn_order.push_back(s.dataset_key);
    per_dataset[s.dataset_key].push_back(s.ref);
  }
  std::map<std::string, size_t> cursor;
  while (out.size() < n) {
    bool progressed = false;
    for (const auto& key : turn_order) {
      auto& images = per_dataset[key];
      auto& pos = cursor[key];
      if (pos < images.size() && out.size() < n) {
        out.push_back(images[pos++]);
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

void DatasetStore::add_known_performance(const std::string& dataset_id,
                                         int version,
                                         const KnownPerformance& perf) {
  StoreLock lock(root_);
  DatasetRecord r = get(dataset_id, version);
  for (auto& p : r.known_performances) {
    if (p.model_id == perf.model_id && p.metric_name == perf.metric_name) {
      p.value = perf.value;
      write_record(r);
      return;
    }
  }
  r.known_performances.push_back(perf);
  write_record(r);
}

}  // namespace scarceops
