#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scarceops/embedder.hpp"
#include "scarceops/npy.hpp"
#include "scarceops/util.hpp"

namespace scarceops {

struct SplitRange {
  size_t begin = 0;
  size_t end = 0;  // half-open [begin, end)
  size_t count() const { return end - begin; }
};

// Canonical image container: [N,3,32,32] u8 pixels, one u16 label per image,
// split index ranges over the concatenated image axis.
struct ImageContainer {
  static constexpr size_t kImageBytes = 3 * 32 * 32;

  std::string name;
  std::map<std::string, SplitRange> splits;
  std::vector<std::string> classes;
  std::vector<uint8_t> pixels;
  std::vector<uint16_t> labels;

  size_t count() const { return labels.size(); }
  void validate() const;

  // SHA-256 over image bytes + label bytes + split index (not the name/class
  // strings): identical content always hashes identically.
  std::string content_hash() const;

  json manifest_json() const;
  static ImageContainer from_manifest(const json& manifest,
                                      std::vector<uint8_t> pixels,
                                      std::vector<uint8_t> label_bytes);

  static ImageContainer load_dir(const fs::path& dir);

  // [0,1]-normalized float tensor of the images in `range` (whole container
  // when range is null).
  nn::TensorPtr to_tensor(const SplitRange* range = nullptr) const;
  std::vector<uint16_t> labels_in(const SplitRange& range) const;
};

struct NpzImportOptions {
  // split name -> NPZ key prefix ("train" looks up train_images/train_labels)
  std::map<std::string, std::string> split_naming = {
      {"train", "train"}, {"val", "val"}, {"test", "test"}};
  // Reject H,W != 32 unless set; then nearest-neighbor resample to 32x32.
  bool allow_resize = false;
};

// Parses an NPZ of NPY arrays into a container. Accepts image layouts
// [N,H,W] (gray, replicated to 3 channels), [N,H,W,3] and [N,3,H,W].
ImageContainer import_npz(const fs::path& path, const NpzImportOptions& opts = {});

// Writes the container back out as an NPZ ([count,3,32,32] u8 images and
// <u2 labels per split); re-importing reproduces the container bit-exactly.
void export_npz(const ImageContainer& c, const fs::path& path);

struct KnownPerformance {
  std::string model_id;
  std::string metric_name;
  double value = 0.0;
};

struct DatasetRecord {
  std::string dataset_id;
  int version = 1;
  std::string content_hash;
  std::string name;
  std::string task_kind;
  std::vector<std::string> class_labels;
  // split -> class label -> count
  std::map<std::string, std::map<std::string, size_t>> class_distribution;
  std::map<std::string, SplitRange> split_index;
  bool has_fingerprints = false;
  std::string embedder_version;
  std::vector<KnownPerformance> known_performances;
  std::string created_at;
  std::string source_note;

  size_t image_count() const;
  json to_json() const;
  static DatasetRecord from_json(const json& j);
};

struct ImageRef {
  std::string dataset_id;
  int version = 0;
  size_t index = 0;
  double distance = 0.0;
};

// Directory-per-dataset persistent store:
//   <root>/datasets/<id>/v<k>/{manifest.json,data.bin,labels.bin,
//                              fingerprints.json}
//   <root>/datasets/index.json
// Writers serialize through the store lock; blobs land before the manifest,
// the manifest before the index, every file via temp+rename.
class DatasetStore {
public:
  explicit DatasetStore(fs::path root);

  const fs::path& root() const { return root_; }

  // Version 1 for a new name, previous+1 when the content hash changed,
  // the existing record unchanged when it matches.
  DatasetRecord register_container(const ImageContainer& c,
                                   const std::string& name,
                                   const std::string& task_kind,
                                   const std::string& source_note = "");

  DatasetRecord get(const std::string& dataset_id, int version = -1) const;
  int latest_version(const std::string& dataset_id) const;
  std::vector<DatasetRecord> list() const;
  ImageContainer load_container(const std::string& dataset_id,
                                int version) const;

  DatasetRecord attach_fingerprints(const std::string& dataset_id, int version,
                                    const std::vector<Fingerprint>& fps,
                                    const DatasetEmbedding& embedding);
  std::optional<DatasetEmbedding> load_embedding(const std::string& dataset_id,
                                                 int version) const;
  std::vector<Fingerprint> load_fingerprints(const std::string& dataset_id,
                                             int version) const;
  json fingerprint_history(const std::string& dataset_id, int version) const;

  // Ascending distance; ties by (older version, dataset_id); only records
  // fingerprinted by the query's embedder version compete.
  std::vector<std::pair<DatasetRecord, double>> nearest_datasets(
      const DatasetEmbedding& query, size_t k) const;

  // n image refs by ascending latent distance. Stratified mode round-robins
  // across source datasets in order of each dataset's best-ranked image.
  std::vector<ImageRef> nearest_images(const std::vector<float>& query,
                                       const std::string& embedder_version,
                                       size_t n, bool stratify) const;

  void add_known_performance(const std::string& dataset_id, int version,
                             const KnownPerformance& perf);

  // Test hook: invoked between persistence steps; throwing simulates a crash.
  std::function<void(const std::string& step)> fault_hook;

private:
  fs::path root_;
  fs::path dataset_dir(const std::string& id, int version) const;
  void write_record(const DatasetRecord& r) const;
};

}  // namespace scarceops
