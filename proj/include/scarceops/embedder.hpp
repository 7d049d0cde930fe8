#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scarceops/checkpoint.hpp"
#include "scarceops/nn/layers.hpp"

namespace scarceops {

struct AutoencoderConfig {
  std::string preset = "tiny";  // "tiny" | "resnet18_32"
  int latent_dim = 2;
  float learning_rate = 1e-3f;
  int batch_size = 32;
  int epochs = 30;
  uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static AutoencoderConfig from_json(const json& j);
};

struct TrainingReport {
  std::vector<double> train_loss;  // one entry per epoch
  std::vector<double> val_loss;
  int best_epoch = -1;  // 0-based epoch whose parameters were kept
  double best_val_loss = 0.0;
};

// A compact latent code for one image. Fingerprints are only comparable when
// they come from the same embedder checkpoint.
struct Fingerprint {
  std::vector<float> vector;
  std::string source_image_id;
  std::string embedder_version;
};

struct DatasetEmbedding {
  std::vector<float> mean_vector;
  std::map<std::string, std::vector<float>> per_split;
  size_t count = 0;
  std::string embedder_version;

  json to_json() const;
  static DatasetEmbedding from_json(const json& j);
};

namespace detail {
struct EncoderIface {
  virtual ~EncoderIface() = default;
  virtual nn::TensorPtr forward(const nn::TensorPtr& x,
                                const nn::ForwardCtx& ctx) const = 0;
  virtual void collect_params(std::vector<nn::TensorPtr>& out) const = 0;
  virtual void collect_state(std::vector<nn::TensorPtr>& out) const = 0;
};

// linear -> reshape [N,c0,h0,w0] -> transposed convs (ReLU between) ->
// sigmoid. `deconvs.size()` is the architecture introspection hook.
struct TransposeDecoder {
  nn::Linear fc;
  int c0, h0, w0;
  std::vector<nn::ConvTranspose2d> deconvs;

  TransposeDecoder(int latent_dim, int c0, int h0, int w0,
                   const std::vector<int>& channels, nn::Pcg32& rng,
                   const std::string& name);
  nn::TensorPtr forward(const nn::TensorPtr& z, const nn::ForwardCtx& ctx) const;
  void collect_params(std::vector<nn::TensorPtr>& out) const;
  void collect_state(std::vector<nn::TensorPtr>& out) const;
};
}  // namespace detail

// The fingerprinting autoencoder: encoder f, decoder g, trained to minimize
// reconstruction MSE on 3x32x32 images in [0,1].
class Autoencoder {
public:
  static Autoencoder build(const AutoencoderConfig& config);

  // images [N,3,32,32] -> [N,latent_dim]
  nn::TensorPtr encode(const nn::TensorPtr& images,
                       const nn::ForwardCtx& ctx) const;
  // [N,latent_dim] -> [N,3,32,32]
  nn::TensorPtr decode(const nn::TensorPtr& latent,
                       const nn::ForwardCtx& ctx) const;

  // Shuffled minibatch Adam on MSE. Keeps the best-validation-loss
  // parameters (falls back to train loss when val_images is null/empty).
  // Deterministic for a fixed seed.
  TrainingReport train(const nn::TensorPtr& train_images,
                       const nn::TensorPtr& val_images);

  // Eval-mode encoder over preprocessed images; order-preserving and
  // batch-size independent.
  std::vector<Fingerprint> fingerprint_images(
      const nn::TensorPtr& images,
      const std::vector<std::string>& image_ids = {}) const;

  std::vector<nn::TensorPtr> parameters() const;     // trainable
  std::vector<nn::TensorPtr> state_tensors() const;  // incl. running stats

  Checkpoint to_checkpoint() const;
  static Autoencoder from_checkpoint(const Checkpoint& c);

  // SHA-256 checkpoint hash of the current parameters; doubles as the
  // embedder_version stamped onto fingerprints.
  std::string content_hash() const;

  size_t encoder_parameter_count() const;
  int decoder_transposed_conv_count() const { return static_cast<int>(decoder_->deconvs.size()); }
  const AutoencoderConfig& config() const { return config_; }

private:
  AutoencoderConfig config_;
  std::unique_ptr<detail::EncoderIface> encoder_;
  std::unique_ptr<detail::TransposeDecoder> decoder_;
};

// Arithmetic mean of fingerprints, overall and per split. `splits`, when
// non-empty, labels each fingerprint's split and must match in length.
DatasetEmbedding dataset_embedding(const std::vector<Fingerprint>& fps,
                                   const std::vector<std::string>& splits = {});

// Euclidean distance in latent space; throws IncompatibleFingerprintsError on
// embedder-version mismatch.
double similarity_distance(const Fingerprint& a, const Fingerprint& b);
double similarity_distance(const DatasetEmbedding& a, const DatasetEmbedding& b);
double euclidean(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace scarceops
