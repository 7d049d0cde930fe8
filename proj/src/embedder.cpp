#include "scarceops/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scarceops/nn/adam.hpp"

namespace scarceops {

using nn::ForwardCtx;
using nn::Pcg32;
using nn::Tensor;
using nn::TensorPtr;

void AutoencoderConfig::validate() const {
  if (preset != "tiny" && preset != "resnet18_32")
    throw ValidationError("unknown autoencoder preset: " + preset);
  if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
}

json AutoencoderConfig::to_json() const {
  return {{"preset", preset},
          {"latent_dim", latent_dim},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"output_activation", "sigmoid"}};
}

AutoencoderConfig AutoencoderConfig::from_json(const json& j) {
  AutoencoderConfig c;
  c.preset = j.value("preset", c.preset);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

json DatasetEmbedding::to_json() const {
  json ps = json::object();
  for (auto& [k, v] : per_split) ps[k] = v;
  return {{"mean_vector", mean_vector},
          {"per_split", ps},
          {"count", count},
          {"embedder_version", embedder_version}};
}

DatasetEmbedding DatasetEmbedding::from_json(const json& j) {
  DatasetEmbedding e;
  e.mean_vector = j.at("mean_vector").get<std::vector<float>>();
  for (auto& [k, v] : j.value("per_split", json::object()).items())
    e.per_split[k] = v.get<std::vector<float>>();
  e.count = j.at("count").get<size_t>();
  e.embedder_version = j.at("embedder_version").get<std::string>();
  return e;
}

namespace detail {

// tiny: three stride-2 convs (8/16/32) then a linear head. Fast enough for
// tests while exercising the same op set as the full preset.
struct TinyEncoder : EncoderIface {
  nn::Conv2d c1, c2, c3;
  nn::Linear head;

  TinyEncoder(int latent_dim, Pcg32& rng)
      : c1(3, 8, 3, 2, 1, true, rng, "encoder.conv1"),
        c2(8, 16, 3, 2, 1, true, rng, "encoder.conv2"),
        c3(16, 32, 3, 2, 1, true, rng, "encoder.conv3"),
        head(32 * 4 * 4, latent_dim, true, rng, "encoder.head") {}

  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const override {
    auto y = nn::relu(c1.forward(x, ctx), ctx.tape);
    y = nn::relu(c2.forward(y, ctx), ctx.tape);
    y = nn::relu(c3.forward(y, ctx), ctx.tape);
    y = nn::reshape(y, {y->dim(0), 32 * 4 * 4}, ctx.tape);
    return head.forward(y, ctx);
  }
  void collect_params(std::vector<TensorPtr>& out) const override {
    c1.collect_params(out);
    c2.collect_params(out);
    c3.collect_params(out);
    head.collect_params(out);
  }
  void collect_state(std::vector<TensorPtr>& out) const override {
    collect_params(out);
  }
};

// CIFAR-style ResNet18: 3x3 stem (no max-pool), stages 64/128/256/512 of two
// BasicBlocks each, stride-2 entering stages 2-4, global average pool, then
// the 512 -> latent_dim head.
struct ResNetEncoder : EncoderIface {
  nn::Conv2d stem;
  nn::BatchNorm2d stem_bn;
  std::vector<nn::BasicBlock> blocks;
  nn::Linear head;

  ResNetEncoder(int latent_dim, Pcg32& rng)
      : stem(3, 64, 3, 1, 1, false, rng, "encoder.stem"),
        stem_bn(64, "encoder.stem_bn"),
        head(512, latent_dim, true, rng, "encoder.head") {
    const int plan[4][2] = {{64, 1}, {128, 2}, {256, 2}, {512, 2}};
    int in_ch = 64;
    for (int s = 0; s < 4; ++s) {
      const int out_ch = plan[s][0];
      for (int b = 0; b < 2; ++b) {
        const int stride = (b == 0) ? plan[s][1] : 1;
        blocks.emplace_back(in_ch, out_ch, stride, rng,
                            "encoder.stage" + std::to_string(s + 1) +
                                ".block" + std::to_string(b + 1));
        in_ch = out_ch;
      }
    }
  }

  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const override {
    auto y = nn::relu(stem_bn.forward(stem.forward(x, ctx), ctx), ctx.tape);
    for (const auto& b : blocks) y = b.forward(y, ctx);
    y = nn::global_avg_pool2d(y, ctx.tape);
    return head.forward(y, ctx);
  }
  void collect_params(std::vector<TensorPtr>& out) const override {
    stem.collect_params(out);
    stem_bn.collect_params(out);
    for (auto& b : blocks) b.collect_params(out);
    head.collect_params(out);
  }
  void collect_state(std::vector<TensorPtr>& out) const override {
    stem.collect_state(out);
    stem_bn.collect_state(out);
    for (auto& b : blocks) b.collect_state(out);
    head.collect_state(out);
  }
};

TransposeDecoder::TransposeDecoder(int latent_dim, int c0_, int h0_, int w0_,
                                   const std::vector<int>& channels,
                                   Pcg32& rng, const std::string& name)
    : fc(latent_dim, c0_ * h0_ * w0_, true, rng, name + ".fc"),
      c0(c0_),
      h0(h0_),
      w0(w0_) {
  int in_ch = c0_;
  for (size_t i = 0; i < channels.size(); ++i) {
    deconvs.emplace_back(in_ch, channels[i], 4, 2, 1, true, rng,
                         name + ".deconv" + std::to_string(i + 1));
    in_ch = channels[i];
  }
}

TensorPtr TransposeDecoder::forward(const TensorPtr& z,
                                    const ForwardCtx& ctx) const {
  auto y = fc.forward(z, ctx);
  y = nn::reshape(y, {z->dim(0), c0, h0, w0}, ctx.tape);
  for (size_t i = 0; i < deconvs.size(); ++i) {
    y = deconvs[i].forward(y, ctx);
    if (i + 1 < deconvs.size()) y = nn::relu(y, ctx.tape);
  }
  return nn::sigmoid(y, ctx.tape);
}

void TransposeDecoder::collect_params(std::vector<TensorPtr>& out) const {
  fc.collect_params(out);
  for (auto& d : deconvs) d.collect_params(out);
}

void TransposeDecoder::collect_state(std::vector<TensorPtr>& out) const {
  collect_params(out);
}

}  // namespace detail

Autoencoder Autoencoder::build(const AutoencoderConfig& config) {
  config.validate();
  Autoencoder ae;
  ae.config_ = config;
  Pcg32 rng(config.seed, nn::kStreamInit);
  if (config.preset == "tiny") {
    ae.encoder_ = std::make_unique<detail::TinyEncoder>(config.latent_dim, rng);
    ae.decoder_ = std::make_unique<detail::TransposeDecoder>(
        config.latent_dim, 32, 4, 4, std::vector<int>{16, 8, 3}, rng,
        "decoder");
  } else {
    ae.encoder_ =
        std::make_unique<detail::ResNetEncoder>(config.latent_dim, rng);
    // five transposed-conv layers: 1 -> 2 -> 4 -> 8 -> 16 -> 32 spatial.
    ae.decoder_ = std::make_unique<detail::TransposeDecoder>(
        config.latent_dim, 512, 1, 1, std::vector<int>{256, 128, 64, 32, 3},
        rng, "decoder");
  }
  return ae;
}

static void require_images(const TensorPtr& images, const char* what) {
  if (!images || images->ndim() != 4 || images->dim(1) != 3 ||
      images->dim(2) != 32 || images->dim(3) != 32)
    throw DimensionError(std::string(what) +
                         " must be [N,3,32,32] normalized images, got " +
                         (images ? nn::shape_str(images->shape) : "null"));
}

TensorPtr Autoencoder::encode(const TensorPtr& images,
                              const ForwardCtx& ctx) const {
  require_images(images, "encode input");
  return encoder_->forward(images, ctx);
}

TensorPtr Autoencoder::decode(const TensorPtr& latent,
                              const ForwardCtx& ctx) const {
  if (!latent || latent->ndim() != 2 || latent->dim(1) != config_.latent_dim)
    throw DimensionError("decode input must be [N," +
                         std::to_string(config_.latent_dim) + "]");
  return decoder_->forward(latent, ctx);
}

static TensorPtr slice_batch(const TensorPtr& images,
                             const std::vector<size_t>& order, size_t begin,
                             size_t end) {
  const size_t px = 3 * 32 * 32;
  auto batch = Tensor::zeros({static_cast<int>(end - begin), 3, 32, 32});
  for (size_t i = begin; i < end; ++i) {
    const float* src = images->data.data() + order[i] * px;
    std::copy(src, src + px, batch->data.data() + (i - begin) * px);
  }
  return batch;
}

static double eval_mse(const Autoencoder& ae, const TensorPtr& images,
                       int batch_size) {
  const size_t n = static_cast<size_t>(images->dim(0));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  ForwardCtx ctx;  // eval mode, no tape
  double acc = 0.0;
  for (size_t b = 0; b < n; b += static_cast<size_t>(batch_size)) {
    const size_t e = std::min(n, b + static_cast<size_t>(batch_size));
    auto batch = slice_batch(images, order, b, e);
    auto recon = ae.decode(ae.encode(batch, ctx), ctx);
    auto loss = nn::mse_loss(recon, batch, nullptr);
    acc += static_cast<double>(loss->data[0]) * static_cast<double>(e - b);
  }
  return acc / static_cast<double>(n);
}

TrainingReport Autoencoder::train(const TensorPtr& train_images,
                                  const TensorPtr& val_images) {
  require_images(train_images, "train images");
  const size_t n = static_cast<size_t>(train_images->dim(0));
  if (n == 0) throw ValidationError("empty training set");
  const bool have_val = val_images && val_images->dim(0) > 0;
  if (have_val) require_images(val_images, "val images");

  auto params = parameters();
  nn::AdamState adam;
  adam.learning_rate = config_.learning_rate;
  Pcg32 shuffle_rng(config_.seed, nn::kStreamShuffle);

  TrainingReport report;
  std::vector<std::vector<float>> best_state;
  auto state = state_tensors();

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    size_t batch_index = 0;
    for (size_t b = 0; b < n;
         b += static_cast<size_t>(config_.batch_size), ++batch_index) {
      const size_t e = std::min(n, b + static_cast<size_t>(config_.batch_size));
      try {
        nn::Tape tape;
        ForwardCtx ctx{&tape, /*training=*/true, /*update_running=*/true};
        auto batch = slice_batch(train_images, order, b, e);
        auto recon = decode(encode(batch, ctx), ctx);
        auto loss = nn::mse_loss(recon, batch, &tape);
        if (!std::isfinite(loss->data[0])) throw NumericError("NaN loss");
        epoch_loss +=
            static_cast<double>(loss->data[0]) * static_cast<double>(e - b);
        for (auto& p : params) p->zero_grad();
        tape.backward(loss);
        nn::adam_step(params, adam);
      } catch (const NumericError& err) {
        throw NumericError("training aborted at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + err.what());
      }
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n));
    const double val = have_val ? eval_mse(*this, val_images, config_.batch_size)
                                : report.train_loss.back();
    report.val_loss.push_back(val);
    if (report.best_epoch < 0 || val < report.best_val_loss) {
      report.best_epoch = epoch;
      report.best_val_loss = val;
      best_state.clear();
      for (auto& t : state) best_state.push_back(t->data);
    }
  }

  for (size_t i = 0; i < state.size(); ++i) state[i]->data = best_state[i];
  return report;
}

std::vector<Fingerprint> Autoencoder::fingerprint_images(
    const TensorPtr& images, const std::vector<std::string>& image_ids) const {
  require_images(images, "fingerprint input");
  const size_t n = static_cast<size_t>(images->dim(0));
  if (!image_ids.empty() && image_ids.size() != n)
    throw ValidationError("image id count does not match image count");
  const std::string version = content_hash();

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  ForwardCtx ctx;  // eval mode: running stats, no tape, no mutation
  std::vector<Fingerprint> out;
  out.reserve(n);
  for (size_t b = 0; b < n; b += static_cast<size_t>(config_.batch_size)) {
    const size_t e = std::min(n, b + static_cast<size_t>(config_.batch_size));
    auto batch = slice_batch(images, order, b, e);
    auto z = encode(batch, ctx);
    for (size_t i = b; i < e; ++i) {
      Fingerprint fp;
      fp.vector.assign(
          z->data.begin() + static_cast<long>((i - b) * config_.latent_dim),
          z->data.begin() +
              static_cast<long>((i - b + 1) * config_.latent_dim));
      fp.source_image_id =
          image_ids.empty() ? "img-" + std::to_string(i) : image_ids[i];
      fp.embedder_version = version;
      out.push_back(std::move(fp));
    }
  }
  return out;
}

std::vector<TensorPtr> Autoencoder::parameters() const {
  std::vector<TensorPtr> out;
  encoder_->collect_params(out);
  decoder_->collect_params(out);
  return out;
}

std::vector<TensorPtr> Autoencoder::state_tensors() const {
  std::vector<TensorPtr> out;
  encoder_->collect_state(out);
  decoder_->collect_state(out);
  return out;
}

Checkpoint Autoencoder::to_checkpoint() const {
  Checkpoint c;
  c.kind = "autoencoder";
  c.preset = config_.preset;
  c.config = config_.to_json();
  c.add_all(state_tensors());
  return c;
}

Autoencoder Autoencoder::from_checkpoint(const Checkpoint& c) {
  if (c.kind != "autoencoder")
    throw ValidationError("checkpoint kind is not autoencoder: " + c.kind);
  auto ae = build(AutoencoderConfig::from_json(c.config));
  c.restore_into(ae.state_tensors());
  return ae;
}

std::string Autoencoder::content_hash() const {
  auto c = to_checkpoint();
  return checkpoint_hash(c);
}

size_t Autoencoder::encoder_parameter_count() const {
  std::vector<TensorPtr> ps;
  encoder_->collect_params(ps);
  size_t n = 0;
  for (auto& p : ps) n += p->numel();
  return n;
}

DatasetEmbedding dataset_embedding(const std::vector<Fingerprint>& fps,
                                   const std::vector<std::string>& splits) {
  if (fps.empty()) throw ValidationError("dataset_embedding: no fingerprints");
  if (!splits.empty() && splits.size() != fps.size())
    throw ValidationError("dataset_embedding: split labels length mismatch");
  const size_t dim = fps[0].vector.size();
  DatasetEmbedding e;
  e.count = fps.size();
  e.embedder_version = fps[0].embedder_version;

  std::map<std::string, std::pair<std::vector<double>, size_t>> acc;
  std::vector<double> total(dim, 0.0);
  for (size_t i = 0; i < fps.size(); ++i) {
    if (fps[i].vector.size() != dim)
      throw ValidationError("dataset_embedding: inconsistent fingerprint dim");
    if (fps[i].embedder_version != e.embedder_version)
      throw IncompatibleFingerprintsError(
          "dataset_embedding: mixed embedder versions");
    for (size_t d = 0; d < dim; ++d) total[d] += fps[i].vector[d];
    if (!splits.empty()) {
      auto& slot = acc[splits[i]];
      slot.first.resize(dim, 0.0);
      for (size_t d = 0; d < dim; ++d) slot.first[d] += fps[i].vector[d];
      slot.second += 1;
    }
  }
  e.mean_vector.resize(dim);
  for (size_t d = 0; d < dim; ++d)
    e.mean_vector[d] =
        static_cast<float>(total[d] / static_cast<double>(fps.size()));
  for (auto& [split, slot] : acc) {
    std::vector<float> m(dim);
    for (size_t d = 0; d < dim; ++d)
      m[d] = static_cast<float>(slot.first[d] /
                                static_cast<double>(slot.second));
    e.per_split[split] = std::move(m);
  }
  return e;
}

double euclidean(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size())
    throw DimensionError("euclidean: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

static void require_same_version(const std::string& a, const std::string& b) {
  if (a != b)
    throw IncompatibleFingerprintsError(
        "fingerprints from different embedder versions are not comparable");
}

double similarity_distance(const Fingerprint& a, const Fingerprint& b) {
  require_same_version(a.embedder_version, b.embedder_version);
  return euclidean(a.vector, b.vector);
}

double similarity_distance(const DatasetEmbedding& a,
                           const DatasetEmbedding& b) {
  require_same_version(a.embedder_version, b.embedder_version);
  return euclidean(a.mean_vector, b.mean_vector);
}

}  // namespace scarceops
