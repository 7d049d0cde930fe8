#include "scarceops/classifier.hpp"

#include <numeric>

#include "scarceops/nn/adam.hpp"

namespace scarceops {

using nn::ForwardCtx;
using nn::Pcg32;
using nn::Tensor;
using nn::TensorPtr;

json ClassifierConfig::to_json() const {
  return {{"family", "tiny_classifier"},
          {"channels", channels},
          {"num_classes", num_classes},
          {"class_labels", class_labels},
          {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
  ClassifierConfig c;
  c.channels = j.value("channels", c.channels);
  c.num_classes = j.at("num_classes").get<int>();
  c.class_labels = j.value("class_labels", std::vector<std::string>{});
  c.seed = j.value("seed", uint64_t{0});
  return c;
}

Classifier Classifier::build(const ClassifierConfig& config) {
  if (config.num_classes < 1)
    throw ValidationError("classifier needs at least one class");
  if (!config.class_labels.empty() &&
      config.class_labels.size() != static_cast<size_t>(config.num_classes))
    throw ValidationError("classifier class label count mismatch");
  Classifier m;
  m.config_ = config;
  Pcg32 rng(config.seed, nn::kStreamInit);
  int in_ch = 3;
  int spatial = 32;
  for (size_t i = 0; i < config.channels.size(); ++i) {
    m.convs_.emplace_back(in_ch, config.channels[i], 3, 2, 1, true, rng,
                          "trunk.conv" + std::to_string(i + 1));
    in_ch = config.channels[i];
    spatial /= 2;
  }
  m.head_ = std::make_unique<nn::Linear>(in_ch * spatial * spatial,
                                         config.num_classes, true, rng, "head");
  return m;
}

TensorPtr Classifier::forward(const TensorPtr& images,
                              const ForwardCtx& ctx) const {
  if (!images || images->ndim() != 4 || images->dim(1) != 3 ||
      images->dim(2) != 32 || images->dim(3) != 32)
    throw DimensionError("classifier input must be [N,3,32,32]");
  auto y = images;
  for (const auto& c : convs_) y = nn::relu(c.forward(y, ctx), ctx.tape);
  y = nn::reshape(y, {y->dim(0), y->dim(1) * y->dim(2) * y->dim(3)}, ctx.tape);
  return nn::sigmoid(head_->forward(y, ctx), ctx.tape);
}

std::vector<int> Classifier::predict(const TensorPtr& images) const {
  ForwardCtx ctx;
  auto scores = forward(images, ctx);
  const int n = scores->dim(0), c = scores->dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (scores->data[static_cast<size_t>(i) * c + j] >
          scores->data[static_cast<size_t>(i) * c + best])
        best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

FitReport Classifier::fit(const TensorPtr& images,
                          const std::vector<uint16_t>& labels,
                          const FitOptions& opts) {
  const size_t n = static_cast<size_t>(images->dim(0));
  if (n == 0) throw ValidationError("classifier fit: empty training set");
  if (labels.size() != n)
    throw ValidationError("classifier fit: label count mismatch");
  const int num_classes = config_.num_classes;
  for (uint16_t l : labels)
    if (l >= num_classes)
      throw ValidationError("classifier fit: label out of range");

  auto params = parameters();
  nn::AdamState adam;
  adam.learning_rate = opts.learning_rate;
  Pcg32 shuffle_rng(opts.seed, nn::kStreamShuffle);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});

  const size_t px = 3 * 32 * 32;
  FitReport report;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t b = 0; b < n; b += static_cast<size_t>(opts.batch_size)) {
      const size_t e = std::min(n, b + static_cast<size_t>(opts.batch_size));
      auto batch = Tensor::zeros({static_cast<int>(e - b), 3, 32, 32});
      auto target = Tensor::zeros({static_cast<int>(e - b), num_classes});
      for (size_t i = b; i < e; ++i) {
        const float* src = images->data.data() + order[i] * px;
        std::copy(src, src + px, batch->data.data() + (i - b) * px);
        target->data[(i - b) * num_classes + labels[order[i]]] = 1.0f;
      }
      nn::Tape tape;
      ForwardCtx ctx{&tape, /*training=*/true};
      auto loss = nn::mse_loss(forward(batch, ctx), target, &tape);
      epoch_loss +=
          static_cast<double>(loss->data[0]) * static_cast<double>(e - b);
      for (auto& p : params) p->zero_grad();
      tape.backward(loss);
      nn::adam_step(params, adam);
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return report;
}

void Classifier::reset_head(int num_classes,
                            const std::vector<std::string>& class_labels,
                            uint64_t seed) {
  config_.num_classes = num_classes;
  config_.class_labels = class_labels;
  Pcg32 rng(seed, nn::kStreamInit);
  const int in_dim = head_->weight->dim(1);
  head_ = std::make_unique<nn::Linear>(in_dim, num_classes, true, rng, "head");
}

std::vector<TensorPtr> Classifier::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& c : convs_) c.collect_params(out);
  head_->collect_params(out);
  return out;
}

Checkpoint Classifier::to_checkpoint() const {
  Checkpoint c;
  c.kind = "classifier";
  c.preset = "tiny_classifier";
  c.config = config_.to_json();
  c.add_all(parameters());
  return c;
}

Classifier Classifier::from_checkpoint(const Checkpoint& c) {
  if (c.kind != "classifier")
    throw ValidationError("checkpoint kind is not classifier: " + c.kind);
  auto m = build(ClassifierConfig::from_json(c.config));
  c.restore_into(m.parameters());
  return m;
}

std::string Classifier::content_hash() const {
  auto c = to_checkpoint();
  return checkpoint_hash(c);
}

}  // namespace scarceops
