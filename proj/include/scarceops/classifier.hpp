#pragma once

#include "scarceops/checkpoint.hpp"
#include "scarceops/nn/layers.hpp"

namespace scarceops {

// Task models for classification: the tiny conv trunk with a per-class
// sigmoid head, trained with MSE against one-hot targets (the numeric core
// deliberately ships no other loss). Prediction is the argmax score.
struct ClassifierConfig {
  std::vector<int> channels = {8, 16, 32};
  int num_classes = 2;
  std::vector<std::string> class_labels;  // names aligned to output indices
  uint64_t seed = 0;

  json to_json() const;
  static ClassifierConfig from_json(const json& j);
};

struct FitOptions {
  float learning_rate = 1e-3f;
  int batch_size = 32;
  int epochs = 5;
  uint64_t seed = 0;
};

struct FitReport {
  std::vector<double> train_loss;
};

class Classifier {
public:
  static Classifier build(const ClassifierConfig& config);

  // [N,3,32,32] -> [N,num_classes] sigmoid scores
  nn::TensorPtr forward(const nn::TensorPtr& images,
                        const nn::ForwardCtx& ctx) const;
  std::vector<int> predict(const nn::TensorPtr& images) const;

  FitReport fit(const nn::TensorPtr& images,
                const std::vector<uint16_t>& labels, const FitOptions& opts);

  // Reinitializes only the head; the trunk keeps its weights (fine-tuning
  // onto a different class set).
  void reset_head(int num_classes, const std::vector<std::string>& class_labels,
                  uint64_t seed);

  std::vector<nn::TensorPtr> parameters() const;
  Checkpoint to_checkpoint() const;
  static Classifier from_checkpoint(const Checkpoint& c);
  std::string content_hash() const;

  const ClassifierConfig& config() const { return config_; }

private:
  ClassifierConfig config_;
  std::vector<nn::Conv2d> convs_;
  std::unique_ptr<nn::Linear> head_;
};

}  // namespace scarceops
