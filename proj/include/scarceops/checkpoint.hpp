#pragma once

#include <map>
#include <string>
#include <vector>

#include "scarceops/nn/tensor.hpp"
#include "scarceops/util.hpp"

namespace scarceops {

// Single-file checkpoint:
//   magic "SCOPSNN1" | u32 LE manifest length | manifest JSON | f32 LE blob
// The manifest (canonical key order) carries format version, kind, preset,
// config, a named-tensor index with shapes and byte offsets, and the content
// hash. content_hash = SHA-256(manifest-without-hash-field || blob), so the
// hash both names and verifies the checkpoint.
struct Checkpoint {
  std::string kind;    // "autoencoder" | "classifier"
  std::string preset;
  json config;
  // Insertion order defines blob layout.
  std::vector<std::pair<std::string, nn::TensorPtr>> tensors;
  std::string content_hash;  // filled by serialize()/load()

  void add(const nn::TensorPtr& t);
  void add_all(const std::vector<nn::TensorPtr>& ts);

  // Serializes and computes content_hash.
  std::string serialize();
  static Checkpoint deserialize(const std::string& bytes);

  void save(const fs::path& p);
  static Checkpoint load(const fs::path& p);

  // Copies stored values into same-named tensors; throws on missing names or
  // shape mismatches.
  void restore_into(const std::vector<nn::TensorPtr>& targets) const;

  const nn::TensorPtr& tensor(const std::string& name) const;
};

// Content hash a parameter set without writing it out.
std::string checkpoint_hash(Checkpoint& c);

}  // namespace scarceops
