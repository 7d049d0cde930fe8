#include "scarceops/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace scarceops {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host byte order");

static constexpr char kMagic[8] = {'S', 'C', 'O', 'P', 'S', 'N', 'N', '1'};

void Checkpoint::add(const nn::TensorPtr& t) {
  if (!t) throw ValidationError("checkpoint: null tensor");
  if (t->name.empty()) throw ValidationError("checkpoint: unnamed tensor");
  for (auto& [n, _] : tensors)
    if (n == t->name)
      throw ValidationError("checkpoint: duplicate tensor name " + t->name);
  tensors.emplace_back(t->name, t);
}

void Checkpoint::add_all(const std::vector<nn::TensorPtr>& ts) {
  for (auto& t : ts) add(t);
}

std::string Checkpoint::serialize() {
  json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = kind;
  manifest["preset"] = preset;
  manifest["config"] = config;
  json index = json::array();
  size_t offset = 0;
  for (auto& [name, t] : tensors) {
    index.push_back({{"name", name},
                     {"shape", t->shape},
                     {"offset", offset},
                     {"count", t->numel()}});
    offset += t->numel() * sizeof(float);
  }
  manifest["tensors"] = index;

  std::string blob;
  blob.resize(offset);
  size_t pos = 0;
  for (auto& [name, t] : tensors) {
    std::memcpy(blob.data() + pos, t->data.data(),
                t->numel() * sizeof(float));
    pos += t->numel() * sizeof(float);
  }

  Sha256 h;
  const std::string unhashed = manifest.dump();
  h.update(unhashed);
  h.update(blob);
  content_hash = h.hex();
  manifest["content_hash"] = content_hash;
  const std::string mbytes = manifest.dump();

  std::string out;
  out.reserve(sizeof(kMagic) + 4 + mbytes.size() + blob.size());
  out.append(kMagic, sizeof(kMagic));
  uint32_t mlen = static_cast<uint32_t>(mbytes.size());
  out.append(reinterpret_cast<const char*>(&mlen), 4);
  out.append(mbytes);
  out.append(blob);
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw NumericError("checkpoint: bad magic");
  uint32_t mlen = 0;
  std::memcpy(&mlen, bytes.data() + sizeof(kMagic), 4);
  const size_t mstart = sizeof(kMagic) + 4;
  if (bytes.size() < mstart + mlen)
    throw NumericError("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(mstart, mlen));
  } catch (const json::parse_error& e) {
    throw NumericError(std::string("checkpoint: malformed manifest: ") +
                       e.what());
  }
  const std::string blob = bytes.substr(mstart + mlen);

  Checkpoint c;
  c.kind = manifest.value("kind", "");
  c.preset = manifest.value("preset", "");
  c.config = manifest.value("config", json::object());
  const std::string stored_hash = manifest.value("content_hash", "");
  manifest.erase("content_hash");
  Sha256 h;
  h.update(manifest.dump());
  h.update(blob);
  const std::string actual = h.hex();
  if (actual != stored_hash)
    throw NumericError("checkpoint: content hash mismatch (corrupt file)");
  c.content_hash = stored_hash;

  for (const auto& e : manifest.at("tensors")) {
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    const size_t offset = e.at("offset").get<size_t>();
    const size_t count = e.at("count").get<size_t>();
    if (offset + count * sizeof(float) > blob.size())
      throw NumericError("checkpoint: tensor index out of blob range");
    auto t = nn::Tensor::zeros(shape, false, e.at("name").get<std::string>());
    if (t->numel() != count)
      throw NumericError("checkpoint: shape/count mismatch for " + t->name);
    std::memcpy(t->data.data(), blob.data() + offset, count * sizeof(float));
    c.tensors.emplace_back(t->name, t);
  }
  return c;
}

void Checkpoint::save(const fs::path& p) {
  atomic_write_file(p, serialize());
}

Checkpoint Checkpoint::load(const fs::path& p) {
  return deserialize(read_file(p));
}

void Checkpoint::restore_into(const std::vector<nn::TensorPtr>& targets) const {
  std::map<std::string, const nn::TensorPtr*> by_name;
  for (auto& [n, t] : tensors) by_name[n] = &t;
  for (auto& target : targets) {
    auto it = by_name.find(target->name);
    if (it == by_name.end())
      throw NumericError("checkpoint: missing tensor " + target->name);
    const auto& src = *it->second;
    if (src->shape != target->shape)
      throw NumericError("checkpoint: shape mismatch for " + target->name +
                         ": stored " + nn::shape_str(src->shape) +
                         " vs model " + nn::shape_str(target->shape));
    target->data = src->data;
  }
}

const nn::TensorPtr& Checkpoint::tensor(const std::string& name) const {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw NumericError("checkpoint: no tensor named " + name);
}

std::string checkpoint_hash(Checkpoint& c) {
  c.serialize();
  return c.content_hash;
}

}  // namespace scarceops
