#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "scarceops/errors.hpp"

namespace scarceops {

namespace fs = std::filesystem;
using json = nlohmann::json;

// SHA-256 hex digest (lowercase).
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

// Incremental SHA-256 for multi-part hashing.
class Sha256 {
public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(const void* data, size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex();  // finalizes; call once

private:
  void* ctx_;
};

std::string read_file(const fs::path& p);
std::vector<uint8_t> read_file_bytes(const fs::path& p);

// write-temp-then-rename; the file is never observable half-written.
void atomic_write_file(const fs::path& p, const void* data, size_t len);
void atomic_write_file(const fs::path& p, const std::string& s);

void append_line(const fs::path& p, const std::string& line);

json read_json(const fs::path& p);
void atomic_write_json(const fs::path& p, const json& j);

// Current UTC time as ISO-8601 (seconds resolution).
std::string iso_timestamp_utc();

// Advisory flock on <root>/.lock serializing store writers across processes.
class StoreLock {
public:
  explicit StoreLock(const fs::path& root);
  ~StoreLock();
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

private:
  int fd_ = -1;
};

// Filesystem-safe id fragment: [a-z0-9_-], lowercased, else '-'.
std::string sanitize_id(const std::string& s);

std::string base64_encode(const void* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& s);

}  // namespace scarceops
