#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scarceops/util.hpp"

namespace scarceops {

// One NPY array: dtype descriptor, shape, and the raw C-order payload.
struct NpyArray {
  std::string descr;  // numpy descr, e.g. "|u1", "<u2", "<i4"
  std::vector<size_t> shape;
  std::vector<uint8_t> raw;

  size_t itemsize() const;
  size_t count() const;
  // Element as a signed 64-bit integer (integer descrs only).
  int64_t int_at(size_t i) const;
};

// Parses NPY v1.0/v2.0: magic \x93NUMPY, version, header-length field and the
// literal dict header {'descr','fortran_order','shape'}. fortran_order=True
// is rejected (unsupported layout).
NpyArray parse_npy(const uint8_t* data, size_t len, const std::string& name);

std::string write_npy(const NpyArray& a);

// Minimal ZIP reader: stored and deflate entries, CRC-verified. No ZIP64.
std::map<std::string, std::vector<uint8_t>> read_zip(const fs::path& path);

// ZIP writer with stored (uncompressed) entries.
void write_zip_stored(
    const fs::path& path,
    const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace scarceops
