#include "scarceops/npy.hpp"

#include <zlib.h>

#include <cstring>

namespace scarceops {

size_t NpyArray::itemsize() const {
  if (descr.size() < 3) throw ValidationError("npy: bad descr " + descr);
  try {
    return static_cast<size_t>(std::stoul(descr.substr(2)));
  } catch (...) {
    throw ValidationError("npy: unsupported descr " + descr);
  }
}

size_t NpyArray::count() const {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

int64_t NpyArray::int_at(size_t i) const {
  const char kind = descr.size() > 1 ? descr[1] : '?';
  const size_t sz = itemsize();
  if ((kind != 'u' && kind != 'i') || i * sz + sz > raw.size())
    throw ValidationError("npy: not an integer array or index out of range");
  const uint8_t* p = raw.data() + i * sz;
  uint64_t v = 0;
  for (size_t b = 0; b < sz; ++b) v |= static_cast<uint64_t>(p[b]) << (8 * b);
  if (kind == 'u') return static_cast<int64_t>(v);
  if (sz < 8 && (v & (1ULL << (8 * sz - 1)))) v |= ~((1ULL << (8 * sz)) - 1);
  return static_cast<int64_t>(v);
}

namespace {

// Tiny scanner for the literal dict header. Tolerates whitespace and both
// quote styles; only the three standard keys are read.
struct DictScanner {
  const std::string& s;
  const std::string& name;

  size_t find_key(const std::string& key) const {
    for (char q : {'\'', '"'}) {
      const std::string needle = q + key + q;
      size_t pos = s.find(needle);
      if (pos != std::string::npos) return pos + needle.size();
    }
    throw ValidationError("npy " + name + ": header misses key '" + key + "'");
  }

  size_t skip_colon_ws(size_t pos) const {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == ':')) ++pos;
    return pos;
  }

  std::string quoted_value(const std::string& key) const {
    size_t pos = skip_colon_ws(find_key(key));
    if (pos >= s.size() || (s[pos] != '\'' && s[pos] != '"'))
      throw ValidationError("npy " + name + ": malformed value for " + key);
    const char q = s[pos++];
    size_t end = s.find(q, pos);
    if (end == std::string::npos)
      throw ValidationError("npy " + name + ": unterminated string for " + key);
    return s.substr(pos, end - pos);
  }

  bool bool_value(const std::string& key) const {
    size_t pos = skip_colon_ws(find_key(key));
    if (s.compare(pos, 4, "True") == 0) return true;
    if (s.compare(pos, 5, "False") == 0) return false;
    throw ValidationError("npy " + name + ": malformed boolean for " + key);
  }

  std::vector<size_t> tuple_value(const std::string& key) const {
    size_t pos = skip_colon_ws(find_key(key));
    if (pos >= s.size() || s[pos] != '(')
      throw ValidationError("npy " + name + ": malformed shape tuple");
    ++pos;
    std::vector<size_t> out;
    std::string cur;
    for (; pos < s.size() && s[pos] != ')'; ++pos) {
      char c = s[pos];
      if (c >= '0' && c <= '9') {
        cur.push_back(c);
      } else if (c == ',' || c == ' ') {
        if (!cur.empty()) {
          out.push_back(std::stoul(cur));
          cur.clear();
        }
      } else {
        throw ValidationError("npy " + name + ": bad character in shape");
      }
    }
    if (pos >= s.size())
      throw ValidationError("npy " + name + ": unterminated shape tuple");
    if (!cur.empty()) out.push_back(std::stoul(cur));
    return out;
  }
};

const char kNpyMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

bool supported_descr(const std::string& d) {
  static const char* ok[] = {"|u1", "|i1", "<u2", "<i2", "<u4",
                             "<i4", "<u8", "<i8"};
  for (const char* s : ok)
    if (d == s) return true;
  return false;
}

}  // namespace

NpyArray parse_npy(const uint8_t* data, size_t len, const std::string& name) {
  if (len < 10 || std::memcmp(data, kNpyMagic, 6) != 0)
    throw ValidationError("npy " + name + ": bad magic");
  const uint8_t major = data[6];
  size_t header_len = 0;
  size_t header_off = 0;
  if (major == 1) {
    header_len =
        static_cast<size_t>(data[8]) | (static_cast<size_t>(data[9]) << 8);
    header_off = 10;
  } else if (major == 2) {
    if (len < 12) throw ValidationError("npy " + name + ": truncated header");
    header_len = static_cast<size_t>(data[8]) |
                 (static_cast<size_t>(data[9]) << 8) |
                 (static_cast<size_t>(data[10]) << 16) |
                 (static_cast<size_t>(data[11]) << 24);
    header_off = 12;
  } else {
    throw ValidationError("npy " + name + ": unsupported NPY version " +
                          std::to_string(major));
  }
  if (header_off + header_len > len)
    throw ValidationError("npy " + name + ": truncated header");
  const std::string header(reinterpret_cast<const char*>(data + header_off),
                           header_len);
  DictScanner scan{header, name};
  NpyArray a;
  a.descr = scan.quoted_value("descr");
  if (!supported_descr(a.descr))
    throw ValidationError("npy " + name + ": unknown dtype " + a.descr);
  if (scan.bool_value("fortran_order"))
    throw ValidationError("npy " + name +
                          ": fortran_order=True is an unsupported layout");
  a.shape = scan.tuple_value("shape");
  const size_t payload = a.count() * a.itemsize();
  const size_t data_off = header_off + header_len;
  if (data_off + payload > len)
    throw ValidationError("npy " + name + ": payload truncated");
  a.raw.assign(data + data_off, data + data_off + payload);
  return a;
}

std::string write_npy(const NpyArray& a) {
  std::string dict =
      "{'descr': '" + a.descr + "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < a.shape.size(); ++i) {
    dict += std::to_string(a.shape[i]);
    if (a.shape.size() == 1) dict += ",";
    if (i + 1 < a.shape.size()) dict += ", ";
  }
  dict += "), }";
  // pad so magic(6)+version(2)+len(2)+dict+\n is a multiple of 64
  const size_t total = 10 + dict.size() + 1;
  const size_t pad = (64 - total % 64) % 64;
  dict.append(pad, ' ');
  dict.push_back('\n');

  std::string out(kNpyMagic, 6);
  out.push_back('\x01');
  out.push_back('\x00');
  const uint16_t hlen = static_cast<uint16_t>(dict.size());
  out.push_back(static_cast<char>(hlen & 0xff));
  out.push_back(static_cast<char>(hlen >> 8));
  out += dict;
  out.append(reinterpret_cast<const char*>(a.raw.data()), a.raw.size());
  return out;
}

namespace {

uint32_t rd32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void wr32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void wr16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

std::vector<uint8_t> inflate_raw(const uint8_t* src, size_t srclen,
                                 size_t outlen) {
  std::vector<uint8_t> out(outlen);
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK)
    throw InternalError("zip: inflate init failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(srclen);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(outlen);
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw ValidationError("zip: corrupt deflate stream");
  if (zs.total_out != outlen)
    throw ValidationError("zip: decompressed size mismatch");
  return out;
}

}  // namespace

std::map<std::string, std::vector<uint8_t>> read_zip(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 22) throw ValidationError("zip: file too small");

  // locate EOCD, scanning backwards over a possible trailing comment
  size_t eocd = std::string::npos;
  const size_t scan_from =
      bytes.size() >= 22 + 65535 ? bytes.size() - 22 - 65535 : 0;
  for (size_t i = bytes.size() - 22 + 1; i-- > scan_from;) {
    if (rd32(bytes.data() + i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos)
    throw ValidationError("zip: end-of-central-directory not found");
  const uint16_t count = rd16(bytes.data() + eocd + 10);
  const uint32_t cd_size = rd32(bytes.data() + eocd + 12);
  const uint32_t cd_off = rd32(bytes.data() + eocd + 16);
  if (count == 0xffff || cd_off == 0xffffffffu)
    throw ValidationError("zip: ZIP64 archives are not supported");
  if (static_cast<size_t>(cd_off) + cd_size > bytes.size())
    throw ValidationError("zip: central directory out of range");

  std::map<std::string, std::vector<uint8_t>> out;
  size_t pos = cd_off;
  for (uint16_t e = 0; e < count; ++e) {
    if (pos + 46 > bytes.size() || rd32(bytes.data() + pos) != 0x02014b50)
      throw ValidationError("zip: corrupt central directory entry");
    const uint16_t method = rd16(bytes.data() + pos + 10);
    const uint32_t crc = rd32(bytes.data() + pos + 16);
    const uint32_t csize = rd32(bytes.data() + pos + 20);
    const uint32_t usize = rd32(bytes.data() + pos + 24);
    const uint16_t nlen = rd16(bytes.data() + pos + 28);
    const uint16_t xlen = rd16(bytes.data() + pos + 30);
    const uint16_t clen = rd16(bytes.data() + pos + 32);
    const uint32_t lho = rd32(bytes.data() + pos + 42);
    const std::string name(
        reinterpret_cast<const char*>(bytes.data() + pos + 46), nlen);
    pos += 46u + nlen + xlen + clen;

    if (static_cast<size_t>(lho) + 30 > bytes.size() ||
        rd32(bytes.data() + lho) != 0x04034b50)
      throw ValidationError("zip: corrupt local header for " + name);
    const uint16_t lnlen = rd16(bytes.data() + lho + 26);
    const uint16_t lxlen = rd16(bytes.data() + lho + 28);
    const size_t data_off = static_cast<size_t>(lho) + 30 + lnlen + lxlen;
    if (data_off + csize > bytes.size())
      throw ValidationError("zip: entry data out of range for " + name);

    std::vector<uint8_t> content;
    if (method == 0) {
      content.assign(bytes.begin() + static_cast<long>(data_off),
                     bytes.begin() + static_cast<long>(data_off + csize));
    } else if (method == 8) {
      content = inflate_raw(bytes.data() + data_off, csize, usize);
    } else {
      throw ValidationError("zip: unsupported compression method " +
                            std::to_string(method) + " for " + name);
    }
    const uint32_t actual =
        crc32(0, content.data(), static_cast<uInt>(content.size()));
    if (actual != crc) throw ValidationError("zip: CRC mismatch for " + name);
    out[name] = std::move(content);
  }
  return out;
}

void write_zip_stored(
    const fs::path& path,
    const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  struct CdEntry {
    std::string name;
    uint32_t crc, size, offset;
  };
  std::vector<CdEntry> cd;
  for (const auto& [name, content] : entries) {
    const uint32_t off = static_cast<uint32_t>(out.size());
    const uint32_t crc =
        crc32(0, reinterpret_cast<const Bytef*>(content.data()),
              static_cast<uInt>(content.size()));
    wr32(out, 0x04034b50);
    wr16(out, 20);    // version needed
    wr16(out, 0);     // flags
    wr16(out, 0);     // method: stored
    wr16(out, 0);     // mod time
    wr16(out, 0x21);  // mod date (1980-01-01)
    wr32(out, crc);
    wr32(out, static_cast<uint32_t>(content.size()));
    wr32(out, static_cast<uint32_t>(content.size()));
    wr16(out, static_cast<uint16_t>(name.size()));
    wr16(out, 0);
    out += name;
    out += content;
    cd.push_back({name, crc, static_cast<uint32_t>(content.size()), off});
  }
  const uint32_t cd_off = static_cast<uint32_t>(out.size());
  for (const auto& e : cd) {
    wr32(out, 0x02014b50);
    wr16(out, 20);
    wr16(out, 20);
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, 0x21);
    wr32(out, e.crc);
    wr32(out, e.size);
    wr32(out, e.size);
    wr16(out, static_cast<uint16_t>(e.name.size()));
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, 0);
    wr32(out, 0);
    wr32(out, e.offset);
    out += e.name;
  }
  const uint32_t cd_size = static_cast<uint32_t>(out.size()) - cd_off;
  wr32(out, 0x06054b50);
  wr16(out, 0);
  wr16(out, 0);
  wr16(out, static_cast<uint16_t>(cd.size()));
  wr16(out, static_cast<uint16_t>(cd.size()));
  wr32(out, cd_size);
  wr32(out, cd_off);
  wr16(out, 0);
  atomic_write_file(path, out);
}

}  // namespace scarceops
