// Little-endian binary container shared by dataset and checkpoint files:
//   magic bytes, u16 format version, u32 json header length, json header,
//   payload, trailing crc32 (IEEE) over everything before it.
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "oryx/common.hpp"

namespace oryx {

inline uint32_t crc32_ieee(const uint8_t* data, size_t len, uint32_t seed = 0) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = ~seed;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void bytes(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

  const std::vector<uint8_t>& data() const { return buf_; }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  uint64_t u64() {
    uint64_t v = 0;
    const uint8_t* p = take(8);
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str(size_t n) {
    const uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  size_t remaining() const { return len_ - pos_; }
  size_t pos() const { return pos_; }

 private:
  const uint8_t* take(size_t n) {
    if (pos_ + n > len_) throw LoadError(LoadErrorKind::Truncated, "file ends mid-record");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

// Appends the crc and writes the blob to disk.
inline void write_file_checksummed(const std::string& path, const ByteWriter& w) {
  ByteWriter out = w;
  out.u32(crc32_ieee(w.data().data(), w.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  ORYX_REQUIRE_MSG(f.good(), "cannot open " << path << " for writing");
  f.write(reinterpret_cast<const char*>(out.data().data()),
          static_cast<std::streamsize>(out.size()));
  ORYX_REQUIRE_MSG(f.good(), "short write to " << path);
}

// Reads a whole file and verifies the trailing crc; returns the payload
// without it.
inline std::vector<uint8_t> read_file_checksummed(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw LoadError(LoadErrorKind::Truncated, "cannot open " + path);
  std::vector<uint8_t> all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (all.size() < 4) throw LoadError(LoadErrorKind::Truncated, path + " too short");
  const size_t body = all.size() - 4;
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(all[body + i]) << (8 * i);
  if (crc32_ieee(all.data(), body) != stored)
    throw LoadError(LoadErrorKind::BadChecksum, path + " failed checksum");
  all.resize(body);
  return all;
}

inline void expect_magic(ByteReader& r, const std::string& magic, const std::string& what) {
  if (r.remaining() < magic.size() || r.str(magic.size()) != magic)
    throw LoadError(LoadErrorKind::BadMagic, "not a " + what + " file");
}

}  // namespace oryx
