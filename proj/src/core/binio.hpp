#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <zlib.h>

#include "core/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace dgpic::binio {

inline void put_u8(std::string& buf, uint8_t v) {
  buf.push_back(static_cast<char>(v));
}
inline void put_u32(std::string& buf, uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::string& buf, uint64_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 8);
}
inline void put_f32(std::string& buf, float v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}
inline void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

struct Reader {
  const std::string& buf;
  size_t at = 0;
  std::string where;

  void need(size_t n) const {
    if (at + n > buf.size()) throw_data(where + ": truncated file");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[at++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + at, 4);
    at += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + at, 8);
    at += 8;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, buf.data() + at, 4);
    at += 4;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
  std::string str() { return bytes(u32()); }
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

inline void write_with_crc(const std::filesystem::path& path, std::string& buf) {
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), buf.size()));
  put_u32(buf, crc);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw_data("write failed for " + path.string());
}

inline void check_crc(const std::string& buf, const std::string& where) {
  if (buf.size() < 4) throw_data(where + ": truncated file");
  uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  uint32_t actual = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), buf.size() - 4));
  if (stored != actual) throw_data(where + ": CRC mismatch, file is corrupt");
}

}  // namespace dgpic::binio
