#include "purify/weights_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace purify {

namespace {

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void put_f32(std::vector<unsigned char>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const unsigned char* p;
  size_t remaining;
  std::string path;

  void need(size_t n, const char* what) const {
    if (remaining < n) {
      throw std::runtime_error(path + ": truncated weight file while reading " + std::string(what));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    p += 4;
    remaining -= 4;
    return v;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

const WeightRecord* WeightFile::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void save_weight_file(const std::string& path, const WeightFile& file) {
  if (file.magic.size() != 4) throw std::invalid_argument("weight file magic must be 4 bytes");
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), file.magic.begin(), file.magic.end());
  put_u32(buf, file.version);
  for (float m : file.means) put_f32(buf, m);
  for (const auto& r : file.records) {
    if (static_cast<std::int64_t>(r.kernel.size()) != r.shape.numel()) {
      throw std::invalid_argument("record " + r.name + ": kernel size does not match shape " +
                                  r.shape.str());
    }
    if (static_cast<int>(r.bias.size()) != r.shape.n) {
      throw std::invalid_argument("record " + r.name + ": bias size must equal shape[0]");
    }
    put_u32(buf, static_cast<std::uint32_t>(r.name.size()));
    buf.insert(buf.end(), r.name.begin(), r.name.end());
    put_u32(buf, static_cast<std::uint32_t>(r.shape.n));
    put_u32(buf, static_cast<std::uint32_t>(r.shape.c));
    put_u32(buf, static_cast<std::uint32_t>(r.shape.h));
    put_u32(buf, static_cast<std::uint32_t>(r.shape.w));
    for (float v : r.kernel) put_f32(buf, v);
    for (float v : r.bias) put_f32(buf, v);
  }
  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

WeightFile load_weight_file(const std::string& path, const std::string& expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 4 + 12 + 4) throw std::runtime_error(path + ": weight file too small");

  const size_t payload = buf.size() - 4;
  const std::uint32_t actual_crc =
      static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(payload)));
  Reader tail{buf.data() + payload, 4, path};
  const std::uint32_t stored_crc = tail.u32("checksum");
  if (actual_crc != stored_crc) {
    throw std::runtime_error(path + ": corrupt weight file (CRC32 mismatch)");
  }

  Reader r{buf.data(), payload, path};
  WeightFile file;
  r.need(4, "magic");
  file.magic.assign(reinterpret_cast<const char*>(r.p), 4);
  r.p += 4;
  r.remaining -= 4;
  if (file.magic != expected_magic) {
    throw std::runtime_error(path + ": expected magic \"" + expected_magic + "\", found \"" +
                             file.magic + "\"");
  }
  file.version = r.u32("version");
  for (auto& m : file.means) m = r.f32("means");

  while (r.remaining > 0) {
    WeightRecord rec;
    const std::uint32_t len = r.u32("record name length");
    r.need(len, "record name");
    rec.name.assign(reinterpret_cast<const char*>(r.p), len);
    r.p += len;
    r.remaining -= len;
    rec.shape.n = static_cast<int>(r.u32("shape"));
    rec.shape.c = static_cast<int>(r.u32("shape"));
    rec.shape.h = static_cast<int>(r.u32("shape"));
    rec.shape.w = static_cast<int>(r.u32("shape"));
    if (rec.shape.numel() <= 0 || rec.shape.numel() > (1ll << 30)) {
      throw std::runtime_error(path + ": record " + rec.name + " has implausible shape " +
                               rec.shape.str());
    }
    rec.kernel.resize(static_cast<size_t>(rec.shape.numel()));
    for (auto& v : rec.kernel) v = r.f32(rec.name.c_str());
    rec.bias.resize(static_cast<size_t>(rec.shape.n));
    for (auto& v : rec.bias) v = r.f32(rec.name.c_str());
    file.records.push_back(std::move(rec));
  }
  return file;
}

}  // namespace purify
