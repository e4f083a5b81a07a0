#include "icil/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace icil::num {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff),
                        (unsigned char)(v >> 24 & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw data_error("truncated container: " + path);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

void put_f32_le(std::ostream& os, const std::vector<float>& v) {
  // Platform is little-endian; raw write keeps the format bit-exact.
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(v.size() * 4));
}

}  // namespace

void write_container(const std::string& path, const char magic[4],
                     const std::vector<ContainerEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot open for writing: " + path);
  os.write(magic, 4);
  put_u32(os, kContainerVersion);
  put_u32(os, uint32_t(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, uint32_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    put_u32(os, 0);  // dtype: f32
    put_u32(os, uint32_t(e.shape.size()));
    for (int64_t d : e.shape) put_u32(os, uint32_t(d));
    put_f32_le(os, e.data);
  }
  if (!os) throw data_error("write failed: " + path);
}

std::vector<ContainerEntry> read_container(const std::string& path,
                                           const char magic[4]) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw data_error("bad magic in " + path);
  uint32_t version = get_u32(is, path);
  if (version != kContainerVersion)
    throw data_error("unsupported container version in " + path);
  uint32_t count = get_u32(is, path);
  std::vector<ContainerEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    ContainerEntry e;
    uint32_t name_len = get_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw data_error("truncated container: " + path);
    uint32_t dtype = get_u32(is, path);
    if (dtype != 0) throw data_error("unknown dtype tag in " + path);
    uint32_t rank = get_u32(is, path);
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t d = get_u32(is, path);
      e.shape.push_back(int64_t(d));
      numel *= int64_t(d);
    }
    e.data.resize(size_t(numel));
    if (!is.read(reinterpret_cast<char*>(e.data.data()), numel * 4))
      throw data_error("truncated container: " + path);
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::vector<ContainerEntry> entries;
  for (const auto& [name, e] : params) {
    ContainerEntry ce;
    ce.name = name;
    ce.shape = e.value.shape;
    ce.data.resize(size_t(e.value.numel()));
    for (int64_t i = 0; i < e.value.numel(); ++i)
      ce.data[size_t(i)] = float(e.value[i]);
    entries.push_back(std::move(ce));
  }
  write_container(path, "RSSM", entries);
}

void load_checkpoint(const std::string& path, ParamStore& params) {
  auto entries = read_container(path, "RSSM");
  for (const auto& ce : entries) {
    Tensor* v;
    if (params.has(ce.name)) {
      v = &params.value(ce.name);
      if (v->shape != ce.shape)
        throw data_error("checkpoint shape mismatch for '" + ce.name + "'");
    } else {
      v = &params.create(ce.name, ce.shape);
    }
    for (size_t i = 0; i < ce.data.size(); ++i) (*v)[int64_t(i)] = double(ce.data[i]);
  }
}

}  // namespace icil::num
