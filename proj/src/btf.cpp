#include "edgedoc/btf.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace edgedoc {

namespace {
static_assert(sizeof(float) == 4, "f32 storage required");

// Little-endian on every supported target; asserted once at startup in
// debug builds would be overkill, a runtime check here is cheap enough.
bool host_is_little_endian() {
  std::uint32_t v = 1;
  std::uint8_t b;
  std::memcpy(&b, &v, 1);
  return b == 1;
}
}  // namespace

void write_btf(const std::string& path, const Tensor& t) {
  if (!host_is_little_endian()) throw IoError("BTF requires little-endian host");
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write("BTF1", 4);
    std::uint32_t ndim = static_cast<std::uint32_t>(t.ndim());
    os.write(reinterpret_cast<const char*>(&ndim), 4);
    for (std::size_t d : t.shape()) {
      std::uint32_t v = static_cast<std::uint32_t>(d);
      os.write(reinterpret_cast<const char*>(&v), 4);
    }
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * 4));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

Tensor read_btf(const std::string& path) {
  if (!host_is_little_endian()) throw IoError("BTF requires little-endian host");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BTF1", 4) != 0)
    throw IoError("not a BTF file: " + path);
  std::uint32_t ndim = 0;
  is.read(reinterpret_cast<char*>(&ndim), 4);
  if (!is || ndim == 0 || ndim > 8) throw IoError("bad BTF ndim in " + path);
  Shape shape(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is || v == 0) throw IoError("bad BTF dim in " + path);
    shape[i] = v;
  }
  std::vector<Scalar> data(shape_numel(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * 4));
  if (!is) throw IoError("truncated BTF payload in " + path);
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace edgedoc
