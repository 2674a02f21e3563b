#include "psst/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "psst/errors.hpp"

namespace psst::ad {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError(std::string("checkpoint: truncated ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file,
                     const std::vector<NamedTensor>& tensors) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + file.string());
  os.write(kCheckpointMagic, 8);
  write_u32(os, kCheckpointVersion);
  for (const NamedTensor& nt : tensors) {
    write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    const auto& shape = nt.tensor.shape();
    write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) write_u32(os, static_cast<std::uint32_t>(d));
    const auto& data = nt.tensor.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint: write failed for " + file.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + file.string());
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic in " + file.string());
  }
  const std::uint32_t version = read_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " +
                  std::to_string(version));
  }
  std::vector<NamedTensor> out;
  while (true) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
    if (is.eof()) break;
    if (!is) throw IoError("checkpoint: truncated record header");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is, "rank");
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = read_u32(is, "dims");
      count *= shape[i];
    }
    std::vector<double> data(count);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw IoError("checkpoint: truncated tensor data");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

}  // namespace psst::ad
