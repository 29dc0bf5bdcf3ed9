#include "settp/container.hpp"

#include <bit>
#include <fstream>

#include "settp/error.hpp"

namespace settp {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

void write_container(const std::filesystem::path& path, std::string_view magic,
                     std::uint32_t version, nlohmann::json header,
                     const std::vector<const Matrix*>& tensors) {
  if (magic.size() != 8) throw Error(ErrorKind::invalid_argument, "container magic must be 8 bytes");
  auto shapes = nlohmann::json::array();
  for (const Matrix* t : tensors) shapes.push_back({{"rows", t->rows()}, {"cols", t->cols()}});
  header["tensors"] = shapes;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(magic.data(), 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Matrix* t : tensors) {
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::uint32_t expected_version, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  char got[8] = {};
  in.read(got, 8);
  if (!in || std::string_view(got, 8) != magic) {
    throw Error(ErrorKind::format, path.string() + ": not a " + std::string(magic) + " file");
  }
  Container c;
  in.read(reinterpret_cast<char*>(&c.version), sizeof c.version);
  if (!in) throw Error(ErrorKind::format, path.string() + ": truncated header");
  if (c.version != expected_version) {
    throw Error(ErrorKind::format, path.string() + ": version " + std::to_string(c.version) +
                                       ", expected " + std::to_string(expected_version));
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw Error(ErrorKind::format, path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorKind::format, path.string() + ": truncated header");
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": corrupt header (" + e.what() + ")");
  }
  if (header_only) return c;
  if (!c.header.contains("tensors") || !c.header["tensors"].is_array()) {
    throw Error(ErrorKind::format, path.string() + ": header lacks tensor table");
  }
  for (const auto& shape : c.header["tensors"]) {
    Matrix m(shape.at("rows").get<std::size_t>(), shape.at("cols").get<std::size_t>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw Error(ErrorKind::format, path.string() + ": truncated tensor data");
    c.tensors.push_back(std::move(m));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::format, path.string() + ": trailing bytes after tensors");
  }
  return c;
}

}  // namespace settp
