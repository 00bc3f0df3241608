#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

#include "univarfl/data.hpp"

namespace univarfl {

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

struct IdxHeader {
  std::vector<std::uint32_t> dims;
  std::size_t payload_offset = 0;
};

IdxHeader parse_header(const std::vector<unsigned char>& bytes, std::uint32_t magic, std::size_t ndims,
                       const std::filesystem::path& path) {
  if (bytes.size() < 4) throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated header");
  const std::uint32_t found = be32(bytes, 0);
  if (found != magic) throw IdxError(IdxError::Kind::wrong_magic, path.string() + ": wrong magic");
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated header");
  IdxHeader h;
  for (std::size_t i = 0; i < ndims; ++i) h.dims.push_back(be32(bytes, 4 + 4 * i));
  h.payload_offset = header;
  std::size_t payload = 1;
  for (auto d : h.dims) payload *= d;
  if (bytes.size() < header + payload)
    throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated payload");
  return h;
}

std::vector<unsigned char> read_prefix(const std::filesystem::path& path, std::size_t bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  std::vector<unsigned char> out(bytes);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  out.resize(static_cast<std::size_t>(in.gcount()));
  return out;
}

}  // namespace

IdxInfo probe_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto head = read_prefix(images, 16);
  if (head.size() < 4) throw IdxError(IdxError::Kind::truncated, images.string() + ": truncated header");
  if (be32(head, 0) != kIdxImagesMagic) throw IdxError(IdxError::Kind::wrong_magic, images.string() + ": wrong magic");
  if (head.size() < 16) throw IdxError(IdxError::Kind::truncated, images.string() + ": truncated header");
  const std::size_t count = be32(head, 4);
  const std::size_t pixels = std::size_t{be32(head, 8)} * be32(head, 12);
  const std::size_t expected = 16 + count * pixels;
  if (std::filesystem::file_size(images) < expected)
    throw IdxError(IdxError::Kind::truncated, images.string() + ": truncated payload");
  const auto label_bytes = read_all(labels);
  const auto lh = parse_header(label_bytes, kIdxLabelsMagic, 1, labels);
  if (lh.dims[0] != count)
    throw IdxError(IdxError::Kind::count_mismatch,
                   "count mismatch: " + std::to_string(count) + " images vs " + std::to_string(lh.dims[0]) + " labels");
  int top = 1;
  for (std::size_t i = 0; i < count; ++i) top = std::max<int>(top, label_bytes[lh.payload_offset + i]);
  return {count, pixels, static_cast<std::size_t>(top) + 1};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_all(images);
  const auto label_bytes = read_all(labels);
  const auto ih = parse_header(image_bytes, kIdxImagesMagic, 3, images);
  const auto lh = parse_header(label_bytes, kIdxLabelsMagic, 1, labels);
  const std::size_t count = ih.dims[0];
  if (lh.dims[0] != count)
    throw IdxError(IdxError::Kind::count_mismatch,
                   "count mismatch: " + std::to_string(count) + " images vs " + std::to_string(lh.dims[0]) + " labels");
  const std::size_t pixels = std::size_t{ih.dims[1]} * ih.dims[2];
  if (pixels == 0) throw IdxError(IdxError::Kind::bad_shape, images.string() + ": zero-sized images");

  Dataset ds;
  ds.provenance = "idx:" + images.string();
  ds.X = Matrix(count, pixels);
  for (std::size_t i = 0; i < count * pixels; ++i)
    ds.X.data[i] = static_cast<double>(image_bytes[ih.payload_offset + i]) / 255.0;
  ds.y.resize(count);
  int top = 1;
  for (std::size_t i = 0; i < count; ++i) {
    ds.y[i] = label_bytes[lh.payload_offset + i];
    top = std::max(top, ds.y[i]);
  }
  ds.classes = static_cast<std::size_t>(top) + 1;
  return ds;
}

}  // namespace univarfl
