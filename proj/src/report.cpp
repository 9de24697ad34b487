#include "lsp/report.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>

#include "lsp/checkpoint.hpp"
#include "lsp/error.hpp"

namespace lsp {

std::uint8_t quantize_pixel(double v) {
  if (!(v > 0)) return 0;
  if (v >= 1) return 255;
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

ImageGrid::ImageGrid(Index r, Index c) : rows(r), cols(c) {
  if (r < 1 || c < 1) throw Error(ErrorKind::kConfig, "a grid needs at least one row and one column");
  cells.resize(static_cast<std::size_t>(r * c));
  annotations.resize(cells.size());
}

Image compose_grid(const ImageGrid& grid) {
  Index h = 0, w = 0;
  for (const Image& im : grid.cells) {
    if (im.size() == 0) continue;
    if (h == 0) {
      h = im.rows();
      w = im.cols();
    } else if (im.rows() != h || im.cols() != w) {
      throw Error(ErrorKind::kShapeMismatch, "grid cells differ in extent");
    }
  }
  if (h == 0) throw Error(ErrorKind::kShapeMismatch, "grid has no images");
  const Index sep = kGridSeparator;
  Image out =
      Image::Constant(grid.rows * h + (grid.rows - 1) * sep, grid.cols * w + (grid.cols - 1) * sep, kSeparatorValue);
  for (Index r = 0; r < grid.rows; ++r) {
    for (Index c = 0; c < grid.cols; ++c) {
      const Image& im = grid.cells[static_cast<std::size_t>(r * grid.cols + c)];
      if (im.size() == 0) {
        out.block(r * (h + sep), c * (w + sep), h, w).setZero();
      } else {
        out.block(r * (h + sep), c * (w + sep), h, w) = im;
      }
    }
  }
  return out;
}

namespace {

std::string pixel_bytes(const Image& image) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(image.size()));
  for (Index r = 0; r < image.rows(); ++r) {
    for (Index c = 0; c < image.cols(); ++c) bytes.push_back(static_cast<char>(quantize_pixel(image(r, c))));
  }
  return bytes;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::string body = std::string(type, 4) + data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(
                   crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_pgm(const Image& image) {
  return "P5 " + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + " 255\n" + pixel_bytes(image);
}

std::string encode_png(const Image& image) {
  std::string raw;
  const std::string px = pixel_bytes(image);
  for (Index r = 0; r < image.rows(); ++r) {
    raw.push_back('\0');
    raw.append(px, static_cast<std::size_t>(r * image.cols()), static_cast<std::size_t>(image.cols()));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error(ErrorKind::kIoFailure, "PNG compression failed");
  }
  packed.resize(packed_size);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string header;
  put_u32(header, static_cast<std::uint32_t>(image.cols()));
  put_u32(header, static_cast<std::uint32_t>(image.rows()));
  header += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit gray, deflate, no filter, no interlace
  put_chunk(out, "IHDR", header);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", "");
  return out;
}

nlohmann::ordered_json grid_annotations(const ImageGrid& grid) {
  const Image composed = compose_grid(grid);
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (Index r = 0; r < grid.rows; ++r) {
    for (Index c = 0; c < grid.cols; ++c) {
      nlohmann::ordered_json cell = {{"row", r}, {"col", c}};
      const auto& note = grid.annotations[static_cast<std::size_t>(r * grid.cols + c)];
      cell["empty"] = grid.cells[static_cast<std::size_t>(r * grid.cols + c)].size() == 0;
      cell["annotation"] = note;
      cells.push_back(std::move(cell));
    }
  }
  return {{"schema_version", kReportSchemaVersion},
          {"rows", grid.rows},
          {"cols", grid.cols},
          {"separator", kGridSeparator},
          {"width", composed.cols()},
          {"height", composed.rows()},
          {"row_labels", grid.row_labels},
          {"col_labels", grid.col_labels},
          {"cells", cells}};
}

std::vector<std::filesystem::path> write_image_grid(const ImageGrid& grid, const std::filesystem::path& stem,
                                                    bool png) {
  const Image composed = compose_grid(grid);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& ext, const std::string& bytes) {
    written.push_back(std::filesystem::path(stem).concat(ext));
    write_file(written.back(), bytes);
  };
  emit(".pgm", encode_pgm(composed));
  if (png) emit(".png", encode_png(composed));
  emit(".json", grid_annotations(grid).dump(2) + "\n");
  return written;
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  return nlohmann::json(v).dump();
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out += f;
      continue;
    }
    out.push_back('"');
    for (char ch : f) {
      if (ch == '"') out.push_back('"');
      out.push_back(ch);
    }
    out.push_back('"');
  }
  out.push_back('\n');
  return out;
}

}  // namespace lsp
