#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lsp/data.hpp"

namespace lsp {

inline constexpr int kReportSchemaVersion = 1;

/// round(255 * clamp(v, 0, 1)) with halves rounded up.
std::uint8_t quantize_pixel(double v);

/// Cells of equal extent laid out row-major, each with a free-form annotation
/// (classifier output, dimension, direction, fraction...). A cell left empty
/// renders black and should carry a null annotation.
struct ImageGrid {
  Index rows = 0;
  Index cols = 0;
  std::vector<Image> cells;
  std::vector<nlohmann::ordered_json> annotations;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;

  ImageGrid(Index rows, Index cols);
  Image& cell(Index r, Index c) { return cells[static_cast<std::size_t>(r * cols + c)]; }
  nlohmann::ordered_json& annotation(Index r, Index c) { return annotations[static_cast<std::size_t>(r * cols + c)]; }
};

inline constexpr int kGridSeparator = 2;
inline constexpr float kSeparatorValue = 0.5f;

/// One image of cols * w + (cols - 1) * kGridSeparator by the analogous height,
/// separators filled with kSeparatorValue. Throws ShapeMismatch when the
/// non-empty cells differ in extent or the grid has no non-empty cell.
Image compose_grid(const ImageGrid& grid);

/// Binary PGM, header "P5 <w> <h> 255".
std::string encode_pgm(const Image& image);
/// 8-bit grayscale PNG.
std::string encode_png(const Image& image);

/// Layout, labels and per-cell annotations of a grid.
nlohmann::ordered_json grid_annotations(const ImageGrid& grid);

/// Writes `<stem>.pgm`, `<stem>.png` when asked, and the annotations as
/// `<stem>.json`. Returns the paths written.
std::vector<std::filesystem::path> write_image_grid(const ImageGrid& grid, const std::filesystem::path& stem,
                                                    bool png = false);

/// Shortest decimal form that reads back to the same double; empty for
/// non-finite values.
std::string format_number(double v);

/// One CSV record terminated by "\n"; fields containing a comma, quote or line
/// break are quoted with inner quotes doubled.
std::string csv_row(const std::vector<std::string>& fields);

}  // namespace lsp
