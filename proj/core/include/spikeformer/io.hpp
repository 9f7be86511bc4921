#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spikeformer::io {

// Writes via a sibling temp file and rename, so readers never observe a
// partially written file. Throws Error on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Binary 8-bit PGM (P5). Values are stored row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

std::string encode_pgm(const GrayImage& image);
// Throws DataError on malformed input (maxval must be <= 255).
GrayImage decode_pgm(std::string_view bytes);

// Min-max normalises `values` (rows x cols) to 0..255; a constant input maps
// to all zeros.
GrayImage to_gray(std::span<const double> values, std::size_t rows, std::size_t cols);

std::string matrix_csv(std::span<const double> values, std::size_t rows,
                       std::size_t cols);

}  // namespace spikeformer::io
