#include "r3l/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "r3l/common.hpp"

namespace r3l {

void write_ppm(const std::string& path, int width, int height,
               const std::uint8_t* rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb),
            static_cast<std::streamsize>(width) * height * 3);
  if (!out) fail("short write to '", path, "'");
}

void write_pgm_signed(const std::string& path, const Eigen::MatrixXf& values) {
  if (!values.allFinite()) fail("heatmap export: matrix has non-finite values");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "P5\n" << values.cols() << " " << values.rows() << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(values.cols()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      float v = (values(i, j) + 1.0f) * 127.5f;
      v = std::min(255.0f, std::max(0.0f, std::round(v)));
      row[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(v);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) fail("short write to '", path, "'");
}

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '", path, "'");
  std::string magic;
  in >> magic;
  if (magic != "P5") fail("'", path, "': not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  in.get();
  if (w <= 0 || h <= 0 || maxval != 255) fail("'", path, "': bad PGM header");
  PgmImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    fail("'", path, "': truncated PGM payload");
  return img;
}

}  // namespace r3l
