#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace r3l {

// Binary PPM (P6) for RGB frames.
void write_ppm(const std::string& path, int width, int height,
               const std::uint8_t* rgb);

// Binary PGM (P5). Values are mapped linearly from [-1, 1] to [0, 255].
void write_pgm_signed(const std::string& path,
                      const Eigen::MatrixXf& values);

struct PgmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

PgmImage read_pgm(const std::string& path);

}  // namespace r3l
