#include "vesseldg/image_io.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vdg {

namespace {

void skip_ws_and_comments(std::istream& in) {
  int ch = in.peek();
  while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n' || ch == '#') {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    ch = in.peek();
  }
}

int read_pnm_int(std::istream& in) {
  skip_ws_and_comments(in);
  int v = -1;
  in >> v;
  if (!in) throw std::runtime_error("malformed PGM header");
  return v;
}

}  // namespace

void write_pgm16(const std::filesystem::path& path, const Tensorf& image) {
  if (image.c != 1) throw std::runtime_error("write_pgm16: expected single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << image.w << " " << image.h << "\n65535\n";
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      float v = std::clamp(image.at(0, y, x), 0.0f, 1.0f);
      auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
      unsigned char bytes[2] = {static_cast<unsigned char>(q >> 8), static_cast<unsigned char>(q & 0xff)};
      out.write(reinterpret_cast<const char*>(bytes), 2);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tensorf read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  int w = read_pnm_int(in);
  int h = read_pnm_int(in);
  int maxval = read_pnm_int(in);
  in.get();  // single whitespace after maxval
  Tensorf img(1, h, w);
  if (maxval > 255) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        img.at(0, y, x) = static_cast<float>((b[0] << 8) | b[1]) / static_cast<float>(maxval);
      }
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        unsigned char b;
        in.read(reinterpret_cast<char*>(&b), 1);
        img.at(0, y, x) = static_cast<float>(b) / static_cast<float>(maxval);
      }
  }
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  return img;
}

void write_pgm_binary(const std::filesystem::path& path, const Eigen::ArrayXX<unsigned char>& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << mask.cols() << " " << mask.rows() << "\n1\n";
  for (Eigen::Index y = 0; y < mask.rows(); ++y)
    for (Eigen::Index x = 0; x < mask.cols(); ++x) {
      char b = static_cast<char>(mask(y, x) ? 1 : 0);
      out.write(&b, 1);
    }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Eigen::ArrayXX<unsigned char> read_pgm_binary(const std::filesystem::path& path) {
  Tensorf img = read_pgm(path);
  Eigen::ArrayXX<unsigned char> mask(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) mask(y, x) = img.at(0, y, x) > 0.5f ? 1 : 0;
  return mask;
}

}  // namespace vdg
