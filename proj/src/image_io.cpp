#include "multipod/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "multipod/errors.hpp"

namespace multipod {

void write_ppm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw ArgumentError("write_ppm: image must have 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot open for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::string row(img.width * 3, '\0');
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[x * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw LoadError(path.string() + ": write failed");
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in) {
  std::string t;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!t.empty()) break;
      continue;
    }
    t.push_back(static_cast<char>(ch));
  }
  return t;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path, const char* what) {
  const std::string t = token(in);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(t, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (t.empty() || pos != t.size() || v == 0) {
    throw LoadError(path.string() + ": invalid PPM " + what + " '" + t + "'");
  }
  return v;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open image");
  if (token(in) != "P6") throw LoadError(path.string() + ": not a binary PPM (P6) file");
  const std::size_t w = header_number(in, path, "width");
  const std::size_t h = header_number(in, path, "height");
  const std::size_t maxval = header_number(in, path, "maxval");
  if (maxval > 255) throw LoadError(path.string() + ": 16-bit PPM is not supported");
  if (w > 65536 || h > 65536) throw LoadError(path.string() + ": image too large");
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw LoadError(path.string() + ": truncated pixel data");
  }
  Image img = Image::zeros(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(bytes[(y * w + x) * 3 + c]) / static_cast<float>(maxval);
  return img;
}

}  // namespace multipod
