#include "tmpa/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

namespace tmpa {

namespace {

unsigned char quantize(double v) {
  double q = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
  return static_cast<unsigned char>(q);
}

void skip_ws_and_comments(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  TMPA_CHECK(image.ndim() == 3 && image.dim(0) == 3, "write_ppm expects a [3,H,W] image");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  TMPA_CHECK(out.good(), "cannot open " + path + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] =
            quantize(image[(static_cast<int64_t>(c) * h + y) * w + x]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  TMPA_CHECK(out.good(), "write to " + path + " failed");
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TMPA_CHECK(in.good(), "cannot open " + path);
  std::string magic;
  in >> magic;
  TMPA_CHECK(magic == "P6", path + " is not a binary PPM (P6)");
  skip_ws_and_comments(in);
  int w = 0, h = 0, maxval = 0;
  in >> w;
  skip_ws_and_comments(in);
  in >> h;
  skip_ws_and_comments(in);
  in >> maxval;
  TMPA_CHECK(w > 0 && h > 0 && maxval == 255, "unsupported PPM geometry in " + path);
  in.get();  // single whitespace after header
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  TMPA_CHECK(in.gcount() == static_cast<std::streamsize>(buf.size()),
             "truncated PPM data in " + path);
  Tensor img(Shape{3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img[(static_cast<int64_t>(c) * h + y) * w + x] =
            buf[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

void write_pgm(const std::string& path, const Tensor& mask) {
  TMPA_CHECK(mask.ndim() == 2 || (mask.ndim() == 3 && mask.dim(0) == 1),
             "write_pgm expects [H,W] or [1,H,W]");
  const int h = mask.ndim() == 2 ? mask.dim(0) : mask.dim(1);
  const int w = mask.ndim() == 2 ? mask.dim(1) : mask.dim(2);
  std::ofstream out(path, std::ios::binary);
  TMPA_CHECK(out.good(), "cannot open " + path + " for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      row[static_cast<size_t>(x)] = quantize(mask[static_cast<int64_t>(y) * w + x]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  TMPA_CHECK(out.good(), "write to " + path + " failed");
}

}  // namespace tmpa
