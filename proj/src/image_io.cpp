#include "survfuse/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace survfuse {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RgbImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ImageIoError(path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage img(image.height, image.width);
  if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIoError(path + ": " + msg);
  }
  return img;
}

// Skips whitespace and '#' comments in a PPM header.
int ppm_header_int(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(is >> v)) throw ImageIoError("PPM: malformed header");
  return v;
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageIoError("cannot open " + path);
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  if (magic != "P6" && magic != "P3") throw ImageIoError(path + ": not a PNG or PPM file");
  const int w = ppm_header_int(is);
  const int h = ppm_header_int(is);
  const int maxval = ppm_header_int(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw ImageIoError(path + ": unsupported PPM dimensions or depth");
  }
  RgbImage img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  if (magic == "P6") {
    is.get();  // single whitespace after maxval
    if (!is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()))) {
      throw ImageIoError(path + ": truncated PPM data");
    }
  } else {
    for (auto& v : img.data) {
      int x = 0;
      if (!(is >> x) || x < 0 || x > maxval) throw ImageIoError(path + ": bad PPM sample");
      v = static_cast<std::uint8_t>(x);
    }
  }
  if (maxval != 255)
    for (auto& v : img.data) v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  return img;
}

}  // namespace

RgbImage read_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ImageIoError("cannot open " + path);
  unsigned char sig[8] = {};
  const std::size_t got = std::fread(sig, 1, 8, f.get());
  f.reset();
  if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  return read_ppm(path);
}

void write_png(const std::string& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
    throw ImageIoError(path + ": " + image.message);
  }
}

void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageIoError("cannot open " + path + " for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!os) throw ImageIoError(path + ": write failed");
}

}  // namespace survfuse
