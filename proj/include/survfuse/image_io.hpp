#ifndef SURVFUSE_IMAGE_IO_HPP
#define SURVFUSE_IMAGE_IO_HPP

#include <string>

#include "survfuse/stainprep.hpp"

namespace survfuse {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an 8-bit RGB image; PNG by signature, binary/ASCII PPM otherwise.
/// Gray and alpha PNGs are converted to RGB.
RgbImage read_image(const std::string& path);

void write_png(const std::string& path, const RgbImage& img);
void write_ppm(const std::string& path, const RgbImage& img);

}  // namespace survfuse

#endif
