#include "wv/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "wv/error.hpp"

namespace wv {

namespace {

struct Header {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

Header parse_header(const std::string& bytes, const std::filesystem::path& path) {
  Header h;
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&]() {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#')
      t.push_back(bytes[pos++]);
    if (t.empty()) throw InputError("truncated image header: " + path.string());
    return t;
  };
  auto number = [&]() -> std::size_t {
    const auto t = token();
    for (char c : t)
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw InputError("malformed image header field '" + t + "': " + path.string());
    return std::stoul(t);
  };
  h.magic = token();
  h.width = number();
  h.height = number();
  h.maxval = number();
  if (pos >= bytes.size()) throw InputError("image has no pixel data: " + path.string());
  h.data_offset = pos + 1;  // exactly one whitespace byte precedes the raster
  return h;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read image: " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void dump(const std::string& header, const std::vector<std::uint8_t>& data,
          const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write image: " + path.string());
  f << header;
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("failed writing image: " + path.string());
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw InputError("not a binary PGM (P5) image: " + path.string());
  const auto h = parse_header(bytes, path);
  if (h.width == 0 || h.height == 0) throw InputError("empty image: " + path.string());
  if (h.maxval == 0 || h.maxval > 255)
    throw InputError("only 8-bit PGM images are supported: " + path.string());
  const std::size_t n = h.width * h.height;
  if (bytes.size() < h.data_offset + n) throw InputError("truncated PGM raster: " + path.string());
  GrayImage img(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<unsigned char>(bytes[h.data_offset + i]);
    img.pixels[i] = static_cast<std::uint8_t>(h.maxval == 255 ? v : (v * 255 + h.maxval / 2) / h.maxval);
  }
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  if (image.empty()) throw InputError("refusing to write an empty image: " + path.string());
  dump("P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
       image.pixels, path);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw InputError("not a binary PPM (P6) image: " + path.string());
  const auto h = parse_header(bytes, path);
  if (h.maxval != 255) throw InputError("only 8-bit PPM images are supported: " + path.string());
  const std::size_t n = h.width * h.height * 3;
  if (bytes.size() < h.data_offset + n) throw InputError("truncated PPM raster: " + path.string());
  RgbImage img{h.width, h.height, {}};
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset),
                 bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset + n));
  return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  dump("P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
       image.rgb, path);
}

}  // namespace wv
