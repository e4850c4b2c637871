#include "wsiseg/image.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace wsiseg {
namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t w,
                  std::size_t h, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void skip_space_and_comments(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const std::string& magic,
                                      std::size_t channels, std::size_t& w, std::size_t& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string m;
  in >> m;
  if (m != magic) throw std::runtime_error(path.string() + ": expected " + magic);
  std::size_t maxval = 0;
  skip_space_and_comments(in);
  in >> w;
  skip_space_and_comments(in);
  in >> h;
  skip_space_and_comments(in);
  in >> maxval;
  if (!in || maxval != 255) throw std::runtime_error(path.string() + ": unsupported header");
  in.get();
  std::vector<std::uint8_t> bytes(w * h * channels);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  return bytes;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  write_netpbm(path, "P6", img.width, img.height, img.rgb);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  RgbImage img;
  img.rgb = read_netpbm(path, "P6", 3, img.width, img.height);
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  write_netpbm(path, "P5", img.width, img.height, img.values);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  GrayImage img;
  img.values = read_netpbm(path, "P5", 1, img.width, img.height);
  return img;
}

}  // namespace wsiseg
