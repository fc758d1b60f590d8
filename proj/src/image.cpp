#include "jv/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "jv/error.hpp"

namespace jv {

namespace {
// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}
}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const auto magic = next_token(in);
  std::size_t channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw FormatError(path.string() + ": not a binary PGM/PPM");
  std::size_t w, h;
  int maxval;
  try {
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad PNM header");
  }
  if (w == 0 || h == 0 || maxval <= 0 || maxval > 255)
    throw FormatError(path.string() + ": unsupported PNM dimensions or maxval");
  std::vector<unsigned char> buf(w * h * channels);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw FormatError(path.string() + ": truncated pixel data");
  Tensor img({h, w, channels});
  for (std::size_t i = 0; i < buf.size(); ++i) img[i] = buf[i];
  return img;
}

void write_pnm(const std::filesystem::path& path, const Tensor& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw DimensionError("write_pnm: expected h x w x {1,3}");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (img.dim(2) == 1 ? "P5" : "P6") << '\n'
      << img.dim(1) << ' ' << img.dim(0) << "\n255\n";
  std::vector<unsigned char> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::clamp(std::lround(img[i]), 0L, 255L));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace jv
