#include "lightformer/ppm.hpp"

#include <fstream>

#include "lightformer/errors.hpp"

namespace lightformer {

namespace {

// Next whitespace-separated token, skipping '#' comments to end of line.
std::string next_token(std::istream& in, const std::filesystem::path& path) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) throw DataError("ppm: unexpected end of header in " + path.string());
  return token;
}

int parse_positive(const std::string& token, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(token, &pos);
    if (pos != token.size() || v <= 0) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw DataError("ppm: bad header value \"" + token + "\" in " + path.string());
  }
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ppm: cannot open " + path.string());
  if (next_token(in, path) != "P6") {
    throw DataError("ppm: " + path.string() + " is not a binary P6 file");
  }
  Image img;
  img.width = parse_positive(next_token(in, path), path);
  img.height = parse_positive(next_token(in, path), path);
  const int maxval = parse_positive(next_token(in, path), path);
  if (maxval != 255) {
    throw DataError("ppm: " + path.string() + " has maxval " + std::to_string(maxval) +
                    ", only 255 is supported");
  }
  // exactly one whitespace byte separates the header from the pixel data;
  // next_token has already consumed it
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  img.pixels.resize(n);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw DataError("ppm: " + path.string() + " is truncated");
  }
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ContractError("ppm: image dimensions do not match the pixel buffer");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ppm: cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("ppm: write to " + path.string() + " failed");
}

}  // namespace lightformer
