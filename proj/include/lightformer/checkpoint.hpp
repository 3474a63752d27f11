// Checkpoint file format:
//   magic "LFCK"
//   format version, u32 LE
//   config line count, u32 LE, then per line: u32 LE byte length + UTF-8 "key=value"
//   parameter records until EOF, sorted by name:
//     [name length u32 LE][name UTF-8][rank u32 LE][dims u32 LE each]
//     [data as IEEE-754 single precision LE]
// Values are stored in single precision regardless of the in-memory scalar.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lightformer/config_keys.hpp"
#include "lightformer/model.hpp"

namespace lightformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {
      static_cast<char>(v & 0xff),
      static_cast<char>((v >> 8) & 0xff),
      static_cast<char>((v >> 16) & 0xff),
      static_cast<char>((v >> 24) & 0xff),
  };
  out.write(bytes, 4);
}

inline void put_f32(std::ostream& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (in.gcount() != 4) throw DataError(std::string("checkpoint: truncated file reading ") + what);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_u32(in, what));
}

inline std::string get_string(std::istream& in, std::uint32_t len, const char* what) {
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len)) {
    throw DataError(std::string("checkpoint: truncated file reading ") + what);
  }
  return s;
}

}  // namespace detail

template <typename S>
void save_checkpoint(Model<S>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  out.write("LFCK", 4);
  detail::put_u32(out, kCheckpointVersion);
  const auto lines = model_config_lines(model.config());
  detail::put_u32(out, static_cast<std::uint32_t>(lines.size()));
  for (const auto& line : lines) {
    detail::put_u32(out, static_cast<std::uint32_t>(line.size()));
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  for (auto& p : model.parameters()) {  // already sorted by name
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d = 0; d < p.tensor.rank(); ++d) {
      detail::put_u32(out, static_cast<std::uint32_t>(p.tensor.dim(d)));
    }
    for (S v : p.tensor.values()) detail::put_f32(out, static_cast<float>(v));
  }
  if (!out) throw DataError("checkpoint: write to " + path.string() + " failed");
}

inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "LFCK") {
    throw DataError("checkpoint: " + path.string() + " is not a LightFormer checkpoint");
  }
  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: format version " + std::to_string(version) + " unsupported (want " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig config;
  const std::uint32_t num_lines = detail::get_u32(in, "config line count");
  for (std::uint32_t i = 0; i < num_lines; ++i) {
    const std::uint32_t len = detail::get_u32(in, "config line length");
    const std::string line = detail::get_string(in, len, "config line");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: malformed config line \"" + line + "\"");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (!apply_model_key(config, key, value)) {
      throw DataError("checkpoint: unknown config key \"" + key + "\"");
    }
  }
  Model<float> model(config, /*seed=*/0);

  std::map<std::string, Tensor<float>> by_name;
  for (auto& p : model.parameters()) by_name.emplace(p.name, p.tensor);
  std::map<std::string, bool> seen;
  while (true) {
    if (in.peek() == std::char_traits<char>::eof()) break;
    const std::uint32_t name_len = detail::get_u32(in, "parameter name length");
    const std::string name = detail::get_string(in, name_len, "parameter name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint: unknown parameter name \"" + name + "\"");
    }
    const std::uint32_t rank = detail::get_u32(in, "parameter rank");
    Shape dims;
    for (std::uint32_t d = 0; d < rank; ++d) {
      dims.push_back(static_cast<int>(detail::get_u32(in, "parameter dim")));
    }
    Tensor<float>& t = it->second;
    if (dims != t.shape()) {
      throw DataError("checkpoint: parameter \"" + name + "\" has shape " + shape_str(dims) +
                      " but the config (dim/heads/points/w/stem_width) implies " +
                      shape_str(t.shape()));
    }
    auto& vals = t.values();
    for (auto& v : vals) v = detail::get_f32(in, "parameter data");
    seen[name] = true;
  }
  for (const auto& [name, tensor] : by_name) {
    (void)tensor;
    if (!seen.count(name)) throw DataError("checkpoint: missing parameter \"" + name + "\"");
  }
  return model;
}

}  // namespace lightformer
