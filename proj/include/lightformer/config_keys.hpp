// Flat key=value names for ModelConfig, shared by the checkpoint format and
// the run configuration file so the two surfaces never drift apart.

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "lightformer/errors.hpp"
#include "lightformer/model.hpp"

namespace lightformer {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> model_config_lines(const ModelConfig& c) {
  std::vector<std::string> lines;
  const auto put = [&lines](const std::string& k, const std::string& v) {
    lines.push_back(k + "=" + v);
  };
  put("n", std::to_string(c.buffer_size));
  put("dim", std::to_string(c.dim));
  put("heads", std::to_string(c.num_heads));
  put("points", std::to_string(c.points));
  put("history", c.history == HistoryMode::all ? "all" : "last");
  put("w", std::to_string(c.centers_per_class));
  put("margin", format_double(c.margin));
  put("scale", format_double(c.scale));
  put("stem_width", std::to_string(c.stem_width));
  put("image_height", std::to_string(c.image_height));
  put("image_width", std::to_string(c.image_width));
  put("in_channels", std::to_string(c.in_channels));
  put("ablate_tsa", c.ablate_tsa ? "1" : "0");
  return lines;
}

// Applies one key; returns false when the key is not a model key so callers
// can route it elsewhere (or reject it).
inline bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
  const auto to_int = [&](const std::string& v) {
    try {
      std::size_t pos = 0;
      const int n = std::stoi(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw DataError("config: bad integer for " + key + ": \"" + value + "\"");
    }
  };
  const auto to_double = [&](const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw DataError("config: bad number for " + key + ": \"" + value + "\"");
    }
  };
  if (key == "n") {
    c.buffer_size = to_int(value);
  } else if (key == "dim") {
    c.dim = to_int(value);
  } else if (key == "heads") {
    c.num_heads = to_int(value);
  } else if (key == "points") {
    c.points = to_int(value);
  } else if (key == "history") {
    if (value == "all") {
      c.history = HistoryMode::all;
    } else if (value == "last") {
      c.history = HistoryMode::last;
    } else {
      throw DataError("config: history must be \"all\" or \"last\", got \"" + value + "\"");
    }
  } else if (key == "w") {
    c.centers_per_class = to_int(value);
  } else if (key == "margin") {
    c.margin = to_double(value);
  } else if (key == "scale") {
    c.scale = to_double(value);
  } else if (key == "stem_width") {
    c.stem_width = to_int(value);
  } else if (key == "image_height") {
    c.image_height = to_int(value);
  } else if (key == "image_width") {
    c.image_width = to_int(value);
  } else if (key == "in_channels") {
    c.in_channels = to_int(value);
  } else if (key == "ablate_tsa") {
    c.ablate_tsa = to_int(value) != 0;
  } else {
    return false;
  }
  return true;
}

}  // namespace lightformer
