#include "lightformer/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace lightformer {

std::string to_string(LightState s) {
  switch (s) {
    case LightState::green: return "green";
    case LightState::yellow: return "yellow";
    case LightState::red: return "red";
    case LightState::off: return "off";
  }
  return "off";
}

std::string to_string(RightOfWay r) { return r == RightOfWay::pass ? "pass" : "stop"; }

LightState parse_light_state(const std::string& token) {
  if (token == "green") return LightState::green;
  if (token == "yellow") return LightState::yellow;
  if (token == "red") return LightState::red;
  if (token == "off" || token == "unknown") return LightState::off;
  throw DataError("bad light state \"" + token + "\"");
}

RightOfWay parse_right_of_way(const std::string& token) {
  if (token == "pass") return RightOfWay::pass;
  if (token == "stop") return RightOfWay::stop;
  throw DataError("bad right-of-way label \"" + token + "\"");
}

RightOfWayLabel label_from_lights(LightState straight, LightState left) {
  const auto decide = [](LightState s) {
    return s == LightState::green ? RightOfWay::pass : RightOfWay::stop;
  };
  return {decide(straight), decide(left)};
}

std::vector<SequenceSample> window_sequences(const std::vector<FrameRecord>& frames, int n,
                                             int stride, int step) {
  if (n < 1) throw ContractError("window_sequences: n must be >= 1");
  if (stride < 1) throw ContractError("window_sequences: stride must be >= 1");
  if (step < 1) throw ContractError("window_sequences: step must be >= 1");
  // group per drive, keeping first-appearance order
  std::vector<std::string> drive_order;
  std::map<std::string, std::vector<const FrameRecord*>> drives;
  for (const auto& f : frames) {
    auto [it, inserted] = drives.try_emplace(f.drive);
    if (inserted) drive_order.push_back(f.drive);
    it->second.push_back(&f);
  }
  std::vector<SequenceSample> samples;
  for (const auto& id : drive_order) {
    const auto& recs = drives[id];
    const long len = static_cast<long>(recs.size());
    const long first_end = static_cast<long>(n - 1) * stride;
    for (long t = first_end; t < len; t += step) {
      SequenceSample s;
      s.stride = stride;
      for (int j = n - 1; j >= 0; --j) {
        s.paths.push_back(recs[static_cast<std::size_t>(t - static_cast<long>(j) * stride)]->path);
      }
      s.label = label_from_lights(recs[static_cast<std::size_t>(t)]->straight,
                                  recs[static_cast<std::size_t>(t)]->left);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void line_error(const std::filesystem::path& path, long line_no, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<FrameRecord> read_frames_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open frames CSV " + path.string());
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  ++line_no;
  if (strip(line) != "drive,frame,path,straight,left") {
    line_error(path, line_no, "expected header \"drive,frame,path,straight,left\"");
  }
  std::vector<FrameRecord> frames;
  std::map<std::string, long> last_index;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 5) {
      line_error(path, line_no, "expected 5 comma-separated fields, got " +
                                    std::to_string(fields.size()));
    }
    FrameRecord rec;
    rec.drive = strip(fields[0]);
    const std::string frame_tok = strip(fields[1]);
    try {
      std::size_t pos = 0;
      rec.frame = std::stol(frame_tok, &pos);
      if (pos != frame_tok.size()) throw std::invalid_argument(frame_tok);
    } catch (const std::exception&) {
      line_error(path, line_no, "bad frame index \"" + frame_tok + "\"");
    }
    rec.path = strip(fields[2]);
    if (rec.drive.empty() || rec.path.empty()) line_error(path, line_no, "empty drive or path");
    try {
      rec.straight = parse_light_state(strip(fields[3]));
      rec.left = parse_light_state(strip(fields[4]));
    } catch (const DataError& e) {
      line_error(path, line_no, e.what());
    }
    const auto it = last_index.find(rec.drive);
    if (it != last_index.end() && rec.frame <= it->second) {
      line_error(path, line_no, "frame indices must be strictly increasing within drive \"" +
                                    rec.drive + "\"");
    }
    last_index[rec.drive] = rec.frame;
    frames.push_back(std::move(rec));
  }
  return frames;
}

void write_frames_csv(const std::vector<FrameRecord>& frames, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "drive,frame,path,straight,left\n";
  for (const auto& f : frames) {
    out << f.drive << "," << f.frame << "," << f.path << "," << to_string(f.straight) << ","
        << to_string(f.left) << "\n";
  }
  if (!out) throw DataError("write to " + path.string() + " failed");
}

void write_manifest(const std::vector<SequenceSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& s : samples) {
    for (const auto& p : s.paths) out << p << "\t";
    out << to_string(s.label.straight) << "\t" << to_string(s.label.left) << "\t" << s.stride
        << "\n";
  }
  if (!out) throw DataError("write to " + path.string() + " failed");
}

std::vector<SequenceSample> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<SequenceSample> samples;
  std::string line;
  long line_no = 0;
  std::size_t frames_per_sample = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = strip(line);
    if (body.empty() || body[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() < 4) {
      line_error(path, line_no, "expected at least 4 tab-separated fields");
    }
    SequenceSample s;
    for (std::size_t i = 0; i + 3 < fields.size(); ++i) {
      const std::string p = strip(fields[i]);
      if (p.empty()) line_error(path, line_no, "empty image path");
      s.paths.push_back(p);
    }
    if (frames_per_sample == 0) {
      frames_per_sample = s.paths.size();
    } else if (s.paths.size() != frames_per_sample) {
      line_error(path, line_no, "sample has " + std::to_string(s.paths.size()) +
                                    " frames, previous lines had " +
                                    std::to_string(frames_per_sample));
    }
    try {
      s.label.straight = parse_right_of_way(strip(fields[fields.size() - 3]));
      s.label.left = parse_right_of_way(strip(fields[fields.size() - 2]));
    } catch (const DataError& e) {
      line_error(path, line_no, e.what());
    }
    const std::string stride_tok = strip(fields.back());
    try {
      std::size_t pos = 0;
      s.stride = std::stoi(stride_tok, &pos);
      if (pos != stride_tok.size() || s.stride < 1) throw std::invalid_argument(stride_tok);
    } catch (const std::exception&) {
      line_error(path, line_no, "bad stride \"" + stride_tok + "\"");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

ManifestStats manifest_stats(const std::filesystem::path& manifest_path) {
  return manifest_stats(read_manifest(manifest_path));
}

ManifestStats manifest_stats(const std::vector<SequenceSample>& samples) {
  ManifestStats st;
  for (const auto& s : samples) {
    const int si = s.label.straight == RightOfWay::pass ? 0 : 1;
    const int li = s.label.left == RightOfWay::pass ? 0 : 1;
    (si == 0 ? st.straight_pass : st.straight_stop) += 1;
    (li == 0 ? st.left_pass : st.left_stop) += 1;
    st.joint[si][li] += 1;
    st.total += 1;
  }
  return st;
}

}  // namespace lightformer
