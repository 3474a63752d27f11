// Frame-level annotations, right-of-way labeling, sequence windowing, and the
// CSV/manifest file formats.
//
//   frames CSV:  header "drive,frame,path,straight,left", one frame per line,
//                states in {green, yellow, red, off, unknown}
//   manifest:    tab-separated, per line: N image paths, straight label,
//                left label, stride; '#' starts a comment line
//
// Paths inside both files are relative to the file's own directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lightformer/errors.hpp"

namespace lightformer {

enum class LightState { green, yellow, red, off };
enum class RightOfWay { pass, stop };

struct RightOfWayLabel {
  RightOfWay straight = RightOfWay::stop;
  RightOfWay left = RightOfWay::stop;
  bool operator==(const RightOfWayLabel&) const = default;
};

struct FrameRecord {
  std::string drive;
  long frame = 0;
  std::string path;
  LightState straight = LightState::off;
  LightState left = LightState::off;
};

struct SequenceSample {
  std::vector<std::string> paths;  // oldest first, last entry is the current frame
  RightOfWayLabel label;           // derived from the final frame alone
  int stride = 1;
};

struct ManifestStats {
  long straight_pass = 0, straight_stop = 0;
  long left_pass = 0, left_stop = 0;
  // joint[straight][left], 0 = pass, 1 = stop
  long joint[2][2] = {{0, 0}, {0, 0}};
  long total = 0;
};

std::string to_string(LightState s);
std::string to_string(RightOfWay r);
LightState parse_light_state(const std::string& token);
RightOfWay parse_right_of_way(const std::string& token);

// Green means pass; yellow, red, and dark/unknown all mean stop.
RightOfWayLabel label_from_lights(LightState straight, LightState left);

// Slides a window of n frames spaced `stride` apart over every drive,
// advancing the end frame by `step` each time; windows never cross drives.
// With step 1 (the default) every admissible end frame yields a sample.
std::vector<SequenceSample> window_sequences(const std::vector<FrameRecord>& frames, int n,
                                             int stride, int step = 1);

std::vector<FrameRecord> read_frames_csv(const std::filesystem::path& path);
void write_frames_csv(const std::vector<FrameRecord>& frames, const std::filesystem::path& path);

void write_manifest(const std::vector<SequenceSample>& samples, const std::filesystem::path& path);
std::vector<SequenceSample> read_manifest(const std::filesystem::path& path);

ManifestStats manifest_stats(const std::vector<SequenceSample>& samples);
ManifestStats manifest_stats(const std::filesystem::path& manifest_path);

}  // namespace lightformer
