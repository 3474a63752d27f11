// Synthetic intersection scenes for desk-scale experiments: a textured
// background, a light box with a straight indicator (circle) and a left
// indicator (circle or arrow), an optional transient occluder, and - at
// night - low contrast plus distractor light blobs. All pixel math is
// integer-only so output is identical across platforms.

#pragma once

#include <cstdint>
#include <vector>

#include "lightformer/data.hpp"
#include "lightformer/ppm.hpp"

namespace lightformer {

enum class Scenario { day, night };
enum class LeftShape { circle, arrow };

struct SynthConfig {
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::day;
  int num_frames = 30;
  int width = 64;
  int height = 32;
  LeftShape left_shape = LeftShape::circle;
  int occlusion_permille = 0;  // chance per frame that the box is hidden
  int phase_straight = 0;      // cycle offsets in frames
  int phase_left = 5;
  int green_frames = 6;
  int yellow_frames = 2;
  int red_frames = 6;
};

struct SynthFrame {
  Image image;
  LightState straight = LightState::off;
  LightState left = LightState::off;
  bool occluded = false;
};

struct SynthResult {
  std::vector<SynthFrame> frames;
  int distractor_count = 0;
};

// Position in the green -> yellow -> red cycle.
LightState cycle_state(int frame, int phase, int green, int yellow, int red);

SynthResult synth_scene(const SynthConfig& config);

}  // namespace lightformer
