#include "lightformer/synth.hpp"

#include <algorithm>
#include <string>

#include "lightformer/rng.hpp"

namespace lightformer {

namespace {

struct Rgb {
  int r, g, b;
};

constexpr Rgb kGreen{40, 210, 70};
constexpr Rgb kYellow{240, 205, 50};
constexpr Rgb kRed{225, 45, 40};
constexpr Rgb kOff{50, 50, 52};
constexpr Rgb kBox{28, 28, 30};
constexpr Rgb kOccluder{105, 102, 96};
constexpr Rgb kStreetLight{215, 195, 150};

Rgb state_color(LightState s) {
  switch (s) {
    case LightState::green: return kGreen;
    case LightState::yellow: return kYellow;
    case LightState::red: return kRed;
    case LightState::off: return kOff;
  }
  return kOff;
}

// Stateless per-pixel hash so the draw order never matters.
std::uint64_t pixel_hash(std::uint64_t key, std::uint64_t index) {
  std::uint64_t state = key + (index + 1) * 0x9e3779b97f4a7c15ull;
  return detail::splitmix64(state);
}

void put(Image& img, int x, int y, Rgb c) {
  if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
  img.at(y, x, 0) = static_cast<std::uint8_t>(std::min(std::max(c.r, 0), 255));
  img.at(y, x, 1) = static_cast<std::uint8_t>(std::min(std::max(c.g, 0), 255));
  img.at(y, x, 2) = static_cast<std::uint8_t>(std::min(std::max(c.b, 0), 255));
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) put(img, x, y, c);
  }
}

void fill_circle(Image& img, int cx, int cy, int r, Rgb c) {
  for (int y = cy - r; y <= cy + r; ++y) {
    for (int x = cx - r; x <= cx + r; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) put(img, x, y, c);
    }
  }
}

// Left-pointing triangle: apex at (cx - r, cy), base at x = cx + r.
void fill_left_arrow(Image& img, int cx, int cy, int r, Rgb c) {
  for (int y = cy - r; y <= cy + r; ++y) {
    for (int x = cx - r; x <= cx + r; ++x) {
      const int dx = x - (cx - r);
      if (2 * (y > cy ? y - cy : cy - y) <= dx) put(img, x, y, c);
    }
  }
}

}  // namespace

LightState cycle_state(int frame, int phase, int green, int yellow, int red) {
  const int period = green + yellow + red;
  int pos = (frame + phase) % period;
  if (pos < 0) pos += period;
  if (pos < green) return LightState::green;
  if (pos < green + yellow) return LightState::yellow;
  return LightState::red;
}

SynthResult synth_scene(const SynthConfig& config) {
  if (config.num_frames < 1) throw ContractError("synth_scene: num_frames must be >= 1");
  if (config.width < 32 || config.height < 16) {
    throw ContractError("synth_scene: size " + std::to_string(config.width) + "x" +
                        std::to_string(config.height) + " too small (need >= 32x16)");
  }
  if (config.green_frames < 1 || config.yellow_frames < 1 || config.red_frames < 1) {
    throw ContractError("synth_scene: cycle segments must each last >= 1 frame");
  }
  const int w = config.width, h = config.height;
  const bool night = config.scenario == Scenario::night;

  Rng root(config.seed);
  const std::uint64_t bg_key = root.stream("background").next_u64();
  Rng distractor_rng = root.stream("distractors");
  Rng occlusion_rng = root.stream("occlusion");

  // static background texture, keyed per pixel and channel
  const int base = night ? 24 : 128;
  const int amp = night ? 10 : 45;
  Image background;
  background.width = w;
  background.height = h;
  background.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::uint64_t hsh = pixel_hash(bg_key, (static_cast<std::uint64_t>(y) * w + x) * 3 + c);
        const int noise = static_cast<int>(hsh % static_cast<std::uint64_t>(2 * amp + 1)) - amp;
        const int v = std::min(std::max(base + noise, 0), 255);
        background.pixels[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<std::uint8_t>(v);
      }
    }
  }

  int distractor_count = 0;
  if (night) {
    distractor_count = 2 + static_cast<int>(distractor_rng.next_u64() % 3);
    for (int i = 0; i < distractor_count; ++i) {
      const int dx = static_cast<int>(distractor_rng.uniform_int(2, w / 2));
      const int dy = static_cast<int>(distractor_rng.uniform_int(2, h - 3));
      const int dr = 1 + static_cast<int>(distractor_rng.next_u64() % 2);
      fill_circle(background, dx, dy, dr, kStreetLight);
    }
  }

  // light box geometry, all derived from the frame size
  const int box_w = std::max(10, w / 5);
  const int box_h = std::max(12, h / 2);
  const int bx0 = w - box_w - w / 16 - 1;
  const int by0 = h / 8;
  const int cx = bx0 + box_w / 2;
  const int straight_cy = by0 + box_h / 4;
  const int left_cy = by0 + (3 * box_h) / 4;
  const int radius = std::max(2, std::min(box_w, box_h) / 5);

  SynthResult result;
  result.distractor_count = distractor_count;
  for (int t = 0; t < config.num_frames; ++t) {
    SynthFrame frame;
    frame.straight = cycle_state(t, config.phase_straight, config.green_frames,
                                 config.yellow_frames, config.red_frames);
    frame.left = cycle_state(t, config.phase_left, config.green_frames, config.yellow_frames,
                             config.red_frames);
    frame.image = background;
    fill_rect(frame.image, bx0, by0, bx0 + box_w, by0 + box_h, kBox);
    fill_circle(frame.image, cx, straight_cy, radius, state_color(frame.straight));
    if (config.left_shape == LeftShape::circle) {
      fill_circle(frame.image, cx, left_cy, radius, state_color(frame.left));
    } else {
      fill_left_arrow(frame.image, cx, left_cy, radius, state_color(frame.left));
    }
    if (config.occlusion_permille > 0) {
      const bool occlude = occlusion_rng.next_u64() % 1000 <
                           static_cast<std::uint64_t>(config.occlusion_permille);
      if (occlude) {
        fill_rect(frame.image, bx0 - 2, by0 - 2, bx0 + box_w + 2, by0 + box_h + 2, kOccluder);
        frame.occluded = true;
      }
    }
    result.frames.push_back(std::move(frame));
  }
  return result;
}

}  // namespace lightformer
