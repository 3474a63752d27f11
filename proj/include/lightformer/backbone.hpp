// Reduced-width residual backbone with the ResNet-18 block topology: a
// strided 7x7 stem, four stages of two basic blocks with stride-2
// downsampling at each stage entry, and a 1x1 projection to the embedding
// dim. Spatial size shrinks by 32 end to end. No normalization layers; convs
// carry biases.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lightformer/attention.hpp"
#include "lightformer/ops.hpp"
#include "lightformer/rng.hpp"

namespace lightformer {

template <typename S>
struct ConvLayer {
  Tensor<S> weight;  // [Cout, Cin, kh, kw]
  Tensor<S> bias;    // [Cout]
  int stride = 1;
  int pad = 0;
};

template <typename S>
ConvLayer<S> make_conv(int cin, int cout, int kernel, int stride, int pad, Rng rng) {
  ConvLayer<S> layer;
  const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * kernel * kernel));
  layer.weight = uniform_init<S>(rng, {cout, cin, kernel, kernel}, bound);
  layer.bias = zeros_param<S>({cout});
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

template <typename S>
Tensor<S> conv_forward(const Tensor<S>& x, const ConvLayer<S>& layer) {
  return conv2d(x, layer.weight, layer.bias, layer.stride, layer.pad);
}

template <typename S>
struct BasicBlock {
  ConvLayer<S> conv1, conv2;
  std::optional<ConvLayer<S>> down;  // 1x1 shortcut when stride or width changes
};

template <typename S>
BasicBlock<S> make_basic_block(int cin, int cout, int stride, Rng rng) {
  BasicBlock<S> block;
  block.conv1 = make_conv<S>(cin, cout, 3, stride, 1, rng.stream("conv1"));
  block.conv2 = make_conv<S>(cout, cout, 3, 1, 1, rng.stream("conv2"));
  if (stride != 1 || cin != cout) {
    block.down = make_conv<S>(cin, cout, 1, stride, 0, rng.stream("down"));
  }
  return block;
}

template <typename S>
Tensor<S> block_forward(const Tensor<S>& x, const BasicBlock<S>& block) {
  Tensor<S> y = conv_forward(relu(conv_forward(x, block.conv1)), block.conv2);
  Tensor<S> skip = block.down ? conv_forward(x, *block.down) : x;
  return relu(add(y, skip));
}

template <typename S>
struct Backbone {
  ConvLayer<S> stem;                          // 7x7 stride 2
  std::vector<std::vector<BasicBlock<S>>> stages;  // 4 stages x 2 blocks
  ConvLayer<S> head;                          // 1x1 to the embedding dim
};

template <typename S>
Backbone<S> make_backbone(int in_channels, int stem_width, int dim, Rng rng) {
  if (stem_width < 1) throw ContractError("backbone: stem width must be positive");
  Backbone<S> net;
  net.stem = make_conv<S>(in_channels, stem_width, 7, 2, 3, rng.stream("stem"));
  int cin = stem_width;
  for (int s = 0; s < 4; ++s) {
    const int cout = stem_width << s;
    std::vector<BasicBlock<S>> stage;
    stage.push_back(make_basic_block<S>(cin, cout, 2, rng.stream("stage", static_cast<std::uint64_t>(s) * 2)));
    stage.push_back(make_basic_block<S>(cout, cout, 1, rng.stream("stage", static_cast<std::uint64_t>(s) * 2 + 1)));
    net.stages.push_back(std::move(stage));
    cin = cout;
  }
  net.head = make_conv<S>(cin, dim, 1, 1, 0, rng.stream("head"));
  return net;
}

template <typename S>
FeatureMap<S> backbone_forward(const Tensor<S>& image, const Backbone<S>& net) {
  Tensor<S> x = relu(conv_forward(image, net.stem));
  for (const auto& stage : net.stages) {
    for (const auto& block : stage) x = block_forward(x, block);
  }
  return FeatureMap<S>(conv_forward(x, net.head));
}

}  // namespace lightformer
