// LightFormer assembly: the backbone over each buffered frame, the recurrent
// encoder walk that turns the learnable query into history embeddings
// E^1..E^N with weights shared across steps, and the two arcface decoders
// (go-straight, turn-left) reading the final embedding.

#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "lightformer/adam.hpp"
#include "lightformer/arcface.hpp"
#include "lightformer/attention.hpp"
#include "lightformer/backbone.hpp"

namespace lightformer {

struct ModelConfig {
  int buffer_size = 10;  // frames per prediction, the last one is current
  int dim = 256;         // embedding width D
  int num_heads = 4;
  int points = 4;        // deformable sampling points per head
  HistoryMode history = HistoryMode::all;
  int centers_per_class = 1;  // arcface w
  double margin = 0.5;
  double scale = 64.0;
  int stem_width = 8;
  int image_height = 64;
  int image_width = 128;
  int in_channels = 3;
  bool ablate_tsa = false;

  void validate() const {
    if (buffer_size < 1) throw ContractError("config: buffer_size must be >= 1");
    if (dim < 1 || num_heads < 1 || dim % num_heads != 0) {
      throw ContractError("config: dim must be a positive multiple of num_heads");
    }
    if (points < 1) throw ContractError("config: points must be >= 1");
    if (centers_per_class < 1) throw ContractError("config: centers_per_class must be >= 1");
    if (stem_width < 1 || image_height < 1 || image_width < 1 || in_channels < 1) {
      throw ContractError("config: widths and image size must be positive");
    }
    if (!(scale > 0)) throw ContractError("config: scale must be positive");
    if (margin < 0) throw ContractError("config: margin must be >= 0");
  }
};

template <typename S>
struct ForwardResult {
  Tensor<S> straight_logits;  // [2], order {pass, stop}
  Tensor<S> left_logits;      // [2]
  Tensor<S> embedding;        // E^N, [1, D]
};

template <typename S>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng root(seed);
    query_ = uniform_init<S>(root.stream("query"), {1, config_.dim},
                             1.0 / std::sqrt(static_cast<double>(config_.dim)));
    backbone_ = make_backbone<S>(config_.in_channels, config_.stem_width, config_.dim,
                                 root.stream("backbone"));
    encoder_ = make_encoder_params<S>(config_.dim, config_.num_heads, config_.points,
                                      root.stream("encoder"));
    straight_ = make_cluster_bank<S>(2, config_.centers_per_class, config_.dim, config_.margin,
                                     config_.scale, root.stream("decoder.straight"));
    left_ = make_cluster_bank<S>(2, config_.centers_per_class, config_.dim, config_.margin,
                                 config_.scale, root.stream("decoder.left"));
  }

  const ModelConfig& config() const { return config_; }
  const Tensor<S>& query() const { return query_; }
  const Backbone<S>& backbone() const { return backbone_; }
  const EncoderParams<S>& encoder() const { return encoder_; }
  const ClusterCenterBank<S>& straight_decoder() const { return straight_; }
  const ClusterCenterBank<S>& left_decoder() const { return left_; }

  FeatureMap<S> features(const Tensor<S>& image) const {
    check_frame(image);
    return backbone_forward(image, backbone_);
  }

  // Walks the buffer: E^i = encoder(Q, M^i, history), history gains E^i; the
  // decoders read E^N. Targets (class indices) switch the decoders to their
  // margin form for training; omit them for inference.
  ForwardResult<S> forward(const std::vector<Tensor<S>>& buffer, int straight_target = -1,
                           int left_target = -1) const {
    if (static_cast<int>(buffer.size()) != config_.buffer_size) {
      throw ContractError("model: buffer holds " + std::to_string(buffer.size()) +
                          " frames, config wants N=" + std::to_string(config_.buffer_size));
    }
    HistoryBank<S> history(config_.history);
    Tensor<S> embedding;
    for (const auto& frame : buffer) {
      FeatureMap<S> map = features(frame);
      embedding = encoder_layer(query_, map, history, encoder_, config_.ablate_tsa);
      history.push(embedding);
    }
    ForwardResult<S> out;
    out.embedding = embedding;
    out.straight_logits = arcface_logits(embedding, straight_, straight_target);
    out.left_logits = arcface_logits(embedding, left_, left_target);
    return out;
  }

  // All learnable tensors, sorted by name; the order fixes serialization.
  std::vector<Parameter<S>> parameters() {
    std::vector<Parameter<S>> params;
    const auto put = [&params](const std::string& name, const Tensor<S>& t) {
      params.push_back({name, t});
    };
    put("query", query_);
    put("backbone.stem.weight", backbone_.stem.weight);
    put("backbone.stem.bias", backbone_.stem.bias);
    for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
      for (std::size_t b = 0; b < backbone_.stages[s].size(); ++b) {
        const std::string base =
            "backbone.stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
        auto& block = backbone_.stages[s][b];
        put(base + "conv1.weight", block.conv1.weight);
        put(base + "conv1.bias", block.conv1.bias);
        put(base + "conv2.weight", block.conv2.weight);
        put(base + "conv2.bias", block.conv2.bias);
        if (block.down) {
          put(base + "down.weight", block.down->weight);
          put(base + "down.bias", block.down->bias);
        }
      }
    }
    put("backbone.head.weight", backbone_.head.weight);
    put("backbone.head.bias", backbone_.head.bias);
    put("encoder.tsa.wq", encoder_.tsa.wq);
    put("encoder.tsa.bq", encoder_.tsa.bq);
    put("encoder.tsa.wk", encoder_.tsa.wk);
    put("encoder.tsa.bk", encoder_.tsa.bk);
    put("encoder.tsa.wv", encoder_.tsa.wv);
    put("encoder.tsa.bv", encoder_.tsa.bv);
    put("encoder.tsa.wo", encoder_.tsa.wo);
    put("encoder.tsa.bo", encoder_.tsa.bo);
    put("encoder.sca.ref_w", encoder_.sca.ref_w);
    put("encoder.sca.ref_b", encoder_.sca.ref_b);
    put("encoder.sca.off_w", encoder_.sca.off_w);
    put("encoder.sca.off_b", encoder_.sca.off_b);
    put("encoder.sca.att_w", encoder_.sca.att_w);
    put("encoder.sca.att_b", encoder_.sca.att_b);
    put("encoder.sca.val_w", encoder_.sca.val_w);
    put("encoder.sca.val_b", encoder_.sca.val_b);
    put("encoder.sca.out_w", encoder_.sca.out_w);
    put("encoder.sca.out_b", encoder_.sca.out_b);
    put("encoder.ffn.w1", encoder_.ffn_w1);
    put("encoder.ffn.b1", encoder_.ffn_b1);
    put("encoder.ffn.w2", encoder_.ffn_w2);
    put("encoder.ffn.b2", encoder_.ffn_b2);
    put("encoder.ln1.gamma", encoder_.ln1.gamma);
    put("encoder.ln1.beta", encoder_.ln1.beta);
    put("encoder.ln2.gamma", encoder_.ln2.gamma);
    put("encoder.ln2.beta", encoder_.ln2.beta);
    put("encoder.ln3.gamma", encoder_.ln3.gamma);
    put("encoder.ln3.beta", encoder_.ln3.beta);
    put("decoder.straight.centers", straight_.centers);
    put("decoder.left.centers", left_.centers);
    std::sort(params.begin(), params.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });
    std::set<std::string> names;
    for (const auto& p : params) {
      if (!names.insert(p.name).second) {
        throw ContractError("model: duplicate parameter name " + p.name);
      }
    }
    return params;
  }

 private:
  void check_frame(const Tensor<S>& image) const {
    if (image.rank() != 3 || image.dim(0) != config_.in_channels ||
        image.dim(1) != config_.image_height || image.dim(2) != config_.image_width) {
      throw ShapeError("model: frame " + shape_str(image.shape()) + " does not match configured " +
                       shape_str({config_.in_channels, config_.image_height, config_.image_width}));
    }
  }

  ModelConfig config_;
  Tensor<S> query_;
  Backbone<S> backbone_;
  EncoderParams<S> encoder_;
  ClusterCenterBank<S> straight_, left_;
};

}  // namespace lightformer
