// Loss assembly, the Adam training loop, dataset loading, and evaluation.

#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <thread>
#include <vector>

#include "lightformer/adam.hpp"
#include "lightformer/config_keys.hpp"
#include "lightformer/data.hpp"
#include "lightformer/metrics.hpp"
#include "lightformer/model.hpp"
#include "lightformer/ppm.hpp"

namespace lightformer {

struct TrainConfig {
  int epochs = 15;
  double lr = 1e-4;
  int batch_size = 4;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double early_stop_acc = 2.0;  // stop once train accuracy reaches this; > 1 disables

  void validate() const {
    if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
    if (lr < 0) throw ContractError("train config: lr must be >= 0");
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  }
};

struct EpochStats {
  int epoch = 0;       // 1-based
  double loss = 0;     // mean per-sample loss
  double train_acc = 0;  // both directions correct
};

template <typename S>
struct LoadedSample {
  std::vector<Tensor<S>> frames;  // oldest first
  RightOfWayLabel label;
};

inline int label_index(RightOfWay r) { return r == RightOfWay::pass ? 0 : 1; }
inline RightOfWay index_label(int i) { return i == 0 ? RightOfWay::pass : RightOfWay::stop; }

// Reads every sample's frames (paths resolved against base_dir) and checks
// them against the model geometry. Missing or mis-sized images fail here, at
// load time.
template <typename S>
std::vector<LoadedSample<S>> load_samples(const std::vector<SequenceSample>& samples,
                                          const std::filesystem::path& base_dir,
                                          const ModelConfig& config) {
  std::vector<LoadedSample<S>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (static_cast<int>(s.paths.size()) != config.buffer_size) {
      throw DataError("sample has " + std::to_string(s.paths.size()) + " frames, model wants N=" +
                      std::to_string(config.buffer_size));
    }
    LoadedSample<S> loaded;
    loaded.label = s.label;
    for (const auto& p : s.paths) {
      const Image img = read_ppm(base_dir / p);
      if (img.width != config.image_width || img.height != config.image_height) {
        throw DataError("image " + p + " is " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", model wants " +
                        std::to_string(config.image_width) + "x" +
                        std::to_string(config.image_height));
      }
      loaded.frames.push_back(image_to_tensor<S>(img));
    }
    out.push_back(std::move(loaded));
  }
  return out;
}

// -log softmax(logits)[target], computed via the stabilized log-sum-exp.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, int target) {
  if (logits.rank() != 1) {
    throw ShapeError("cross_entropy: logits must be rank 1, got " + shape_str(logits.shape()));
  }
  const int n = logits.dim(0);
  if (target < 0 || target >= n) {
    throw ContractError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                        std::to_string(n) + " classes");
  }
  const auto& x = logits.values();
  S mx = x[0];
  for (S v : x) mx = std::max(mx, v);
  S total = S(0);
  for (S v : x) total += std::exp(v - mx);
  const S lse = mx + std::log(total);
  Tensor<S> out = Tensor<S>::from_data({1}, {lse - x[static_cast<std::size_t>(target)]});
  if (detail::tape_active<S>({&logits})) {
    auto xn = logits.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, n, target, lse] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (int i = 0; i < n; ++i) {
        const S p = std::exp(xn->values[static_cast<std::size_t>(i)] - lse);
        gx[static_cast<std::size_t>(i)] += g[0] * (p - (i == target ? S(1) : S(0)));
      }
    });
  }
  return out;
}

// Unweighted sum of the two heads' cross-entropies.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& straight_logits, const Tensor<S>& left_logits,
                     const RightOfWayLabel& label) {
  return add(cross_entropy(straight_logits, label_index(label.straight)),
             cross_entropy(left_logits, label_index(label.left)));
}

template <typename S>
RightOfWayLabel predict_label(const Model<S>& model, const Tensor<S>& embedding) {
  NoGradGuard off;
  auto ps = decode(embedding, model.straight_decoder());
  auto pl = decode(embedding, model.left_decoder());
  RightOfWayLabel out;
  out.straight = index_label(ps.values()[0] >= ps.values()[1] ? 0 : 1);
  out.left = index_label(pl.values()[0] >= pl.values()[1] ? 0 : 1);
  return out;
}

// Seeded-shuffle epochs of margin-applied forward, summed-head loss, and one
// Adam step per batch. History lines go to `log` as "epoch<TAB>loss<TAB>acc".
template <typename S>
std::vector<EpochStats> train(Model<S>& model, const std::vector<LoadedSample<S>>& dataset,
                              const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw ContractError("train: empty dataset");
  auto params = model.parameters();
  AdamState<S> state;
  const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
  Rng root(cfg.seed);

  std::vector<EpochStats> history;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng shuffler = root.stream("shuffle", static_cast<std::uint64_t>(epoch));
      shuffler.shuffle(order);
    }
    double loss_sum = 0;
    long correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (auto& p : params) p.tensor.zero_grad();
      Tensor<S> batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const auto& sample = dataset[order[i]];
        auto out = model.forward(sample.frames, label_index(sample.label.straight),
                                 label_index(sample.label.left));
        auto loss = total_loss(out.straight_logits, out.left_logits, sample.label);
        const double value = static_cast<double>(loss.values()[0]);
        if (!std::isfinite(value)) {
          throw NumericError("train: non-finite loss " + std::to_string(value) + " at epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(start / static_cast<std::size_t>(cfg.batch_size)));
        }
        loss_sum += value;
        if (predict_label(model, out.embedding) == sample.label) ++correct;
        batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
      }
      auto scaled = mul_scalar(batch_loss, S(1) / static_cast<S>(end - start));
      scaled.backward();
      adam_step(params, state, adam);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(dataset.size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(dataset.size());
    history.push_back(stats);
    if (log) {
      (*log) << stats.epoch << "\t" << format_double(stats.loss) << "\t"
             << format_double(stats.train_acc) << "\n";
    }
    if (stats.train_acc >= cfg.early_stop_acc) break;
  }
  return history;
}

namespace detail {

inline int worker_thread_cap() {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (cap > 8) cap = 8;
  if (const char* env = std::getenv("LIGHTFORMER_THREADS")) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(env, &pos);
      if (pos != std::string(env).size() || v < 1) throw std::invalid_argument(env);
      cap = std::min(cap, v);
    } catch (const std::exception&) {
      throw UsageError("LIGHTFORMER_THREADS must be a positive integer");
    }
  }
  return cap;
}

}  // namespace detail

// Margin-free inference over the dataset, sharded across worker threads
// (capped by LIGHTFORMER_THREADS); counts merge independent of shard order.
template <typename S>
MetricsReport evaluate(const Model<S>& model, const std::vector<LoadedSample<S>>& dataset) {
  if (dataset.empty()) throw ContractError("evaluate: empty dataset");
  std::vector<RightOfWayLabel> predictions(dataset.size());
  std::vector<RightOfWayLabel> labels(dataset.size());
  const int threads = std::min<int>(detail::worker_thread_cap(), static_cast<int>(dataset.size()));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  const auto worker = [&](int which) {
    try {
      NoGradGuard off;
      for (std::size_t i = static_cast<std::size_t>(which); i < dataset.size();
           i += static_cast<std::size_t>(threads)) {
        auto out = model.forward(dataset[i].frames);
        predictions[i] = predict_label(model, out.embedding);
        labels[i] = dataset[i].label;
      }
    } catch (...) {
      errors[static_cast<std::size_t>(which)] = std::current_exception();
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return compute_metrics(predictions, labels);
}

}  // namespace lightformer
