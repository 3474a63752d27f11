// Acceptance suite: one pass/fail line per criterion.
//
// Criteria 1, 5, and 6 drive the CLI binary end to end; the rest exercise the
// library directly. Every tolerance is written into the checks below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>
#include <unistd.h>

#include "lightformer/arcface.hpp"
#include "lightformer/attention.hpp"
#include "lightformer/checkpoint.hpp"
#include "lightformer/data.hpp"
#include "lightformer/metrics.hpp"
#include "lightformer/model.hpp"
#include "lightformer/train.hpp"

namespace fs = std::filesystem;
using namespace lightformer;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_workspace;
std::string g_note;  // extra detail printed after the criterion line

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LIGHTFORMER_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  CmdResult result;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

template <typename S>
Tensor<S> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::from_data(std::move(shape), std::move(data));
}

// --------------------------------------------------------------------------
// 1. gradient suite via the CLI

std::string criterion_gradient_suite() {
  const auto start = Clock::now();
  auto r = run_cli("gradcheck");
  const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
  if (r.exit_code != 0) return "cmd_gradcheck exited with " + std::to_string(r.exit_code);
  if (r.output.find("fail") != std::string::npos) return "a gradcheck row failed:\n" + r.output;
  for (const char* op :
       {"matmul", "softmax", "layer_norm", "conv2d", "multihead_attention", "bilinear_sample",
        "deformable_attention", "encoder_layer", "arcface_logits", "cross_entropy"}) {
    if (r.output.find(op) == std::string::npos) return std::string("missing row for ") + op;
  }
  if (elapsed >= 120.0) return "runtime " + std::to_string(elapsed) + "s exceeds 2 minutes";
  return "";
}

// --------------------------------------------------------------------------
// 2. empty-history TSA equals plain self-attention

std::string criterion_degenerate_tsa() {
  for (std::uint64_t trial = 1; trial <= 100; ++trial) {
    Rng rng(trial * 7919);
    const int heads = 1 << rng.uniform_int(0, 2);
    const int dim = heads * static_cast<int>(rng.uniform_int(1, 6));
    auto params = make_attention_params<double>(dim, heads, rng.stream("p"));
    auto q = rand_tensor<double>(rng, {1, dim}, -2, 2);
    HistoryBank<double> empty(rng.uniform_int(0, 1) ? HistoryMode::all : HistoryMode::last);
    auto a = temporal_self_attention(q, empty, params);
    auto b = multihead_attention(q, q, q, params);
    for (int i = 0; i < dim; ++i) {
      const double diff = std::abs(a.values()[static_cast<std::size_t>(i)] -
                                   b.values()[static_cast<std::size_t>(i)]);
      if (!(diff <= 1e-12)) {
        return "config " + std::to_string(trial) + ": |TSA - MHA| = " + std::to_string(diff);
      }
    }
  }
  return "";
}

// --------------------------------------------------------------------------
// 3. TSA ablation: bit-invariance without it, temporal gradient with it

std::string criterion_ablation_causality() {
  ModelConfig cfg;
  cfg.buffer_size = 3;
  cfg.dim = 16;
  cfg.num_heads = 2;
  cfg.points = 2;
  cfg.stem_width = 4;
  cfg.image_height = 32;
  cfg.image_width = 64;

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 131);
    std::vector<Tensor<double>> buffer, noise;
    for (int i = 0; i < cfg.buffer_size; ++i) {
      buffer.push_back(rand_tensor<double>(rng, {3, 32, 64}, 0, 1));
      noise.push_back(rand_tensor<double>(rng, {3, 32, 64}, 0, 1));
    }
    noise.back() = buffer.back();  // same current frame, different history

    cfg.ablate_tsa = true;
    Model<double> ablated(cfg, seed);
    auto a = ablated.forward(buffer);
    auto b = ablated.forward(noise);
    if (a.straight_logits.values() != b.straight_logits.values() ||
        a.left_logits.values() != b.left_logits.values()) {
      return "seed " + std::to_string(seed) + ": ablated output depends on history frames";
    }

    cfg.ablate_tsa = false;
    Model<double> full(cfg, seed);
    buffer.front().set_requires_grad();
    buffer.front().clear_grad();
    auto out = full.forward(buffer);
    sum(add(out.straight_logits, out.left_logits)).backward();
    double max_g = 0;
    if (buffer.front().has_grad()) {
      for (double g : buffer.front().grad()) max_g = std::max(max_g, std::abs(g));
    }
    buffer.front().set_requires_grad(false);
    if (!(max_g > 0)) {
      return "seed " + std::to_string(seed) + ": zero gradient on frame 1 with TSA active";
    }
  }
  return "";
}

// --------------------------------------------------------------------------
// 4. w=1 multi-weight decoder equals standard arcface

// Standard arcface with one centre per class, written independently.
std::vector<double> standard_arcface(const std::vector<double>& e,
                                     const std::vector<std::vector<double>>& centres, int target,
                                     double margin, double scale) {
  double en = 0;
  for (double v : e) en += v * v;
  en = std::sqrt(en);
  std::vector<double> logits;
  for (std::size_t c = 0; c < centres.size(); ++c) {
    double dot = 0, cn = 0;
    for (std::size_t d = 0; d < e.size(); ++d) {
      dot += e[d] * centres[c][d];
      cn += centres[c][d] * centres[c][d];
    }
    double cosine = dot / (en * std::sqrt(cn));
    cosine = std::min(std::max(cosine, -1.0 + 1e-7), 1.0 - 1e-7);
    if (static_cast<int>(c) == target && margin != 0.0) {
      logits.push_back(scale * std::cos(std::min(std::acos(cosine) + margin, kPi)));
    } else {
      logits.push_back(scale * cosine);
    }
  }
  return logits;
}

std::string criterion_arcface_reduction() {
  for (std::uint64_t trial = 1; trial <= 1000; ++trial) {
    Rng rng(trial * 104729);
    const int dim = static_cast<int>(rng.uniform_int(2, 12));
    auto bank = make_cluster_bank<double>(2, 1, dim, 0.5, 64.0, rng.stream("bank"));
    auto e = rand_tensor<double>(rng, {dim}, -2, 2);
    double norm = 0;
    for (double v : e.values()) norm += v * v;
    if (norm < 1e-12) continue;
    const int target = static_cast<int>(rng.uniform_int(0, 1));

    std::vector<std::vector<double>> centres(2, std::vector<double>(static_cast<std::size_t>(dim)));
    for (int c = 0; c < 2; ++c) {
      for (int d = 0; d < dim; ++d) centres[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] = bank.centers.at(c, 0, d);
    }
    auto want = standard_arcface(e.values(), centres, target, 0.5, 64.0);
    auto got = arcface_logits(e, bank, target);
    for (int c = 0; c < 2; ++c) {
      if (!(std::abs(got.values()[static_cast<std::size_t>(c)] - want[static_cast<std::size_t>(c)]) < 1e-10)) {
        return "trial " + std::to_string(trial) + ": logit mismatch vs standard arcface";
      }
    }

    auto margin_free = arcface_logits(e, bank);  // no target, no margin
    if (!(got.values()[static_cast<std::size_t>(target)] <=
          margin_free.values()[static_cast<std::size_t>(target)] + 1e-12)) {
      return "trial " + std::to_string(trial) + ": margin raised the target logit";
    }
  }
  return "";
}

// --------------------------------------------------------------------------
// 5. overfit experiment through the CLI

std::string criterion_overfit() {
  const auto start = Clock::now();
  const fs::path dir = g_workspace / "overfit";
  const std::string data = (dir / "data").string();
  if (run_cli("synth --out " + data + " --drives 4 --frames 19 --seed 404").exit_code != 0) {
    return "synth failed";
  }
  const std::string manifest = (dir / "train.tsv").string();
  auto prep = run_cli("prepare --frames " + data + "/frames.csv --n 4 --stride 1 --out " + manifest);
  if (prep.exit_code != 0) return "prepare failed";

  auto samples = read_manifest(manifest);
  if (samples.size() != 64) return "expected 64 sequences, got " + std::to_string(samples.size());
  auto stats = manifest_stats(samples);
  for (int s = 0; s < 2; ++s) {
    for (int l = 0; l < 2; ++l) {
      if (stats.joint[s][l] == 0) return "a joint status is missing from the dataset";
    }
  }

  const std::string ckpt = (dir / "model.ckpt").string();
  auto tr = run_cli("train --manifest " + manifest +
                    " --set n=4 --set dim=32 --set heads=2 --set points=2 --set w=1"
                    " --set stem_width=8 --set image_height=32 --set image_width=64"
                    " --set early_stop_acc=1.0 --epochs 200 --lr 1e-4 --seed 404 --out " + ckpt);
  if (tr.exit_code != 0) return "train failed:\n" + tr.output;

  // last history line: epoch <TAB> loss <TAB> accuracy
  int last_epoch = 0;
  double last_acc = 0;
  {
    std::istringstream in(tr.output);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream fields(line);
      int epoch;
      double loss, acc;
      if (fields >> epoch >> loss >> acc) {
        last_epoch = epoch;
        last_acc = acc;
      }
    }
  }
  if (last_epoch > 200) return "needed " + std::to_string(last_epoch) + " epochs";
  if (last_acc != 1.0) {
    return "train accuracy stalled at " + std::to_string(last_acc) + " after " +
           std::to_string(last_epoch) + " epochs";
  }

  auto ev = run_cli("eval --manifest " + manifest + " --ckpt " + ckpt);
  if (ev.exit_code != 0) return "eval failed";
  auto kv = parse_kv(ev.output);
  for (const std::string status : {"straight_pass", "straight_stop", "left_pass", "left_stop"}) {
    for (const std::string metric : {"accuracy", "precision", "recall", "f1"}) {
      const auto it = kv.find(status + "." + metric);
      if (it == kv.end()) return "eval output missing " + status + "." + metric;
      if (std::stod(it->second) != 1.0) {
        return status + "." + metric + " = " + it->second + ", want 1.0";
      }
    }
  }
  const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
  if (elapsed >= 600.0) return "runtime " + std::to_string(elapsed) + "s exceeds 10 minutes";
  return "";
}

// --------------------------------------------------------------------------
// 6. multi-weight benefit, w=4 vs w=1 over 5 seeds

double mean_direction_accuracy(const std::string& eval_output) {
  auto kv = parse_kv(eval_output);
  return (std::stod(kv.at("straight_pass.accuracy")) + std::stod(kv.at("left_pass.accuracy"))) / 2;
}

std::string criterion_multiweight_benefit() {
  const fs::path dir = g_workspace / "multiweight";
  const std::string data = (dir / "data").string();
  // night drives whose left indicator alternates circle/arrow per drive
  if (run_cli("synth --out " + data + " --scenario night --drives 8 --frames 13 --seed 777")
          .exit_code != 0) {
    return "synth failed";
  }
  const std::string stem = (dir / "m.tsv").string();
  if (run_cli("prepare --frames " + data + "/frames.csv --n 2 --stride 1 --out " + stem +
              " --split 0.8 --seed 777")
          .exit_code != 0) {
    return "prepare failed";
  }
  const std::string train_manifest = (dir / "m.train.tsv").string();
  const std::string val_manifest = (dir / "m.val.tsv").string();

  int wins = 0;
  std::string detail;
  for (int seed = 1; seed <= 5; ++seed) {
    double acc[2] = {0, 0};
    for (int wi = 0; wi < 2; ++wi) {
      const int w = wi == 0 ? 1 : 4;
      const std::string ckpt = (dir / ("model_w" + std::to_string(w) + ".ckpt")).string();
      auto tr = run_cli("train --manifest " + train_manifest +
                        " --set n=2 --set dim=16 --set heads=2 --set points=2"
                        " --set stem_width=4 --set image_height=32 --set image_width=64"
                        " --set w=" + std::to_string(w) +
                        " --epochs 16 --lr 1e-3 --seed " + std::to_string(seed) + " --out " + ckpt);
      if (tr.exit_code != 0) return "train failed (seed " + std::to_string(seed) + ")";
      auto ev = run_cli("eval --manifest " + val_manifest + " --ckpt " + ckpt);
      if (ev.exit_code != 0) return "eval failed (seed " + std::to_string(seed) + ")";
      acc[wi] = mean_direction_accuracy(ev.output);
    }
    if (acc[1] >= acc[0]) ++wins;
    char line[96];
    std::snprintf(line, sizeof(line), " seed %d: w1=%.4f w4=%.4f", seed, acc[0], acc[1]);
    detail += line;
  }
  if (wins < 4) return "w=4 matched or beat w=1 in only " + std::to_string(wins) + "/5 seeds:" + detail;
  g_note = "w=4 >= w=1 in " + std::to_string(wins) + "/5 seeds:" + detail;
  return "";
}

// --------------------------------------------------------------------------
// 7. windowing arithmetic against the brute-force enumerator

long enumerate_windows(long len, int n, int stride) {
  long count = 0;
  for (long t = 0; t < len; ++t) {
    long ix = t;
    bool ok = true;
    for (int j = 1; j < n; ++j) {
      ix -= stride;
      if (ix < 0) ok = false;
    }
    if (ok) ++count;
  }
  return count;
}

std::string criterion_windowing() {
  Rng rng(20240907);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 15));
    const int stride = static_cast<int>(rng.uniform_int(1, 5));
    std::vector<FrameRecord> frames;
    long want = 0;
    const int drives = static_cast<int>(rng.uniform_int(1, 6));
    for (int d = 0; d < drives; ++d) {
      const long len = rng.uniform_int(0, 60);
      for (long i = 0; i < len; ++i) {
        FrameRecord f;
        f.drive = "d" + std::to_string(d);
        f.frame = i;
        f.path = f.drive + "/" + std::to_string(i);
        f.straight = LightState::green;
        f.left = LightState::red;
        frames.push_back(std::move(f));
      }
      want += enumerate_windows(len, n, stride);
      if (enumerate_windows(len, n, stride) !=
          std::max<long>(0, len - static_cast<long>(n - 1) * stride)) {
        return "enumerator disagrees with the closed form";
      }
    }
    const long got = static_cast<long>(window_sequences(frames, n, stride).size());
    if (got != want) {
      return "trial " + std::to_string(trial) + ": " + std::to_string(got) + " windows, want " +
             std::to_string(want);
    }
  }
  return "";
}

// --------------------------------------------------------------------------
// 8. metrics against the confusion-matrix reference

std::string criterion_metrics_oracle() {
  Rng rng(20240908);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 100));
    std::vector<RightOfWayLabel> pred(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
    long counts[4][4] = {};  // status x {tp, fp, fn, tn}
    for (int i = 0; i < n; ++i) {
      pred[static_cast<std::size_t>(i)] = {rng.uniform_int(0, 1) ? RightOfWay::pass : RightOfWay::stop,
                                           rng.uniform_int(0, 1) ? RightOfWay::pass : RightOfWay::stop};
      truth[static_cast<std::size_t>(i)] = {rng.uniform_int(0, 1) ? RightOfWay::pass : RightOfWay::stop,
                                            rng.uniform_int(0, 1) ? RightOfWay::pass : RightOfWay::stop};
      const bool p[4] = {pred[static_cast<std::size_t>(i)].straight == RightOfWay::pass,
                         pred[static_cast<std::size_t>(i)].straight == RightOfWay::stop,
                         pred[static_cast<std::size_t>(i)].left == RightOfWay::pass,
                         pred[static_cast<std::size_t>(i)].left == RightOfWay::stop};
      const bool a[4] = {truth[static_cast<std::size_t>(i)].straight == RightOfWay::pass,
                         truth[static_cast<std::size_t>(i)].straight == RightOfWay::stop,
                         truth[static_cast<std::size_t>(i)].left == RightOfWay::pass,
                         truth[static_cast<std::size_t>(i)].left == RightOfWay::stop};
      for (int s = 0; s < 4; ++s) {
        if (p[s] && a[s]) ++counts[s][0];
        if (p[s] && !a[s]) ++counts[s][1];
        if (!p[s] && a[s]) ++counts[s][2];
        if (!p[s] && !a[s]) ++counts[s][3];
      }
    }
    auto report = compute_metrics(pred, truth);
    const StatusMetrics* status[4] = {&report.straight_pass, &report.straight_stop,
                                      &report.left_pass, &report.left_stop};
    for (int s = 0; s < 4; ++s) {
      const auto& m = *status[s];
      if (m.counts.tp != counts[s][0] || m.counts.fp != counts[s][1] ||
          m.counts.fn != counts[s][2] || m.counts.tn != counts[s][3]) {
        return "trial " + std::to_string(trial) + ": confusion counts differ from the reference";
      }
      const long tp = counts[s][0], fp = counts[s][1], fn = counts[s][2], tn = counts[s][3];
      const double want_acc = static_cast<double>(tp + tn) / n;
      if (m.accuracy != want_acc) return "accuracy differs from the reference";
      if (tp + fp > 0 && m.precision != static_cast<double>(tp) / (tp + fp)) {
        return "precision differs from the reference";
      }
      if (tp + fn > 0 && m.recall != static_cast<double>(tp) / (tp + fn)) {
        return "recall differs from the reference";
      }
      if (m.f1_defined) {
        const double want_f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
        if (!(std::abs(m.f1 - want_f1) <= 1e-12)) return "F1 identity violated beyond 1e-12";
      }
    }
  }
  return "";
}

// --------------------------------------------------------------------------
// 9. determinism and serialization

std::string criterion_determinism() {
  ModelConfig cfg;
  cfg.buffer_size = 2;
  cfg.dim = 8;
  cfg.num_heads = 2;
  cfg.points = 2;
  cfg.stem_width = 2;
  cfg.image_height = 32;
  cfg.image_width = 32;

  std::vector<LoadedSample<float>> dataset;
  Rng rng(555);
  for (int i = 0; i < 6; ++i) {
    LoadedSample<float> s;
    for (int f = 0; f < cfg.buffer_size; ++f) {
      s.frames.push_back(rand_tensor<float>(rng, {3, 32, 32}, 0, 1));
    }
    s.label.straight = rng.uniform_int(0, 1) ? RightOfWay::pass : RightOfWay::stop;
    s.label.left = rng.uniform_int(0, 1) ? RightOfWay::pass : RightOfWay::stop;
    dataset.push_back(std::move(s));
  }
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.seed = 9;

  Model<float> a(cfg, 77), b(cfg, 77);
  auto ha = train(a, dataset, tc);
  auto hb = train(b, dataset, tc);
  if (ha.size() != hb.size()) return "history lengths differ";
  for (std::size_t i = 0; i < ha.size(); ++i) {
    if (ha[i].loss != hb[i].loss || ha[i].train_acc != hb[i].train_acc) {
      return "loss histories differ at epoch " + std::to_string(i + 1);
    }
  }

  const fs::path ckpt = g_workspace / "determinism.ckpt";
  save_checkpoint(a, ckpt);
  auto loaded = load_checkpoint(ckpt);
  auto ra = a.forward(dataset[0].frames);
  auto rb = loaded.forward(dataset[0].frames);
  if (ra.straight_logits.values() != rb.straight_logits.values() ||
      ra.left_logits.values() != rb.left_logits.values() ||
      ra.embedding.values() != rb.embedding.values()) {
    return "checkpoint round trip changed the forward output";
  }
  return "";
}

}  // namespace

int main() {
  g_workspace = fs::temp_directory_path() /
                ("lf_acceptance_" + std::to_string(static_cast<unsigned long>(::getpid())));
  fs::create_directories(g_workspace);

  struct Criterion {
    const char* name;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {"1. gradient suite < 1e-4 over 3 seeds, < 2 min", criterion_gradient_suite},
      {"2. empty-history TSA == multihead(q,q,q) within 1e-12, 100 configs", criterion_degenerate_tsa},
      {"3. TSA ablation: bit-invariant without, nonzero frame-1 gradient with", criterion_ablation_causality},
      {"4. w=1 decoder == standard arcface within 1e-10, margin monotone, 1000 triples", criterion_arcface_reduction},
      {"5. overfit: 64 sequences reach 100% within 200 epochs, eval all 1.0", criterion_overfit},
      {"6. multi-weight: w=4 >= w=1 validation accuracy in >= 4 of 5 seeds", criterion_multiweight_benefit},
      {"7. window counts == brute-force enumerator, 200 collections, exact", criterion_windowing},
      {"8. metrics == confusion reference, 1000 sets, exact; F1 identity 1e-12", criterion_metrics_oracle},
      {"9. fixed-seed training determinism; checkpoint round trip bit-exact", criterion_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    std::string failure;
    g_note.clear();
    const auto start = Clock::now();
    try {
      failure = c.run();
    } catch (const std::exception& e) {
      failure = std::string("exception: ") + e.what();
    }
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    if (failure.empty()) {
      std::printf("PASS  %-75s (%.1fs)\n", c.name, elapsed);
      if (!g_note.empty()) std::printf("      %s\n", g_note.c_str());
    } else {
      std::printf("FAIL  %-75s (%.1fs)\n      %s\n", c.name, elapsed, failure.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  std::printf("%d/%zu acceptance criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  fs::remove_all(g_workspace);
  return failures == 0 ? 0 : 1;
}
