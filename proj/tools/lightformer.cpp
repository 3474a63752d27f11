// lightformer: one binary for the whole workflow.
//
//   synth      render synthetic intersection drives (PPM frames + frames CSV)
//   prepare    window a frames CSV into an N-frame sequence manifest
//   train      train a model on a manifest, write a checkpoint
//   eval       evaluate a checkpoint on a manifest
//   predict    classify one N-frame buffer
//   gradcheck  run the finite-difference gradient battery
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric/contract
// error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lightformer/checkpoint.hpp"
#include "lightformer/config_keys.hpp"
#include "lightformer/data.hpp"
#include "lightformer/gradcheck_suite.hpp"
#include "lightformer/model.hpp"
#include "lightformer/ppm.hpp"
#include "lightformer/synth.hpp"
#include "lightformer/train.hpp"

namespace fs = std::filesystem;
using namespace lightformer;

namespace {

// --------------------------------------------------------------------------
// run configuration: flat "key = value" file, '#' comments, flags override

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto to_int = [&](const std::string& v) {
    try {
      std::size_t pos = 0;
      const int n = std::stoi(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw UsageError("config: bad integer for " + key + ": \"" + value + "\"");
    }
  };
  const auto to_double = [&](const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw UsageError("config: bad number for " + key + ": \"" + value + "\"");
    }
  };
  if (key == "epochs") {
    cfg.epochs = to_int(value);
  } else if (key == "lr") {
    cfg.lr = to_double(value);
  } else if (key == "batch_size") {
    cfg.batch_size = to_int(value);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(to_int(value));
  } else if (key == "shuffle") {
    cfg.shuffle = to_int(value) != 0;
  } else if (key == "early_stop_acc") {
    cfg.early_stop_acc = to_double(value);
  } else {
    return false;
  }
  return true;
}

std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void apply_config_pair(ModelConfig& model_cfg, TrainConfig& train_cfg, const std::string& key,
                       const std::string& value, const std::string& where) {
  bool known = false;
  try {
    known = apply_model_key(model_cfg, key, value);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (!known) known = apply_train_key(train_cfg, key, value);
  if (!known) throw UsageError(where + ": unknown config key \"" + key + "\"");
}

void read_config_file(const fs::path& path, ModelConfig& model_cfg, TrainConfig& train_cfg) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = strip(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_pair(model_cfg, train_cfg, strip(body.substr(0, eq)), strip(body.substr(eq + 1)),
                      path.string() + ":" + std::to_string(line_no));
  }
}

void apply_overrides(ModelConfig& model_cfg, TrainConfig& train_cfg,
                     const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got \"" + kv + "\"");
    apply_config_pair(model_cfg, train_cfg, strip(kv.substr(0, eq)), strip(kv.substr(eq + 1)),
                      "--set");
  }
}

// --------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::string scenario = "day";
  int drives = 2;
  int frames = 30;
  std::uint64_t seed = 0;
  int width = 64;
  int height = 32;
  int occlusion_permille = 0;
  bool force = false;
};

int cmd_synth(const SynthArgs& args) {
  const fs::path out_dir(args.out);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !args.force) {
    throw UsageError("output directory " + out_dir.string() +
                     " exists and is not empty (use --force to write anyway)");
  }
  if (args.scenario != "day" && args.scenario != "night") {
    throw UsageError("--scenario must be day or night");
  }
  if (args.drives < 1) throw UsageError("--drives must be >= 1");
  fs::create_directories(out_dir / "images");

  Rng root(args.seed);
  std::vector<FrameRecord> records;
  int total_distractors = 0;
  long occluded_frames = 0;
  for (int d = 0; d < args.drives; ++d) {
    Rng drive_rng = root.stream("drive", static_cast<std::uint64_t>(d));
    SynthConfig cfg;
    cfg.seed = drive_rng.next_u64();
    cfg.scenario = args.scenario == "night" ? Scenario::night : Scenario::day;
    cfg.num_frames = args.frames;
    cfg.width = args.width;
    cfg.height = args.height;
    cfg.left_shape = d % 2 == 0 ? LeftShape::circle : LeftShape::arrow;
    cfg.occlusion_permille = args.occlusion_permille;
    const int period = cfg.green_frames + cfg.yellow_frames + cfg.red_frames;
    cfg.phase_straight = static_cast<int>(drive_rng.uniform_int(0, period - 1));
    cfg.phase_left = static_cast<int>(drive_rng.uniform_int(0, period - 1));

    auto scene = synth_scene(cfg);
    total_distractors += scene.distractor_count;
    char drive_id[32];
    std::snprintf(drive_id, sizeof(drive_id), "drive%03d", d);
    for (int t = 0; t < args.frames; ++t) {
      char name[64];
      std::snprintf(name, sizeof(name), "images/%s_f%04d.ppm", drive_id, t);
      write_ppm(scene.frames[static_cast<std::size_t>(t)].image, out_dir / name);
      FrameRecord rec;
      rec.drive = drive_id;
      rec.frame = t;
      rec.path = name;
      rec.straight = scene.frames[static_cast<std::size_t>(t)].straight;
      rec.left = scene.frames[static_cast<std::size_t>(t)].left;
      records.push_back(std::move(rec));
      if (scene.frames[static_cast<std::size_t>(t)].occluded) ++occluded_frames;
    }
  }
  write_frames_csv(records, out_dir / "frames.csv");
  {
    std::ofstream stats(out_dir / "stats.txt");
    stats << "drives=" << args.drives << "\n";
    stats << "frames_per_drive=" << args.frames << "\n";
    stats << "scenario=" << args.scenario << "\n";
    stats << "width=" << args.width << "\n";
    stats << "height=" << args.height << "\n";
    stats << "distractors_total=" << total_distractors << "\n";
    stats << "occluded_frames=" << occluded_frames << "\n";
  }
  std::cout << "wrote " << records.size() << " frames across " << args.drives << " drives to "
            << out_dir.string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string frames_csv;
  int n = 10;
  int stride = 2;
  int step = 1;
  std::string out;
  double split = -1;
  std::uint64_t seed = 0;
};

std::string rebase_path(const std::string& p, const fs::path& from_dir, const fs::path& to_dir) {
  const fs::path abs = (from_dir / p).lexically_normal();
  const fs::path rel = abs.lexically_relative(to_dir.lexically_normal());
  return rel.empty() ? abs.string() : rel.string();
}

int cmd_prepare(const PrepareArgs& args) {
  if (args.n < 1) throw UsageError("--n must be >= 1");
  if (args.stride < 1) throw UsageError("--stride must be >= 1");
  if (args.step < 1) throw UsageError("--step must be >= 1");
  const fs::path csv_path(args.frames_csv);
  const fs::path out_path(args.out);
  auto frames = read_frames_csv(csv_path);
  auto samples = window_sequences(frames, args.n, args.stride, args.step);
  const fs::path csv_dir = csv_path.has_parent_path() ? csv_path.parent_path() : fs::path(".");
  const fs::path out_dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  for (auto& s : samples) {
    for (auto& p : s.paths) p = rebase_path(p, csv_dir, out_dir);
  }
  const auto report = [](const fs::path& path, const std::vector<SequenceSample>& set) {
    const auto st = manifest_stats(set);
    std::cout << path.string() << ": " << st.total << " samples (straight " << st.straight_pass
              << " pass / " << st.straight_stop << " stop, left " << st.left_pass << " pass / "
              << st.left_stop << " stop)\n";
  };
  if (args.split < 0) {
    write_manifest(samples, out_path);
    report(out_path, samples);
    return 0;
  }
  if (args.split <= 0 || args.split >= 1) throw UsageError("--split must be inside (0, 1)");
  Rng rng = Rng(args.seed).stream("split");
  rng.shuffle(samples);
  const std::size_t train_count =
      static_cast<std::size_t>(args.split * static_cast<double>(samples.size()));
  std::vector<SequenceSample> train_set(samples.begin(), samples.begin() + static_cast<long>(train_count));
  std::vector<SequenceSample> val_set(samples.begin() + static_cast<long>(train_count), samples.end());
  fs::path stem = out_path;
  const std::string ext = stem.extension().string();
  stem.replace_extension();
  const fs::path train_path = stem.string() + ".train" + ext;
  const fs::path val_path = stem.string() + ".val" + ext;
  write_manifest(train_set, train_path);
  write_manifest(val_set, val_path);
  report(train_path, train_set);
  report(val_path, val_set);
  return 0;
}

// --------------------------------------------------------------------------
// train / eval / predict / gradcheck

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string out;
  std::string log;
  std::vector<std::string> sets;
  bool ablate_tsa = false;
  std::optional<int> w;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  if (!args.config.empty()) read_config_file(args.config, model_cfg, train_cfg);
  apply_overrides(model_cfg, train_cfg, args.sets);
  if (args.ablate_tsa) model_cfg.ablate_tsa = true;
  if (args.w) model_cfg.centers_per_class = *args.w;
  if (args.epochs) train_cfg.epochs = *args.epochs;
  if (args.lr) train_cfg.lr = *args.lr;
  if (args.batch_size) train_cfg.batch_size = *args.batch_size;
  if (args.seed) train_cfg.seed = *args.seed;
  model_cfg.validate();
  train_cfg.validate();

  const fs::path manifest_path(args.manifest);
  auto samples = read_manifest(manifest_path);
  if (samples.empty()) throw DataError("manifest " + manifest_path.string() + " holds no samples");
  const fs::path base_dir =
      manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  auto dataset = load_samples<float>(samples, base_dir, model_cfg);

  Model<float> model(model_cfg, train_cfg.seed);
  std::ofstream log_file;
  if (!args.log.empty()) {
    log_file.open(args.log);
    if (!log_file) throw DataError("cannot open log file " + args.log);
  }
  std::vector<EpochStats> history;
  if (!args.log.empty()) {
    history = train(model, dataset, train_cfg, &log_file);
  } else {
    history = train(model, dataset, train_cfg, &std::cout);
  }
  if (!args.log.empty()) {
    for (const auto& h : history) {
      std::cout << h.epoch << "\t" << format_double(h.loss) << "\t" << format_double(h.train_acc)
                << "\n";
    }
  }
  save_checkpoint(model, args.out);
  std::cout << "checkpoint written to " << args.out << " after " << history.size() << " epochs\n";
  return 0;
}

struct EvalArgs {
  std::string manifest;
  std::string ckpt;
};

int cmd_eval(const EvalArgs& args) {
  auto model = load_checkpoint(args.ckpt);
  const fs::path manifest_path(args.manifest);
  auto samples = read_manifest(manifest_path);
  if (samples.empty()) throw DataError("manifest " + manifest_path.string() + " holds no samples");
  const fs::path base_dir =
      manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  auto dataset = load_samples<float>(samples, base_dir, model.config());
  auto report = evaluate(model, dataset);
  std::cout << format_metrics_text(report) << "\n" << format_metrics_kv(report);
  return 0;
}

struct PredictArgs {
  std::string ckpt;
  std::vector<std::string> frames;
};

int cmd_predict(const PredictArgs& args) {
  auto model = load_checkpoint(args.ckpt);
  const int n = model.config().buffer_size;
  if (static_cast<int>(args.frames.size()) != n) {
    throw ContractError("predict expects exactly N=" + std::to_string(n) + " frames, got " +
                        std::to_string(args.frames.size()));
  }
  std::vector<Tensor<float>> buffer;
  for (const auto& f : args.frames) {
    const Image img = read_ppm(f);
    if (img.width != model.config().image_width || img.height != model.config().image_height) {
      throw DataError("frame " + f + " is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", model wants " +
                      std::to_string(model.config().image_width) + "x" +
                      std::to_string(model.config().image_height));
    }
    buffer.push_back(image_to_tensor<float>(img));
  }
  NoGradGuard off;
  auto out = model.forward(buffer);
  const auto report = [](const char* name, const Tensor<float>& probs) {
    const int winner = probs.values()[0] >= probs.values()[1] ? 0 : 1;
    std::printf("%s: %s (p=%.4f)\n", name, winner == 0 ? "pass" : "stop",
                static_cast<double>(probs.values()[static_cast<std::size_t>(winner)]));
  };
  report("straight", decode(out.embedding, model.straight_decoder()));
  report("left", decode(out.embedding, model.left_decoder()));
  return 0;
}

int cmd_gradcheck() {
  const auto rows = run_gradcheck_suite();
  bool all_ok = true;
  std::printf("%-22s %-14s %s\n", "operation", "max_rel_err", "result");
  for (const auto& row : rows) {
    std::printf("%-22s %-14.3e %s\n", row.name.c_str(), row.max_rel_error,
                row.ok ? "pass" : "fail");
    all_ok = all_ok && row.ok;
  }
  if (!all_ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LightFormer: intersection right-of-way recognition"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "render synthetic intersection drives");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--scenario", synth_args.scenario, "day or night");
  synth->add_option("--drives", synth_args.drives, "number of drives");
  synth->add_option("--frames", synth_args.frames, "frames per drive");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--width", synth_args.width, "frame width");
  synth->add_option("--height", synth_args.height, "frame height");
  synth->add_option("--occlusion-permille", synth_args.occlusion_permille,
                    "per-frame occlusion chance, in 1/1000");
  synth->add_flag("--force", synth_args.force, "write into a non-empty directory");

  PrepareArgs prepare_args;
  auto* prepare = app.add_subcommand("prepare", "window a frames CSV into a manifest");
  prepare->add_option("--frames", prepare_args.frames_csv, "frames CSV path")->required();
  prepare->add_option("--n", prepare_args.n, "frames per sample");
  prepare->add_option("--stride", prepare_args.stride, "in-buffer frame spacing");
  prepare->add_option("--step", prepare_args.step, "slide step between consecutive samples");
  prepare->add_option("--out", prepare_args.out, "manifest path")->required();
  prepare->add_option("--split", prepare_args.split, "train fraction; writes .train/.val pair");
  prepare->add_option("--seed", prepare_args.seed, "split shuffle seed");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--manifest", train_args.manifest, "training manifest")->required();
  train_cmd->add_option("--config", train_args.config, "key = value config file");
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--log", train_args.log, "write the epoch history to this file");
  train_cmd->add_option("--set", train_args.sets, "override a config key, key=value")
      ->take_all();
  train_cmd->add_flag("--ablate-tsa", train_args.ablate_tsa, "remove the TSA sublayer");
  train_cmd->add_option("--w", train_args.w, "cluster centres per class");
  train_cmd->add_option("--epochs", train_args.epochs, "training epochs");
  train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
  train_cmd->add_option("--batch-size", train_args.batch_size, "batch size");
  train_cmd->add_option("--seed", train_args.seed, "training seed");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--manifest", eval_args.manifest, "evaluation manifest")->required();
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "classify one frame buffer");
  predict->add_option("--ckpt", predict_args.ckpt, "checkpoint path")->required();
  predict->add_option("--frames", predict_args.frames, "N frame images, oldest first")
      ->required()
      ->take_all();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient battery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (prepare->parsed()) return cmd_prepare(prepare_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (predict->parsed()) return cmd_predict(predict_args);
    if (gradcheck->parsed()) return cmd_gradcheck();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    // shape, contract, and numeric failures
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
