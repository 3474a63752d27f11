#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>
#include <vector>
#include <unistd.h>

#include "lightformer/data.hpp"

namespace fs = std::filesystem;
using namespace lightformer;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LIGHTFORMER_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult result;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) {
    result.output.append(buf, n);
    if (n < sizeof(buf)) break;
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() /
           ("lf_cli_" + std::to_string(static_cast<unsigned long>(::getpid())) + "_" + std::to_string(n++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

long count_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  long n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++n;
  }
  return n;
}

const std::string kTinyModel =
    " --set n=2 --set dim=8 --set heads=2 --set points=2 --set stem_width=2"
    " --set image_height=32 --set image_width=64 ";

}  // namespace

TEST_CASE("help exists for every subcommand and lists the flags") {
  CHECK(run_cli("--help").exit_code == 0);
  for (const std::string sub : {"synth", "prepare", "train", "eval", "predict", "gradcheck"}) {
    auto r = run_cli(sub + " --help");
    CHECK(r.exit_code == 0);
    if (sub == "synth") CHECK(r.output.find("--scenario") != std::string::npos);
    if (sub == "prepare") CHECK(r.output.find("--stride") != std::string::npos);
    if (sub == "train") CHECK(r.output.find("--ablate-tsa") != std::string::npos);
    if (sub == "predict") CHECK(r.output.find("--frames") != std::string::npos);
  }
  CHECK(run_cli("synth --no-such-flag").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);
}

TEST_CASE("synth writes the advertised number of images and CSV rows") {
  TempDir tmp;
  auto r = run_cli("synth --out " + (tmp / "d") + " --drives 2 --frames 30 --seed 5");
  CHECK(r.exit_code == 0);
  long images = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "d" / "images")) {
    (void)e;
    ++images;
  }
  CHECK(images == 60);
  CHECK(count_lines(tmp.path / "d" / "frames.csv") == 61);  // header + 60 rows
}

TEST_CASE("synth with the same seed is byte identical") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "a") + " --drives 2 --frames 8 --seed 11").exit_code == 0);
  CHECK(run_cli("synth --out " + (tmp / "b") + " --drives 2 --frames 8 --seed 11").exit_code == 0);
  CHECK(slurp(tmp.path / "a" / "frames.csv") == slurp(tmp.path / "b" / "frames.csv"));
  CHECK(slurp(tmp.path / "a" / "stats.txt") == slurp(tmp.path / "b" / "stats.txt"));
  for (const auto& e : fs::directory_iterator(tmp.path / "a" / "images")) {
    const auto other = tmp.path / "b" / "images" / e.path().filename();
    REQUIRE(slurp(e.path()) == slurp(other));
  }
}

TEST_CASE("synth refuses a non-empty output directory without --force") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 2 --seed 1").exit_code == 0);
  auto r = run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 2 --seed 1");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("--force") != std::string::npos);
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 2 --seed 1 --force").exit_code == 0);
}

TEST_CASE("night scenario records a positive distractor count in the stats sidecar") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "n") + " --scenario night --drives 2 --frames 2 --seed 3")
            .exit_code == 0);
  std::ifstream stats(tmp.path / "n" / "stats.txt");
  std::string line;
  long distractors = -1;
  while (std::getline(stats, line)) {
    if (line.rfind("distractors_total=", 0) == 0) distractors = std::stol(line.substr(18));
  }
  CHECK(distractors > 0);
}

TEST_CASE("prepare applies the window formula and splits by the given fraction") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 20 --seed 9").exit_code == 0);
  auto r = run_cli("prepare --frames " + (tmp / "d/frames.csv") + " --n 10 --stride 2 --out " +
                   (tmp / "m.tsv"));
  CHECK(r.exit_code == 0);
  CHECK(count_lines(tmp.path / "m.tsv") == 2);

  // 13 frames, n 4, stride 1 -> 10 samples, split 0.8 -> 8 + 2
  TempDir tmp2;
  CHECK(run_cli("synth --out " + (tmp2 / "d") + " --drives 1 --frames 13 --seed 9").exit_code == 0);
  auto r2 = run_cli("prepare --frames " + (tmp2 / "d/frames.csv") + " --n 4 --stride 1 --out " +
                    (tmp2 / "m.tsv") + " --split 0.8 --seed 4");
  CHECK(r2.exit_code == 0);
  CHECK(count_lines(tmp2.path / "m.train.tsv") == 8);
  CHECK(count_lines(tmp2.path / "m.val.tsv") == 2);
}

TEST_CASE("prepared labels equal label_from_lights of each window's final frame") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 2 --frames 16 --seed 21").exit_code == 0);
  CHECK(run_cli("prepare --frames " + (tmp / "d/frames.csv") + " --n 3 --stride 2 --out " +
                (tmp / "m.tsv"))
            .exit_code == 0);
  auto frames = read_frames_csv(tmp.path / "d" / "frames.csv");
  std::map<std::string, const FrameRecord*> by_path;
  for (const auto& f : frames) by_path[f.path] = &f;
  auto samples = read_manifest(tmp.path / "m.tsv");
  REQUIRE_FALSE(samples.empty());
  for (const auto& s : samples) {
    // manifest paths are relative to the manifest dir; the CSV's are relative
    // to the CSV dir one level down
    const std::string key = s.paths.back().substr(2);  // drop "d/"
    REQUIRE(by_path.count(key) == 1);
    const auto* final_frame = by_path[key];
    const auto want = label_from_lights(final_frame->straight, final_frame->left);
    CHECK(s.label == want);
  }
}

TEST_CASE("prepare with a fixed split seed is byte identical") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 2 --frames 12 --seed 19").exit_code == 0);
  const std::string base = "prepare --frames " + (tmp / "d/frames.csv") +
                           " --n 3 --stride 1 --split 0.75 --seed 8 --out ";
  CHECK(run_cli(base + (tmp / "a.tsv")).exit_code == 0);
  CHECK(run_cli(base + (tmp / "b.tsv")).exit_code == 0);
  CHECK(slurp(tmp.path / "a.train.tsv") == slurp(tmp.path / "b.train.tsv"));
  CHECK(slurp(tmp.path / "a.val.tsv") == slurp(tmp.path / "b.val.tsv"));
}

TEST_CASE("prepare honors the slide step") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 20 --seed 23").exit_code == 0);
  CHECK(run_cli("prepare --frames " + (tmp / "d/frames.csv") +
                " --n 3 --stride 2 --step 3 --out " + (tmp / "m.tsv"))
            .exit_code == 0);
  CHECK(count_lines(tmp.path / "m.tsv") == 6);
}

TEST_CASE("malformed CSV input exits with the data error code") {
  TempDir tmp;
  {
    std::ofstream out(tmp.path / "bad.csv");
    out << "drive,frame,path,straight,left\n";
    out << "a,0,x.ppm,green,purple\n";
  }
  auto r = run_cli("prepare --frames " + (tmp / "bad.csv") + " --n 2 --stride 1 --out " +
                   (tmp / "m.tsv"));
  CHECK(r.exit_code == 3);
  CHECK(r.output.find(":2:") != std::string::npos);
}

TEST_CASE("train writes a checkpoint usable by eval and predict") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 2 --frames 10 --seed 31").exit_code == 0);
  CHECK(run_cli("prepare --frames " + (tmp / "d/frames.csv") + " --n 2 --stride 1 --out " +
                (tmp / "m.tsv"))
            .exit_code == 0);
  auto r = run_cli("train --manifest " + (tmp / "m.tsv") + kTinyModel +
                   "--epochs 1 --seed 2 --out " + (tmp / "model.ckpt"));
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(tmp.path / "model.ckpt"));

  auto ev = run_cli("eval --manifest " + (tmp / "m.tsv") + " --ckpt " + (tmp / "model.ckpt"));
  CHECK(ev.exit_code == 0);
  CHECK(ev.output.find("go straight pass") != std::string::npos);
  CHECK(ev.output.find("straight_pass.accuracy=") != std::string::npos);

  auto pr = run_cli("predict --ckpt " + (tmp / "model.ckpt") + " --frames " +
                    (tmp / "d/images/drive000_f0000.ppm") + " " + (tmp / "d/images/drive000_f0001.ppm"));
  CHECK(pr.exit_code == 0);
  CHECK(pr.output.find("straight: ") != std::string::npos);
  CHECK(pr.output.find("left: ") != std::string::npos);
  CHECK(pr.output.find("(p=") != std::string::npos);

  auto wrong = run_cli("predict --ckpt " + (tmp / "model.ckpt") + " --frames " +
                       (tmp / "d/images/drive000_f0000.ppm"));
  CHECK(wrong.exit_code == 4);
  CHECK(wrong.output.find("N=2") != std::string::npos);
}

TEST_CASE("train runs with a fixed seed write byte-identical checkpoints and logs") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 9 --seed 41").exit_code == 0);
  CHECK(run_cli("prepare --frames " + (tmp / "d/frames.csv") + " --n 2 --stride 1 --out " +
                (tmp / "m.tsv"))
            .exit_code == 0);
  const std::string train_args = "train --manifest " + (tmp / "m.tsv") + kTinyModel +
                                 "--epochs 2 --seed 6 ";
  CHECK(run_cli(train_args + "--out " + (tmp / "a.ckpt") + " --log " + (tmp / "a.log")).exit_code == 0);
  CHECK(run_cli(train_args + "--out " + (tmp / "b.ckpt") + " --log " + (tmp / "b.log")).exit_code == 0);
  CHECK(slurp(tmp.path / "a.ckpt") == slurp(tmp.path / "b.ckpt"));
  CHECK(slurp(tmp.path / "a.log") == slurp(tmp.path / "b.log"));
}

TEST_CASE("unknown config keys fail fast") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 4 --seed 1").exit_code == 0);
  CHECK(run_cli("prepare --frames " + (tmp / "d/frames.csv") + " --n 2 --stride 1 --out " +
                (tmp / "m.tsv"))
            .exit_code == 0);
  auto r = run_cli("train --manifest " + (tmp / "m.tsv") + " --set no_such_key=3 --out " +
                   (tmp / "x.ckpt"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no_such_key") != std::string::npos);

  {
    std::ofstream cfg(tmp.path / "run.cfg");
    cfg << "# comment\n";
    cfg << "dim = 8\n";
    cfg << "mystery = 1\n";
  }
  auto r2 = run_cli("train --manifest " + (tmp / "m.tsv") + " --config " + (tmp / "run.cfg") +
                    " --out " + (tmp / "x.ckpt"));
  CHECK(r2.exit_code == 2);
  CHECK(r2.output.find("mystery") != std::string::npos);
}

TEST_CASE("config file values are applied and flags override them") {
  TempDir tmp;
  CHECK(run_cli("synth --out " + (tmp / "d") + " --drives 1 --frames 8 --seed 13").exit_code == 0);
  CHECK(run_cli("prepare --frames " + (tmp / "d/frames.csv") + " --n 2 --stride 1 --out " +
                (tmp / "m.tsv"))
            .exit_code == 0);
  {
    std::ofstream cfg(tmp.path / "run.cfg");
    cfg << "n = 2\ndim = 8\nheads = 2\npoints = 2\nstem_width = 2\n";
    cfg << "image_height = 32\nimage_width = 64\n";
    cfg << "epochs = 7\nlr = 0.001\nseed = 9\n";
  }
  // --epochs 1 overrides epochs=7; history then has a single line
  auto r = run_cli("train --manifest " + (tmp / "m.tsv") + " --config " + (tmp / "run.cfg") +
                   " --epochs 1 --out " + (tmp / "model.ckpt") + " --log " + (tmp / "t.log"));
  CHECK(r.exit_code == 0);
  CHECK(count_lines(tmp.path / "t.log") == 1);
}

TEST_CASE("eval on a missing manifest is a data error") {
  TempDir tmp;
  auto r = run_cli("eval --manifest " + (tmp / "missing.tsv") + " --ckpt " + (tmp / "no.ckpt"));
  CHECK(r.exit_code == 3);
}
