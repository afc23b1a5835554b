#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "mapfuse/checkpoint.hpp"
#include "mapfuse/image_io.hpp"

using namespace mapfuse;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

struct Harness {
  fs::path dir;
  std::string bin;

  Harness() {
    const char* env = std::getenv("MAPFUSE_BIN");
    REQUIRE_MESSAGE(env != nullptr, "MAPFUSE_BIN must point at the CLI binary");
    bin = env;
    dir = fs::temp_directory_path() /
          ("mapfuse_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Harness() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  std::string file(const std::string& name) const { return (dir / name).string(); }

  std::string slurp(const std::string& path) const {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
  }

  RunResult run(const std::string& args) const {
    const std::string out_path = file("_stdout");
    const std::string err_path = file("_stderr");
    const std::string cmd =
        bin + " " + args + " >" + out_path + " 2>" + err_path;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
  }
};

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("argument parsing maps onto the documented exit codes") {
  Harness h;
  CHECK(h.run("").code == 2);             // a subcommand is required
  CHECK(h.run("frobnicate").code == 2);   // unknown subcommand
  CHECK(h.run("--help").code == 0);
  CHECK(h.run("train --help").code == 0);
  CHECK(h.run("train --synth 2").code == 2);  // --out is required
  CHECK(h.run("eval --x a --y b").code == 2);

  auto r = h.run("train --out " + h.file("x.ckpt"));
  CHECK(r.code == 2);  // no data source
  CHECK(r.err.find("usage error:") != std::string::npos);
  CHECK(r.err.find("--synth") != std::string::npos);

  auto both = h.run("train --out " + h.file("x.ckpt") +
                    " --data somewhere --synth 2");
  CHECK(both.code == 2);
  CHECK(both.err.find("mutually exclusive") != std::string::npos);

  auto badcrop = h.run("train --out " + h.file("x.ckpt") +
                       " --synth 2 --synth-size 32 --crop 30 --steps 1");
  CHECK(badcrop.code == 2);
  CHECK(badcrop.err.find("usage error:") != std::string::npos);
}

TEST_CASE("a full train/fuse/eval round trip works end to end") {
  Harness h;
  const std::string ckpt = h.file("net.ckpt");
  const std::string log = h.file("log.csv");
  const std::string common =
      " --synth 4 --synth-size 32 --crop 32 --batch 1 --steps 3 --seed 5";

  auto tr = h.run("train --out " + ckpt + common + " --log " + log);
  CHECK(tr.code == 0);
  CHECK(tr.err.find("checkpoint written to") != std::string::npos);
  CHECK(fs::exists(ckpt));
  const std::string log_text = h.slurp(log);
  CHECK(log_text.rfind("step,loss,frac_x\n", 0) == 0);
  CHECK(count_lines(log_text) == 4);  // header + 3 steps
  CHECK(tr.out.empty());              // log went to the file, not stdout

  // Re-running the exact command reproduces the checkpoint bit for bit.
  const std::string ckpt2 = h.file("net2.ckpt");
  auto tr2 = h.run("train --out " + ckpt2 + common + " --log " + h.file("l2.csv"));
  CHECK(tr2.code == 0);
  CHECK(h.slurp(ckpt) == h.slurp(ckpt2));
  CHECK(h.slurp(log) == h.slurp(h.file("l2.csv")));

  // Without --log the CSV goes to stdout instead.
  auto tr3 = h.run("train --out " + h.file("net3.ckpt") + common);
  CHECK(tr3.code == 0);
  CHECK(tr3.out.rfind("step,loss,frac_x\n", 0) == 0);

  // Prepare a pair on disk and fuse it.
  img::Image ix(24, 40), iy(24, 40);
  for (Eigen::Index i = 0; i < 24; ++i)
    for (Eigen::Index j = 0; j < 40; ++j) {
      ix.pix(i, j) = static_cast<float>(((i / 3 + j / 3) % 2));
      iy.pix(i, j) = static_cast<float>(j) / 40.0f;
    }
  img::save_image(ix, h.file("x.png"));
  img::save_image(iy, h.file("y.png"));

  const std::string fused = h.file("fused.png");
  auto fu = h.run("fuse --ckpt " + ckpt + " --x " + h.file("x.png") + " --y " +
                  h.file("y.png") + " --out " + fused);
  CHECK(fu.code == 0);
  CHECK(fu.err.find("EN=") != std::string::npos);
  CHECK(fu.err.find("SF=") != std::string::npos);
  REQUIRE(fs::exists(fused));
  auto fused_im = img::load_image(fused);
  CHECK(fused_im.height() == 24);
  CHECK(fused_im.width() == 40);

  // Fusing again writes identical bytes.
  auto fu2 = h.run("fuse --ckpt " + ckpt + " --x " + h.file("x.png") + " --y " +
                   h.file("y.png") + " --out " + h.file("fused2.png"));
  CHECK(fu2.code == 0);
  CHECK(h.slurp(fused) == h.slurp(h.file("fused2.png")));

  // Default eval prints the standard table header and one row.
  auto ev = h.run("eval --x " + h.file("x.png") + " --y " + h.file("y.png") +
                  " --fused " + fused);
  CHECK(ev.code == 0);
  CHECK(ev.out.rfind("EI,CE,SF,EN,Qabf,MS_SSIM,SD,VIF\n", 0) == 0);
  CHECK(count_lines(ev.out) == 2);

  // Metric subsets keep the requested order; the CSV sink appends.
  const std::string csv = h.file("scores.csv");
  for (int i = 0; i < 2; ++i) {
    auto e = h.run("eval --x " + h.file("x.png") + " --y " + h.file("y.png") +
                   " --fused " + fused + " --metrics SD,EN --csv " + csv);
    CHECK(e.code == 0);
    CHECK(count_lines(e.out) == 1);  // row only; header lives in the file
  }
  const std::string csv_text = h.slurp(csv);
  CHECK(csv_text.rfind("SD,EN\n", 0) == 0);
  CHECK(count_lines(csv_text) == 3);

  auto bad = h.run("eval --x " + h.file("x.png") + " --y " + h.file("y.png") +
                   " --fused " + fused + " --metrics SD,Nope");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("Nope") != std::string::npos);
  CHECK(bad.err.find("MS_SSIM") != std::string::npos);  // lists the valid names
}

TEST_CASE("runtime failures exit 1, usage failures exit 2") {
  Harness h;
  img::Image im(16, 16);
  im.pix.setConstant(0.5f);
  img::save_image(im, h.file("im.png"));

  auto nockpt = h.run("fuse --ckpt " + h.file("none.ckpt") + " --x " +
                      h.file("im.png") + " --y " + h.file("im.png") + " --out " +
                      h.file("o.png"));
  CHECK(nockpt.code == 1);
  CHECK(nockpt.err.find("error:") != std::string::npos);

  std::ofstream(h.file("corrupt.ckpt"), std::ios::binary) << "MFNETgarbage";
  auto corrupt = h.run("fuse --ckpt " + h.file("corrupt.ckpt") + " --x " +
                       h.file("im.png") + " --y " + h.file("im.png") + " --out " +
                       h.file("o.png"));
  CHECK(corrupt.code == 1);

  auto noimg = h.run("eval --x " + h.file("im.png") + " --y " + h.file("im.png") +
                     " --fused " + h.file("ghost.png"));
  CHECK(noimg.code == 1);
}

TEST_CASE("config files seed options and explicit flags override them") {
  Harness h;
  {
    std::ofstream f(h.file("train.cfg"));
    f << "# shared experiment settings\n"
      << "crop=16\n"
      << "seed=11\n"
      << "steps=2\n"
      << "batch=1\n"
      << "synth=3\n"
      << "synth-size=32\n";
  }
  const std::string c1 = h.file("from_cfg.ckpt");
  auto r1 = h.run("train --config " + h.file("train.cfg") + " --out " + c1);
  CHECK(r1.code == 0);
  auto ck1 = train::load_checkpoint(c1);
  CHECK(ck1.config_value("crop") == "16");
  CHECK(ck1.config_value("seed") == "11");

  const std::string c2 = h.file("flag_wins.ckpt");
  auto r2 = h.run("train --config " + h.file("train.cfg") + " --crop 32 --out " + c2);
  CHECK(r2.code == 0);
  auto ck2 = train::load_checkpoint(c2);
  CHECK(ck2.config_value("crop") == "32");
}

TEST_CASE("the ablation subcommand writes the grid to the requested sink") {
  Harness h;
  const std::string out = h.file("grid.csv");
  auto r = h.run(
      "ablate --synth 5 --synth-size 32 --crop 32 --batch 1 --steps 2 --seed 3"
      " --axes loss_gate --out " +
      out);
  CHECK(r.code == 0);
  const std::string csv = h.slurp(out);
  CHECK(csv.rfind("fusion_rule,loss_gate,depth,seed,dataset_hash,status,", 0) == 0);
  CHECK(count_lines(csv) == 3);  // header + mean + var
  CHECK(csv.find("mapping,mean,") != std::string::npos);
  CHECK(csv.find("mapping,var,") != std::string::npos);

  auto badaxis = h.run("ablate --synth 4 --synth-size 32 --crop 32 --steps 1"
                       " --axes banana");
  CHECK(badaxis.code == 2);
  CHECK(badaxis.err.find("banana") != std::string::npos);
}

TEST_CASE("gradcheck and selftest report green") {
  Harness h;
  auto g = h.run("gradcheck --only affine --samples 4");
  CHECK(g.code == 0);
  CHECK(g.out.find("PASS affine") != std::string::npos);
  CHECK(g.out.find("FAIL") == std::string::npos);

  auto s = h.run("selftest");
  CHECK(s.code == 0);
  CHECK(s.out.find("FAIL") == std::string::npos);
  CHECK(count_lines(s.out) >= 8);
}
