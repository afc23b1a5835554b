#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mapfuse/checkpoint.hpp"
#include "mapfuse/model.hpp"
#include "mapfuse/reference.hpp"
#include "mapfuse/trainer.hpp"

using namespace mapfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mapfuse_trn_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

train::TrainConfig tiny_config() {
  train::TrainConfig cfg;
  cfg.crop = 32;
  cfg.batch_size = 2;
  cfg.max_steps = 6;
  cfg.seed = 9;
  return cfg;
}

img::Image constant_image(Eigen::Index n, float v) {
  img::Image im(n, n);
  im.pix.setConstant(v);
  return im;
}

img::Image checkerboard(Eigen::Index n, float lo, float hi) {
  img::Image im(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) im.pix(i, j) = ((i + j) % 2) ? hi : lo;
  return im;
}

}  // namespace

TEST_CASE("adam matches the closed-form scalar reference") {
  std::vector<double> w0 = {0.3, -1.2, 0.01};

  nn::NetworkParams<double> P;
  auto t = nn::Tensor<double>::vec(3);
  for (int i = 0; i < 3; ++i) t.data[i] = w0[static_cast<std::size_t>(i)];
  P.add("w", t);
  train::AdamState<double> opt(P);

  std::vector<std::vector<double>> grads(3);
  std::mt19937_64 grng(4);
  const double lr = 0.05;
  for (int step = 0; step < 10; ++step) {
    P.zero_grads();
    for (int i = 0; i < 3; ++i) {
      const double g = -1.0 + 2.0 * ((grng() >> 11) * 0x1p-53);
      grads[static_cast<std::size_t>(i)].push_back(g);
      P.at("w").grad.data[i] = g;
    }
    opt.step(P, lr);
  }
  for (int i = 0; i < 3; ++i) {
    const double want = ref::adam_scalar_ref(w0[static_cast<std::size_t>(i)],
                                             grads[static_cast<std::size_t>(i)], lr);
    CHECK(P.at("w").value.data[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("config validation pins down every field") {
  auto ok = tiny_config();
  CHECK_NOTHROW(train::validate_train_config(ok));

  auto bad = ok;
  bad.learning_rate = -1e-4;
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.learning_rate = 0.0;  // a null update is a valid (if pointless) run
  CHECK_NOTHROW(train::validate_train_config(bad));
  bad = ok;
  bad.epochs = 0;
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.max_steps = -1;
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.window_stride = 0;
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.crop = 8;
  CHECK_THROWS_WITH_AS(train::validate_train_config(bad),
                       doctest::Contains("11x11"), ConfigError);
  bad = ok;
  bad.crop = 34;  // not divisible by 2^(depth-1)
  CHECK_THROWS_WITH_AS(train::validate_train_config(bad),
                       doctest::Contains("divisible"), ConfigError);
  bad = ok;
  bad.depth = 2;
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.fusion_rule = "avg";
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
  bad = ok;
  bad.loss_gate = "median";
  CHECK_THROWS_AS(train::validate_train_config(bad), ConfigError);
}

TEST_CASE("config echo round trips through the parser") {
  auto cfg = tiny_config();
  cfg.learning_rate = 2.5e-4;
  cfg.fusion_rule = "concat";
  const std::string echo = train::config_echo(cfg);
  auto kv = train::parse_config_echo(echo);
  CHECK(kv.at("lr") == "0.00025");
  CHECK(kv.at("epochs") == "4");
  CHECK(kv.at("batch") == "2");
  CHECK(kv.at("crop") == "32");
  CHECK(kv.at("seed") == "9");
  CHECK(kv.at("fusion_rule") == "concat");
  CHECK(kv.at("loss_gate") == "var");
  CHECK(kv.at("depth") == "3");
  CHECK(kv.at("stride") == "1");
  CHECK(kv.at("max_steps") == "6");

  train::Checkpoint ck;
  ck.config_echo = echo;
  CHECK(ck.config_value("crop") == "32");
  CHECK(ck.config_value("absent") == "");
  CHECK(ck.depth() == 3);

  train::Checkpoint no_depth;
  no_depth.config_echo = "lr=1\n";
  CHECK_THROWS_AS(no_depth.depth(), CompatError);
}

TEST_CASE("training is bit-deterministic in logs and checkpoints") {
  TempDir tmp;
  auto ds = img::make_synthetic_pairs(6, 32, 1);
  const auto cfg = tiny_config();

  auto r1 = train::train(ds, cfg);
  auto r2 = train::train(ds, cfg);
  CHECK(!r1.aborted);
  CHECK(r1.log.steps.size() == 6);
  CHECK(r1.log.to_csv() == r2.log.to_csv());
  CHECK(!r1.log.epoch_mean_loss.empty());

  const auto a = tmp.file("a.ckpt");
  const auto b = tmp.file("b.ckpt");
  train::save_checkpoint(r1.checkpoint, a);
  train::save_checkpoint(r2.checkpoint, b);
  CHECK(read_bytes(a) == read_bytes(b));

  // Different seed, different trajectory.
  auto cfg2 = cfg;
  cfg2.seed = 10;
  auto r3 = train::train(ds, cfg2);
  CHECK(r1.log.to_csv() != r3.log.to_csv());

  // The log is a well-formed three-column CSV.
  std::istringstream csv(r1.log.to_csv());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,loss,frac_x");
  int rows = 0;
  while (std::getline(csv, line)) {
    int step;
    double loss, frac;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &step, &loss, &frac) == 3);
    CHECK(step == rows);
    CHECK(std::isfinite(loss));
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("a zero learning rate leaves the initial parameters untouched") {
  auto ds = img::make_synthetic_pairs(4, 32, 2);
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  cfg.max_steps = 3;
  auto res = train::train(ds, cfg);
  CHECK(!res.aborted);

  std::mt19937_64 rng(cfg.seed);
  auto init = net::build_params<float>(cfg.depth, rng);
  REQUIRE(res.checkpoint.params.size() == init.size());
  for (std::size_t i = 0; i < init.size(); ++i) {
    CHECK(res.checkpoint.params[i].name == init[i].name);
    CHECK((res.checkpoint.params[i].value.data - init[i].value.data)
              .abs()
              .maxCoeff() == 0.0f);
  }
}

TEST_CASE("checkpoints survive a save/load/save round trip byte for byte") {
  TempDir tmp;
  auto ds = img::make_synthetic_pairs(4, 32, 3);
  auto cfg = tiny_config();
  cfg.max_steps = 2;
  auto res = train::train(ds, cfg);

  const auto p1 = tmp.file("one.ckpt");
  const auto p2 = tmp.file("two.ckpt");
  train::save_checkpoint(res.checkpoint, p1);
  auto loaded = train::load_checkpoint(p1);
  train::save_checkpoint(loaded, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));

  CHECK(loaded.config_echo == res.checkpoint.config_echo);
  REQUIRE(loaded.params.size() == res.checkpoint.params.size());
  for (std::size_t i = 0; i < loaded.params.size(); ++i)
    CHECK((loaded.params[i].value.data - res.checkpoint.params[i].value.data)
              .abs()
              .maxCoeff() == 0.0f);
}

TEST_CASE("corrupt checkpoints are rejected with precise integrity errors") {
  TempDir tmp;
  auto ds = img::make_synthetic_pairs(4, 32, 4);
  auto cfg = tiny_config();
  cfg.max_steps = 1;
  auto res = train::train(ds, cfg);
  const auto good = tmp.file("good.ckpt");
  train::save_checkpoint(res.checkpoint, good);
  const std::string bytes = read_bytes(good);

  const auto bad = tmp.file("bad.ckpt");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(train::load_checkpoint(tmp.file("nope.ckpt")), IoError);
  }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    write_bytes(bad, b);
    CHECK_THROWS_WITH_AS(train::load_checkpoint(bad), doctest::Contains("magic"),
                         IntegrityError);
  }
  SUBCASE("unsupported version") {
    auto b = bytes;
    b[5] = 0x7f;
    write_bytes(bad, b);
    CHECK_THROWS_WITH_AS(train::load_checkpoint(bad),
                         doctest::Contains("version"), IntegrityError);
  }
  SUBCASE("truncation at every interesting boundary") {
    for (std::size_t keep :
         {std::size_t(3), std::size_t(9), bytes.size() / 2, bytes.size() - 1}) {
      write_bytes(bad, bytes.substr(0, keep));
      CHECK_THROWS_WITH_AS(train::load_checkpoint(bad),
                           doctest::Contains("truncated"), IntegrityError);
    }
  }
  SUBCASE("trailing garbage") {
    write_bytes(bad, bytes + "junk");
    CHECK_THROWS_WITH_AS(train::load_checkpoint(bad),
                         doctest::Contains("trailing"), IntegrityError);
  }
  SUBCASE("duplicate tensor name") {
    // Rewrite the second tensor's name ("enc_x.stem.b") to collide with the
    // first ("enc_x.stem.w"): same length, so offsets stay valid.
    auto b = bytes;
    const auto pos = b.find("enc_x.stem.b");
    REQUIRE(pos != std::string::npos);
    b[pos + 11] = 'w';
    write_bytes(bad, b);
    CHECK_THROWS_WITH_AS(train::load_checkpoint(bad),
                         doctest::Contains("duplicate"), IntegrityError);
  }
}

TEST_CASE("checkpoints incompatible with their declared depth are refused") {
  TempDir tmp;
  std::mt19937_64 rng(5);
  train::Checkpoint ck;
  ck.params = net::build_params<float>(3, rng);

  auto cfg = tiny_config();
  cfg.depth = 4;  // echo promises depth 4, tensors are depth 3
  ck.config_echo = train::config_echo(cfg);
  const auto path = tmp.file("mismatch.ckpt");
  train::save_checkpoint(ck, path);
  CHECK_THROWS_WITH_AS(train::load_checkpoint(path), doctest::Contains("missing"),
                       CompatError);

  // Extra tensors are named in the complaint too.
  train::Checkpoint extra;
  std::mt19937_64 rng2(6);
  extra.params = net::build_params<float>(3, rng2);
  extra.params.add("stray", nn::Tensor<float>::vec(2));
  auto cfg3 = tiny_config();
  extra.config_echo = train::config_echo(cfg3);
  const auto path2 = tmp.file("extra.ckpt");
  train::save_checkpoint(extra, path2);
  CHECK_THROWS_WITH_AS(train::load_checkpoint(path2),
                       doctest::Contains("unexpected"), CompatError);

  // A wrong shape is reported with both shapes.
  train::Checkpoint shp;
  std::mt19937_64 rng3(7);
  shp.params = net::build_params<float>(3, rng3);
  shp.params.at("dec.out.b").value = nn::Tensor<float>::vec(2);
  shp.config_echo = train::config_echo(cfg3);
  const auto path3 = tmp.file("shape.ckpt");
  train::save_checkpoint(shp, path3);
  CHECK_THROWS_WITH_AS(train::load_checkpoint(path3), doctest::Contains("shape"),
                       CompatError);
}

TEST_CASE("a diverged run aborts before corrupting the parameters") {
  auto ds = img::make_synthetic_pairs(4, 32, 5);
  auto cfg = tiny_config();
  cfg.learning_rate = 1e30;  // one update overflows the attention logits
  cfg.max_steps = 5;
  auto res = train::train(ds, cfg);
  CHECK(res.aborted);
  CHECK(res.abort_step == 1);
  CHECK(res.abort_reason == "non-finite loss at step 1");
  CHECK(res.log.steps.size() == 1);  // only the finite step was logged
  for (const auto& p : res.checkpoint.params)
    CHECK(p.value.data.isFinite().all());
}

TEST_CASE("inference preserves input dimensions and is repeatable") {
  auto ds = img::make_synthetic_pairs(4, 32, 6);
  auto cfg = tiny_config();
  cfg.max_steps = 2;
  cfg.fusion_rule = "add";
  auto res = train::train(ds, cfg);

  std::mt19937_64 rng(8);
  img::Image ix(37, 45), iy(37, 45);
  for (Eigen::Index i = 0; i < 37; ++i)
    for (Eigen::Index j = 0; j < 45; ++j) {
      ix.pix(i, j) = static_cast<float>((rng() >> 11) * 0x1p-53);
      iy.pix(i, j) = static_cast<float>((rng() >> 11) * 0x1p-53);
    }
  auto fused = train::infer_fuse(res.checkpoint, ix, iy);
  CHECK(fused.height() == 37);
  CHECK(fused.width() == 45);
  auto again = train::infer_fuse(res.checkpoint, ix, iy);
  CHECK((fused.pix - again.pix).abs().maxCoeff() == 0.0f);

  // Odd sizes well away from the pyramid multiple still round trip.
  img::Image bx(255, 257), by(255, 257);
  bx.pix.setConstant(0.25f);
  by.pix.setConstant(0.75f);
  auto big = train::infer_fuse(res.checkpoint, bx, by);
  CHECK(big.height() == 255);
  CHECK(big.width() == 257);

  img::Image other(30, 45);
  CHECK_THROWS_AS(train::infer_fuse(res.checkpoint, ix, other), ShapeError);
}

TEST_CASE("the variance gate locks onto the textured source every step") {
  img::PairDataset ds;
  ds.crop_size = 32;
  for (int i = 0; i < 4; ++i)
    ds.pairs.push_back(
        {checkerboard(32, 0.15f, 0.85f), constant_image(32, 0.3f),
         "p" + std::to_string(i)});
  auto cfg = tiny_config();
  cfg.max_steps = 3;
  auto res = train::train(ds, cfg);
  CHECK(!res.aborted);
  for (const auto& s : res.log.steps) CHECK(s.frac_selected_x == 1.0);
}

TEST_CASE("ablation grids emit one well-formed row per configuration") {
  auto ds = img::make_synthetic_pairs(5, 32, 7);
  auto base = tiny_config();
  base.max_steps = 2;
  base.batch_size = 1;

  train::AblateOptions opts;
  opts.axes = {"fusion_rule", "loss_gate"};
  const std::string csv = train::ablate_csv(ds, base, opts);

  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line ==
        "fusion_rule,loss_gate,depth,seed,dataset_hash,status,final_loss,"
        "EI,CE,SF,EN,Qabf,MS_SSIM,SD,VIF,SCD,MI");
  std::vector<std::string> rows;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(line);
  REQUIRE(rows.size() == 6);

  std::string seed_col, hash_col;
  for (const auto& r : rows) {
    std::vector<std::string> fields;
    std::string cell;
    std::istringstream rs(r);
    while (std::getline(rs, cell, ',')) fields.push_back(cell);
    REQUIRE(fields.size() == 17);
    CHECK(fields[5] == "ok");
    if (seed_col.empty()) {
      seed_col = fields[3];
      hash_col = fields[4];
    }
    CHECK(fields[3] == seed_col);
    CHECK(fields[4] == hash_col);
    for (std::size_t i = 6; i < fields.size(); ++i)
      CHECK(std::isfinite(std::stod(fields[i])));
  }
  // Cartesian order: rules x gates.
  CHECK(rows[0].rfind("add,mean,", 0) == 0);
  CHECK(rows[1].rfind("add,var,", 0) == 0);
  CHECK(rows[5].rfind("mapping,var,", 0) == 0);

  train::AblateOptions badopts;
  badopts.axes = {"window"};
  CHECK_THROWS_WITH_AS(train::ablate_csv(ds, base, badopts),
                       doctest::Contains("window"), ConfigError);
}

TEST_CASE("one invalid configuration fails its row and spares the rest") {
  auto ds = img::make_synthetic_pairs(5, 48, 8);
  auto base = tiny_config();
  base.crop = 24;  // divisible by 4 and 8, but not by 16: depth 5 must fail
  base.max_steps = 1;
  base.batch_size = 1;

  train::AblateOptions opts;
  opts.axes = {"depth"};
  const std::string csv = train::ablate_csv(ds, base, opts);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::string> rows;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].find(",ok,") != std::string::npos);
  CHECK(rows[1].find(",ok,") != std::string::npos);
  CHECK(rows[2].find("failed: ") != std::string::npos);
  CHECK(rows[2].find("divisible") != std::string::npos);
  CHECK(rows[2].find("nan") != std::string::npos);
  // Failure text must not smuggle in extra separators.
  std::vector<std::string> fields;
  std::string cell;
  std::istringstream rs(rows[2]);
  while (std::getline(rs, cell, ',')) fields.push_back(cell);
  CHECK(fields.size() == 17);
}
