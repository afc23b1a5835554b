// End-to-end acceptance gate. Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mapfuse/checkpoint.hpp"
#include "mapfuse/dataset.hpp"
#include "mapfuse/gradcheck_suite.hpp"
#include "mapfuse/loss.hpp"
#include "mapfuse/metrics.hpp"
#include "mapfuse/model.hpp"
#include "mapfuse/reference.hpp"
#include "mapfuse/trainer.hpp"

using namespace mapfuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& s) {
    if (detail.empty()) detail = s;
  }
};

img::Image random_image(Eigen::Index h, Eigen::Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  img::Image im(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j)
      im.pix(i, j) = static_cast<float>((rng() >> 11) * 0x1p-53);
  return im;
}

ref::Arr to_arr(const img::Image& im) { return im.pix.cast<double>(); }

nn::Tensor<double> random_features(Eigen::Index c, Eigen::Index h, Eigen::Index w,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto t = nn::Tensor<double>::chw(c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i)
    t.data[i] = -1.0 + 2.0 * ((rng() >> 11) * 0x1p-53);
  return t;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

char fmtbuf[256];
std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  std::snprintf(fmtbuf, sizeof fmtbuf, f, a, b, c);
  return fmtbuf;
}

// --- criterion 1: finite differences across every layer and a full net -----

Outcome criterion_gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double max_rel = 0;
  Eigen::Index entries = 0;
  for (const auto& check : nn::standard_grad_checks()) {
    const auto rep = check.run(1e-4, 6, 0);
    max_rel = std::max(max_rel, rep.max_rel);
    entries += rep.checked;
    o.expect(rep.ok(), check.name + " (" + rep.summary() + ")");
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.expect(secs < 120.0, fmt("suite took %.1fs, budget 120s", secs));
  o.note(fmt("%.0f entries probed, max rel %.2e, %.1fs",
             static_cast<double>(entries), max_rel, secs));
  return o;
}

// --- criterion 2: gated window loss equals the brute-force oracle ----------

Outcome criterion_loss_oracle() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ix = random_image(20, 20, seed * 100 + 1);
    const auto iy = random_image(20, 20, seed * 100 + 2);
    const auto f = random_image(20, 20, seed * 100 + 3);
    const auto ax = to_arr(ix), ay = to_arr(iy), af = to_arr(f);
    for (bool mean_gate : {false, true}) {
      for (int stride : {1, 2, 3}) {
        const auto want = ref::window_loss_ref(ax, ay, af, 11, stride, mean_gate);
        const auto got = loss::eval_window_loss(
            ix, iy, f, mean_gate ? loss::Gate::mean : loss::Gate::variance, {},
            stride);
        worst = std::max(worst, std::abs(got.loss - want.loss));
        o.expect(got.window_count == want.window_count, "window count mismatch");
        o.expect(got.frac_selected_x == want.frac_selected_x,
                 "gate decision mismatch");
      }
    }
  }
  o.expect(worst <= 1e-6, fmt("max |loss - oracle| = %.3g > 1e-6", worst));

  // Equal window statistics must resolve to the second source.
  const auto x = random_image(24, 24, 9);
  const auto f = random_image(24, 24, 10);
  const auto tie = loss::loss_var_ssim(x, x, f);
  o.expect(tie.frac_selected_x == 0.0, "variance tie did not select Y");
  o.note(fmt("max deviation %.3g over 18 gate/stride cases", worst));
  return o;
}

// --- criterion 3: structural identities of the mutual mapping --------------

Outcome criterion_mapping_invariants() {
  Outcome o;

  // Identical inputs give identical maps, bit for bit.
  const auto f = random_features(8, 8, 8, 21);
  nn::Graph<double> g(false);
  const auto maps = net::deep_maps(g, g.constant(f), g.constant(f));
  const double dmap =
      (g.value(maps.x.id).data - g.value(maps.y.id).data).abs().maxCoeff();
  o.expect(dmap == 0.0, fmt("identical-input maps differ by %.3g", dmap));

  // Attention rows are probability distributions.
  const auto fx = random_features(8, 6, 6, 22);
  const auto fy = random_features(8, 6, 6, 23);
  nn::Graph<double> g2(false);
  auto Q = nn::flatten_spatial(g2.constant(fx));
  auto K = nn::flatten_spatial(g2.constant(fy));
  auto P = nn::softmax_rows(
      nn::scale(nn::matmul(Q, nn::transpose(K)), 1.0 / std::sqrt(8.0)));
  const auto& pv = g2.value(P.id);
  double worst_row = 0;
  for (Eigen::Index i = 0; i < pv.dim[0]; ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < pv.dim[1]; ++j) s += pv.data[i * pv.dim[1] + j];
    worst_row = std::max(worst_row, std::abs(s - 1.0));
  }
  o.expect(worst_row <= 1e-6, fmt("attention row sum off by %.3g", worst_row));

  // Unit/zero maps reduce the combination to either branch exactly.
  nn::Graph<double> g3(false);
  auto ones = nn::Tensor<double>::chw(8, 6, 6);
  ones.data.setConstant(1.0);
  auto zeros = nn::Tensor<double>::chw(8, 6, 6);
  auto vx = g3.constant(fx);
  auto vy = g3.constant(fy);
  net::AttentionMaps<double> mx{g3.constant(ones), g3.constant(zeros)};
  net::AttentionMaps<double> my{g3.constant(zeros), g3.constant(ones)};
  const double dx =
      (g3.value(net::fuse_scale(vx, vy, mx).id).data - fx.data).abs().maxCoeff();
  const double dy =
      (g3.value(net::fuse_scale(vx, vy, my).id).data - fy.data).abs().maxCoeff();
  o.expect(dx == 0.0, "unit x-map did not reproduce branch x");
  o.expect(dy == 0.0, "unit y-map did not reproduce branch y");
  o.note(fmt("row-sum error %.2e", worst_row));
  return o;
}

// --- criterion 4: the metric suite equals its oracles -----------------------

Outcome criterion_metrics() {
  Outcome o;
  double worst = 0, worst_vif = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto x = random_image(16, 16, 7000 + 3 * seed);
    const auto y = random_image(16, 16, 7001 + 3 * seed);
    const auto f = random_image(16, 16, 7002 + 3 * seed);
    const auto ax = to_arr(x), ay = to_arr(y), af = to_arr(f);
    const auto rep = metrics::evaluate_all(x, y, f, metrics::all_metric_names());
    const double want[10] = {
        ref::ei_ref(af),           ref::ce_ref(ax, ay, af),
        ref::sf_ref(af),           ref::en_ref(af),
        ref::qabf_ref(ax, ay, af), ref::ms_ssim_ref(ax, ay, af),
        ref::sd_ref(af),           ref::vif_ref(ax, ay, af),
        ref::scd_ref(ax, ay, af),  ref::mi_ref(ax, ay, af)};
    for (int m = 0; m < 10; ++m) {
      const double err = std::abs(rep.values[m].second - want[m]);
      if (rep.values[m].first == "VIF")
        worst_vif = std::max(worst_vif, err);
      else
        worst = std::max(worst, err);
    }
  }
  o.expect(worst <= 1e-6, fmt("metric deviation %.3g > 1e-6", worst));
  o.expect(worst_vif <= 1e-4, fmt("VIF deviation %.3g > 1e-4", worst_vif));

  img::Image uniform(16, 16), half(16, 16), stripes(16, 16);
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 16; ++j) {
      uniform.pix(i, j) = (static_cast<float>(i * 16 + j) + 0.5f) / 256.0f;
      half.pix(i, j) = (i < 8) ? 0.0f : 1.0f;
      stripes.pix(i, j) = (j % 2) ? 1.0f : 0.0f;
    }
  o.expect(std::abs(metrics::metric_en(uniform) - 8.0) <= 1e-9,
           "entropy of the 256-level ramp is not 8");
  o.expect(std::abs(metrics::metric_sd(half) - 127.5) <= 1e-9,
           "deviation of the half/half image is not 127.5");
  o.expect(std::abs(metrics::metric_sf(stripes) - 255.0) <= 1e-9,
           "frequency of unit stripes is not 255");
  const auto s = random_image(11, 11, 99);
  const Eigen::ArrayXXd sa = s.pix.cast<double>();
  o.expect(std::abs(loss::ssim_window(sa, sa) - 1.0) <= 1e-9,
           "self-SSIM is not 1");
  o.note(fmt("max dev %.2e (VIF %.2e) over 50 triples", worst, worst_vif));
  return o;
}

// --- criterion 5: the training loop actually learns ------------------------

Outcome criterion_training_sanity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();

  const auto ds = img::make_identical_texture_pairs(32, 64, 42);
  train::TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.crop = 64;
  cfg.batch_size = 4;
  cfg.max_steps = 300;
  cfg.seed = 42;
  const auto res = train::train(ds, cfg);
  o.expect(!res.aborted, "training aborted: " + res.abort_reason);
  if (!res.log.steps.empty()) {
    const double first = res.log.steps.front().loss;
    const double last = res.log.steps.back().loss;
    o.expect(last < 0.5 * first,
             fmt("loss %.4f -> %.4f did not halve", first, last));

    const auto holdout = img::make_identical_texture_pairs(1, 64, 777);
    const auto& pair = holdout.pairs[0];
    const auto fused = train::infer_fuse(res.checkpoint, pair.x, pair.y);
    const double ssim = 1.0 - loss::loss_var_ssim(pair.x, pair.x, fused).loss;
    o.expect(ssim > 0.7, fmt("held-out SSIM %.4f <= 0.7", ssim));

    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    o.expect(secs < 900.0, fmt("sanity run took %.0fs, budget 900s", secs));
    o.note(fmt("loss %.4f -> %.4f, held-out SSIM %.4f", first, last, ssim) +
           fmt(", %.0fs", secs));
  }
  return o;
}

// --- criterion 6: determinism and checkpoint integrity ----------------------

Outcome criterion_determinism() {
  Outcome o;
  const fs::path dir =
      fs::temp_directory_path() /
      ("mapfuse_acc_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  const auto file = [&](const char* n) { return (dir / n).string(); };

  const auto ds = img::make_synthetic_pairs(6, 32, 1);
  train::TrainConfig cfg;
  cfg.crop = 32;
  cfg.batch_size = 2;
  cfg.max_steps = 10;
  cfg.seed = 7;

  const auto r1 = train::train(ds, cfg);
  const auto r2 = train::train(ds, cfg);
  o.expect(r1.log.to_csv() == r2.log.to_csv(), "same-seed logs differ");

  train::save_checkpoint(r1.checkpoint, file("a.ckpt"));
  train::save_checkpoint(r2.checkpoint, file("b.ckpt"));
  const auto bytes = read_bytes(file("a.ckpt"));
  o.expect(bytes == read_bytes(file("b.ckpt")), "same-seed checkpoints differ");

  const auto loaded = train::load_checkpoint(file("a.ckpt"));
  train::save_checkpoint(loaded, file("c.ckpt"));
  o.expect(bytes == read_bytes(file("c.ckpt")),
           "save/load/save is not byte-identical");

  int rejected = 0;
  auto expect_integrity = [&](const std::string& mutated) {
    write_bytes(file("bad.ckpt"), mutated);
    try {
      train::load_checkpoint(file("bad.ckpt"));
    } catch (const IntegrityError&) {
      ++rejected;
    } catch (...) {
    }
  };
  auto flipped = bytes;
  flipped[0] = 'X';
  expect_integrity(flipped);
  expect_integrity(bytes.substr(0, bytes.size() / 2));
  expect_integrity(bytes + "tail");
  o.expect(rejected == 3, "a corrupt checkpoint was not rejected");

  std::error_code ec;
  fs::remove_all(dir, ec);
  o.note("10-step logs, checkpoints and reload all bit-stable");
  return o;
}

// --- criterion 7: the ablation grid runs and stays finite -------------------

Outcome criterion_ablation() {
  Outcome o;
  const auto ds = img::make_synthetic_pairs(5, 32, 7);
  train::TrainConfig base;
  base.crop = 32;
  base.batch_size = 1;
  base.max_steps = 4;
  base.seed = 3;

  train::AblateOptions opts;
  opts.axes = {"fusion_rule", "loss_gate"};
  const std::string csv = train::ablate_csv(ds, base, opts);

  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  o.expect(line ==
               "fusion_rule,loss_gate,depth,seed,dataset_hash,status,final_loss,"
               "EI,CE,SF,EN,Qabf,MS_SSIM,SD,VIF,SCD,MI",
           "unexpected CSV header");
  int rows = 0, ok_rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++rows;
    std::vector<std::string> fields;
    std::string cell;
    std::istringstream rs(line);
    while (std::getline(rs, cell, ',')) fields.push_back(cell);
    o.expect(fields.size() == 17, "row does not have 17 fields: " + line);
    if (fields.size() >= 6 && fields[5] == "ok") ++ok_rows;
  }
  o.expect(rows == 6, fmt("expected 6 grid rows, got %g", rows));
  o.expect(ok_rows == 6, fmt("only %g of 6 runs succeeded", ok_rows));

  // The mapping rule must hold a finite loss at every step, under both gates.
  for (const char* gate : {"var", "mean"}) {
    auto cfg = base;
    cfg.fusion_rule = "mapping";
    cfg.loss_gate = gate;
    const auto res = train::train(ds, cfg);
    o.expect(!res.aborted, std::string("mapping/") + gate + " aborted");
    for (const auto& s : res.log.steps)
      o.expect(std::isfinite(s.loss),
               std::string("non-finite loss under mapping/") + gate);
  }
  o.note("6/6 grid rows ok; mapping losses finite under both gates");
  return o;
}

// --- criterion 8: the gates make the intended decisions ---------------------

Outcome criterion_gate_behavior() {
  Outcome o;

  img::Image tex(32, 32), flat(32, 32);
  for (Eigen::Index i = 0; i < 32; ++i)
    for (Eigen::Index j = 0; j < 32; ++j)
      tex.pix(i, j) = ((i + j) % 2) ? 0.85f : 0.15f;  // mean 0.5, high variance
  flat.pix.setConstant(0.3f);

  // Variance gate: the textured source wins every window of every step.
  img::PairDataset ds;
  ds.crop_size = 32;
  for (int i = 0; i < 4; ++i)
    ds.pairs.push_back({tex, flat, "p" + std::to_string(i)});
  train::TrainConfig cfg;
  cfg.crop = 32;
  cfg.batch_size = 2;
  cfg.max_steps = 5;
  const auto res = train::train(ds, cfg);
  o.expect(!res.aborted, "training aborted");
  o.expect(res.log.steps.size() == 5, "missing step records");
  for (const auto& s : res.log.steps)
    o.expect(s.frac_selected_x == 1.0,
             fmt("step frac_selected_x %.3f != 1.0", s.frac_selected_x));

  // Brightening Y flips every mean-gate decision and no variance-gate one.
  img::Image bright(32, 32);
  bright.pix.setConstant(0.7f);
  const auto f = random_image(32, 32, 55);
  const double var_lo = loss::loss_var_ssim(tex, flat, f).frac_selected_x;
  const double var_hi = loss::loss_var_ssim(tex, bright, f).frac_selected_x;
  const double mean_lo = loss::loss_mean_ssim(tex, flat, f).frac_selected_x;
  const double mean_hi = loss::loss_mean_ssim(tex, bright, f).frac_selected_x;
  o.expect(var_lo == 1.0 && var_hi == 1.0, "variance gate reacted to brightness");
  o.expect(mean_lo == 1.0, "mean gate ignored the brighter X");
  o.expect(mean_hi == 0.0, "mean gate ignored the brighter Y");
  o.note(fmt("var frac %g/%g, mean frac %g", var_lo, var_hi, mean_lo) +
         fmt("->%g after +0.4 on Y", mean_hi));
  return o;
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> criteria = {
      {"gradient checks across every layer and a full network",
       criterion_gradients},
      {"gated window loss matches the brute-force oracle", criterion_loss_oracle},
      {"mutual-mapping structural invariants", criterion_mapping_invariants},
      {"metric suite matches its oracles and closed forms", criterion_metrics},
      {"unsupervised training halves the loss and reconstructs",
       criterion_training_sanity},
      {"bit-exact determinism and checkpoint integrity", criterion_determinism},
      {"ablation grid is well-formed and mapping stays finite",
       criterion_ablation},
      {"variance/mean gates decide as constructed", criterion_gate_behavior},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.ok) ++failures;
    std::printf("%s  criterion %zu: %s%s%s\n", o.ok ? "PASS" : "FAIL", i + 1,
                criteria[i].name, o.detail.empty() ? "" : " -- ",
                o.detail.c_str());
    std::fflush(stdout);
  }
  if (failures)
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  else
    std::printf("all %zu criteria passed\n", criteria.size());
  return failures == 0 ? 0 : 1;
}
