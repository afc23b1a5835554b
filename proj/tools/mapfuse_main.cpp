#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mapfuse/checkpoint.hpp"
#include "mapfuse/dataset.hpp"
#include "mapfuse/gradcheck_suite.hpp"
#include "mapfuse/image_io.hpp"
#include "mapfuse/loss.hpp"
#include "mapfuse/metrics.hpp"
#include "mapfuse/reference.hpp"
#include "mapfuse/trainer.hpp"

namespace {

using namespace mapfuse;

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// CLI11 only applies config files registered on the root command, so each
// subcommand takes --config as a plain option and the file is merged here:
// every key=value line fills the matching long option unless the command
// line already set it.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    auto* opt = key == "config" ? nullptr : cmd->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": unknown option '" + key + "'");
    if (opt->count() > 0) continue;  // explicit flags win
    opt->add_result(trim(line.substr(eq + 1)));
    opt->run_callback();
  }
}

struct DataOpts {
  std::string dir;
  int synth = 0;
  int synth_size = 128;
};

void add_data_opts(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--data", d.dir,
                  "dataset directory holding x/ and y/ image subdirectories");
  cmd->add_option("--synth", d.synth,
                  "train on N generated synthetic pairs instead of --data");
  cmd->add_option("--synth-size", d.synth_size, "generated pair image size")
      ->capture_default_str();
}

img::PairDataset load_data(const DataOpts& d, int crop, std::uint64_t seed) {
  if (!d.dir.empty() && d.synth > 0)
    throw ConfigError("--data and --synth are mutually exclusive");
  if (!d.dir.empty())
    return img::load_pair_dataset(d.dir + "/x", d.dir + "/y", crop);
  if (d.synth > 0)
    return img::make_synthetic_pairs(static_cast<std::size_t>(d.synth),
                                     d.synth_size, seed);
  throw ConfigError("no input data: pass --data DIR or --synth N");
}

void add_train_opts(CLI::App* cmd, train::TrainConfig& cfg) {
  cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate")
      ->capture_default_str();
  cmd->add_option("--batch", cfg.batch_size, "crops per step")->capture_default_str();
  cmd->add_option("--crop", cfg.crop, "square crop size")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "seed for init and sampling")
      ->capture_default_str();
  cmd->add_option("--fusion", cfg.fusion_rule, "fusion rule: add|concat|mapping")
      ->capture_default_str();
  cmd->add_option("--loss-gate", cfg.loss_gate, "window gate: var|mean")
      ->capture_default_str();
  cmd->add_option("--depth", cfg.depth, "pyramid scales (3-5)")->capture_default_str();
  cmd->add_option("--stride", cfg.window_stride, "loss window stride")
      ->capture_default_str();
  cmd->add_option("--steps", cfg.max_steps, "cap on total steps (0 = run epochs)")
      ->capture_default_str();
}

int run_train(const DataOpts& data, const train::TrainConfig& cfg,
              const std::string& out, const std::string& log_path) {
  train::validate_train_config(cfg);
  const auto ds = load_data(data, cfg.crop, cfg.seed);
  std::cerr << "training on " << ds.pairs.size() << " pairs (seed=" << cfg.seed
            << ", rule=" << cfg.fusion_rule << ", gate=" << cfg.loss_gate
            << ", depth=" << cfg.depth << ")\n";
  const auto res = train::train(ds, cfg);
  for (std::size_t e = 0; e < res.log.epoch_mean_loss.size(); ++e)
    std::cerr << "epoch " << e << " mean loss " << fmt6(res.log.epoch_mean_loss[e])
              << '\n';
  train::save_checkpoint(res.checkpoint, out);
  std::cerr << "checkpoint written to " << out << '\n';
  if (log_path.empty()) {
    std::cout << res.log.to_csv();
  } else {
    std::ofstream f(log_path, std::ios::trunc);
    if (!f) throw IoError("cannot open log for writing: " + log_path);
    f << res.log.to_csv();
  }
  if (res.aborted) {
    std::cerr << "training aborted: " << res.abort_reason
              << " (last-good checkpoint saved)\n";
    return 1;
  }
  return 0;
}

int run_fuse(const std::string& ckpt_path, const std::string& x_path,
             const std::string& y_path, const std::string& out_path) {
  const auto ckpt = train::load_checkpoint(ckpt_path);
  const auto ix = img::load_image(x_path);
  const auto iy = img::load_image(y_path);
  const auto fused = train::infer_fuse(ckpt, ix, iy);
  img::save_image(fused, out_path);
  std::cerr << "EN=" << fmt6(metrics::metric_en(fused))
            << " SD=" << fmt6(metrics::metric_sd(fused))
            << " SF=" << fmt6(metrics::metric_sf(fused)) << '\n';
  return 0;
}

int run_eval(const std::string& x_path, const std::string& y_path,
             const std::string& fused_path, const std::string& metric_list,
             const std::string& csv_path) {
  const auto ix = img::load_image(x_path);
  const auto iy = img::load_image(y_path);
  const auto iff = img::load_image(fused_path);
  const std::vector<std::string> names =
      metric_list.empty() ? metrics::default_metric_names()
                          : split_list(metric_list);
  const auto rep = metrics::evaluate_all(ix, iy, iff, names);

  std::string header, row;
  for (std::size_t i = 0; i < rep.values.size(); ++i) {
    if (i) {
      header += ',';
      row += ',';
    }
    header += rep.values[i].first;
    row += fmt6(rep.values[i].second);
  }
  if (csv_path.empty()) {
    std::cout << header << '\n' << row << '\n';
  } else {
    const bool fresh = !std::filesystem::exists(csv_path);
    std::ofstream f(csv_path, std::ios::app);
    if (!f) throw IoError("cannot open csv for append: " + csv_path);
    if (fresh) f << header << '\n';
    f << row << '\n';
    std::cout << row << '\n';
  }
  return 0;
}

int run_ablate(const DataOpts& data, const train::TrainConfig& cfg,
               const std::string& axes_list, int jobs,
               const std::string& out_path) {
  train::AblateOptions opts;
  opts.axes = split_list(axes_list);
  opts.jobs = jobs;
  const auto ds = load_data(data, cfg.crop, cfg.seed);
  const std::string csv = train::ablate_csv(ds, cfg, opts);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw IoError("cannot open csv for writing: " + out_path);
    f << csv;
    std::cerr << "ablation table written to " << out_path << '\n';
  }
  return 0;
}

int run_gradcheck(double tolerance, int samples, std::uint64_t seed,
                  const std::string& only) {
  int failures = 0;
  for (const auto& check : nn::standard_grad_checks()) {
    if (!only.empty() && check.name.find(only) == std::string::npos) continue;
    const auto rep = check.run(tolerance, samples, seed);
    std::printf("%s %s: %s\n", rep.ok() ? "PASS" : "FAIL", check.name.c_str(),
                rep.summary().c_str());
    if (!rep.ok()) {
      ++failures;
      for (const auto& row : rep.rows)
        if (!row.ok)
          std::fprintf(stderr, "  %s[%ld] analytic=%.9g numeric=%.9g rel=%.3g\n",
                       row.tensor.c_str(), static_cast<long>(row.index),
                       row.analytic, row.numeric, row.rel);
    }
  }
  return failures == 0 ? 0 : 1;
}

// Quick reference-vs-implementation sweep: random triples through every
// metric and both loss gates, plus a handful of closed-form identities.
int run_selftest() {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, double err) {
    std::printf("%s %s (max err %.3g)\n", ok ? "PASS" : "FAIL", name.c_str(), err);
    if (!ok) ++failures;
  };

  std::mt19937_64 rng(20240817);
  auto unit = [&]() { return (rng() >> 11) * 0x1p-53; };
  auto rand_img = [&](Eigen::Index h, Eigen::Index w) {
    img::Image im;
    im.pix.resize(h, w);
    for (Eigen::Index i = 0; i < h; ++i)
      for (Eigen::Index j = 0; j < w; ++j) im.pix(i, j) = float(unit());
    return im;
  };
  auto to_arr = [](const img::Image& im) { return ref::Arr(im.pix.cast<double>()); };

  double worst_metric = 0, worst_vif = 0, worst_loss = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index h = 12 + static_cast<Eigen::Index>(rng() % 5);
    const Eigen::Index w = 12 + static_cast<Eigen::Index>(rng() % 5);
    const auto ix = rand_img(h, w), iy = rand_img(h, w), iff = rand_img(h, w);
    const auto ax = to_arr(ix), ay = to_arr(iy), af = to_arr(iff);
    const auto rep = metrics::evaluate_all(ix, iy, iff, metrics::all_metric_names());
    const double want[10] = {
        ref::ei_ref(af),           ref::ce_ref(ax, ay, af),
        ref::sf_ref(af),           ref::en_ref(af),
        ref::qabf_ref(ax, ay, af), ref::ms_ssim_ref(ax, ay, af),
        ref::sd_ref(af),           ref::vif_ref(ax, ay, af),
        ref::scd_ref(ax, ay, af),  ref::mi_ref(ax, ay, af)};
    for (int m = 0; m < 10; ++m) {
      const double err = std::abs(rep.values[m].second - want[m]);
      double& slot = rep.values[m].first == "VIF" ? worst_vif : worst_metric;
      slot = std::max(slot, err);
    }
    for (const int stride : {1, 3}) {
      const auto got_v = loss::loss_var_ssim(ix, iy, iff, {}, stride);
      const auto ref_v = ref::window_loss_ref(ax, ay, af, 11, stride, false);
      const auto got_m = loss::loss_mean_ssim(ix, iy, iff, {}, stride);
      const auto ref_m = ref::window_loss_ref(ax, ay, af, 11, stride, true);
      worst_loss = std::max(
          {worst_loss, std::abs(got_v.loss - ref_v.loss),
           std::abs(got_m.loss - ref_m.loss),
           std::abs(got_v.frac_selected_x - ref_v.frac_selected_x),
           std::abs(got_m.frac_selected_x - ref_m.frac_selected_x)});
    }
  }
  report("metrics vs naive references (10 random triples)", worst_metric < 1e-6,
         worst_metric);
  report("vif vs naive reference", worst_vif < 1e-4, worst_vif);
  report("gated window loss vs brute-force reference", worst_loss < 1e-6,
         worst_loss);

  // Closed forms.
  img::Image uni;
  uni.pix.resize(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) uni.pix(i, j) = float((i * 16 + j + 0.5) / 256.0);
  const double en = metrics::metric_en(uni);
  report("entropy of a uniform 256-level image == 8", std::abs(en - 8.0) < 1e-12,
         std::abs(en - 8.0));

  img::Image half;
  half.pix.resize(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) half.pix(i, j) = i < 8 ? 0.0f : 1.0f;
  const double sd = metrics::metric_sd(half);
  report("standard deviation of a half/half image == 127.5",
         std::abs(sd - 127.5) < 1e-12, std::abs(sd - 127.5));

  img::Image stripes;
  stripes.pix.resize(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) stripes.pix(i, j) = float(j % 2);
  const double sf = metrics::metric_sf(stripes);
  report("spatial frequency of unit stripes == 255", std::abs(sf - 255.0) < 1e-9,
         std::abs(sf - 255.0));

  const auto self = rand_img(16, 16);
  const auto lr = loss::loss_var_ssim(self, self, self);
  report("loss of a perfectly reconstructed pair == 0", std::abs(lr.loss) < 1e-12,
         std::abs(lr.loss));

  // Identical features produce identical maps.
  auto fx = nn::Tensor<double>::chw(3, 4, 4);
  for (Eigen::Index i = 0; i < fx.size(); ++i) fx.data[i] = unit();
  const auto maps = ref::deep_maps_ref(fx, fx);
  const double dmap = (maps.first.data - maps.second.data).abs().maxCoeff();
  report("mutual maps coincide for identical inputs", dmap == 0.0, dmap);

  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-branch multi-scale image fusion with feature mutual mapping"};
  app.require_subcommand(1);

  DataOpts train_data;
  train::TrainConfig train_cfg;
  std::string train_out, train_log, train_config;
  auto* cmd_train = app.add_subcommand("train", "train a fusion network");
  cmd_train->add_option("--config", train_config,
                        "key=value file merged beneath flags");
  add_data_opts(cmd_train, train_data);
  add_train_opts(cmd_train, train_cfg);
  cmd_train->add_option("--out", train_out, "checkpoint output path")->required();
  cmd_train->add_option("--log", train_log, "step CSV path (default: stdout)");

  std::string fuse_ckpt, fuse_x, fuse_y, fuse_out, fuse_config;
  auto* cmd_fuse = app.add_subcommand("fuse", "fuse one image pair");
  cmd_fuse->add_option("--config", fuse_config,
                       "key=value file merged beneath flags");
  cmd_fuse->add_option("--ckpt", fuse_ckpt, "trained checkpoint")->required();
  cmd_fuse->add_option("--x", fuse_x, "first source image")->required();
  cmd_fuse->add_option("--y", fuse_y, "second source image")->required();
  cmd_fuse->add_option("--out", fuse_out, "fused output image")->required();

  std::string eval_x, eval_y, eval_fused, eval_metrics, eval_csv, eval_config;
  auto* cmd_eval = app.add_subcommand("eval", "score a fused image");
  cmd_eval->add_option("--config", eval_config,
                       "key=value file merged beneath flags");
  cmd_eval->add_option("--x", eval_x, "first source image")->required();
  cmd_eval->add_option("--y", eval_y, "second source image")->required();
  cmd_eval->add_option("--fused", eval_fused, "fused image")->required();
  cmd_eval->add_option("--metrics", eval_metrics,
                       "comma list (default: EI,CE,SF,EN,Qabf,MS_SSIM,SD,VIF)");
  cmd_eval->add_option("--csv", eval_csv,
                       "append the row here (header written on creation)");

  DataOpts abl_data;
  train::TrainConfig abl_cfg;
  std::string abl_axes = "fusion_rule", abl_out, abl_config;
  int abl_jobs = 1;
  auto* cmd_ablate = app.add_subcommand("ablate", "cartesian ablation table");
  cmd_ablate->add_option("--config", abl_config,
                         "key=value file merged beneath flags");
  add_data_opts(cmd_ablate, abl_data);
  add_train_opts(cmd_ablate, abl_cfg);
  cmd_ablate->add_option("--axes", abl_axes,
                         "comma subset of fusion_rule,loss_gate,depth")
      ->capture_default_str();
  cmd_ablate->add_option("--jobs", abl_jobs, "parallel training runs")
      ->capture_default_str();
  cmd_ablate->add_option("--out", abl_out, "CSV path (default: stdout)");

  double gc_tol = 1e-4;
  int gc_samples = 6;
  std::uint64_t gc_seed = 0;
  std::string gc_only;
  auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  cmd_grad->add_option("--tolerance", gc_tol, "relative error bound")
      ->capture_default_str();
  cmd_grad->add_option("--samples", gc_samples, "probed entries per tensor")
      ->capture_default_str();
  cmd_grad->add_option("--seed", gc_seed, "probe sampling seed")
      ->capture_default_str();
  cmd_grad->add_option("--only", gc_only, "substring filter on check names");

  auto* cmd_self =
      app.add_subcommand("selftest", "reference-oracle consistency sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*cmd_train) {
      if (!train_config.empty()) apply_config_file(cmd_train, train_config);
      return run_train(train_data, train_cfg, train_out, train_log);
    }
    if (*cmd_fuse) {
      if (!fuse_config.empty()) apply_config_file(cmd_fuse, fuse_config);
      return run_fuse(fuse_ckpt, fuse_x, fuse_y, fuse_out);
    }
    if (*cmd_eval) {
      if (!eval_config.empty()) apply_config_file(cmd_eval, eval_config);
      return run_eval(eval_x, eval_y, eval_fused, eval_metrics, eval_csv);
    }
    if (*cmd_ablate) {
      if (!abl_config.empty()) apply_config_file(cmd_ablate, abl_config);
      return run_ablate(abl_data, abl_cfg, abl_axes, abl_jobs, abl_out);
    }
    if (*cmd_grad) return run_gradcheck(gc_tol, gc_samples, gc_seed, gc_only);
    if (*cmd_self) return run_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
