#include "mapfuse/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <thread>

#include "mapfuse/common.hpp"
#include "mapfuse/graph.hpp"
#include "mapfuse/loss.hpp"
#include "mapfuse/metrics.hpp"
#include "mapfuse/model.hpp"

namespace mapfuse::train {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt_f6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_hex16(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate))
    throw ConfigError("learning rate must be finite and non-negative");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.max_steps < 0) throw ConfigError("max steps must be >= 0");
  if (cfg.window_stride < 1) throw ConfigError("window stride must be >= 1");
  net::validate_model_config({cfg.depth, cfg.fusion_rule});
  loss::parse_gate(cfg.loss_gate);
  if (cfg.crop < 11)
    throw ConfigError("crop must cover the 11x11 loss window, got " +
                      std::to_string(cfg.crop));
  const int mult = 1 << (cfg.depth - 1);
  if (cfg.crop % mult != 0)
    throw ConfigError("crop " + std::to_string(cfg.crop) +
                      " must be divisible by the pyramid factor " +
                      std::to_string(mult));
}

std::string config_echo(const TrainConfig& cfg) {
  char lr[40];
  std::snprintf(lr, sizeof(lr), "%g", cfg.learning_rate);
  std::ostringstream os;
  os << "lr=" << lr << '\n'
     << "epochs=" << cfg.epochs << '\n'
     << "batch=" << cfg.batch_size << '\n'
     << "crop=" << cfg.crop << '\n'
     << "seed=" << cfg.seed << '\n'
     << "fusion_rule=" << cfg.fusion_rule << '\n'
     << "loss_gate=" << cfg.loss_gate << '\n'
     << "depth=" << cfg.depth << '\n'
     << "stride=" << cfg.window_stride << '\n'
     << "max_steps=" << cfg.max_steps << '\n';
  return os.str();
}

std::string TrainLog::to_csv() const {
  std::string out = "step,loss,frac_x\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step);
    out += ',';
    out += fmt_g(s.loss);
    out += ',';
    out += fmt_g(s.frac_selected_x);
    out += '\n';
  }
  return out;
}

TrainResult train(const img::PairDataset& ds, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (ds.pairs.empty()) throw ConfigError("training dataset is empty");

  std::mt19937_64 rng(cfg.seed);
  auto params = net::build_params<float>(cfg.depth, rng);
  AdamState<float> opt(params);
  const loss::Gate gate = loss::parse_gate(cfg.loss_gate);
  const net::ModelConfig mc{cfg.depth, cfg.fusion_rule};

  const std::size_t n = ds.pairs.size();
  const int steps_per_epoch = static_cast<int>(
      std::max<std::size_t>(1, n / static_cast<std::size_t>(cfg.batch_size)));
  const int total =
      cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;

  TrainResult res;
  double epoch_sum = 0;
  int epoch_n = 0;
  for (int step = 0; step < total; ++step) {
    params.zero_grads();
    nn::Graph<float> g(true);
    nn::Var<float> sum{};
    double frac = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& pair = ds.pairs[rng() % n];
      const auto cropped = img::random_crop(pair, cfg.crop, rng);
      const auto tx = img::to_tensor(cropped.x);
      const auto ty = img::to_tensor(cropped.y);
      auto fused = net::forward_fused(g, tx, ty, params, mc);
      auto lg = loss::build_window_ssim_loss<float>(g, fused, tx, ty, gate,
                                                    cfg.window_stride);
      sum = b == 0 ? lg.loss : nn::add(sum, lg.loss);
      frac += lg.frac_selected_x;
    }
    auto batch_loss = nn::scale(sum, 1.0f / static_cast<float>(cfg.batch_size));
    const double loss_v = static_cast<double>(g.value(batch_loss.id).data[0]);
    frac /= cfg.batch_size;

    if (!std::isfinite(loss_v)) {
      res.aborted = true;
      res.abort_step = step;
      res.abort_reason = "non-finite loss at step " + std::to_string(step);
      break;
    }
    g.backward(batch_loss);
    opt.step(params, cfg.learning_rate);
    res.log.steps.push_back({step, loss_v, frac});
    epoch_sum += loss_v;
    if (++epoch_n == steps_per_epoch || step + 1 == total) {
      res.log.epoch_mean_loss.push_back(epoch_sum / epoch_n);
      epoch_sum = 0;
      epoch_n = 0;
    }
  }
  res.checkpoint.config_echo = config_echo(cfg);
  res.checkpoint.params = params;
  return res;
}

img::Image infer_fuse(const Checkpoint& ckpt, const img::Image& ix,
                      const img::Image& iy) {
  if (ix.height() != iy.height() || ix.width() != iy.width())
    throw ShapeError("infer_fuse: inputs are " + std::to_string(ix.height()) +
                     "x" + std::to_string(ix.width()) + " vs " +
                     std::to_string(iy.height()) + "x" +
                     std::to_string(iy.width()));
  const int depth = ckpt.depth();
  std::string rule = ckpt.config_value("fusion_rule");
  if (rule.empty()) rule = "mapping";
  const net::ModelConfig mc{depth, rule};
  net::validate_model_config(mc);

  const Eigen::Index mult = Eigen::Index(1) << (depth - 1);
  const auto px = img::pad_to_multiple(ix, mult);
  const auto py = img::pad_to_multiple(iy, mult);

  auto params = ckpt.params;  // forward binds mutable parameter nodes
  nn::Graph<float> g(false);
  auto out = net::forward_fused(g, img::to_tensor(px.image),
                                img::to_tensor(py.image), params, mc);
  const img::Image full = img::to_image(g.value(out.id));
  return img::crop(full, 0, 0, ix.height(), ix.width());
}

std::string ablate_csv(const img::PairDataset& ds, const TrainConfig& base,
                       const AblateOptions& opts) {
  validate_train_config(base);
  if (ds.pairs.empty()) throw ConfigError("ablation dataset is empty");

  auto has_axis = [&](const char* name) {
    return std::find(opts.axes.begin(), opts.axes.end(), name) != opts.axes.end();
  };
  for (const auto& a : opts.axes)
    if (a != "fusion_rule" && a != "loss_gate" && a != "depth")
      throw ConfigError("unknown ablation axis '" + a +
                        "' (valid: fusion_rule, loss_gate, depth)");

  const std::vector<std::string> rules =
      has_axis("fusion_rule") ? std::vector<std::string>{"add", "concat", "mapping"}
                              : std::vector<std::string>{base.fusion_rule};
  const std::vector<std::string> gates =
      has_axis("loss_gate") ? std::vector<std::string>{"mean", "var"}
                            : std::vector<std::string>{base.loss_gate};
  const std::vector<int> depths =
      has_axis("depth") ? std::vector<int>{3, 4, 5} : std::vector<int>{base.depth};

  std::vector<TrainConfig> cfgs;
  for (const auto& r : rules)
    for (const auto& lg : gates)
      for (const int d : depths) {
        TrainConfig c = base;
        c.fusion_rule = r;
        c.loss_gate = lg;
        c.depth = d;
        cfgs.push_back(c);
      }

  // Held-out tail for scoring; the head is the training split.
  const std::size_t n = ds.pairs.size();
  const std::size_t nh = std::max<std::size_t>(1, n / 8);
  img::PairDataset train_ds, holdout;
  train_ds.crop_size = holdout.crop_size = ds.crop_size;
  if (n > nh) {
    train_ds.pairs.assign(ds.pairs.begin(), ds.pairs.end() - nh);
    holdout.pairs.assign(ds.pairs.end() - nh, ds.pairs.end());
  } else {
    train_ds = ds;
    holdout = ds;
  }
  const std::string dhash = fmt_hex16(img::dataset_hash(ds));
  const auto& names = metrics::all_metric_names();

  auto run_one = [&](const TrainConfig& cfg) {
    std::ostringstream os;
    os << cfg.fusion_rule << ',' << cfg.loss_gate << ',' << cfg.depth << ','
       << cfg.seed << ',' << dhash << ',';
    try {
      const TrainResult res = train(train_ds, cfg);
      if (res.aborted) throw Error(res.abort_reason);
      const double final_loss =
          res.log.steps.empty() ? 0.0 : res.log.steps.back().loss;
      std::vector<double> acc(names.size(), 0.0);
      for (const auto& pair : holdout.pairs) {
        const img::Image fused = infer_fuse(res.checkpoint, pair.x, pair.y);
        const auto rep = metrics::evaluate_all(pair.x, pair.y, fused, names);
        for (std::size_t j = 0; j < names.size(); ++j)
          acc[j] += rep.values[j].second;
      }
      os << "ok," << fmt_f6(final_loss);
      for (double v : acc)
        os << ',' << fmt_f6(v / static_cast<double>(holdout.pairs.size()));
    } catch (const std::exception& e) {
      std::string reason = e.what();
      for (auto& ch : reason)
        if (ch == ',' || ch == '\n') ch = ' ';
      os << "failed: " << reason << ",nan";
      for (std::size_t j = 0; j < names.size(); ++j) os << ",nan";
    }
    os << '\n';
    return os.str();
  };

  int jobs = std::max(1, opts.jobs);
  if (const char* cap = std::getenv("MAPFUSE_THREADS"))
    jobs = std::max(1, std::min(jobs, std::atoi(cap)));
  jobs = std::min<int>(jobs, static_cast<int>(cfgs.size()));

  std::vector<std::string> rows(cfgs.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cfgs.size(); ++i) rows[i] = run_one(cfgs[i]);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cfgs.size()) return;
        rows[i] = run_one(cfgs[i]);
      }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::string csv = "fusion_rule,loss_gate,depth,seed,dataset_hash,status,final_loss";
  for (const auto& m : names) csv += "," + m;
  csv += '\n';
  for (const auto& r : rows) csv += r;
  return csv;
}

}  // namespace mapfuse::train
