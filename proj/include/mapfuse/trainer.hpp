#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mapfuse/checkpoint.hpp"
#include "mapfuse/dataset.hpp"
#include "mapfuse/params.hpp"

namespace mapfuse::train {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 4;
  int batch_size = 4;
  int crop = 256;
  std::uint64_t seed = 0;
  std::string fusion_rule = "mapping";
  std::string loss_gate = "var";
  int depth = 3;
  int window_stride = 1;
  int max_steps = 0;  // 0 = epochs * steps_per_epoch
};

// Throws ConfigError on invalid fields (negative learning rate, epochs,
// batch size, crop too small for the loss window or not divisible by the
// pyramid factor, unknown rule/gate, out-of-range depth).
void validate_train_config(const TrainConfig& cfg);

// Canonical key=value echo stored in checkpoints.
std::string config_echo(const TrainConfig& cfg);

struct StepRecord {
  int step = 0;
  double loss = 0;
  double frac_selected_x = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;
  std::string to_csv() const;  // "step,loss,frac_x" rows
};

struct TrainResult {
  Checkpoint checkpoint;  // final params, or last-good params on abort
  TrainLog log;
  bool aborted = false;
  int abort_step = -1;
  std::string abort_reason;
};

// End-to-end unsupervised run: every step samples a batch of shared random
// crops, fuses them, applies the gated window-SSIM loss, and takes one Adam
// step. Fully deterministic given (seed, dataset, config). A non-finite loss
// aborts before the update, so the returned checkpoint holds the last
// parameters that produced a finite loss.
TrainResult train(const img::PairDataset& ds, const TrainConfig& cfg);

// Fuses one pair with a trained checkpoint. Inputs must share dimensions;
// they are padded to the pyramid multiple internally and the output is
// cropped back, so output dims == input dims.
img::Image infer_fuse(const Checkpoint& ckpt, const img::Image& ix,
                      const img::Image& iy);

struct AblateOptions {
  std::vector<std::string> axes;  // subset of {fusion_rule, loss_gate, depth}
  int jobs = 1;                   // capped by the MAPFUSE_THREADS env var
};

// Trains every configuration in the cartesian product of the requested axes
// (shared seed and data), scores each on a held-out tail of the dataset, and
// returns one CSV row per configuration. A failed run is recorded in its row
// and the remaining runs continue.
std::string ablate_csv(const img::PairDataset& ds, const TrainConfig& base,
                       const AblateOptions& opts);

// Adam with bias correction; moments are kept per parameter tensor in
// registration order. Templated so the scalar oracle test can run in double.
template <typename S>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<typename nn::Tensor<S>::Storage> m, v;

  explicit AdamState(const nn::NetworkParams<S>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.push_back(nn::Tensor<S>::Storage::Zero(p.value.size()));
      v.push_back(nn::Tensor<S>::Storage::Zero(p.value.size()));
    }
  }

  void step(nn::NetworkParams<S>& params, double lr) {
    ++t;
    const S b1 = S(beta1), b2 = S(beta2);
    const S bc1 = S(1) - S(std::pow(beta1, static_cast<double>(t)));
    const S bc2 = S(1) - S(std::pow(beta2, static_cast<double>(t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& grad = params[i].grad.data;
      m[i] = b1 * m[i] + (S(1) - b1) * grad;
      v[i] = b2 * v[i] + (S(1) - b2) * grad * grad;
      params[i].value.data -=
          S(lr) * (m[i] / bc1) / ((v[i] / bc2).sqrt() + S(eps));
    }
  }
};

}  // namespace mapfuse::train
