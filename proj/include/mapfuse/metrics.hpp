#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mapfuse/image.hpp"

namespace mapfuse::metrics {

// 256-bin intensity histogram over [0,1], bin = floor(v * 255.999).
struct Histogram256 {
  std::array<std::int64_t, 256> count{};
  std::array<double, 256> prob{};
  static Histogram256 of(const img::Image& im);
};

// Single-image statistics (0-255 intensity scale).
double metric_en(const img::Image& if_);
double metric_sd(const img::Image& if_);
double metric_sf(const img::Image& if_);
double metric_ei(const img::Image& if_);

// Fused-versus-sources metrics.
double metric_ce(const img::Image& ix, const img::Image& iy, const img::Image& if_);
double metric_mi(const img::Image& ix, const img::Image& iy, const img::Image& if_);
double metric_scd(const img::Image& ix, const img::Image& iy, const img::Image& if_);
double metric_qabf(const img::Image& ix, const img::Image& iy, const img::Image& if_);
double metric_ms_ssim(const img::Image& ix, const img::Image& iy,
                      const img::Image& if_);
double metric_vif(const img::Image& ix, const img::Image& iy, const img::Image& if_);

struct MetricReport {
  std::vector<std::pair<std::string, double>> values;  // in request order
  double at(const std::string& name) const;
};

// All implemented metric names, canonical order.
const std::vector<std::string>& all_metric_names();
// Default evaluation set (the common table layout).
const std::vector<std::string>& default_metric_names();

// Computes each requested metric; unknown names raise a configuration error
// listing the valid ones.
MetricReport evaluate_all(const img::Image& ix, const img::Image& iy,
                          const img::Image& if_,
                          const std::vector<std::string>& names);

}  // namespace mapfuse::metrics
